//! Spurious-aware prototype refinement.
//!
//! A [`PrototypeBank`] holds one or more prototypes per class. Fitting runs in
//! three stages: class means ([`fit_stage1`]), a split of every class by how
//! the class means classify it ([`fit_stage2`]), and one reassign-and-average
//! pass over those groups ([`fit_stage3`]). [`fit_converged`] iterates the last
//! pass to a fixed point and [`fit_kmeans`] replaces the classification-driven
//! groups with plain per-class k-means.
//!
//! Queries are scored by their distance to the nearest prototype
//! ([`score_distance`]) or by the largest softmax probability over negated
//! prototype distances ([`score_softmax`]).

mod fit;
mod kmeans;
mod score;

use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::EmbeddingSet;
use crate::error::{Error, Result};

pub use fit::{
    fit_converged, fit_stage1, fit_stage2, fit_stage3, ConvergedFit, DEFAULT_MAX_ITERS,
};
pub use kmeans::{fit_kmeans, KMEANS_MAX_ITERS};
pub use score::{classify, score_distance, score_softmax};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMetric {
    #[default]
    Euclidean,
    Cosine,
}

impl DistanceMetric {
    /// Euclidean: plain L2. Cosine: `1 − cos(z, p)`, taking the cosine as 0
    /// when either vector has zero norm.
    pub fn distance(self, z: &[f32], p: &[f64]) -> f64 {
        match self {
            DistanceMetric::Euclidean => crate::data::sq_dist(z, p).sqrt(),
            DistanceMetric::Cosine => {
                let (mut dot, mut zz, mut pp) = (0.0, 0.0, 0.0);
                for (&a, &b) in z.iter().zip(p) {
                    let a = f64::from(a);
                    dot += a * b;
                    zz += a * a;
                    pp += b * b;
                }
                let denom = (zz * pp).sqrt();
                if denom == 0.0 {
                    1.0
                } else {
                    1.0 - dot / denom
                }
            }
        }
    }

    /// Per-sample loss minimized (within a group) by the group mean.
    pub(crate) fn objective(self, z: &[f32], p: &[f64]) -> f64 {
        match self {
            DistanceMetric::Euclidean => crate::data::sq_dist(z, p),
            DistanceMetric::Cosine => self.distance(z, p),
        }
    }
}

impl fmt::Display for DistanceMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistanceMetric::Euclidean => "euclidean",
            DistanceMetric::Cosine => "cosine",
        })
    }
}

impl FromStr for DistanceMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euclidean" => Ok(DistanceMetric::Euclidean),
            "cosine" => Ok(DistanceMetric::Cosine),
            other => Err(Error::Config(format!("unknown metric {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Stage1,
    Stage2,
    Stage3,
    KMeans,
    Converged,
}

impl Stage {
    pub fn method_name(self) -> &'static str {
        match self {
            Stage::Stage1 => "sprod-stage1",
            Stage::Stage2 => "sprod-stage2",
            Stage::Stage3 => "sprod-stage3",
            Stage::KMeans => "sprod-kmeans",
            Stage::Converged => "sprod-converged",
        }
    }
}

/// Majority sorts before every minority group; minority groups sort by target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GroupKind {
    Majority,
    Minority(u32),
}

/// Identifies a prototype. The derived order is the tie-break order used
/// everywhere: class ascending, majority first, minority target ascending.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroupKey {
    pub class: u32,
    pub kind: GroupKind,
}

impl GroupKey {
    pub fn majority(class: u32) -> Self {
        Self {
            class,
            kind: GroupKind::Majority,
        }
    }

    pub fn minority(class: u32, target: u32) -> Self {
        Self {
            class,
            kind: GroupKind::Minority(target),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prototype {
    pub key: GroupKey,
    pub vector: Vec<f64>,
}

/// Group membership of every training sample, indexed by row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupAssignment(pub Vec<GroupKey>);

impl GroupAssignment {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> GroupKey {
        self.0[i]
    }

    pub fn members(&self, key: GroupKey) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, k)| **k == key)
            .map(|(i, _)| i)
            .collect()
    }
}

/// A fitted set of prototypes, kept sorted by [`GroupKey`].
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank {
    stage: Stage,
    metric: DistanceMetric,
    class_count: usize,
    dim: usize,
    prototypes: Vec<Prototype>,
    class_ranges: Vec<Range<usize>>,
}

impl PrototypeBank {
    pub fn new(stage: Stage, metric: DistanceMetric, class_count: usize, mut prototypes: Vec<Prototype>) -> Result<Self> {
        prototypes.sort_by_key(|p| p.key);
        let dim = prototypes.first().map_or(0, |p| p.vector.len());
        let mut class_ranges = vec![0..0; class_count];
        let mut start = 0;
        for (c, range) in class_ranges.iter_mut().enumerate() {
            let end = start + prototypes[start..].iter().take_while(|p| p.key.class as usize == c).count();
            *range = start..end;
            start = end;
        }
        let bank = Self {
            stage,
            metric,
            class_count,
            dim,
            prototypes,
            class_ranges,
        };
        bank.validate()?;
        Ok(bank)
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Format("prototype bank has no prototypes".into()));
        }
        let covered: usize = self.class_ranges.iter().map(|r| r.len()).sum();
        if covered != self.prototypes.len() {
            return Err(Error::Format("prototype class index out of range".into()));
        }
        for (c, range) in self.class_ranges.iter().enumerate() {
            if range.is_empty() {
                return Err(Error::EmptyClass(c as u32));
            }
        }
        for w in self.prototypes.windows(2) {
            if w[0].key == w[1].key {
                return Err(Error::Format(format!("duplicate prototype {:?}", w[0].key)));
            }
        }
        for p in &self.prototypes {
            if p.vector.len() != self.dim {
                return Err(Error::DimMismatch {
                    expected: self.dim,
                    actual: p.vector.len(),
                });
            }
            if p.vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("prototype {:?}", p.key)));
            }
            if let GroupKind::Minority(t) = p.key.kind {
                if t == p.key.class {
                    return Err(Error::Format(format!("minority prototype of class {t} targets itself")));
                }
                // k-means banks may carry more clusters than classes
                if self.stage != Stage::KMeans && t as usize >= self.class_count {
                    return Err(Error::Format(format!("minority target {t} out of range")));
                }
            }
        }
        Ok(())
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn metric(&self) -> DistanceMetric {
        self.metric
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn prototypes(&self) -> &[Prototype] {
        &self.prototypes
    }

    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }

    pub fn class_prototypes(&self, class: u32) -> &[Prototype] {
        &self.prototypes[self.class_ranges[class as usize].clone()]
    }

    pub fn counts_per_class(&self) -> Vec<usize> {
        self.class_ranges.iter().map(|r| r.len()).collect()
    }

    pub fn get(&self, key: GroupKey) -> Option<&Prototype> {
        self.prototypes.binary_search_by_key(&key, |p| p.key).ok().map(|i| &self.prototypes[i])
    }

    /// Same prototypes under a different metric.
    pub fn with_metric(mut self, metric: DistanceMetric) -> Self {
        self.metric = metric;
        self
    }

    /// Index and distance of the nearest prototype; ties go to the earlier one.
    pub(crate) fn nearest(&self, z: &[f32]) -> (usize, f64) {
        nearest_in(&self.prototypes, self.metric, z)
    }

    /// Nearest prototype among those of `class`, as an index into the bank.
    pub(crate) fn nearest_own(&self, class: u32, z: &[f32]) -> (usize, f64) {
        let range = self.class_ranges[class as usize].clone();
        let (i, d) = nearest_in(&self.prototypes[range.clone()], self.metric, z);
        (range.start + i, d)
    }

    pub(crate) fn check_query(&self, set: &EmbeddingSet) -> Result<()> {
        set.require_dim(self.dim)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&BankDoc::from(self)).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: BankDoc = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        doc.try_into()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

fn nearest_in(prototypes: &[Prototype], metric: DistanceMetric, z: &[f32]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, p) in prototypes.iter().enumerate() {
        let d = metric.distance(z, &p.vector);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

impl Serialize for PrototypeBank {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        BankDoc::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for PrototypeBank {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let doc = BankDoc::deserialize(deserializer)?;
        PrototypeBank::try_from(doc).map_err(serde::de::Error::custom)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum KindTag {
    Majority,
    Minority,
}

#[derive(Serialize, Deserialize)]
struct EntryDoc {
    class: u32,
    kind: KindTag,
    target: Option<u32>,
    #[serde(serialize_with = "crate::json::vec17")]
    vector: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
pub(crate) struct BankDoc {
    stage: Stage,
    metric: DistanceMetric,
    entries: Vec<EntryDoc>,
}

impl From<&PrototypeBank> for BankDoc {
    fn from(bank: &PrototypeBank) -> Self {
        let entries = bank
            .prototypes
            .iter()
            .map(|p| {
                let (kind, target) = match p.key.kind {
                    GroupKind::Majority => (KindTag::Majority, None),
                    GroupKind::Minority(t) => (KindTag::Minority, Some(t)),
                };
                EntryDoc {
                    class: p.key.class,
                    kind,
                    target,
                    vector: p.vector.clone(),
                }
            })
            .collect();
        BankDoc {
            stage: bank.stage,
            metric: bank.metric,
            entries,
        }
    }
}

impl TryFrom<BankDoc> for PrototypeBank {
    type Error = Error;

    fn try_from(doc: BankDoc) -> Result<Self> {
        let class_count = doc.entries.iter().map(|e| e.class as usize + 1).max().unwrap_or(0);
        let prototypes = doc
            .entries
            .into_iter()
            .map(|e| {
                let kind = match (e.kind, e.target) {
                    (KindTag::Majority, None) => GroupKind::Majority,
                    (KindTag::Minority, Some(t)) => GroupKind::Minority(t),
                    (KindTag::Majority, Some(_)) => {
                        return Err(Error::Format("majority entry with a target".into()))
                    }
                    (KindTag::Minority, None) => {
                        return Err(Error::Format("minority entry without a target".into()))
                    }
                };
                Ok(Prototype {
                    key: GroupKey { class: e.class, kind },
                    vector: e.vector,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        PrototypeBank::new(doc.stage, doc.metric, class_count, prototypes)
    }
}

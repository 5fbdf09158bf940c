//! Synthetic spurious-correlation benchmarks.
//!
//! Every embedding is the concatenation of a core block (`core_dims`) and a
//! spurious block (`spurious_dims`). Class `c` places a unit signal on core
//! axis `c`; environment `j` places a unit signal on spurious axis `j`.
//! Environment `c` is aligned with class `c`: exactly `round(r * n)` samples of
//! each class carry it, the rest are spread evenly over the other
//! environments. Isotropic Gaussian noise is added to every coordinate and all
//! rows are normalized.
//!
//! Spurious OOD rows carry an ID environment signal and no core signal.
//! Non-spurious OOD rows use core axes `C..core_dims` and spurious axes
//! `E..spurious_dims`, none of which any ID row uses.
//!
//! Randomness comes from ChaCha8 seeded with `seed`, one stream per output
//! set, so results are identical across platforms and thread counts.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::EmbeddingSet;
use crate::error::{Error, Result};

const STREAM_TRAIN: u64 = 0;
const STREAM_ID_TEST: u64 = 1;
const STREAM_SP_OOD: u64 = 2;
const STREAM_NSP_OOD: u64 = 3;

fn default_sigma() -> f64 {
    0.15
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub class_count: usize,
    pub core_dims: usize,
    pub spurious_dims: usize,
    /// Number of ID environments; defaults to `class_count`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub environments: Option<usize>,
    pub correlation_rate: f64,
    pub samples_per_class: usize,
    #[serde(default = "default_sigma")]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
    /// ID test rows per class; defaults to `samples_per_class`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_samples_per_class: Option<usize>,
    /// Rows in each OOD set; defaults to the ID test size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ood_samples: Option<usize>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            class_count: 2,
            core_dims: 4,
            spurious_dims: 4,
            environments: None,
            correlation_rate: 0.9,
            samples_per_class: 200,
            noise_sigma: default_sigma(),
            seed: 0,
            test_samples_per_class: None,
            ood_samples: None,
        }
    }
}

impl SyntheticSpec {
    pub fn environment_count(&self) -> usize {
        self.environments.unwrap_or(self.class_count)
    }

    pub fn dim(&self) -> usize {
        self.core_dims + self.spurious_dims
    }

    pub fn majority_count(&self, n: usize) -> usize {
        (self.correlation_rate * n as f64).round() as usize
    }

    fn test_per_class(&self) -> usize {
        self.test_samples_per_class.unwrap_or(self.samples_per_class)
    }

    fn ood_count(&self) -> usize {
        self.ood_samples.unwrap_or(self.test_per_class() * self.class_count)
    }

    pub fn validate(&self) -> Result<()> {
        let (c, e) = (self.class_count, self.environment_count());
        if c < 2 {
            return Err(Error::Spec(format!("need at least 2 classes, got {c}")));
        }
        if e < c {
            return Err(Error::Spec(format!("{e} environments cannot align with {c} classes")));
        }
        if self.core_dims <= c {
            return Err(Error::Spec(format!(
                "core_dims={} must exceed class_count={c} to leave a novel core axis",
                self.core_dims
            )));
        }
        if self.spurious_dims <= e {
            return Err(Error::Spec(format!(
                "spurious_dims={} must exceed environments={e} to leave a novel spurious axis",
                self.spurious_dims
            )));
        }
        let r = self.correlation_rate;
        if !(r.is_finite() && r >= 1.0 / e as f64 && r <= 1.0) {
            return Err(Error::Spec(format!("correlation_rate {r} outside [1/{e}, 1]")));
        }
        if self.samples_per_class < 2 || self.test_per_class() < 1 || self.ood_count() < 1 {
            return Err(Error::Spec("need n >= 2 and nonempty test sets".into()));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::Spec(format!("noise_sigma {} must be >= 0", self.noise_sigma)));
        }
        Ok(())
    }

    /// Environment of every sample of class `c`, majority first.
    pub fn environment_plan(&self, class: usize, n: usize) -> Vec<usize> {
        let e = self.environment_count();
        let majority = self.majority_count(n);
        let rest = n - majority;
        let others: Vec<usize> = (0..e).filter(|&j| j != class).collect();
        let (base, extra) = (rest / others.len(), rest % others.len());
        let mut plan = vec![class; majority];
        for (k, &j) in others.iter().enumerate() {
            plan.extend(std::iter::repeat_n(j, base + usize::from(k < extra)));
        }
        plan
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub train: EmbeddingSet,
    pub id_test: EmbeddingSet,
    pub sp_ood: EmbeddingSet,
    pub nsp_ood: EmbeddingSet,
}

struct Noise {
    rng: ChaCha8Rng,
    sigma: f64,
}

impl Noise {
    fn new(seed: u64, stream: u64, sigma: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, sigma }
    }

    /// Appends one row: `signal` axes set to 1, plus noise everywhere.
    fn push_row(&mut self, out: &mut Vec<f32>, dim: usize, signal: &[usize]) {
        for j in 0..dim {
            let base = if signal.contains(&j) { 1.0 } else { 0.0 };
            let eps: f64 = StandardNormal.sample(&mut self.rng);
            out.push((base + self.sigma * eps) as f32);
        }
    }
}

fn id_split(spec: &SyntheticSpec, per_class: usize, stream: u64) -> Result<EmbeddingSet> {
    let dim = spec.dim();
    let mut noise = Noise::new(spec.seed, stream, spec.noise_sigma);
    let mut features = Vec::with_capacity(per_class * spec.class_count * dim);
    let mut labels = Vec::new();
    let mut groups = Vec::new();
    for c in 0..spec.class_count {
        for env in spec.environment_plan(c, per_class) {
            noise.push_row(&mut features, dim, &[c, spec.core_dims + env]);
            labels.push(c as u32);
            groups.push(env as u32);
        }
    }
    EmbeddingSet::new(features, dim, labels, spec.class_count)?
        .with_groups(groups)?
        .normalize()
}

/// Builds train, ID test, spurious OOD and non-spurious OOD sets.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let (dim, c, e) = (spec.dim(), spec.class_count, spec.environment_count());
    let train = id_split(spec, spec.samples_per_class, STREAM_TRAIN)?;
    let id_test = id_split(spec, spec.test_per_class(), STREAM_ID_TEST)?;

    let m = spec.ood_count();
    let mut noise = Noise::new(spec.seed, STREAM_SP_OOD, spec.noise_sigma);
    let mut features = Vec::with_capacity(m * dim);
    let mut groups = Vec::with_capacity(m);
    for i in 0..m {
        let env = i % e;
        noise.push_row(&mut features, dim, &[spec.core_dims + env]);
        groups.push(env as u32);
    }
    let sp_ood = EmbeddingSet::unlabeled(features, dim)?.with_groups(groups)?.normalize()?;

    let novel_core = spec.core_dims - c;
    let novel_env = spec.spurious_dims - e;
    let mut noise = Noise::new(spec.seed, STREAM_NSP_OOD, spec.noise_sigma);
    let mut features = Vec::with_capacity(m * dim);
    let mut groups = Vec::with_capacity(m);
    for i in 0..m {
        let core_axis = c + i % novel_core;
        let env = e + i % novel_env;
        noise.push_row(&mut features, dim, &[core_axis, spec.core_dims + env]);
        groups.push(env as u32);
    }
    let nsp_ood = EmbeddingSet::unlabeled(features, dim)?.with_groups(groups)?.normalize()?;

    Ok(SyntheticData {
        train,
        id_test,
        sp_ood,
        nsp_ood,
    })
}

/// Keeps `m` random rows of every minority group and enough rows of each
/// class's majority group to preserve that class's majority:minority ratio.
///
/// The majority group of a class is its most populous group (lowest id on
/// ties); every other group present in the class is a minority group. With
/// `g` minority groups totalling `n_min` rows and a majority of `n_maj` rows,
/// `round(m * g * n_maj / n_min)` majority rows are kept.
pub fn subsample_lowshot(train: &EmbeddingSet, m: usize, seed: u64) -> Result<EmbeddingSet> {
    if m == 0 {
        return Err(Error::Config("low-shot m must be at least 1".into()));
    }
    let groups = train
        .group_ids()
        .ok_or_else(|| Error::Config("low-shot subsampling needs group annotations".into()))?
        .to_vec();
    let mut keep = Vec::new();
    for (class, rows) in train.class_indices().into_iter().enumerate() {
        if rows.is_empty() {
            return Err(Error::EmptyClass(class as u32));
        }
        let mut by_group: std::collections::BTreeMap<u32, Vec<usize>> = Default::default();
        for &i in &rows {
            by_group.entry(groups[i]).or_default().push(i);
        }
        let majority = *by_group
            .iter()
            .max_by(|a, b| a.1.len().cmp(&b.1.len()).then(b.0.cmp(a.0)))
            .map(|(g, _)| g)
            .unwrap();
        let minority: Vec<u32> = by_group.keys().copied().filter(|&g| g != majority).collect();
        if minority.is_empty() {
            return Err(Error::TooFewSamples(format!("class {class} has no minority group")));
        }
        let n_maj = by_group[&majority].len();
        let n_min: usize = minority.iter().map(|g| by_group[g].len()).sum();
        let keep_maj = ((m * minority.len() * n_maj) as f64 / n_min as f64).round() as usize;

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(class as u64);
        for (&g, members) in &by_group {
            let want = if g == majority { keep_maj } else { m };
            if want > members.len() {
                return Err(Error::TooFewSamples(format!(
                    "class {class} group {g} has {} rows, {want} requested",
                    members.len()
                )));
            }
            keep.extend(index::sample(&mut rng, members.len(), want).into_iter().map(|k| members[k]));
        }
    }
    keep.sort_unstable();
    train.select(&keep)
}

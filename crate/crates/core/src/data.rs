//! Embedding sets and score vectors.
//!
//! Features are held as `f32` (the on-disk width); everything computed from
//! them is done in `f64`.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows with a norm at or below this are rejected by [`EmbeddingSet::normalize`].
pub const ZERO_NORM_THRESHOLD: f64 = 1e-12;

/// Tolerance on `|‖row‖ − 1|` for a set flagged as normalized.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-5;

thread_local! {
    static GROUP_READS: Cell<usize> = const { Cell::new(0) };
}

/// Number of times group annotations were read on the current thread.
///
/// Fitting code never touches group ids; tests use this counter to check it.
#[doc(hidden)]
pub fn group_reads_on_this_thread() -> usize {
    GROUP_READS.with(|c| c.get())
}

/// An `N × D` matrix of embeddings with class labels and optional group
/// annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    features: Vec<f32>,
    rows: usize,
    dim: usize,
    labels: Vec<u32>,
    labeled: bool,
    group_ids: Option<Vec<u32>>,
    class_count: usize,
    normalized: bool,
}

impl EmbeddingSet {
    /// Builds a labeled set from row-major features.
    pub fn new(features: Vec<f32>, dim: usize, labels: Vec<u32>, class_count: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Format("embedding dimension must be at least 1".into()));
        }
        if features.is_empty() || !features.len().is_multiple_of(dim) {
            return Err(Error::Format(format!(
                "feature buffer of length {} is not a nonempty multiple of D={dim}",
                features.len()
            )));
        }
        let rows = features.len() / dim;
        if labels.len() != rows {
            return Err(Error::Format(format!("{} labels for {rows} rows", labels.len())));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= class_count) {
            return Err(Error::Format(format!("label {bad} out of range for C={class_count}")));
        }
        Ok(Self {
            features,
            rows,
            dim,
            labels,
            labeled: true,
            group_ids: None,
            class_count,
            normalized: false,
        })
    }

    /// Builds a set without labels (typically an OOD set). All labels read as 0.
    pub fn unlabeled(features: Vec<f32>, dim: usize) -> Result<Self> {
        let rows = features.len().checked_div(dim).unwrap_or(0);
        let mut set = Self::new(features, dim, vec![0; rows], 1)?;
        set.labeled = false;
        Ok(set)
    }

    /// Convenience constructor from nested rows.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R], labels: Vec<u32>, class_count: usize) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut features = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::Format(format!("row {i} has length {}, expected {dim}", r.len())));
            }
            features.extend_from_slice(r);
        }
        Self::new(features, dim, labels, class_count)
    }

    pub fn with_groups(mut self, group_ids: Vec<u32>) -> Result<Self> {
        if group_ids.len() != self.rows {
            return Err(Error::Format(format!(
                "{} group ids for {} rows",
                group_ids.len(),
                self.rows
            )));
        }
        self.group_ids = Some(group_ids);
        Ok(self)
    }

    pub fn without_groups(mut self) -> Self {
        self.group_ids = None;
        self
    }

    pub(crate) fn set_labeled_flag(&mut self, labeled: bool) {
        self.labeled = labeled;
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn is_labeled(&self) -> bool {
        self.labeled
    }

    pub fn has_groups(&self) -> bool {
        self.group_ids.is_some()
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.features.chunks_exact(self.dim)
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Group (spurious attribute) annotations. Evaluation and data tooling
    /// only; no fitting routine calls this.
    pub fn group_ids(&self) -> Option<&[u32]> {
        GROUP_READS.with(|c| c.set(c.get() + 1));
        self.group_ids.as_deref()
    }

    /// Row indices of each class, in row order.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.class_count];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l as usize].push(i);
        }
        out
    }

    /// Errors with `EmptyClass` if some class in `[0, C)` has no rows.
    pub fn require_all_classes(&self) -> Result<()> {
        let mut seen = vec![false; self.class_count];
        for &l in &self.labels {
            seen[l as usize] = true;
        }
        match seen.iter().position(|s| !s) {
            Some(c) => Err(Error::EmptyClass(c as u32)),
            None => Ok(()),
        }
    }

    pub fn require_dim(&self, expected: usize) -> Result<()> {
        if self.dim != expected {
            return Err(Error::DimMismatch {
                expected,
                actual: self.dim,
            });
        }
        Ok(())
    }

    /// New set made of the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        let mut out = Self::new(features, self.dim, labels, self.class_count)?;
        if let Some(g) = &self.group_ids {
            out.group_ids = Some(indices.iter().map(|&i| g[i]).collect());
        }
        out.labeled = self.labeled;
        out.normalized = self.normalized;
        Ok(out)
    }

    /// Returns a copy with every row scaled to unit L2 norm.
    pub fn normalize(&self) -> Result<Self> {
        let mut features = Vec::with_capacity(self.features.len());
        for (i, row) in self.iter_rows().enumerate() {
            let norm = row.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
            if !norm.is_finite() {
                return Err(Error::NonFinite(format!("row {i} norm")));
            }
            if norm <= ZERO_NORM_THRESHOLD {
                return Err(Error::ZeroVector(i));
            }
            features.extend(row.iter().map(|&v| (f64::from(v) / norm) as f32));
        }
        let mut out = self.clone();
        out.features = features;
        out.normalized = true;
        Ok(out)
    }

    /// Checks the unit-norm invariant implied by the normalized flag.
    pub fn check_normalized(&self) -> Result<()> {
        for (i, row) in self.iter_rows().enumerate() {
            let norm = row.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(Error::Format(format!("row {i} has norm {norm}, expected 1")));
            }
        }
        Ok(())
    }
}

/// Per-sample OOD scores. Larger always means more in-distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub method: String,
    pub scores: Vec<f64>,
}

impl ScoreVector {
    pub fn new(method: impl Into<String>, scores: Vec<f64>) -> Result<Self> {
        let method = method.into();
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("{method} score at index {i}")));
        }
        Ok(Self { method, scores })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Squared Euclidean distance accumulated in `f64`.
pub(crate) fn sq_dist(a: &[f32], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - y;
            d * d
        })
        .sum()
}

//! Mahalanobis scoring with class-conditional Gaussians sharing one
//! covariance.

use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{EmbeddingSet, ScoreVector};
use crate::error::{Error, Result};

/// Ridge added to the pooled covariance is `ridge_scale * trace(Σ) / D`,
/// floored at 1e-12. A scale of 0 disables the ridge entirely.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MdsConfig {
    pub ridge_scale: f64,
}

impl Default for MdsConfig {
    fn default() -> Self {
        Self { ridge_scale: 1e-6 }
    }
}

const RIDGE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianModel {
    #[serde(serialize_with = "crate::json::mat17")]
    pub class_means: Vec<Vec<f64>>,
    #[serde(serialize_with = "crate::json::mat17")]
    pub pooled_precision: Vec<Vec<f64>>,
    #[serde(serialize_with = "crate::json::f17")]
    pub ridge_epsilon: f64,
}

pub fn mds_fit(train: &EmbeddingSet, config: MdsConfig) -> Result<GaussianModel> {
    let (n, d, c) = (train.rows(), train.dim(), train.class_count());
    if n <= c {
        return Err(Error::TooFewSamples(format!("MDS needs N > C, got N={n}, C={c}")));
    }
    train.require_all_classes()?;

    let mut means = vec![vec![0.0; d]; c];
    let mut counts = vec![0usize; c];
    for (z, &y) in train.iter_rows().zip(train.labels()) {
        for (m, &v) in means[y as usize].iter_mut().zip(z) {
            *m += f64::from(v);
        }
        counts[y as usize] += 1;
    }
    for (m, &k) in means.iter_mut().zip(&counts) {
        m.iter_mut().for_each(|v| *v /= k as f64);
    }

    let mut cov = DMatrix::<f64>::zeros(d, d);
    let mut centered = vec![0.0; d];
    for (z, &y) in train.iter_rows().zip(train.labels()) {
        for ((dst, &v), &m) in centered.iter_mut().zip(z).zip(&means[y as usize]) {
            *dst = f64::from(v) - m;
        }
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += centered[i] * centered[j];
            }
        }
    }
    cov /= n as f64;

    let epsilon = if config.ridge_scale > 0.0 {
        (config.ridge_scale * cov.trace() / d as f64).max(RIDGE_FLOOR)
    } else {
        0.0
    };
    let ridged = &cov + DMatrix::<f64>::identity(d, d) * epsilon;
    let chol = ridged
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Degenerate(format!("covariance not positive definite (ridge {epsilon:e})")))?;
    let mut precision = chol.inverse();
    precision = (&precision + precision.transpose()) * 0.5;

    let residual = (&precision * &ridged - DMatrix::<f64>::identity(d, d)).abs().max();
    if !residual.is_finite() || residual > 1e-4 {
        return Err(Error::Degenerate(format!("precision·Σ deviates from I by {residual:e}")));
    }

    Ok(GaussianModel {
        class_means: means,
        pooled_precision: precision.row_iter().map(|r| r.iter().copied().collect()).collect(),
        ridge_epsilon: epsilon,
    })
}

impl GaussianModel {
    pub fn dim(&self) -> usize {
        self.pooled_precision.len()
    }

    pub fn class_count(&self) -> usize {
        self.class_means.len()
    }

    /// Squared Mahalanobis distance from `z` to the mean of `class`.
    pub fn mahalanobis_sq(&self, z: &[f32], class: usize) -> f64 {
        let diff: Vec<f64> = z
            .iter()
            .zip(&self.class_means[class])
            .map(|(&v, &m)| f64::from(v) - m)
            .collect();
        self.pooled_precision
            .iter()
            .zip(&diff)
            .map(|(row, &di)| di * row.iter().zip(&diff).map(|(p, dj)| p * dj).sum::<f64>())
            .sum()
    }

    /// Class with the smallest Mahalanobis distance, with that distance.
    pub fn nearest_class(&self, z: &[f32]) -> (u32, f64) {
        let mut best = (0, f64::INFINITY);
        for c in 0..self.class_count() {
            let d = self.mahalanobis_sq(z, c);
            if d < best.1 {
                best = (c as u32, d);
            }
        }
        best
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}

/// Negated minimum squared Mahalanobis distance over class means.
pub fn mds_score(model: &GaussianModel, query: &EmbeddingSet) -> Result<ScoreVector> {
    query.require_dim(model.dim())?;
    let scores = (0..query.rows())
        .into_par_iter()
        .map(|i| -model.nearest_class(query.row(i)).1)
        .collect();
    ScoreVector::new("mds", scores)
}

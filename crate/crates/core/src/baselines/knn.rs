use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{sq_dist, EmbeddingSet, ScoreVector};
use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 50;

fn row_f64(row: &[f32]) -> Vec<f64> {
    row.iter().map(|&v| f64::from(v)).collect()
}

/// Negated Euclidean distance from each query to its k-th nearest training
/// row. `k` larger than the training set is capped at N.
pub fn knn_score(train: &EmbeddingSet, query: &EmbeddingSet, k: usize) -> Result<ScoreVector> {
    if k == 0 {
        return Err(Error::BadK("k must be at least 1".into()));
    }
    query.require_dim(train.dim())?;
    let k = k.min(train.rows());
    let scores = (0..query.rows())
        .into_par_iter()
        .map(|i| {
            let q = row_f64(query.row(i));
            let mut d: Vec<f64> = train.iter_rows().map(|t| sq_dist(t, &q)).collect();
            let (_, kth, _) = d.select_nth_unstable_by(k - 1, f64::total_cmp);
            -kth.sqrt()
        })
        .collect();
    ScoreVector::new("knn", scores)
}

/// A KNN "model" is the training set itself plus `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub k: usize,
    pub dim: usize,
    #[serde(serialize_with = "crate::json::mat17")]
    pub rows: Vec<Vec<f64>>,
}

impl KnnModel {
    pub fn new(train: &EmbeddingSet, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::BadK("k must be at least 1".into()));
        }
        Ok(Self {
            k,
            dim: train.dim(),
            rows: train.iter_rows().map(row_f64).collect(),
        })
    }

    pub fn score(&self, query: &EmbeddingSet) -> Result<ScoreVector> {
        let features: Vec<f32> = self.rows.iter().flatten().map(|&v| v as f32).collect();
        let train = EmbeddingSet::unlabeled(features, self.dim)?;
        knn_score(&train, query, self.k)
    }
}

use rayon::prelude::*;

use super::PrototypeBank;
use crate::data::{EmbeddingSet, ScoreVector};
use crate::error::{Error, Result};

/// Class of the nearest prototype, whatever its group kind.
pub fn classify(bank: &PrototypeBank, set: &EmbeddingSet) -> Result<Vec<u32>> {
    bank.check_query(set)?;
    Ok((0..set.rows())
        .into_par_iter()
        .map(|i| {
            let (idx, _) = bank.nearest(set.row(i));
            bank.prototypes()[idx].key.class
        })
        .collect())
}

/// Negated distance to the nearest prototype.
pub fn score_distance(bank: &PrototypeBank, query: &EmbeddingSet) -> Result<ScoreVector> {
    bank.check_query(query)?;
    let scores = (0..query.rows())
        .into_par_iter()
        .map(|i| -bank.nearest(query.row(i)).1)
        .collect();
    ScoreVector::new(bank.stage().method_name(), scores)
}

/// Maximum softmax probability over `-d / temperature` across all prototypes.
pub fn score_softmax(bank: &PrototypeBank, query: &EmbeddingSet, temperature: f64) -> Result<ScoreVector> {
    bank.check_query(query)?;
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
    }
    let metric = bank.metric();
    let scores = (0..query.rows())
        .into_par_iter()
        .map(|i| {
            let z = query.row(i);
            let dists: Vec<f64> = bank.prototypes().iter().map(|p| metric.distance(z, &p.vector)).collect();
            let d_min = dists.iter().copied().fold(f64::INFINITY, f64::min);
            // max_j softmax_j = 1 / sum_j exp(-(d_j - d_min) / T)
            let denom: f64 = dists.iter().map(|d| (-(d - d_min) / temperature).exp()).sum();
            1.0 / denom
        })
        .collect();
    ScoreVector::new(format!("{}-softmax", bank.stage().method_name()), scores)
}

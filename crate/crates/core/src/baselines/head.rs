//! A linear softmax classifier trained on embeddings, and the output-based
//! scores computed from its logits.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{EmbeddingSet, ScoreVector};
use crate::error::{Error, Result};

/// Rows per gradient chunk. Chunks are summed in order, so the result does
/// not depend on the number of worker threads.
const CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub learning_rate: f64,
    pub l2: f64,
    pub iterations: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            l2: 1e-4,
            iterations: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    #[serde(serialize_with = "crate::json::mat17")]
    pub weights: Vec<Vec<f64>>,
    #[serde(serialize_with = "crate::json::vec17")]
    pub bias: Vec<f64>,
    pub config: HeadConfig,
    /// Objective before each step plus the final value.
    #[serde(skip)]
    pub loss_trace: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogitMethod {
    Msp,
    Energy,
    Mls,
}

impl LogitMethod {
    pub fn name(self) -> &'static str {
        match self {
            LogitMethod::Msp => "msp",
            LogitMethod::Energy => "energy",
            LogitMethod::Mls => "mls",
        }
    }
}

impl fmt::Display for LogitMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LogitMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "msp" => Ok(LogitMethod::Msp),
            "energy" => Ok(LogitMethod::Energy),
            "mls" => Ok(LogitMethod::Mls),
            other => Err(Error::Config(format!("unknown logit method {other:?}"))),
        }
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Per-chunk (summed cross-entropy, dW, db) for rows `range`.
fn chunk_gradient(
    train: &EmbeddingSet,
    weights: &[Vec<f64>],
    bias: &[f64],
    range: std::ops::Range<usize>,
) -> (f64, Vec<Vec<f64>>, Vec<f64>) {
    let c = bias.len();
    let d = train.dim();
    let mut loss = 0.0;
    let mut gw = vec![vec![0.0; d]; c];
    let mut gb = vec![0.0; c];
    let mut logits = vec![0.0; c];
    for i in range {
        let z = train.row(i);
        let y = train.labels()[i] as usize;
        for (k, l) in logits.iter_mut().enumerate() {
            *l = bias[k] + weights[k].iter().zip(z).map(|(w, &x)| w * f64::from(x)).sum::<f64>();
        }
        let lse = log_sum_exp(&logits);
        loss += lse - logits[y];
        for k in 0..c {
            let residual = (logits[k] - lse).exp() - f64::from(u8::from(k == y));
            gb[k] += residual;
            for (g, &x) in gw[k].iter_mut().zip(z) {
                *g += residual * f64::from(x);
            }
        }
    }
    (loss, gw, gb)
}

fn objective_and_gradient(
    train: &EmbeddingSet,
    weights: &[Vec<f64>],
    bias: &[f64],
    l2: f64,
) -> (f64, Vec<Vec<f64>>, Vec<f64>) {
    let n = train.rows();
    let chunks: Vec<_> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|j| chunk_gradient(train, weights, bias, j * CHUNK..((j + 1) * CHUNK).min(n)))
        .collect();
    let c = bias.len();
    let mut loss = 0.0;
    let mut gw = vec![vec![0.0; train.dim()]; c];
    let mut gb = vec![0.0; c];
    for (l, w, b) in chunks {
        loss += l;
        for (dst, src) in gw.iter_mut().zip(&w) {
            dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
        }
        gb.iter_mut().zip(&b).for_each(|(a, b)| *a += b);
    }
    let nf = n as f64;
    let penalty: f64 = weights.iter().flatten().map(|w| w * w).sum::<f64>() * l2 / 2.0;
    for (gk, wk) in gw.iter_mut().zip(weights) {
        for (g, w) in gk.iter_mut().zip(wk) {
            *g = *g / nf + l2 * w;
        }
    }
    gb.iter_mut().for_each(|g| *g /= nf);
    (loss / nf + penalty, gw, gb)
}

/// Multinomial logistic regression by full-batch gradient descent from zero.
///
/// Fails with `Diverged` if the regularized objective ever increases.
pub fn head_train(train: &EmbeddingSet, config: HeadConfig) -> Result<LinearHead> {
    train.require_all_classes()?;
    let (c, d) = (train.class_count(), train.dim());
    let mut weights = vec![vec![0.0; d]; c];
    let mut bias = vec![0.0; c];
    let mut trace: Vec<f64> = Vec::with_capacity(config.iterations + 1);
    for step in 0..=config.iterations {
        let (loss, gw, gb) = objective_and_gradient(train, &weights, &bias, config.l2);
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("objective is {loss} at step {step}")));
        }
        if let Some(&prev) = trace.last() {
            if loss > prev + 1e-12 * (1.0 + prev.abs()) {
                return Err(Error::Diverged(format!(
                    "objective rose from {prev} to {loss} at step {step}"
                )));
            }
        }
        trace.push(loss);
        if step == config.iterations {
            break;
        }
        for (wk, gk) in weights.iter_mut().zip(&gw) {
            wk.iter_mut().zip(gk).for_each(|(w, g)| *w -= config.learning_rate * g);
        }
        bias.iter_mut().zip(&gb).for_each(|(b, g)| *b -= config.learning_rate * g);
    }
    Ok(LinearHead {
        weights,
        bias,
        config,
        loss_trace: trace,
    })
}

impl LinearHead {
    pub fn class_count(&self) -> usize {
        self.bias.len()
    }

    pub fn dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn logits(&self, z: &[f32]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| b + w.iter().zip(z).map(|(w, &x)| w * f64::from(x)).sum::<f64>())
            .collect()
    }

    pub fn predict(&self, set: &EmbeddingSet) -> Result<Vec<u32>> {
        set.require_dim(self.dim())?;
        Ok(set
            .iter_rows()
            .map(|z| {
                let l = self.logits(z);
                let mut best = 0;
                for k in 1..l.len() {
                    if l[k] > l[best] {
                        best = k;
                    }
                }
                best as u32
            })
            .collect())
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

/// Score of one logit vector: max softmax probability, log-sum-exp, or max
/// logit.
pub fn logit_score(logits: &[f64], method: LogitMethod) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    match method {
        LogitMethod::Msp => 1.0 / logits.iter().map(|l| (l - max).exp()).sum::<f64>(),
        LogitMethod::Energy => log_sum_exp(logits),
        LogitMethod::Mls => max,
    }
}

pub fn logit_scores(head: &LinearHead, query: &EmbeddingSet, method: LogitMethod) -> Result<ScoreVector> {
    query.require_dim(head.dim())?;
    let scores = (0..query.rows())
        .into_par_iter()
        .map(|i| logit_score(&head.logits(query.row(i)), method))
        .collect();
    ScoreVector::new(method.name(), scores)
}

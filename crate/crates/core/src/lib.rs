//! Post-hoc out-of-distribution detection over precomputed embeddings.
//!
//! The centerpiece is spurious-aware prototype refinement ([`sprod`]): class
//! prototypes are split into majority and minority group prototypes using
//! only class labels, and queries are scored by their distance to the nearest
//! group prototype. Around it sit reference scorers ([`baselines`]), exact
//! detection metrics ([`metrics`]), a synthetic spurious-correlation benchmark
//! ([`synth`]) and an experiment runner ([`experiment`]).

pub mod baselines;
pub mod data;
pub mod error;
pub mod experiment;
pub mod io;
mod json;
pub mod metrics;
pub mod model;
pub mod sprod;
pub mod synth;

pub use data::{EmbeddingSet, ScoreVector};
pub use error::{Error, ErrorKind, Result};
pub use experiment::{ExperimentConfig, RunReport};
pub use metrics::MetricsSummary;
pub use model::{FittedModel, MethodSpec, Scoring};
pub use sprod::{DistanceMetric, GroupKey, GroupKind, PrototypeBank, Stage};
pub use synth::{SyntheticData, SyntheticSpec};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

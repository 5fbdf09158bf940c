//! Reference post-hoc OOD scorers: Mahalanobis (MDS), k-nearest-neighbor
//! distance, and the output-based MSP / Energy / MLS over a linear head.

mod head;
mod knn;
mod mds;

pub use head::{head_train, logit_score, logit_scores, HeadConfig, LinearHead, LogitMethod};
pub use knn::{knn_score, KnnModel, DEFAULT_K};
pub use mds::{mds_fit, mds_score, GaussianModel, MdsConfig};

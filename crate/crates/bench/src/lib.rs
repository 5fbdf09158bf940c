//! Shared inputs for the criterion benchmarks.

use sprod_core::synth::generate;
use sprod_core::{SyntheticData, SyntheticSpec};

/// Synthetic benchmark with `c` classes and `n` training rows per class.
pub fn synthetic(c: usize, n: usize) -> SyntheticData {
    generate(&SyntheticSpec {
        class_count: c,
        core_dims: c + 2,
        spurious_dims: c + 2,
        correlation_rate: 0.9,
        samples_per_class: n,
        ..SyntheticSpec::default()
    })
    .expect("valid benchmark spec")
}

/// Deterministic score vectors with many ties, `n` entries each.
pub fn scores(n: usize) -> (Vec<f64>, Vec<f64>) {
    let wave = |i: usize, shift: f64| ((i * 7919 % 1000) as f64 / 100.0).round() / 10.0 + shift;
    ((0..n).map(|i| wave(i, 0.3)).collect(), (0..n).map(|i| wave(i + 17, 0.0)).collect())
}

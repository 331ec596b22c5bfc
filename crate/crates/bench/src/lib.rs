//! Shared fixtures for the benchmarks.

use std::path::Path;

use lakejoin_core::autodiff::Mat;
use lakejoin_core::config::RunConfig;
use lakejoin_core::eval::{synth_lake, SynthSpec};
use lakejoin_core::lake::Lake;
use lakejoin_core::pipeline::{self, Prepared};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` random unit rows of width `d`.
pub fn unit_rows(seed: u64, n: usize, d: usize) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Mat::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
    for mut row in m.rows_mut() {
        let norm = row.dot(&row).sqrt();
        row /= norm;
    }
    m
}

/// Synthetic lake prepared for a model of width `dim`.
pub fn synthetic(clusters: usize, dim: usize) -> (Lake, Prepared, RunConfig) {
    let spec = SynthSpec {
        clusters,
        ..SynthSpec::default()
    };
    let lake = synth_lake(&spec)
        .expect("valid spec")
        .to_lake(Path::new("synthetic"))
        .expect("synthetic lake loads");
    let mut cfg = RunConfig::default();
    cfg.featurizer.dim = dim;
    cfg.hin.dim = dim;
    let variants = pipeline::variant_sets(&lake, &cfg.augment).expect("rule variants");
    let prepared = pipeline::prepare(&lake, &cfg, &variants).expect("lake prepares");
    (lake, prepared, cfg)
}

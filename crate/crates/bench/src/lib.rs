//! Fixtures shared by the benchmarks.

use ggls_core::data::{generate_synthetic, DomainDataset, SyntheticShiftSpec};
use ggls_core::GglsConfig;

/// Synthetic shift problem with `per_class` samples per class in each domain.
pub fn shifted_problem(per_class: usize, dimension: usize) -> DomainDataset {
    generate_synthetic(&SyntheticShiftSpec {
        samples_per_class_source: per_class,
        samples_per_class_target: per_class,
        dimension,
        ..Default::default()
    })
    .expect("benchmark spec is valid")
}

pub fn bench_config(dimension: usize) -> GglsConfig {
    GglsConfig {
        subspace_dim: (dimension / 2).clamp(1, 30),
        ..Default::default()
    }
}

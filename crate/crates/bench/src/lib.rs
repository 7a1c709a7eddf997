//! Shared fixtures for the benchmarks.

use probekit::{rng, Arch, ProbeParams, ReprDataset};
use rand::Rng;

/// Log-weights spread over `[-scale, scale]`.
pub fn log_weights(dim: usize, scale: f64, seed: u64) -> Vec<f64> {
    let mut r = rng::seeded(seed);
    (0..dim).map(|_| r.random_range(-scale..scale)).collect()
}

/// Uniform features with labels driven by the first two dimensions.
pub fn dataset(n: usize, dim: usize, seed: u64) -> ReprDataset {
    let mut r = rng::seeded(seed);
    let matrix: Vec<f64> = (0..n * dim).map(|_| r.random_range(-1.0..1.0)).collect();
    let labels = (0..n)
        .map(|i| if matrix[i * dim] + matrix[i * dim + 1] > 0.0 { "pos" } else { "neg" }.to_string())
        .collect();
    let lemmas = (0..n).map(|i| format!("l{i}")).collect();
    ReprDataset::new(matrix, dim, labels, lemmas, None).expect("valid fixture")
}

/// A linear probe with random weights for `ds`.
pub fn probe(ds: &ReprDataset, seed: u64) -> ProbeParams {
    let mut theta = ProbeParams::zeros(Arch::Linear, ds.dim(), 0, ds.classes().to_vec()).expect("valid probe");
    theta.init_uniform(&mut rng::seeded(seed), 1.0);
    theta
}

#![allow(dead_code)]

use mtnet::data::EncodedCohort;
use mtnet::diffcore::{Matrix, Rng};
use mtnet::network::NetworkConfig;

/// Two Gaussian clusters at ±2 with unit-half spread; every fifth subject
/// is positive.
pub fn separable_cohort(n: usize, waves: usize, dim: usize, seed: u64) -> EncodedCohort {
    let mut rng = Rng::new(seed);
    let labels: Vec<u8> = (0..n).map(|i| u8::from(i % 5 == 0)).collect();
    let samples = labels
        .iter()
        .map(|&y| {
            let shift = if y == 1 { 2.0 } else { -2.0 };
            Matrix::from_vec(waves, dim, (0..waves * dim).map(|_| shift + 0.5 * rng.normal()).collect()).unwrap()
        })
        .collect();
    EncodedCohort {
        waves,
        dim,
        subject_ids: (0..n).map(|i| format!("s{i:04}")).collect(),
        samples,
        labels,
        feature_names: (0..dim).map(|j| format!("f{j}")).collect(),
        groups: (0..dim).collect(),
    }
}

pub fn small_network(dim: usize, waves: usize) -> NetworkConfig {
    NetworkConfig {
        input_dim: dim,
        waves,
        lstm_units: 8,
        feature_dim: 4,
        dropout_rate: 0.5,
    }
}

//! Fixed inputs shared by the benchmarks, so timings are comparable between
//! runs and machines.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vstg_core::{generate, HyperParams, SynFamily, SynSpec, SyntheticData};

pub fn random_vector(len: usize, seed: u64) -> Array1<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array1::from_shape_fn(len, |_| rng.random_range(-3.0..3.0))
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-3.0..3.0))
}

pub fn syn(family: SynFamily) -> SyntheticData {
    generate(&SynSpec::new(family, 1)).expect("synthetic data")
}

/// The setting used in most synthetic experiments: every weight 2^-4, rank 5.
pub fn typical_hyperparams(k: usize) -> HyperParams {
    HyperParams {
        gamma1: 0.0625,
        gamma2: 0.0625,
        mu: 0.0625,
        rank: 5,
        k,
        ..HyperParams::default()
    }
}

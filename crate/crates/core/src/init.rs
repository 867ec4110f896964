//! Seeded parameter initialization helpers.

use crate::tensor::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;

/// Normal(0, std^2) matrix.
pub fn randn(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            z * std
        })
        .collect();
    Tensor::new(rows, cols, data).expect("shape/data agree")
}

/// Fan-in scaled init for a linear layer mapping `fan_in -> fan_out`.
pub fn linear_init(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor {
    randn(rng, fan_in, fan_out, 1.0 / (fan_in as f64).sqrt())
}

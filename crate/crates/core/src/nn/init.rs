//! Weight initialization.
//!
//! Convolutions draw from `N(0, 2/fan_in)`; linear layers draw weights and
//! biases from `U(-1/√fan_in, 1/√fan_in)`; batchnorm starts at the identity
//! (`γ = 1`, `β = 0`, running mean 0, running variance 1).

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};

use crate::tensor::{Elem, Tensor};

pub fn conv_weight<T: Elem>(shape: &[usize], rng: &mut dyn RngCore) -> Tensor<T> {
    let fan_in: usize = shape[1..].iter().product();
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    let len = shape.iter().product();
    let data = (0..len).map(|_| T::from_f64_lossy(normal.sample(rng))).collect();
    Tensor::from_vec(shape, data).expect("shape matches length")
}

pub fn uniform_fan_in<T: Elem>(shape: &[usize], fan_in: usize, rng: &mut dyn RngCore) -> Tensor<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let len = shape.iter().product();
    let data = (0..len)
        .map(|_| T::from_f64_lossy(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::from_vec(shape, data).expect("shape matches length")
}

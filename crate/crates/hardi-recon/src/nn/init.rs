//! Parameter initialization: He-uniform filters, zero biases.

use crate::nn::conv::ConvSpec;
use crate::nn::tensor::Tensor;
use crate::nn::Real;
use crate::rng::Rng;

/// He-uniform bound for a layer with the given fan-in.
pub fn he_uniform_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

/// Filters drawn uniform in [-sqrt(6/fan_in), +sqrt(6/fan_in)] with
/// fan_in = in_channels * kernel; bias (when the layer has one) all zeros.
/// Deterministic per (layer shape, seed).
pub fn init_conv_params<T: Real>(spec: &ConvSpec, seed: u64) -> (Tensor<T>, Option<Tensor<T>>) {
    let shape = spec.filter_shape();
    let fan_in = spec.in_channels * spec.kernel;
    let bound = he_uniform_bound(fan_in);
    let mut rng = Rng::seed_from_u64(seed);
    let data: Vec<T> = (0..shape.iter().product::<usize>())
        .map(|_| T::from_f64(rng.next_f64_in(-bound, bound)))
        .collect();
    let filters = Tensor::from_vec(&shape, data).expect("shape matches count");
    let bias = spec
        .has_bias
        .then(|| Tensor::zeros(&[spec.out_channels]));
    (filters, bias)
}

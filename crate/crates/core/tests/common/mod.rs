//! Helpers shared by the integration suites.
#![allow(dead_code)]

use loasp::module::{named_parameters, zero_grad, Module};
use loasp::numerics::gradcheck::finite_difference_in_place;
use loasp::numerics::{ops, relative_error, Tensor};
use loasp::rng::{gaussian, stream};
use loasp::Result;

pub const FD_EPS: f64 = 1e-6;
pub const GRAD_TOL: f64 = 1e-4;

pub fn random_tensor(seed: u64, shape: &[usize], std: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, gaussian(&mut stream(seed), n, std)).unwrap()
}

pub fn random_param(seed: u64, shape: &[usize], std: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::param(shape, gaussian(&mut stream(seed), n, std)).unwrap()
}

/// Overwrites every parameter with Gaussian noise. Batch-norm scales are
/// kept near one so normalized activations stay well conditioned.
pub fn randomize(m: &dyn Module, seed: u64, std: f64) {
    let mut rng = stream(seed);
    for (name, t) in named_parameters(m) {
        let noise = gaussian(&mut rng, t.numel(), std);
        let mut d = t.data_mut();
        if name.ends_with("gamma") {
            d.iter_mut().zip(noise).for_each(|(v, z)| *v = 1.0 + 0.2 * z);
        } else {
            d.copy_from_slice(&noise);
        }
    }
}

/// `sum(out * weights)`: a scalar whose gradient reaches every output entry
/// with a different weight.
pub fn weighted_sum(out: &Tensor, weights: &Tensor) -> Result<Tensor> {
    Ok(ops::sum(&ops::mul(out, weights)?))
}

/// Up to `count` evenly spread coordinates of a tensor with `n` entries.
pub fn spread_indices(n: usize, count: usize) -> Vec<usize> {
    if n <= count {
        return (0..n).collect();
    }
    let mut idx: Vec<usize> = (0..count).map(|i| i * (n - 1) / (count - 1)).collect();
    idx.dedup();
    idx
}

/// Relative error between backprop and central differences for each named
/// parameter group of `m`, on `per_group` coordinates per group.
pub fn parameter_errors(m: &dyn Module, per_group: usize, loss: &dyn Fn() -> Result<Tensor>) -> Vec<(String, f64)> {
    zero_grad(m);
    loss().unwrap().backward().unwrap();
    named_parameters(m)
        .into_iter()
        .map(|(name, t)| {
            let full = t.grad().unwrap_or_else(|| vec![0.0; t.numel()]);
            let idx = spread_indices(t.numel(), per_group);
            let analytic: Vec<f64> = idx.iter().map(|&i| full[i]).collect();
            let numeric = finite_difference_in_place(|| Ok(loss()?.item()), &t, &idx, FD_EPS).unwrap();
            (name, relative_error(&analytic, &numeric))
        })
        .collect()
}

/// Same check for a free-standing leaf tensor.
pub fn leaf_error(leaf: &Tensor, per_group: usize, loss: &dyn Fn() -> Result<Tensor>) -> f64 {
    leaf.zero_grad();
    loss().unwrap().backward().unwrap();
    let full = leaf.grad().unwrap_or_else(|| vec![0.0; leaf.numel()]);
    let idx = spread_indices(leaf.numel(), per_group);
    let analytic: Vec<f64> = idx.iter().map(|&i| full[i]).collect();
    let numeric = finite_difference_in_place(|| Ok(loss()?.item()), leaf, &idx, FD_EPS).unwrap();
    relative_error(&analytic, &numeric)
}

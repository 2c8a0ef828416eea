//! Parameter traversal shared by every layer, block and model.

use crate::error::Result;
use crate::numerics::conv::conv2d;
use crate::numerics::norm::BatchNormState;
use crate::numerics::tensor::Tensor;
use crate::rng::{kaiming, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    /// Trainable parameter.
    Param,
    /// Persistent state that is not trained (running statistics).
    Buffer,
}

pub trait Module {
    /// Calls `f` on every tensor owned by this module with a dotted name.
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor, Role));
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub fn named_tensors(m: &dyn Module, role: Option<Role>) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    m.visit("", &mut |name, t, r| {
        if role.is_none_or(|want| want == r) {
            out.push((name, t.clone()));
        }
    });
    out
}

pub fn named_parameters(m: &dyn Module) -> Vec<(String, Tensor)> {
    named_tensors(m, Some(Role::Param))
}

pub fn parameters(m: &dyn Module) -> Vec<Tensor> {
    named_parameters(m).into_iter().map(|(_, t)| t).collect()
}

pub fn parameter_count(m: &dyn Module) -> usize {
    parameters(m).iter().map(Tensor::numel).sum()
}

pub fn zero_grad(m: &dyn Module) {
    parameters(m).iter().for_each(Tensor::zero_grad);
}

/// Bias-free convolution layer.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: Tensor,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Conv {
    pub fn from_weight(weight: Tensor, stride: usize, padding: usize, groups: usize) -> Self {
        Self {
            weight,
            stride,
            padding,
            groups,
        }
    }

    /// Fan-in scaled Gaussian initialization.
    pub fn kaiming(rng: &mut Rng, c_in: usize, c_out: usize, k: usize, stride: usize, padding: usize, groups: usize) -> Self {
        let shape = [c_out, c_in / groups, k, k];
        let fan_in = c_in / groups * k * k;
        let n = shape.iter().product();
        let weight = Tensor::param(&shape, kaiming(rng, n, fan_in)).expect("valid conv shape");
        Self::from_weight(weight, stride, padding, groups)
    }

    pub fn zeros(c_in: usize, c_out: usize, k: usize, stride: usize, padding: usize, groups: usize) -> Self {
        let shape = [c_out, c_in / groups, k, k];
        let weight = Tensor::param(&shape, vec![0.0; shape.iter().product()]).expect("valid conv shape");
        Self::from_weight(weight, stride, padding, groups)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv2d(x, &self.weight, self.stride, self.padding, self.groups)
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1] * self.groups
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }
}

impl Module for Conv {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor, Role)) {
        f(join(prefix, "weight"), &self.weight, Role::Param);
    }
}

impl Module for BatchNormState {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor, Role)) {
        f(join(prefix, "gamma"), &self.gamma, Role::Param);
        f(join(prefix, "beta"), &self.beta, Role::Param);
        f(join(prefix, "running_mean"), &self.running_mean, Role::Buffer);
        f(join(prefix, "running_var"), &self.running_var, Role::Buffer);
    }
}

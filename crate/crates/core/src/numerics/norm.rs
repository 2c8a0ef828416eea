use crate::error::{ensure, Error, Result};
use crate::numerics::ops::nchw;
use crate::numerics::tensor::Tensor;

/// Whether normalization layers use batch or running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel batch-normalization parameters and running statistics.
#[derive(Clone, Debug)]
pub struct BatchNormState {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormState {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::param(&[channels], vec![1.0; channels]).expect("positive channel count"),
            beta: Tensor::param(&[channels], vec![0.0; channels]).expect("positive channel count"),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }
}

pub fn batch_norm(input: &Tensor, state: &BatchNormState, mode: Mode) -> Result<Tensor> {
    let (n, c, h, w) = nchw("batch_norm", input)?;
    ensure!(
        state.channels() == c,
        Error::shape(
            "batch_norm",
            format!("input {:?} for {} normalized channels", input.shape(), state.channels())
        )
    );
    let hw = h * w;
    let count = n * hw;
    let eps = state.eps;
    let x = input.to_vec();
    let gamma = state.gamma.to_vec();
    let beta = state.beta.to_vec();
    let inputs = vec![input.clone(), state.gamma.clone(), state.beta.clone()];
    let planes = move |ch: usize| (0..n).map(move |b| (b * c + ch) * hw);

    match mode {
        Mode::Eval => {
            let rm = state.running_mean.to_vec();
            let rv = state.running_var.to_vec();
            let inv_std: Vec<f64> = rv.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
            let mut out = vec![0.0; x.len()];
            for ch in 0..c {
                for start in planes(ch) {
                    for i in start..start + hw {
                        out[i] = (x[i] - rm[ch]) * inv_std[ch] * gamma[ch] + beta[ch];
                    }
                }
            }
            Ok(Tensor::from_op("batch_norm_eval", vec![n, c, h, w], out, inputs, move |ctx| {
                let g = ctx.grad_out;
                let mut gx = vec![0.0; g.len()];
                let mut gg = vec![0.0; c];
                let mut gb = vec![0.0; c];
                for ch in 0..c {
                    for start in planes(ch) {
                        for i in start..start + hw {
                            let xhat = (x[i] - rm[ch]) * inv_std[ch];
                            gx[i] = g[i] * gamma[ch] * inv_std[ch];
                            gg[ch] += g[i] * xhat;
                            gb[ch] += g[i];
                        }
                    }
                }
                vec![Some(gx), Some(gg), Some(gb)]
            }))
        }
        Mode::Train => {
            ensure!(
                count >= 2,
                Error::Contract(format!(
                    "degenerate batch for batch_norm: N*H*W = {count} < 2 (input {:?})",
                    input.shape()
                ))
            );
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ch in 0..c {
                let s: f64 = planes(ch).flat_map(|st| x[st..st + hw].iter()).sum();
                mean[ch] = s / count as f64;
                let ss: f64 = planes(ch)
                    .flat_map(|st| x[st..st + hw].iter())
                    .map(|v| (v - mean[ch]).powi(2))
                    .sum();
                var[ch] = ss / count as f64;
            }
            {
                let m = state.momentum;
                let mut rm = state.running_mean.data_mut();
                let mut rv = state.running_var.data_mut();
                for ch in 0..c {
                    rm[ch] = (1.0 - m) * rm[ch] + m * mean[ch];
                    let unbiased = var[ch] * count as f64 / (count - 1) as f64;
                    rv[ch] = (1.0 - m) * rv[ch] + m * unbiased;
                }
            }
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
            let mut xhat = vec![0.0; x.len()];
            let mut out = vec![0.0; x.len()];
            for ch in 0..c {
                for start in planes(ch) {
                    for i in start..start + hw {
                        xhat[i] = (x[i] - mean[ch]) * inv_std[ch];
                        out[i] = xhat[i] * gamma[ch] + beta[ch];
                    }
                }
            }
            Ok(Tensor::from_op("batch_norm_train", vec![n, c, h, w], out, inputs, move |ctx| {
                let g = ctx.grad_out;
                let mut gx = vec![0.0; g.len()];
                let mut gg = vec![0.0; c];
                let mut gb = vec![0.0; c];
                for ch in 0..c {
                    for start in planes(ch) {
                        for i in start..start + hw {
                            gg[ch] += g[i] * xhat[i];
                            gb[ch] += g[i];
                        }
                    }
                    let mg = gb[ch] / count as f64;
                    let mgx = gg[ch] / count as f64;
                    let scale = gamma[ch] * inv_std[ch];
                    for start in planes(ch) {
                        for i in start..start + hw {
                            gx[i] = scale * (g[i] - mg - xhat[i] * mgx);
                        }
                    }
                }
                vec![Some(gx), Some(gg), Some(gb)]
            }))
        }
    }
}

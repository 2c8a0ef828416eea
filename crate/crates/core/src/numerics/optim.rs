//! AdamW with decoupled weight decay and the halving step schedule.

use crate::error::{ensure, Error, Result};
use crate::numerics::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// Moment buffers for a fixed, ordered list of parameters.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(config: AdamWConfig, params: &[Tensor]) -> Self {
        Self {
            config,
            step: 0,
            first: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            second: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        }
    }

    pub fn first_moment(&self, i: usize) -> &[f64] {
        &self.first[i]
    }

    pub fn second_moment(&self, i: usize) -> &[f64] {
        &self.second[i]
    }
}

/// One AdamW update. `names` label parameters in error messages. Parameters
/// without a gradient are treated as having a zero gradient.
pub fn adamw_step(params: &[Tensor], names: &[String], state: &mut OptimizerState) -> Result<()> {
    ensure!(
        params.len() == state.first.len() && names.len() == params.len(),
        Error::Contract(format!(
            "optimizer tracks {} parameters, got {} ({} names)",
            state.first.len(),
            params.len(),
            names.len()
        ))
    );
    let grads: Vec<Option<Vec<f64>>> = params.iter().map(Tensor::grad).collect();
    for ((p, g), name) in params.iter().zip(&grads).zip(names) {
        if let Some(g) = g {
            ensure!(
                g.len() == p.numel(),
                Error::shape("adamw_step", format!("gradient length {} for `{name}` {:?}", g.len(), p.shape()))
            );
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient for parameter `{name}`")));
            }
        }
    }
    state.step += 1;
    let AdamWConfig {
        lr,
        beta1,
        beta2,
        eps,
        weight_decay,
    } = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        let mut theta = p.data_mut();
        let (m, v) = (&mut state.first[i], &mut state.second[i]);
        for j in 0..theta.len() {
            let gj = g.as_ref().map_or(0.0, |g| g[j]);
            m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
            v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            theta[j] -= lr * mhat / (vhat.sqrt() + eps) + lr * weight_decay * theta[j];
        }
    }
    Ok(())
}

/// `base_lr / 2^floor(epoch / period)`.
pub fn step_lr(epoch: usize, base_lr: f64, period: usize) -> f64 {
    let period = period.max(1);
    base_lr / 2f64.powi((epoch / period) as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param_step(theta: f64, g: f64, cfg: AdamWConfig) -> f64 {
        let p = Tensor::param(&[1], vec![theta]).unwrap();
        let w = Tensor::param(&[1], vec![g]).unwrap();
        // loss = p * g (with g held in a second leaf) gives d/dp = g
        crate::numerics::ops::mul(&p, &w.detach()).unwrap().backward().unwrap();
        let mut st = OptimizerState::new(cfg, std::slice::from_ref(&p));
        adamw_step(std::slice::from_ref(&p), &["p".into()], &mut st).unwrap();
        assert_eq!(st.step, 1);
        p.item()
    }

    #[test]
    fn first_step_hand_value() {
        // 1 - 3e-3 * 1/(1+1e-8) - 3e-3 * 1e-4 * 1
        let got = one_param_step(1.0, 1.0, AdamWConfig::default());
        let want = 1.0 - 3e-3 / (1.0 + 1e-8) - 3e-7;
        assert!((got - want).abs() < 1e-15);
        assert!((got - 0.9969997).abs() < 1e-9);
    }

    #[test]
    fn zero_stays_zero() {
        assert_eq!(one_param_step(0.0, 0.0, AdamWConfig::default()), 0.0);
    }

    #[test]
    fn no_decay_no_gradient() {
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        assert_eq!(one_param_step(5.0, 0.0, cfg), 5.0);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let q = Tensor::param(&[1], vec![1.0]).unwrap();
        q.set_grad(vec![f64::NAN]);
        let mut st = OptimizerState::new(AdamWConfig::default(), std::slice::from_ref(&q));
        let err = adamw_step(std::slice::from_ref(&q), &["stem.weight".into()], &mut st).unwrap_err();
        assert!(matches!(err, Error::Numeric(ref m) if m.contains("stem.weight")));
        assert_eq!(st.step, 0);
    }

    #[test]
    fn schedule_halves_each_period() {
        assert_eq!(step_lr(0, 3e-3, 100), 3e-3);
        assert_eq!(step_lr(99, 3e-3, 100), 3e-3);
        assert_eq!(step_lr(100, 3e-3, 100), 1.5e-3);
        assert_eq!(step_lr(250, 3e-3, 100), 7.5e-4);
    }
}

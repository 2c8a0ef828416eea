use crate::error::Result;
use crate::module::{join, Conv, Module, Role};
use crate::numerics::ops;
use crate::numerics::tensor::Tensor;
use crate::rng::Rng;

/// Low-rank update path `B * (A * x)`: `A` Gaussian, `B` zero.
#[derive(Clone, Debug)]
pub struct LoraBranch {
    pub a: Conv,
    pub b: Conv,
}

impl LoraBranch {
    pub fn new(rng: &mut Rng, c_in: usize, rank: usize, c_out: usize, k: usize, stride: usize) -> Self {
        Self {
            a: Conv::kaiming(rng, c_in, rank, k, stride, k / 2, 1),
            b: Conv::zeros(rank, c_out, 1, 1, 0, 1),
        }
    }

    pub fn delta(&self, x: &Tensor) -> Result<Tensor> {
        self.b.forward(&self.a.forward(x)?)
    }

    /// The equivalent dense kernel `B·A`, shaped like `A` with `C_out` rows.
    pub fn merged_kernel(&self) -> Tensor {
        let a = self.a.weight.to_vec();
        let b = self.b.weight.to_vec();
        let &[rank, cin, kh, kw] = self.a.weight.shape() else { unreachable!() };
        let c_out = self.b.out_channels();
        let per = cin * kh * kw;
        let mut out = vec![0.0; c_out * per];
        for o in 0..c_out {
            for j in 0..rank {
                let bj = b[o * rank + j];
                for t in 0..per {
                    out[o * per + t] += bj * a[j * per + t];
                }
            }
        }
        Tensor::new(&[c_out, cin, kh, kw], out).expect("consistent shapes")
    }
}

impl Module for LoraBranch {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor, Role)) {
        self.a.visit(&join(prefix, "a"), f);
        self.b.visit(&join(prefix, "b"), f);
    }
}

/// Host convolution `W_0` plus a low-rank update.
#[derive(Clone, Debug)]
pub struct LoraModule {
    pub w0: Conv,
    pub branch: LoraBranch,
}

impl LoraModule {
    pub fn new(rng: &mut Rng, w0: Conv, rank: usize) -> Self {
        let k = w0.weight.shape()[2];
        let branch = LoraBranch::new(rng, w0.in_channels(), rank, w0.out_channels(), k, w0.stride);
        Self { w0, branch }
    }
}

impl Module for LoraModule {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor, Role)) {
        self.w0.visit(&join(prefix, "w0"), f);
        self.branch.visit(&join(prefix, "lora"), f);
    }
}

/// `W_0 * x + B * (A * x)`.
pub fn lora_forward(x: &Tensor, m: &LoraModule) -> Result<Tensor> {
    ops::add(&m.w0.forward(x)?, &m.branch.delta(x)?)
}

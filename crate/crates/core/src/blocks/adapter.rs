use crate::error::{ensure, Error, Result};
use crate::module::{join, Conv, Module, Role};
use crate::numerics::ops;
use crate::numerics::tensor::Tensor;
use crate::rng::{gaussian, kaiming, Rng};

/// Serial bottleneck `B * relu(A * input)` added onto a residual.
#[derive(Clone, Debug)]
pub struct AdapterModule {
    pub a: Conv,
    pub b: Conv,
}

/// Scale of the near-zero up-projection initialization.
pub const ADAPTER_INIT_STD: f64 = 1e-3;

impl AdapterModule {
    pub fn new(rng: &mut Rng, c_in: usize, bottleneck: usize, c_out: usize) -> Self {
        let a = Tensor::param(&[bottleneck, c_in, 1, 1], kaiming(rng, bottleneck * c_in, c_in)).expect("valid shape");
        let b = Tensor::param(&[c_out, bottleneck, 1, 1], gaussian(rng, c_out * bottleneck, ADAPTER_INIT_STD))
            .expect("valid shape");
        Self {
            a: Conv::from_weight(a, 1, 0, 1),
            b: Conv::from_weight(b, 1, 0, 1),
        }
    }

    /// `B * relu(A * input)`.
    pub fn project(&self, input: &Tensor) -> Result<Tensor> {
        self.b.forward(&ops::relu(&self.a.forward(input)?))
    }

    /// `residual + B * relu(A * input)`; the projection must already match
    /// the residual's shape.
    pub fn forward_onto(&self, residual: &Tensor, input: &Tensor) -> Result<Tensor> {
        let p = self.project(input)?;
        ensure!(
            p.shape() == residual.shape(),
            Error::shape("adapter", format!("projection {:?} vs residual {:?}", p.shape(), residual.shape()))
        );
        ops::add(residual, &p)
    }
}

impl Module for AdapterModule {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor, Role)) {
        self.a.visit(&join(prefix, "a"), f);
        self.b.visit(&join(prefix, "b"), f);
    }
}

/// `h + B * relu(A * h)`.
pub fn adapter_forward(h: &Tensor, m: &AdapterModule) -> Result<Tensor> {
    m.forward_onto(h, h)
}

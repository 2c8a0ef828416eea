use crate::error::{ensure, Error, Result};
use crate::module::{join, Conv, Module, Role};
use crate::numerics::norm::{batch_norm, BatchNormState, Mode};
use crate::numerics::ops::nchw;
use crate::numerics::tensor::Tensor;
use crate::rng::Rng;
use crate::snake::DsConv;

/// Structural prior branch `s_t = BN(B_s * DSConv(BN(A_s * x_t)))`.
///
/// `A_s` is a strided 1x1 projection to the hidden width; the snake
/// convolution and `B_s` run at the reduced resolution.
#[derive(Clone, Debug)]
pub struct LospModule {
    pub a_s: Conv,
    pub bn_a: BatchNormState,
    pub dsconv: DsConv,
    pub b_s: Conv,
    pub bn_b: BatchNormState,
}

impl LospModule {
    /// `stride` is the total spatial reduction (rank times any host stride).
    pub fn new(rng: &mut Rng, c_in: usize, hidden: usize, k: usize, stride: usize) -> Result<Self> {
        ensure!(stride >= 1, Error::Contract("prior stride must be >= 1".into()));
        Ok(Self {
            a_s: Conv::kaiming(rng, c_in, hidden, 1, stride, 0, 1),
            bn_a: BatchNormState::new(hidden),
            dsconv: DsConv::new(rng, hidden, hidden, k)?,
            b_s: Conv::kaiming(rng, hidden, hidden, 1, 1, 0, 1),
            bn_b: BatchNormState::new(hidden),
        })
    }

    pub fn hidden(&self) -> usize {
        self.a_s.out_channels()
    }

    pub fn stride(&self) -> usize {
        self.a_s.stride
    }
}

impl Module for LospModule {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor, Role)) {
        self.a_s.visit(&join(prefix, "a_s"), f);
        self.bn_a.visit(&join(prefix, "bn_a"), f);
        self.dsconv.visit(&join(prefix, "dsconv"), f);
        self.b_s.visit(&join(prefix, "b_s"), f);
        self.bn_b.visit(&join(prefix, "bn_b"), f);
    }
}

pub fn losp_forward(x: &Tensor, m: &LospModule, mode: Mode) -> Result<Tensor> {
    let (_, _, h, w) = nchw("losp_forward", x)?;
    let stride = m.stride();
    ensure!(
        h >= stride && w >= stride,
        Error::TooSmall {
            op: "losp_forward",
            detail: format!("input {:?} is smaller than the prior stride {stride}", x.shape()),
        }
    );
    let z = batch_norm(&m.a_s.forward(x)?, &m.bn_a, mode)?;
    let z = m.dsconv.forward(&z)?;
    batch_norm(&m.b_s.forward(&z)?, &m.bn_b, mode)
}

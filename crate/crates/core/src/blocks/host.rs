use crate::error::Result;
use crate::module::{join, Conv, Module, Role};
use crate::numerics::norm::{batch_norm, BatchNormState, Mode};
use crate::numerics::ops;
use crate::numerics::tensor::Tensor;
use crate::rng::Rng;

/// A block a plug-in branch can wrap: maps `x_t` to `h_t`.
pub trait HostBlock: Module {
    fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor>;
    fn in_channels(&self) -> usize;
    fn out_channels(&self) -> usize;
    /// Spatial stride between input and output.
    fn stride(&self) -> usize;
}

/// Residual block with two 3x3 convolutions.
#[derive(Clone, Debug)]
pub struct BasicBlock {
    pub conv1: Conv,
    pub bn1: BatchNormState,
    pub conv2: Conv,
    pub bn2: BatchNormState,
    pub shortcut: Option<(Conv, BatchNormState)>,
}

impl BasicBlock {
    pub fn new(rng: &mut Rng, c_in: usize, c_out: usize, stride: usize) -> Self {
        let shortcut = (stride != 1 || c_in != c_out)
            .then(|| (Conv::kaiming(rng, c_in, c_out, 1, stride, 0, 1), BatchNormState::new(c_out)));
        Self {
            conv1: Conv::kaiming(rng, c_in, c_out, 3, stride, 1, 1),
            bn1: BatchNormState::new(c_out),
            conv2: Conv::kaiming(rng, c_out, c_out, 3, 1, 1, 1),
            bn2: BatchNormState::new(c_out),
            shortcut,
        }
    }
}

impl HostBlock for BasicBlock {
    fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let y = ops::relu(&batch_norm(&self.conv1.forward(x)?, &self.bn1, mode)?);
        let y = batch_norm(&self.conv2.forward(&y)?, &self.bn2, mode)?;
        let skip = match &self.shortcut {
            Some((conv, bn)) => batch_norm(&conv.forward(x)?, bn, mode)?,
            None => x.clone(),
        };
        Ok(ops::relu(&ops::add(&y, &skip)?))
    }

    fn in_channels(&self) -> usize {
        self.conv1.in_channels()
    }

    fn out_channels(&self) -> usize {
        self.conv1.out_channels()
    }

    fn stride(&self) -> usize {
        self.conv1.stride
    }
}

impl Module for BasicBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor, Role)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.bn1.visit(&join(prefix, "bn1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        self.bn2.visit(&join(prefix, "bn2"), f);
        if let Some((conv, bn)) = &self.shortcut {
            conv.visit(&join(prefix, "shortcut.conv"), f);
            bn.visit(&join(prefix, "shortcut.bn"), f);
        }
    }
}

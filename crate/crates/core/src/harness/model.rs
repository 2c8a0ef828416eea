use crate::blocks::{build_branch, BasicBlock, BlockConfig, FusionKind, HostBlock, PluggedBlock, PriorKind};
use crate::error::{ensure, Error, Result};
use crate::module::{join, Conv, Module, Role};
use crate::numerics::norm::{batch_norm, BatchNormState, Mode};
use crate::numerics::ops;
use crate::numerics::tensor::Tensor;
use crate::numerics::conv::conv_out_extent;
use crate::rng::{kaiming, stream};

/// Toy residual backbone layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub widths: Vec<usize>,
    pub blocks_per_stage: usize,
    pub classes: usize,
    pub image_size: usize,
    /// Plug-in cell attached to every block; `None` is the plain backbone.
    pub cell: Option<(PriorKind, FusionKind)>,
    pub block: BlockConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            widths: vec![16, 32, 64, 128],
            blocks_per_stage: 2,
            classes: 5,
            image_size: 64,
            cell: None,
            block: BlockConfig::default(),
        }
    }
}

pub const STEM_STRIDE: usize = 2;

/// Stem, residual stages and a linear head.
#[derive(Clone, Debug)]
pub struct ToyNet {
    pub stem: Conv,
    pub stem_bn: BatchNormState,
    pub blocks: Vec<PluggedBlock<BasicBlock>>,
    pub head_weight: Tensor,
    pub head_bias: Tensor,
}

/// Largest rank `<= r` whose strided prior still fits an input of
/// extent `extent`.
pub fn effective_rank(r: usize, extent: usize, host_stride: usize) -> usize {
    (1..=r).rev().find(|&q| q * host_stride <= extent).unwrap_or(1)
}

impl ToyNet {
    /// Host weights depend only on `seed`; branch weights come from a
    /// separate stream so every cell shares the same host initialization.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        ensure!(
            !config.widths.is_empty() && config.widths.iter().all(|&w| w > 0),
            Error::Config(format!("widths must be positive, got {:?}", config.widths))
        );
        ensure!(config.blocks_per_stage > 0, Error::Config("blocks_per_stage must be positive".into()));
        ensure!(config.classes >= 2, Error::Config("need at least two classes".into()));
        let mut host_rng = stream(seed);
        let mut branch_rng = stream(seed ^ 0xB4A2_C0DE);
        let stem = Conv::kaiming(&mut host_rng, 3, config.widths[0], 3, STEM_STRIDE, 1, 1);
        let mut extent = conv_out_extent(config.image_size, 3, STEM_STRIDE, 1)
            .ok_or_else(|| Error::Config(format!("image size {} too small", config.image_size)))?;
        let mut blocks = Vec::new();
        let mut c_in = config.widths[0];
        for (stage, &width) in config.widths.iter().enumerate() {
            for b in 0..config.blocks_per_stage {
                let stride = if stage > 0 && b == 0 { 2 } else { 1 };
                ensure!(
                    extent >= stride,
                    Error::Config(format!("image size {} too small for {} stages", config.image_size, config.widths.len()))
                );
                let host = BasicBlock::new(&mut host_rng, c_in, width, stride);
                let branch = match config.cell {
                    None => None,
                    Some((prior, fusion)) => {
                        let mut bc = config.block.clone();
                        bc.r = effective_rank(bc.r, extent, stride);
                        Some(build_branch(&mut branch_rng, c_in, width, stride, prior, fusion, &bc)?)
                    }
                };
                blocks.push(PluggedBlock { host, branch });
                extent = conv_out_extent(extent, 3, stride, 1).expect("checked above");
                c_in = width;
            }
        }
        let head_weight = Tensor::param(&[config.classes, c_in], kaiming(&mut host_rng, config.classes * c_in, c_in))?;
        let head_bias = Tensor::param(&[config.classes], vec![0.0; config.classes])?;
        Ok(Self {
            stem,
            stem_bn: BatchNormState::new(config.widths[0]),
            blocks,
            head_weight,
            head_bias,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        Ok(self.forward_probe(x, mode, None)?.0)
    }

    /// Logits plus the prior contribution at block `probe`.
    pub fn forward_probe(&self, x: &Tensor, mode: Mode, probe: Option<usize>) -> Result<(Tensor, Option<Tensor>)> {
        let mut h = ops::relu(&batch_norm(&self.stem.forward(x)?, &self.stem_bn, mode)?);
        let mut captured = None;
        for (i, block) in self.blocks.iter().enumerate() {
            let (out, s) = block.forward_with_prior(&h, mode)?;
            if probe == Some(i) {
                captured = s;
            }
            h = out;
        }
        let pooled = ops::global_avg_pool(&h)?;
        Ok((ops::linear(&pooled, &self.head_weight, &self.head_bias)?, captured))
    }

    /// Parameters of the host network only (stem, blocks, head).
    pub fn host_parameters(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit_host("", &mut |name, t, role| {
            if role == Role::Param {
                out.push((name, t.clone()));
            }
        });
        out
    }

    fn visit_host(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor, Role)) {
        self.stem.visit(&join(prefix, "stem"), f);
        self.stem_bn.visit(&join(prefix, "stem_bn"), f);
        for (i, b) in self.blocks.iter().enumerate() {
            b.host.visit(&join(prefix, &format!("blocks.{i}.host")), f);
        }
        f(join(prefix, "head.weight"), &self.head_weight, Role::Param);
        f(join(prefix, "head.bias"), &self.head_bias, Role::Param);
    }

    pub fn block_has_branch(&self, index: usize) -> bool {
        self.blocks.get(index).is_some_and(|b| b.branch.is_some())
    }

    pub fn out_channels(&self, index: usize) -> Option<usize> {
        self.blocks.get(index).map(|b| b.host.out_channels())
    }
}

impl Module for ToyNet {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor, Role)) {
        self.visit_host(prefix, f);
        for (i, b) in self.blocks.iter().enumerate() {
            if let Some(branch) = &b.branch {
                branch.visit(&join(prefix, &format!("blocks.{i}.branch")), f);
            }
        }
    }
}

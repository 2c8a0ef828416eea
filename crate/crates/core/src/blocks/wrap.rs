use std::fmt;
use std::str::FromStr;

use super::{AdapterModule, BlockConfig, HostBlock, LoapModule, LoraBranch, LospModule};
use crate::error::{ensure, Error, Result};
use crate::module::{join, Conv, Module, Role};
use crate::numerics::norm::Mode;
use crate::numerics::ops::{self, nchw};
use crate::numerics::tensor::Tensor;
use crate::rng::Rng;
use crate::snake::DsConv;
use crate::spline::KnotVector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PriorKind {
    Lora,
    DsConv,
    Loasp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FusionKind {
    Add,
    Adapter,
    Loap,
}

impl PriorKind {
    pub const ALL: [PriorKind; 3] = [PriorKind::Lora, PriorKind::DsConv, PriorKind::Loasp];

    pub fn name(self) -> &'static str {
        match self {
            PriorKind::Lora => "lora",
            PriorKind::DsConv => "dsconv",
            PriorKind::Loasp => "loasp",
        }
    }
}

impl FusionKind {
    pub const ALL: [FusionKind; 3] = [FusionKind::Add, FusionKind::Adapter, FusionKind::Loap];

    pub fn name(self) -> &'static str {
        match self {
            FusionKind::Add => "add",
            FusionKind::Adapter => "adapter",
            FusionKind::Loap => "loap",
        }
    }
}

fn valid_cells() -> String {
    let cells: Vec<String> = PriorKind::ALL
        .iter()
        .flat_map(|p| FusionKind::ALL.iter().map(move |f| format!("({}, {})", p.name(), f.name())))
        .collect();
    cells.join(", ")
}

impl FromStr for PriorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PriorKind::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown prior `{s}`; valid cells: {}", valid_cells())))
    }
}

impl FromStr for FusionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FusionKind::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown fusion `{s}`; valid cells: {}", valid_cells())))
    }
}

impl fmt::Display for PriorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for FusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Branch producing `s_t` from the block input.
#[derive(Clone, Debug)]
pub enum Prior {
    /// Low-rank path `B * (A * x)` at the host's output resolution.
    Lora(LoraBranch),
    /// Raw snake convolution at the input resolution.
    DsConv(DsConv),
    Losp(LospModule),
}

/// Fixed `[C_out, C_in, 1, 1]` map copying channel `i` to channel `i`;
/// surplus output channels stay zero.
fn identity_projection(c_in: usize, c_out: usize) -> Conv {
    let mut w = vec![0.0; c_out * c_in];
    for i in 0..c_in.min(c_out) {
        w[i * c_in + i] = 1.0;
    }
    Conv::from_weight(Tensor::new(&[c_out, c_in, 1, 1], w).expect("valid shape"), 1, 0, 1)
}

/// How `s_t` is merged into `h_t`.
#[derive(Clone, Debug)]
pub enum Fusion {
    /// `h_t + resize(s_t)`; the projection is a constant, not a parameter.
    Add { projection: Option<Conv> },
    Adapter(AdapterModule),
    Loap { loap: LoapModule, a_c: Conv },
}

/// Prior plus fusion: everything a plug-in adds on top of its host.
#[derive(Clone, Debug)]
pub struct Branch {
    pub prior: Prior,
    pub fusion: Fusion,
}

/// Upsamples `x` by the smallest integer factor that covers `(ho, wo)`,
/// then center-crops; larger maps are resized down.
fn fit_extent(x: &Tensor, ho: usize, wo: usize) -> Result<Tensor> {
    let (_, _, h, w) = nchw("fit_extent", x)?;
    if (h, w) == (ho, wo) {
        return Ok(x.clone());
    }
    if h <= ho && w <= wo {
        let factor = ho.div_ceil(h).max(wo.div_ceil(w));
        return ops::center_fit(&ops::nearest_upsample(x, factor)?, ho, wo);
    }
    ops::nearest_resize(x, ho, wo)
}

impl Branch {
    fn prior_output(&self, x: &Tensor, ho: usize, wo: usize, mode: Mode) -> Result<Tensor> {
        match &self.prior {
            Prior::Lora(b) => b.delta(x),
            Prior::DsConv(d) => fit_extent(&d.forward(x)?, ho, wo),
            Prior::Losp(m) => super::losp_forward(x, m, mode),
        }
    }

    /// Returns `(h'_t, contribution)` where the contribution is the term
    /// added to `h_t` by the prior path.
    pub fn forward(&self, x: &Tensor, h: &Tensor, mode: Mode) -> Result<(Tensor, Tensor)> {
        let (_, _, ho, wo) = nchw("branch", h)?;
        let s = self.prior_output(x, ho, wo, mode)?;
        match &self.fusion {
            Fusion::Add { projection } => {
                let s = fit_extent(&s, ho, wo)?;
                let s = match projection {
                    Some(p) => p.forward(&s)?,
                    None => s,
                };
                ensure!(
                    s.shape() == h.shape(),
                    Error::shape("add_fusion", format!("prior {:?} vs host {:?}", s.shape(), h.shape()))
                );
                Ok((ops::add(h, &s)?, s))
            }
            Fusion::Adapter(a) => {
                let t = fit_extent(&a.project(&s)?, ho, wo)?;
                ensure!(
                    t.shape() == h.shape(),
                    Error::shape("adapter_fusion", format!("prior {:?} vs host {:?}", t.shape(), h.shape()))
                );
                Ok((ops::add(h, &t)?, t))
            }
            Fusion::Loap { loap, a_c } => {
                let sp = super::loap_forward(&s, loap, ho, wo)?;
                Ok((super::loasp_fuse(h, &sp, a_c)?, sp))
            }
        }
    }
}

impl Module for Branch {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor, Role)) {
        match &self.prior {
            Prior::Lora(b) => b.visit(&join(prefix, "prior.lora"), f),
            Prior::DsConv(d) => d.visit(&join(prefix, "prior.dsconv"), f),
            Prior::Losp(m) => m.visit(&join(prefix, "prior.losp"), f),
        }
        match &self.fusion {
            Fusion::Add { .. } => {}
            Fusion::Adapter(a) => a.visit(&join(prefix, "fusion.adapter"), f),
            Fusion::Loap { loap, a_c } => {
                loap.visit(&join(prefix, "fusion.loap"), f);
                a_c.visit(&join(prefix, "fusion.a_c"), f);
            }
        }
    }
}

/// A host block with an optional plug-in branch.
#[derive(Clone, Debug)]
pub struct PluggedBlock<H> {
    pub host: H,
    pub branch: Option<Branch>,
}

impl<H: HostBlock> PluggedBlock<H> {
    pub fn plain(host: H) -> Self {
        Self { host, branch: None }
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        Ok(self.forward_with_prior(x, mode)?.0)
    }

    /// Output together with the prior contribution, when a branch exists.
    pub fn forward_with_prior(&self, x: &Tensor, mode: Mode) -> Result<(Tensor, Option<Tensor>)> {
        let h = self.host.forward(x, mode)?;
        match &self.branch {
            None => Ok((h, None)),
            Some(b) => {
                let (out, s) = b.forward(x, &h, mode)?;
                Ok((out, Some(s)))
            }
        }
    }
}

impl<H: HostBlock> Module for PluggedBlock<H> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor, Role)) {
        self.host.visit(&join(prefix, "host"), f);
        if let Some(b) = &self.branch {
            b.visit(&join(prefix, "branch"), f);
        }
    }
}

/// Builds the branch for one cell of the priors x fusion grid.
pub fn build_branch(
    rng: &mut Rng,
    c_in: usize,
    c_out: usize,
    host_stride: usize,
    prior: PriorKind,
    fusion: FusionKind,
    config: &BlockConfig,
) -> Result<Branch> {
    config.validate()?;
    let hidden = config.hidden(c_out);
    let (prior, c_s, factor) = match prior {
        PriorKind::Lora => (
            Prior::Lora(LoraBranch::new(rng, c_in, hidden, c_out, 3, host_stride)),
            c_out,
            1,
        ),
        PriorKind::DsConv => (Prior::DsConv(DsConv::new(rng, c_in, hidden, config.k)?), hidden, 1),
        PriorKind::Loasp => (
            Prior::Losp(LospModule::new(rng, c_in, hidden, config.k, config.r * host_stride)?),
            hidden,
            config.r,
        ),
    };
    let fusion = match fusion {
        FusionKind::Add => Fusion::Add {
            projection: (c_s != c_out).then(|| identity_projection(c_s, c_out)),
        },
        FusionKind::Adapter => Fusion::Adapter(AdapterModule::new(rng, c_s, hidden, c_out)),
        FusionKind::Loap => {
            let (lo, hi) = config.spline_domain;
            let knots = KnotVector::clamped_uniform(config.spline_p, config.spline_u, lo, hi)?;
            Fusion::Loap {
                loap: LoapModule::new(rng, c_s, hidden, c_out, factor, knots)?,
                a_c: Conv::zeros(c_out, c_out, 3, 1, 1, c_out),
            }
        }
    };
    Ok(Branch { prior, fusion })
}

/// Wraps `host` with the `(prior, fusion)` cell named by strings such as
/// `"loasp"` and `"loap"`.
pub fn wrap_block<H: HostBlock>(
    rng: &mut Rng,
    host: H,
    prior: &str,
    fusion: &str,
    config: &BlockConfig,
) -> Result<PluggedBlock<H>> {
    let prior: PriorKind = prior.parse()?;
    let fusion: FusionKind = fusion.parse()?;
    let branch = build_branch(
        rng,
        host.in_channels(),
        host.out_channels(),
        host.stride(),
        prior,
        fusion,
        config,
    )?;
    Ok(PluggedBlock {
        host,
        branch: Some(branch),
    })
}

//! Plug-in block family: structural prior branches, fusion heads and the
//! low-rank baselines used for ablations.

mod adapter;
mod host;
mod loap;
mod lora;
mod losp;
mod wrap;

pub use adapter::{adapter_forward, AdapterModule};
pub use host::{BasicBlock, HostBlock};
pub use loap::{loap_forward, loasp_fuse, LoapModule};
pub use lora::{lora_forward, LoraBranch, LoraModule};
pub use losp::{losp_forward, LospModule};
pub use wrap::{build_branch, wrap_block, Branch, Fusion, FusionKind, PluggedBlock, Prior, PriorKind};

use crate::error::{ensure, Error, Result};

/// Hidden width used by the prior and projector branches:
/// `max(8, 4 * round(C / 48))`.
pub fn hidden_width(channels: usize) -> usize {
    let quarter = (channels as f64 / 48.0).round() as usize;
    (4 * quarter).max(8)
}

/// Hyperparameters shared by every plug-in branch.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockConfig {
    /// Spatial down-scaling factor of the prior branch.
    pub r: usize,
    /// Hidden width; `None` applies [`hidden_width`].
    pub c_hidden: Option<usize>,
    /// Snake kernel length.
    pub k: usize,
    pub spline_p: usize,
    /// Number of uniform spline grid intervals.
    pub spline_u: usize,
    pub spline_domain: (f64, f64),
}

impl Default for BlockConfig {
    fn default() -> Self {
        Self {
            r: 4,
            c_hidden: None,
            k: 9,
            spline_p: 3,
            spline_u: 6,
            spline_domain: (-1.0, 1.0),
        }
    }
}

impl BlockConfig {
    pub fn hidden(&self, channels: usize) -> usize {
        self.c_hidden.unwrap_or_else(|| hidden_width(channels))
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.r >= 1, Error::Config(format!("loasp.r must be >= 1, got {}", self.r)));
        ensure!(
            self.k % 2 == 1,
            Error::Config(format!("dsconv.k must be odd, got {}", self.k))
        );
        ensure!(
            self.spline_u >= 1,
            Error::Config(format!("spline.u must be >= 1, got {}", self.spline_u))
        );
        ensure!(
            self.spline_domain.0 < self.spline_domain.1,
            Error::Config(format!("spline.domain must be increasing, got {:?}", self.spline_domain))
        );
        ensure!(
            self.c_hidden != Some(0),
            Error::Config("loasp.c_hidden must be positive".into())
        );
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn width_rule() {
        assert_eq!(hidden_width(16), 8);
        assert_eq!(hidden_width(128), 12);
        assert_eq!(hidden_width(256), 20);
        assert_eq!(hidden_width(512), 44);
        assert_eq!(hidden_width(1024), 84);
        assert_eq!(hidden_width(2048), 172);
    }
}

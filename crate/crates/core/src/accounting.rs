//! Analytic FLOP and parameter accounting for the plug-in branch.
//!
//! FLOPs are multiply-accumulate counts. Spatial extents after the strided
//! projection are `max(1, floor(H / r))`.

use crate::blocks::BlockConfig;
use crate::error::{ensure, Error, Result};

/// One family of identical host blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockShape {
    pub k: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub count: usize,
}

impl BlockShape {
    fn validate(&self) -> Result<()> {
        ensure!(
            [self.k, self.c_in, self.c_out, self.h, self.w, self.count].iter().all(|&v| v > 0),
            Error::Contract(format!("block shape fields must be positive: {self:?}"))
        );
        Ok(())
    }
}

fn reduced(extent: usize, r: usize) -> u64 {
    (extent / r).max(1) as u64
}

/// `K² · C_in · C_out · floor(H/r) · floor(W/r)`.
pub fn proj_flops(k: usize, c_in: usize, c_out: usize, h: usize, w: usize, r: usize) -> Result<u64> {
    ensure!(r >= 1, Error::Contract(format!("rank must be >= 1, got {r}")));
    Ok((k * k * c_in * c_out) as u64 * reduced(h, r) * reduced(w, r))
}

/// `H · W · (p + 1) · u`.
pub fn spline_flops(h: usize, w: usize, p: usize, u: usize) -> u64 {
    (h * w * (p + 1) * u) as u64
}

/// Aggregate bound `5 · proj_flops`.
pub fn loasp_flops(k: usize, c_in: usize, c_out: usize, h: usize, w: usize, r: usize) -> Result<u64> {
    Ok(5 * proj_flops(k, c_in, c_out, h, w, r)?)
}

/// Cost of a single `K x K` full-resolution convolution.
pub fn baseline_flops(shape: &BlockShape) -> u64 {
    (shape.k * shape.k * shape.c_in * shape.c_out * shape.h * shape.w) as u64
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Component {
    pub name: &'static str,
    pub params: u64,
    pub flops: u64,
}

/// Cost of one block of a catalog entry (multiplicity not applied).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockCost {
    pub shape: BlockShape,
    pub hidden: usize,
    pub components: Vec<Component>,
    pub baseline_flops: u64,
    pub bound_flops: u64,
}

impl BlockCost {
    pub fn params(&self) -> u64 {
        self.components.iter().map(|c| c.params).sum()
    }

    pub fn flops(&self) -> u64 {
        self.components.iter().map(|c| c.flops).sum()
    }

    pub fn component(&self, name: &str) -> Option<&Component> {
        self.components.iter().find(|c| c.name == name)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CostReport {
    pub blocks: Vec<BlockCost>,
}

impl CostReport {
    pub fn total_params(&self) -> u64 {
        self.blocks.iter().map(|b| b.params() * b.shape.count as u64).sum()
    }

    pub fn total_flops(&self) -> u64 {
        self.blocks.iter().map(|b| b.flops() * b.shape.count as u64).sum()
    }

    pub fn total_baseline_flops(&self) -> u64 {
        self.blocks.iter().map(|b| b.baseline_flops * b.shape.count as u64).sum()
    }

    /// Parameters of one named component summed over the catalog.
    pub fn component_params(&self, name: &str) -> u64 {
        self.blocks
            .iter()
            .filter_map(|b| b.component(name).map(|c| c.params * b.shape.count as u64))
            .sum()
    }

    /// CSV rows `block_id,channels,component,params,flops`, one block per
    /// catalog entry, followed by a `total` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("block_id,channels,component,params,flops\n");
        for (i, b) in self.blocks.iter().enumerate() {
            for c in &b.components {
                out.push_str(&format!("{i},{},{},{},{}\n", b.shape.c_out, c.name, c.params, c.flops));
            }
            out.push_str(&format!("{i},{},baseline_conv,0,{}\n", b.shape.c_out, b.baseline_flops));
        }
        out.push_str(&format!("total,,all,{},{}\n", self.total_params(), self.total_flops()));
        out
    }
}

/// Per-component costs of the (loasp, loap) branch on one block.
pub fn block_cost(shape: &BlockShape, config: &BlockConfig) -> Result<BlockCost> {
    shape.validate()?;
    config.validate()?;
    let (c_in, c, ch) = (shape.c_in as u64, shape.c_out as u64, config.hidden(shape.c_out) as u64);
    let (k, p, u) = (config.k as u64, config.spline_p as u64, config.spline_u as u64);
    let low = reduced(shape.h, config.r) * reduced(shape.w, config.r);
    let full = (shape.h * shape.w) as u64;
    let component = |name, params, flops| Component { name, params, flops };
    let components = vec![
        component("a_s", c_in * ch, c_in * ch * low),
        component("dsconv", 2 * k * ch * ch, 2 * k * ch * ch * low),
        component("offset_predictor", 2 * 9 * ch * k, 2 * 9 * ch * k * low),
        component("offset_bias", 2 * k, 2 * k * low),
        component("b_s", ch * ch, ch * ch * low),
        component("bn", 4 * ch, 4 * ch * low),
        component("a_f", ch * ch, ch * ch * low),
        component("spline", (u + p) * ch, ch * spline_flops(1, 1, config.spline_p, config.spline_u) * low),
        component("b_f", ch * c, ch * c * full),
        component("a_c", 9 * c, 9 * c * full),
    ];
    Ok(BlockCost {
        shape: *shape,
        hidden: ch as usize,
        components,
        baseline_flops: baseline_flops(shape),
        bound_flops: loasp_flops(shape.k, shape.c_in, shape.c_out, shape.h, shape.w, config.r)?,
    })
}

pub fn count_added_params(catalog: &[BlockShape], config: &BlockConfig) -> Result<CostReport> {
    ensure!(!catalog.is_empty(), Error::Contract("empty block catalog".into()));
    let blocks = catalog.iter().map(|s| block_cost(s, config)).collect::<Result<_>>()?;
    Ok(CostReport { blocks })
}

/// Residual stages of ResNet-50: 3, 4, 6 and 3 bottleneck blocks.
pub fn resnet50_catalog() -> Vec<BlockShape> {
    [(256, 56, 3), (512, 28, 4), (1024, 14, 6), (2048, 7, 3)]
        .into_iter()
        .map(|(c, hw, count)| BlockShape {
            k: 3,
            c_in: c,
            c_out: c,
            h: hw,
            w: hw,
            count,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formula_examples() {
        assert_eq!(proj_flops(3, 8, 8, 16, 16, 4).unwrap(), 9216);
        assert_eq!(loasp_flops(3, 8, 8, 16, 16, 4).unwrap(), 46080);
        assert_eq!(spline_flops(8, 8, 2, 6), 1152);
        assert_eq!(spline_flops(5, 7, 0, 1), 35);
        assert!(proj_flops(3, 8, 8, 16, 16, 0).is_err());
    }

    #[test]
    fn small_extent_keeps_one_position() {
        assert_eq!(proj_flops(1, 1, 1, 2, 2, 4).unwrap(), 1);
    }

    #[test]
    fn catalog_has_sixteen_blocks() {
        let cat = resnet50_catalog();
        assert_eq!(cat.iter().map(|b| b.count).sum::<usize>(), 16);
    }

    #[test]
    fn empty_catalog_is_rejected() {
        assert!(matches!(
            count_added_params(&[], &BlockConfig::default()),
            Err(Error::Contract(_))
        ));
    }
}

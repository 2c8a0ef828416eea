//! Dynamic snake convolution.
//!
//! Each axis kernel is a `1 x k` (or `k x 1`) line of taps. Per output
//! position, a 3x3 convolution predicts one bounded step per tap; the steps
//! are summed outward from the center tap so the taps form a connected
//! path that bends across the kernel axis. Off-grid taps are read with
//! border-clamped bilinear sampling.

use crate::error::{ensure, Error, Result};
use crate::module::{join, Conv, Module, Role};
use crate::numerics::gemm::gemm;
use crate::numerics::ops::{self, nchw};
use crate::numerics::sample::Stencil;
use crate::numerics::tensor::Tensor;
use crate::rng::{kaiming, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Taps run along columns; offsets bend rows.
    X,
    /// Taps run along rows; offsets bend columns.
    Y,
}

#[derive(Clone, Debug)]
pub struct SnakeKernel {
    pub axis: Axis,
    /// `[C_out, C_in, k]`.
    pub weight: Tensor,
    /// 3x3 convolution `C_in -> k` predicting per-tap steps.
    pub offset_conv: Conv,
    /// `[k]`.
    pub offset_bias: Tensor,
}

impl SnakeKernel {
    pub fn new(rng: &mut Rng, axis: Axis, c_in: usize, c_out: usize, k: usize) -> Result<Self> {
        ensure!(k % 2 == 1, Error::Contract(format!("snake kernel length must be odd, got {k}")));
        let weight = Tensor::param(&[c_out, c_in, k], kaiming(rng, c_out * c_in * k, c_in * k))?;
        Ok(Self {
            axis,
            weight,
            offset_conv: Conv::zeros(c_in, k, 3, 1, 1, 1),
            offset_bias: Tensor::param(&[k], vec![0.0; k])?,
        })
    }

    pub fn len(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }
}

impl Module for SnakeKernel {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor, Role)) {
        f(join(prefix, "weight"), &self.weight, Role::Param);
        self.offset_conv.visit(&join(prefix, "offset_conv"), f);
        f(join(prefix, "offset_bias"), &self.offset_bias, Role::Param);
    }
}

/// Scale on the tanh bound: in f64, tanh saturates to exactly 1 for
/// pre-activations beyond ~19, which would break the strict `|step| < 1`.
pub const STEP_BOUND: f64 = 1.0 - f64::EPSILON;

/// `STEP_BOUND * tanh(offset_conv(input) + bias)`, shape `[N, k, H, W]`.
pub fn predict_offsets(input: &Tensor, kernel: &SnakeKernel) -> Result<Tensor> {
    let (_, c, _, _) = nchw("predict_offsets", input)?;
    ensure!(
        c == kernel.offset_conv.in_channels(),
        Error::shape(
            "predict_offsets",
            format!("input {:?} for a {}-channel offset predictor", input.shape(), kernel.offset_conv.in_channels())
        )
    );
    let raw = kernel.offset_conv.forward(input)?;
    Ok(ops::scale(&ops::tanh(&ops::add_channel_bias(&raw, &kernel.offset_bias)?), STEP_BOUND))
}

/// Outward cumulative sums of per-tap steps; the center entry is 0 and
/// the center step is ignored.
pub fn accumulate_offsets(deltas: &[f64]) -> Result<Vec<f64>> {
    let k = deltas.len();
    ensure!(k % 2 == 1, Error::Contract(format!("offset accumulation needs odd k, got {k}")));
    let c = k / 2;
    let mut xi = vec![0.0; k];
    for i in c + 1..k {
        xi[i] = xi[i - 1] + deltas[i];
    }
    for i in (0..c).rev() {
        xi[i] = xi[i + 1] + deltas[i];
    }
    Ok(xi)
}

/// [`accumulate_offsets`] applied at every position of an `[N, k, H, W]`
/// step field.
pub fn cumulative_offsets(deltas: &Tensor) -> Result<Tensor> {
    let (n, k, h, w) = nchw("cumulative_offsets", deltas)?;
    ensure!(k % 2 == 1, Error::Contract(format!("offset accumulation needs odd k, got {k}")));
    let hw = h * w;
    let c = k / 2;
    let d = deltas.to_vec();
    let mut xi = vec![0.0; d.len()];
    let mut column = vec![0.0; k];
    for b in 0..n {
        for pos in 0..hw {
            for (i, v) in column.iter_mut().enumerate() {
                *v = d[(b * k + i) * hw + pos];
            }
            for (i, v) in accumulate_offsets(&column)?.into_iter().enumerate() {
                xi[(b * k + i) * hw + pos] = v;
            }
        }
    }
    Ok(Tensor::from_op(
        "cumulative_offsets",
        vec![n, k, h, w],
        xi,
        vec![deltas.clone()],
        move |ctx| {
            // adjoint of the outward prefix sums: suffix sums toward the ends
            let g = ctx.grad_out;
            let mut gd = vec![0.0; g.len()];
            for b in 0..n {
                for pos in 0..hw {
                    let at = |i: usize| (b * k + i) * hw + pos;
                    let mut acc = 0.0;
                    for i in (c + 1..k).rev() {
                        acc += g[at(i)];
                        gd[at(i)] = acc;
                    }
                    acc = 0.0;
                    for i in 0..c {
                        acc += g[at(i)];
                        gd[at(i)] = acc;
                    }
                }
            }
            vec![Some(gd)]
        },
    ))
}

/// Linear interpolation between two entries of a plane. Only one
/// coordinate of a snake tap is fractional, so the bilinear stencil
/// collapses to two points.
#[derive(Clone, Copy)]
struct Tap {
    a: usize,
    b: usize,
    frac: f64,
    /// False when the sampled coordinate was clamped; no offset gradient.
    active: bool,
}

impl Tap {
    #[inline]
    fn value(&self, plane: &[f64]) -> f64 {
        plane[self.a] * (1.0 - self.frac) + plane[self.b] * self.frac
    }

    #[inline]
    fn slope(&self, plane: &[f64]) -> f64 {
        if self.active {
            plane[self.b] - plane[self.a]
        } else {
            0.0
        }
    }
}

/// Per-(tap, position) stencils for one batch item.
fn taps(axis: Axis, xi: &[f64], k: usize, h: usize, w: usize) -> Vec<Tap> {
    let c = (k / 2) as isize;
    let mut out = Vec::with_capacity(k * h * w);
    for i in 0..k {
        let shift = i as isize - c;
        for y in 0..h {
            for x in 0..w {
                let off = xi[i * h * w + y * w + x];
                out.push(match axis {
                    Axis::X => {
                        let (s, col) = (Stencil::new(y as f64 + off, h), Stencil::integer(x as isize + shift, w).i0);
                        Tap { a: s.i0 * w + col, b: s.i1 * w + col, frac: s.frac, active: s.active }
                    }
                    Axis::Y => {
                        let (row, s) = (Stencil::integer(y as isize + shift, h).i0, Stencil::new(x as f64 + off, w));
                        Tap { a: row * w + s.i0, b: row * w + s.i1, frac: s.frac, active: s.active }
                    }
                });
            }
        }
    }
    out
}

/// Fills `cols` (`[C*k, H*W]`) with sampled taps.
fn gather_taps(planes: &[f64], taps: &[Tap], c: usize, k: usize, hw: usize, cols: &mut [f64]) {
    for ch in 0..c {
        let plane = &planes[ch * hw..(ch + 1) * hw];
        for i in 0..k {
            let row = &mut cols[(ch * k + i) * hw..(ch * k + i + 1) * hw];
            for (v, t) in row.iter_mut().zip(&taps[i * hw..(i + 1) * hw]) {
                *v = t.value(plane);
            }
        }
    }
}

/// One axis of the snake convolution with explicit cumulative offsets
/// `xi` of shape `[N, k, H, W]`.
pub fn snake_conv_axis(input: &Tensor, kernel: &SnakeKernel, xi: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = nchw("snake_conv_axis", input)?;
    let k = kernel.len();
    let o = kernel.out_channels();
    ensure!(
        kernel.in_channels() == c,
        Error::shape(
            "snake_conv_axis",
            format!("input {:?} and kernel {:?}", input.shape(), kernel.weight.shape())
        )
    );
    ensure!(
        xi.shape() == [n, k, h, w],
        Error::shape(
            "snake_conv_axis",
            format!("offsets {:?} for input {:?} and {k} taps", xi.shape(), input.shape())
        )
    );
    let axis = kernel.axis;
    let hw = h * w;
    let ck = c * k;
    let offsets = xi.to_vec();
    let per_item: Vec<Vec<Tap>> = (0..n).map(|b| taps(axis, &offsets[b * k * hw..(b + 1) * k * hw], k, h, w)).collect();
    let mut out = vec![0.0; n * o * hw];
    {
        let x = input.data();
        let wt = kernel.weight.data();
        let mut cols = vec![0.0; ck * hw];
        for b in 0..n {
            gather_taps(&x[b * c * hw..(b + 1) * c * hw], &per_item[b], c, k, hw, &mut cols);
            gemm(o, ck, hw, 1.0, &wt, false, &cols, false, 0.0, &mut out[b * o * hw..(b + 1) * o * hw]);
        }
    }
    Ok(Tensor::from_op(
        "snake_conv_axis",
        vec![n, o, h, w],
        out,
        vec![input.clone(), kernel.weight.clone(), xi.clone()],
        move |ctx| {
            let x = ctx.inputs[0].data();
            let wt = ctx.inputs[1].data();
            let mut gx = ctx.needs[0].then(|| vec![0.0; n * c * hw]);
            let mut gw = ctx.needs[1].then(|| vec![0.0; o * ck]);
            let mut gxi = ctx.needs[2].then(|| vec![0.0; n * k * hw]);
            let mut cols = vec![0.0; ck * hw];
            let mut gcols = vec![0.0; ck * hw];
            for b in 0..n {
                let gout = &ctx.grad_out[b * o * hw..(b + 1) * o * hw];
                let planes = &x[b * c * hw..(b + 1) * c * hw];
                let st = &per_item[b];
                if let Some(gw) = gw.as_mut() {
                    gather_taps(planes, st, c, k, hw, &mut cols);
                    gemm(o, hw, ck, 1.0, gout, false, &cols, true, 1.0, gw);
                }
                if gx.is_none() && gxi.is_none() {
                    continue;
                }
                gemm(ck, o, hw, 1.0, &wt, true, gout, false, 0.0, &mut gcols);
                for ch in 0..c {
                    let plane = &planes[ch * hw..(ch + 1) * hw];
                    for i in 0..k {
                        let grow = &gcols[(ch * k + i) * hw..(ch * k + i + 1) * hw];
                        let row = &st[i * hw..(i + 1) * hw];
                        if let Some(gx) = gx.as_mut() {
                            let gplane = &mut gx[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                            for (t, &g) in row.iter().zip(grow) {
                                gplane[t.a] += g * (1.0 - t.frac);
                                gplane[t.b] += g * t.frac;
                            }
                        }
                        if let Some(gxi) = gxi.as_mut() {
                            let dst = &mut gxi[(b * k + i) * hw..(b * k + i + 1) * hw];
                            for ((d, t), &g) in dst.iter_mut().zip(row).zip(grow) {
                                *d += g * t.slope(plane);
                            }
                        }
                    }
                }
            }
            vec![gx, gw, gxi]
        },
    ))
}

/// Offsets predicted from `input`, accumulated, then the axis convolution.
pub fn snake_kernel_forward(input: &Tensor, kernel: &SnakeKernel) -> Result<Tensor> {
    let deltas = predict_offsets(input, kernel)?;
    let xi = cumulative_offsets(&deltas)?;
    snake_conv_axis(input, kernel, &xi)
}

/// Pair of snake kernels, one per axis, merged by their mean.
#[derive(Clone, Debug)]
pub struct DsConv {
    pub x: SnakeKernel,
    pub y: SnakeKernel,
}

impl DsConv {
    pub fn new(rng: &mut Rng, c_in: usize, c_out: usize, k: usize) -> Result<Self> {
        Ok(Self {
            x: SnakeKernel::new(rng, Axis::X, c_in, c_out, k)?,
            y: SnakeKernel::new(rng, Axis::Y, c_in, c_out, k)?,
        })
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        dsconv_forward(input, self)
    }
}

impl Module for DsConv {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor, Role)) {
        self.x.visit(&join(prefix, "x"), f);
        self.y.visit(&join(prefix, "y"), f);
    }
}

pub fn dsconv_forward(input: &Tensor, module: &DsConv) -> Result<Tensor> {
    let ox = snake_kernel_forward(input, &module.x)?;
    let oy = snake_kernel_forward(input, &module.y)?;
    Ok(ops::scale(&ops::add(&ox, &oy)?, 0.5))
}

//! Bilinear sampling with border clamping.

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

/// Linear interpolation stencil along one axis of length `n`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Stencil {
    pub i0: usize,
    pub i1: usize,
    pub frac: f64,
    /// False when the coordinate was clamped; its derivative is then 0.
    pub active: bool,
}

impl Stencil {
    pub fn new(coord: f64, n: usize) -> Self {
        if n == 1 {
            return Stencil {
                i0: 0,
                i1: 0,
                frac: 0.0,
                active: false,
            };
        }
        let hi = (n - 1) as f64;
        let active = (0.0..=hi).contains(&coord);
        let c = coord.clamp(0.0, hi);
        let i0 = (c.floor() as usize).min(n - 2);
        Stencil {
            i0,
            i1: i0 + 1,
            frac: c - i0 as f64,
            active,
        }
    }

    /// Stencil for an integer index clamped into `[0, n)`.
    pub fn integer(idx: isize, n: usize) -> Self {
        let i = idx.clamp(0, n as isize - 1) as usize;
        Stencil {
            i0: i,
            i1: i,
            frac: 0.0,
            active: false,
        }
    }
}

/// Bilinear value and the partial derivatives with respect to the row and
/// column coordinate.
#[inline]
pub(crate) fn sample_plane(plane: &[f64], w: usize, ry: &Stencil, rx: &Stencil) -> (f64, f64, f64) {
    let v00 = plane[ry.i0 * w + rx.i0];
    let v01 = plane[ry.i0 * w + rx.i1];
    let v10 = plane[ry.i1 * w + rx.i0];
    let v11 = plane[ry.i1 * w + rx.i1];
    let (fy, fx) = (ry.frac, rx.frac);
    // weighted form: exact on lattice points, including the last row/column
    let top = v00 * (1.0 - fx) + v01 * fx;
    let bottom = v10 * (1.0 - fx) + v11 * fx;
    let value = top * (1.0 - fy) + bottom * fy;
    let dy = if ry.active { bottom - top } else { 0.0 };
    let dx = if rx.active {
        (1.0 - fy) * (v01 - v00) + fy * (v11 - v10)
    } else {
        0.0
    };
    (value, dy, dx)
}

/// Scatters `g` into the four stencil corners.
#[inline]
pub(crate) fn scatter_plane(plane: &mut [f64], w: usize, ry: &Stencil, rx: &Stencil, g: f64) {
    let (fy, fx) = (ry.frac, rx.frac);
    plane[ry.i0 * w + rx.i0] += g * (1.0 - fy) * (1.0 - fx);
    plane[ry.i0 * w + rx.i1] += g * (1.0 - fy) * fx;
    plane[ry.i1 * w + rx.i0] += g * fy * (1.0 - fx);
    plane[ry.i1 * w + rx.i1] += g * fy * fx;
}

/// Samples a `[C, H, W]` feature at `coords` (`[L, 2]`, rows then columns).
/// Returns `[C, L]`. Coordinates outside the grid are clamped to the border.
pub fn bilinear_sample(feature: &Tensor, coords: &Tensor) -> Result<Tensor> {
    let &[c, h, w] = feature.shape() else {
        return Err(Error::shape("bilinear_sample", format!("feature must be CHW, got {:?}", feature.shape())));
    };
    let &[l, 2] = coords.shape() else {
        return Err(Error::shape("bilinear_sample", format!("coords must be [L, 2], got {:?}", coords.shape())));
    };
    let stencils: Vec<(Stencil, Stencil)> = coords
        .data()
        .chunks(2)
        .map(|p| (Stencil::new(p[0], h), Stencil::new(p[1], w)))
        .collect();
    let mut out = vec![0.0; c * l];
    {
        let f = feature.data();
        for ch in 0..c {
            let plane = &f[ch * h * w..(ch + 1) * h * w];
            for (j, (ry, rx)) in stencils.iter().enumerate() {
                out[ch * l + j] = sample_plane(plane, w, ry, rx).0;
            }
        }
    }
    Ok(Tensor::from_op(
        "bilinear_sample",
        vec![c, l],
        out,
        vec![feature.clone(), coords.clone()],
        move |ctx| {
            let f = ctx.inputs[0].data();
            let mut gf = vec![0.0; c * h * w];
            let mut gc = vec![0.0; l * 2];
            for ch in 0..c {
                let plane = &f[ch * h * w..(ch + 1) * h * w];
                let gplane = &mut gf[ch * h * w..(ch + 1) * h * w];
                for (j, (ry, rx)) in stencils.iter().enumerate() {
                    let g = ctx.grad_out[ch * l + j];
                    scatter_plane(gplane, w, ry, rx, g);
                    let (_, dy, dx) = sample_plane(plane, w, ry, rx);
                    gc[2 * j] += g * dy;
                    gc[2 * j + 1] += g * dx;
                }
            }
            vec![Some(gf), Some(gc)]
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(coords: &[f64]) -> Vec<f64> {
        let f = Tensor::new(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let c = Tensor::new(&[coords.len() / 2, 2], coords.to_vec()).unwrap();
        bilinear_sample(&f, &c).unwrap().to_vec()
    }

    #[test]
    fn lattice_point() {
        assert_eq!(sample(&[0.0, 1.0]), vec![2.0]);
        assert_eq!(sample(&[1.0, 1.0]), vec![4.0]);
    }

    #[test]
    fn center_is_corner_average() {
        assert_eq!(sample(&[0.5, 0.5]), vec![2.5]);
    }

    #[test]
    fn outside_points_clamp_to_border() {
        assert_eq!(sample(&[-0.5, 0.0]), vec![1.0]);
        assert_eq!(sample(&[7.0, -3.0]), vec![3.0]);
    }

    #[test]
    fn clamped_coordinate_has_zero_gradient() {
        let f = Tensor::new(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let c = Tensor::param(&[1, 2], vec![-0.5, 0.25]).unwrap();
        crate::numerics::ops::sum(&bilinear_sample(&f, &c).unwrap()).backward().unwrap();
        let g = c.grad().unwrap();
        assert_eq!(g[0], 0.0);
        assert!((g[1] - 1.0).abs() < 1e-12);
    }
}

//! Bias-free 2D cross-correlation with stride, zero padding and groups.

use crate::error::{ensure, Error, Result};
use crate::numerics::gemm::gemm;
use crate::numerics::ops::nchw;
use crate::numerics::tensor::Tensor;

/// Output extent of a convolution along one axis, if it is at least 1.
pub fn conv_out_extent(size: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    (stride > 0 && padded >= k).then(|| (padded - k) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }
}

/// Output positions `lo..hi` along one axis whose input index
/// `o * stride + k - pad` falls inside `0..n`.
fn valid_range(len: usize, k: usize, stride: usize, pad: usize, n: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(k).div_ceil(stride).min(len);
    let hi = if n + pad > k { ((n + pad - k - 1) / stride + 1).min(len) } else { 0 };
    (lo, hi.max(lo))
}

/// `planes` holds `g.c` consecutive `h x w` planes.
fn im2col(planes: &[f64], g: &Geometry, cols: &mut [f64]) {
    let l = g.cols();
    for c in 0..g.c {
        let plane = &planes[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            let (ylo, yhi) = valid_range(g.ho, ky, g.stride, g.pad, g.h);
            for kx in 0..g.kw {
                let (xlo, xhi) = valid_range(g.wo, kx, g.stride, g.pad, g.w);
                let row = &mut cols[((c * g.kh + ky) * g.kw + kx) * l..][..l];
                row[..ylo * g.wo].fill(0.0);
                row[yhi * g.wo..].fill(0.0);
                for oy in ylo..yhi {
                    let iy = oy * g.stride + ky - g.pad;
                    let src = &plane[iy * g.w..(iy + 1) * g.w];
                    let dst = &mut row[oy * g.wo..(oy + 1) * g.wo];
                    dst[..xlo].fill(0.0);
                    dst[xhi..].fill(0.0);
                    let first = xlo * g.stride + kx - g.pad;
                    if g.stride == 1 {
                        dst[xlo..xhi].copy_from_slice(&src[first..first + xhi - xlo]);
                    } else {
                        for (d, &v) in dst[xlo..xhi].iter_mut().zip(src[first..].iter().step_by(g.stride)) {
                            *d = v;
                        }
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], g: &Geometry, planes: &mut [f64]) {
    let l = g.cols();
    for c in 0..g.c {
        let plane = &mut planes[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            let (ylo, yhi) = valid_range(g.ho, ky, g.stride, g.pad, g.h);
            for kx in 0..g.kw {
                let (xlo, xhi) = valid_range(g.wo, kx, g.stride, g.pad, g.w);
                let row = &cols[((c * g.kh + ky) * g.kw + kx) * l..][..l];
                for oy in ylo..yhi {
                    let iy = oy * g.stride + ky - g.pad;
                    let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                    let src = &row[oy * g.wo + xlo..oy * g.wo + xhi];
                    let first = xlo * g.stride + kx - g.pad;
                    for (d, &v) in dst[first..].iter_mut().step_by(g.stride).zip(src) {
                        *d += v;
                    }
                }
            }
        }
    }
}

/// Cross-correlation of an NCHW input with an `[O, C/groups, kh, kw]` kernel.
pub fn conv2d(
    input: &Tensor,
    kernel: &Tensor,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<Tensor> {
    let (n, c, h, w) = nchw("conv2d", input)?;
    let &[o, cg, kh, kw] = kernel.shape() else {
        return Err(Error::shape(
            "conv2d",
            format!("kernel must be OIkk, got {:?} (input {:?})", kernel.shape(), input.shape()),
        ));
    };
    ensure!(
        groups >= 1 && c % groups == 0 && o % groups == 0 && cg == c / groups,
        Error::shape(
            "conv2d",
            format!(
                "input {:?} and kernel {:?} incompatible with groups={groups}",
                input.shape(),
                kernel.shape()
            )
        )
    );
    let (Some(ho), Some(wo)) = (
        conv_out_extent(h, kh, stride, padding),
        conv_out_extent(w, kw, stride, padding),
    ) else {
        return Err(Error::shape(
            "conv2d",
            format!(
                "input {:?} and kernel {:?} give an empty output (stride {stride}, padding {padding})",
                input.shape(),
                kernel.shape()
            ),
        ));
    };
    let geo = Geometry {
        c: cg,
        h,
        w,
        kh,
        kw,
        stride,
        pad: padding,
        ho,
        wo,
    };
    let og = o / groups;
    let (kr, l) = (geo.rows(), geo.cols());
    let mut out = vec![0.0; n * o * l];
    {
        let x = input.data();
        let k = kernel.data();
        let mut cols = vec![0.0; if geo.is_pointwise() { 0 } else { kr * l }];
        for b in 0..n {
            for g in 0..groups {
                let planes = &x[(b * c + g * cg) * h * w..][..cg * h * w];
                let rhs: &[f64] = if geo.is_pointwise() {
                    planes
                } else {
                    im2col(planes, &geo, &mut cols);
                    &cols
                };
                let dst = &mut out[(b * o + g * og) * l..][..og * l];
                gemm(og, kr, l, 1.0, &k[g * og * kr..][..og * kr], false, rhs, false, 0.0, dst);
            }
        }
    }
    Ok(Tensor::from_op(
        "conv2d",
        vec![n, o, ho, wo],
        out,
        vec![input.clone(), kernel.clone()],
        move |ctx| {
            let x = ctx.inputs[0].data();
            let k = ctx.inputs[1].data();
            let mut gx = ctx.needs[0].then(|| vec![0.0; n * c * h * w]);
            let mut gk = ctx.needs[1].then(|| vec![0.0; o * kr]);
            let mut cols = vec![0.0; if geo.is_pointwise() { 0 } else { kr * l }];
            for b in 0..n {
                for g in 0..groups {
                    let gout = &ctx.grad_out[(b * o + g * og) * l..][..og * l];
                    if let Some(gk) = gk.as_mut() {
                        let planes = &x[(b * c + g * cg) * h * w..][..cg * h * w];
                        let rhs: &[f64] = if geo.is_pointwise() {
                            planes
                        } else {
                            im2col(planes, &geo, &mut cols);
                            &cols
                        };
                        gemm(og, l, kr, 1.0, gout, false, rhs, true, 1.0, &mut gk[g * og * kr..][..og * kr]);
                    }
                    if let Some(gx) = gx.as_mut() {
                        let kg = &k[g * og * kr..][..og * kr];
                        let dst = &mut gx[(b * c + g * cg) * h * w..][..cg * h * w];
                        if geo.is_pointwise() {
                            gemm(kr, og, l, 1.0, kg, true, gout, false, 1.0, dst);
                        } else {
                            gemm(kr, og, l, 1.0, kg, true, gout, false, 0.0, &mut cols);
                            col2im(&cols, &geo, dst);
                        }
                    }
                }
            }
            vec![gx, gk]
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel_is_identity() {
        let x = Tensor::new(&[1, 1, 3, 3], (0..9).map(f64::from).collect()).unwrap();
        let k = Tensor::new(&[1, 1, 1, 1], vec![1.0]).unwrap();
        assert_eq!(conv2d(&x, &k, 1, 0, 1).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn ones_kernel_on_constant_input() {
        let x = Tensor::full(&[1, 1, 5, 5], 2.5);
        let k = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &k, 1, 0, 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert!(y.to_vec().iter().all(|&v| v == 22.5));
    }

    #[test]
    fn strided_output_extent() {
        assert_eq!(conv_out_extent(16, 3, 4, 1), Some(4));
        let x = Tensor::zeros(&[1, 2, 16, 16]);
        let k = Tensor::zeros(&[3, 2, 3, 3]);
        assert_eq!(conv2d(&x, &k, 4, 1, 1).unwrap().shape(), &[1, 3, 4, 4]);
    }

    #[test]
    fn depthwise_identity_kernels() {
        let x = Tensor::new(&[2, 3, 4, 4], (0..96).map(|i| (i as f64).sin()).collect()).unwrap();
        let k = Tensor::full(&[3, 1, 1, 1], 1.0);
        assert_eq!(conv2d(&x, &k, 1, 0, 3).unwrap().to_vec(), x.to_vec());
    }

    #[test]
    fn incompatible_shapes_report_both() {
        let x = Tensor::zeros(&[1, 3, 4, 4]);
        let k = Tensor::zeros(&[2, 2, 3, 3]);
        let msg = conv2d(&x, &k, 1, 1, 1).unwrap_err().to_string();
        assert!(msg.contains("[1, 3, 4, 4]") && msg.contains("[2, 2, 3, 3]"), "{msg}");
    }

    fn direct(x: &[f64], kv: &[f64], dims: [usize; 8], groups: usize) -> (Vec<f64>, usize, usize) {
        let [n, c, h, w, o, k, s, p] = dims;
        let ho = conv_out_extent(h, k, s, p).unwrap();
        let wo = conv_out_extent(w, k, s, p).unwrap();
        let (cg, og) = (c / groups, o / groups);
        let mut y = vec![0.0; n * o * ho * wo];
        for b in 0..n {
            for oc in 0..o {
                let g = oc / og;
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for ci in 0..cg {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * s + ky) as isize - p as isize;
                                    let ix = (ox * s + kx) as isize - p as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    let xi = ((b * c + g * cg + ci) * h + iy as usize) * w + ix as usize;
                                    acc += x[xi] * kv[((oc * cg + ci) * k + ky) * k + kx];
                                }
                            }
                        }
                        y[((b * o + oc) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        (y, ho, wo)
    }

    #[test]
    fn matches_direct_loops() {
        // (h, w, k, stride, pad, groups), including padding wider than the kernel
        let cases = [
            (7, 6, 3, 2, 1, 2),
            (5, 5, 3, 1, 1, 1),
            (8, 9, 5, 3, 2, 1),
            (4, 6, 1, 2, 0, 2),
            (3, 4, 1, 1, 2, 1),
            (6, 5, 3, 1, 4, 2),
            (2, 2, 5, 1, 2, 1),
        ];
        for (h, w, k, s, p, groups) in cases {
            let (n, c, o) = (2, 4, 6);
            let x: Vec<f64> = (0..n * c * h * w).map(|i| ((i * 7919) % 97) as f64 / 97.0 - 0.5).collect();
            let kv: Vec<f64> = (0..o * (c / groups) * k * k).map(|i| ((i * 31) % 17) as f64 / 17.0 - 0.5).collect();
            let xt = Tensor::new(&[n, c, h, w], x.clone()).unwrap();
            let kt = Tensor::new(&[o, c / groups, k, k], kv.clone()).unwrap();
            let y = conv2d(&xt, &kt, s, p, groups).unwrap();
            let (want, ho, wo) = direct(&x, &kv, [n, c, h, w, o, k, s, p], groups);
            assert_eq!(y.shape(), &[n, o, ho, wo]);
            for (got, want) in y.to_vec().iter().zip(&want) {
                assert!((got - want).abs() < 1e-12, "{:?}", (h, w, k, s, p, groups));
            }
        }
    }
}

//! Elementwise maps, reductions, the dense head and spatial resizing.

use crate::error::{ensure, Error, Result};
use crate::numerics::gemm::gemm;
use crate::numerics::tensor::Tensor;

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    ensure!(
        a.shape() == b.shape(),
        Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape()))
    );
    Ok(())
}

pub(crate) fn nchw(op: &'static str, t: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match *t.shape() {
        [n, c, h, w] => Ok((n, c, h, w)),
        ref s => Err(Error::shape(op, format!("expected NCHW input, got {s:?}"))),
    }
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("add", a, b)?;
    let data: Vec<f64> = a.data().iter().zip(b.data().iter()).map(|(x, y)| x + y).collect();
    Ok(Tensor::from_op(
        "add",
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        |ctx| vec![Some(ctx.grad_out.to_vec()), Some(ctx.grad_out.to_vec())],
    ))
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("sub", a, b)?;
    let data: Vec<f64> = a.data().iter().zip(b.data().iter()).map(|(x, y)| x - y).collect();
    Ok(Tensor::from_op(
        "sub",
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        |ctx| {
            vec![
                Some(ctx.grad_out.to_vec()),
                Some(ctx.grad_out.iter().map(|g| -g).collect()),
            ]
        },
    ))
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("mul", a, b)?;
    let data: Vec<f64> = a.data().iter().zip(b.data().iter()).map(|(x, y)| x * y).collect();
    Ok(Tensor::from_op(
        "mul",
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        |ctx| {
            let av = ctx.inputs[0].data();
            let bv = ctx.inputs[1].data();
            let ga = ctx.needs[0].then(|| ctx.grad_out.iter().zip(bv.iter()).map(|(g, y)| g * y).collect());
            let gb = ctx.needs[1].then(|| ctx.grad_out.iter().zip(av.iter()).map(|(g, x)| g * x).collect());
            vec![ga, gb]
        },
    ))
}

pub fn scale(a: &Tensor, s: f64) -> Tensor {
    let data = a.data().iter().map(|x| x * s).collect();
    Tensor::from_op("scale", a.shape().to_vec(), data, vec![a.clone()], move |ctx| {
        vec![Some(ctx.grad_out.iter().map(|g| g * s).collect())]
    })
}

pub fn sum(a: &Tensor) -> Tensor {
    let total: f64 = a.data().iter().sum();
    let n = a.numel();
    Tensor::from_op("sum", vec![1], vec![total], vec![a.clone()], move |ctx| {
        vec![Some(vec![ctx.grad_out[0]; n])]
    })
}

pub fn mean(a: &Tensor) -> Tensor {
    let n = a.numel();
    scale(&sum(a), 1.0 / n as f64)
}

pub fn relu(a: &Tensor) -> Tensor {
    let data = a.data().iter().map(|&x| x.max(0.0)).collect();
    Tensor::from_op("relu", a.shape().to_vec(), data, vec![a.clone()], |ctx| {
        vec![Some(
            ctx.out
                .iter()
                .zip(ctx.grad_out)
                .map(|(&y, &g)| if y > 0.0 { g } else { 0.0 })
                .collect(),
        )]
    })
}

pub fn tanh(a: &Tensor) -> Tensor {
    let data = a.data().iter().map(|x| x.tanh()).collect();
    Tensor::from_op("tanh", a.shape().to_vec(), data, vec![a.clone()], |ctx| {
        vec![Some(
            ctx.out
                .iter()
                .zip(ctx.grad_out)
                .map(|(&y, &g)| g * (1.0 - y * y))
                .collect(),
        )]
    })
}

/// Adds `bias[c]` to every position of channel `c` of an NCHW tensor.
pub fn add_channel_bias(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = nchw("add_channel_bias", x)?;
    ensure!(
        bias.shape() == [c],
        Error::shape("add_channel_bias", format!("bias {:?} for input {:?}", bias.shape(), x.shape()))
    );
    let hw = h * w;
    let mut data = x.to_vec();
    {
        let b = bias.data();
        for (i, chunk) in data.chunks_mut(hw).enumerate() {
            let bc = b[i % c];
            chunk.iter_mut().for_each(|v| *v += bc);
        }
    }
    Ok(Tensor::from_op(
        "add_channel_bias",
        vec![n, c, h, w],
        data,
        vec![x.clone(), bias.clone()],
        move |ctx| {
            let mut gb = vec![0.0; c];
            if ctx.needs[1] {
                for (i, chunk) in ctx.grad_out.chunks(hw).enumerate() {
                    gb[i % c] += chunk.iter().sum::<f64>();
                }
            }
            vec![Some(ctx.grad_out.to_vec()), ctx.needs[1].then_some(gb)]
        },
    ))
}

/// `x [N, I] · weight[O, I]ᵀ + bias[O]`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (&[n, i], &[o, wi]) = (x.shape(), weight.shape()) else {
        return Err(Error::shape(
            "linear",
            format!("input {:?}, weight {:?}", x.shape(), weight.shape()),
        ));
    };
    ensure!(
        i == wi && bias.shape() == [o],
        Error::shape(
            "linear",
            format!("input {:?}, weight {:?}, bias {:?}", x.shape(), weight.shape(), bias.shape())
        )
    );
    let mut out = vec![0.0; n * o];
    for row in out.chunks_mut(o) {
        row.copy_from_slice(&bias.data());
    }
    gemm(n, i, o, 1.0, &x.data(), false, &weight.data(), true, 1.0, &mut out);
    Ok(Tensor::from_op(
        "linear",
        vec![n, o],
        out,
        vec![x.clone(), weight.clone(), bias.clone()],
        move |ctx| {
            let g = ctx.grad_out;
            let gx = ctx.needs[0].then(|| {
                let mut gx = vec![0.0; n * i];
                gemm(n, o, i, 1.0, g, false, &ctx.inputs[1].data(), false, 0.0, &mut gx);
                gx
            });
            let gw = ctx.needs[1].then(|| {
                let mut gw = vec![0.0; o * i];
                gemm(o, n, i, 1.0, g, true, &ctx.inputs[0].data(), false, 0.0, &mut gw);
                gw
            });
            let gb = ctx.needs[2].then(|| {
                let mut gb = vec![0.0; o];
                for row in g.chunks(o) {
                    gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                }
                gb
            });
            vec![gx, gw, gb]
        },
    ))
}

/// NCHW -> NC by spatial averaging.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = nchw("global_avg_pool", x)?;
    let hw = h * w;
    let data: Vec<f64> = x.data().chunks(hw).map(|ch| ch.iter().sum::<f64>() / hw as f64).collect();
    Ok(Tensor::from_op(
        "global_avg_pool",
        vec![n, c],
        data,
        vec![x.clone()],
        move |ctx| {
            let mut g = Vec::with_capacity(n * c * hw);
            for &go in ctx.grad_out {
                g.extend(std::iter::repeat_n(go / hw as f64, hw));
            }
            vec![Some(g)]
        },
    ))
}

/// Gathers `out[n,c,y,x] = in[n,c,rows[y],cols[x]]`; the backward pass
/// scatters. Every spatial resampling here is an instance of this.
fn spatial_gather(
    name: &'static str,
    x: &Tensor,
    rows: Vec<usize>,
    cols: Vec<usize>,
) -> Result<Tensor> {
    let (n, c, h, w) = nchw(name, x)?;
    let (ho, wo) = (rows.len(), cols.len());
    let mut out = Vec::with_capacity(n * c * ho * wo);
    {
        let d = x.data();
        for plane in d.chunks(h * w) {
            for &r in &rows {
                out.extend(cols.iter().map(|&cc| plane[r * w + cc]));
            }
        }
    }
    Ok(Tensor::from_op(name, vec![n, c, ho, wo], out, vec![x.clone()], move |ctx| {
        let mut g = vec![0.0; n * c * h * w];
        for (gp, op) in g.chunks_mut(h * w).zip(ctx.grad_out.chunks(ho * wo)) {
            for (yo, &r) in rows.iter().enumerate() {
                for (xo, &cc) in cols.iter().enumerate() {
                    gp[r * w + cc] += op[yo * wo + xo];
                }
            }
        }
        vec![Some(g)]
    }))
}

/// Replicates every pixel `factor x factor` times.
pub fn nearest_upsample(x: &Tensor, factor: usize) -> Result<Tensor> {
    ensure!(
        factor >= 1,
        Error::Contract(format!("upsample factor must be >= 1, got {factor}"))
    );
    let (_, _, h, w) = nchw("nearest_upsample", x)?;
    let rows = (0..h * factor).map(|y| y / factor).collect();
    let cols = (0..w * factor).map(|x| x / factor).collect();
    spatial_gather("nearest_upsample", x, rows, cols)
}

/// Nearest-neighbour resize to an arbitrary extent.
pub fn nearest_resize(x: &Tensor, ho: usize, wo: usize) -> Result<Tensor> {
    let (_, _, h, w) = nchw("nearest_resize", x)?;
    ensure!(
        ho > 0 && wo > 0,
        Error::shape("nearest_resize", format!("target {ho}x{wo}"))
    );
    let rows = (0..ho).map(|y| y * h / ho).collect();
    let cols = (0..wo).map(|x| x * w / wo).collect();
    spatial_gather("nearest_resize", x, rows, cols)
}

/// Center crop (or zero pad) the spatial extent to `ho x wo`.
pub fn center_fit(x: &Tensor, ho: usize, wo: usize) -> Result<Tensor> {
    let (n, c, h, w) = nchw("center_fit", x)?;
    if (h, w) == (ho, wo) {
        return Ok(x.clone());
    }
    // offset of the output origin inside the input (negative = padding)
    let dy = (h as isize - ho as isize) / 2;
    let dx = (w as isize - wo as isize) / 2;
    let map = |o: usize, d: isize, lim: usize| -> Option<usize> {
        let i = o as isize + d;
        (0..lim as isize).contains(&i).then_some(i as usize)
    };
    let mut out = vec![0.0; n * c * ho * wo];
    {
        let d = x.data();
        for (ip, op) in d.chunks(h * w).zip(out.chunks_mut(ho * wo)) {
            for y in 0..ho {
                let Some(iy) = map(y, dy, h) else { continue };
                for xx in 0..wo {
                    if let Some(ix) = map(xx, dx, w) {
                        op[y * wo + xx] = ip[iy * w + ix];
                    }
                }
            }
        }
    }
    Ok(Tensor::from_op("center_fit", vec![n, c, ho, wo], out, vec![x.clone()], move |ctx| {
        let mut g = vec![0.0; n * c * h * w];
        for (gp, op) in g.chunks_mut(h * w).zip(ctx.grad_out.chunks(ho * wo)) {
            for y in 0..ho {
                let Some(iy) = map(y, dy, h) else { continue };
                for xx in 0..wo {
                    if let Some(ix) = map(xx, dx, w) {
                        gp[iy * w + ix] += op[y * wo + xx];
                    }
                }
            }
        }
        vec![Some(g)]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upsample_factor_one_is_identity() {
        let x = Tensor::new(&[1, 2, 2, 3], (0..12).map(f64::from).collect()).unwrap();
        assert_eq!(nearest_upsample(&x, 1).unwrap().to_vec(), x.to_vec());
        assert!(matches!(nearest_upsample(&x, 0), Err(Error::Contract(_))));
    }

    #[test]
    fn upsample_replicates_blocks() {
        let x = Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = nearest_upsample(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        #[rustfmt::skip]
        let want = vec![
            1.0, 1.0, 2.0, 2.0,
            1.0, 1.0, 2.0, 2.0,
            3.0, 3.0, 4.0, 4.0,
            3.0, 3.0, 4.0, 4.0,
        ];
        assert_eq!(y.to_vec(), want);
    }

    #[test]
    fn upsample_gradient_sums_blocks() {
        let x = Tensor::param(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        sum(&nearest_upsample(&x, 2).unwrap()).backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0; 4]);
    }

    #[test]
    fn center_fit_crops_and_pads() {
        let x = Tensor::new(&[1, 1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        assert_eq!(center_fit(&x, 1, 1).unwrap().to_vec(), vec![5.0]);
        let padded = center_fit(&x, 4, 4).unwrap();
        assert_eq!(padded.shape(), &[1, 1, 4, 4]);
        assert_eq!(padded.to_vec().iter().sum::<f64>(), 45.0);
    }

    #[test]
    fn linear_matches_hand_computation() {
        let x = Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::new(&[2, 2], vec![1.0, 0.0, 3.0, -1.0]).unwrap();
        let b = Tensor::new(&[2], vec![0.5, 0.25]).unwrap();
        assert_eq!(linear(&x, &w, &b).unwrap().to_vec(), vec![1.5, 1.25]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[3, 2]);
        let msg = add(&a, &b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[3, 2]"), "{msg}");
    }
}

//! Prior-map rendering: channel-mean maps, Gaussian smoothing, a
//! white-to-red ramp and binary PPM output.

use std::path::Path;

use crate::blocks::Fusion;
use crate::error::{ensure, Error, Result};
use crate::harness::model::ToyNet;
use crate::numerics::norm::Mode;
use crate::numerics::ops::nchw;
use crate::numerics::tensor::Tensor;

/// Row-major 2D scalar map.
#[derive(Clone, Debug, PartialEq)]
pub struct Map {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Map {
    pub fn new(h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        ensure!(
            data.len() == h * w,
            Error::shape("map", format!("{} values for {h}x{w}", data.len()))
        );
        Ok(Self { h, w, data })
    }

    pub fn transpose(&self) -> Map {
        let mut data = vec![0.0; self.data.len()];
        for y in 0..self.h {
            for x in 0..self.w {
                data[x * self.h + y] = self.data[y * self.w + x];
            }
        }
        Map {
            h: self.w,
            w: self.h,
            data,
        }
    }

    /// Replicates every value `factor x factor` times.
    pub fn upscale(&self, factor: usize) -> Map {
        let (h, w) = (self.h * factor, self.w * factor);
        let data = (0..h * w)
            .map(|i| self.data[(i / w / factor) * self.w + (i % w) / factor])
            .collect();
        Map { h, w, data }
    }
}

/// Mean over channels of item `item` of an NCHW tensor.
pub fn channel_mean(t: &Tensor, item: usize) -> Result<Map> {
    let (n, c, h, w) = nchw("channel_mean", t)?;
    ensure!(item < n, Error::Contract(format!("item {item} of a batch of {n}")));
    let d = t.data();
    let hw = h * w;
    let mut data = vec![0.0; hw];
    for ch in 0..c {
        for (acc, v) in data.iter_mut().zip(&d[(item * c + ch) * hw..][..hw]) {
            *acc += v;
        }
    }
    data.iter_mut().for_each(|v| *v /= c as f64);
    Map::new(h, w, data)
}

/// Min-max scaling to `[0, 1]`; a constant map becomes all zeros.
pub fn normalize(map: &Map) -> Map {
    let lo = map.data.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let data = if span > 0.0 {
        map.data.iter().map(|v| (v - lo) / span).collect()
    } else {
        vec![0.0; map.data.len()]
    };
    Map { data, ..*map }
}

/// Normalized channel-mean of the projected prior at block `block` for
/// the first image of `image`.
pub fn extract_prior_map(model: &ToyNet, image: &Tensor, block: usize) -> Result<Map> {
    let has_projector = model
        .blocks
        .get(block)
        .and_then(|b| b.branch.as_ref())
        .is_some_and(|b| matches!(b.fusion, Fusion::Loap { .. }));
    ensure!(
        has_projector,
        Error::Config(format!(
            "block {block} has no adaptive projector attached (model has {} blocks)",
            model.blocks.len()
        ))
    );
    let (_, prior) = model.forward_probe(image, Mode::Eval, Some(block))?;
    let prior = prior.expect("branch present");
    Ok(normalize(&channel_mean(&prior, 0)?))
}

fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let r = i.rem_euclid(period);
    if r < n as isize {
        r as usize
    } else {
        (period - 1 - r) as usize
    }
}

/// Normalized 1D Gaussian weights for offsets `-radius..=radius`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable Gaussian blur with half-sample symmetric reflection.
pub fn gaussian_filter(map: &Map, sigma: f64) -> Result<Map> {
    ensure!(
        sigma > 0.0 && sigma.is_finite(),
        Error::Contract(format!("sigma must be positive, got {sigma}"))
    );
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (h, w) = (map.h, map.w);
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(j, wt)| wt * map.data[y * w + reflect(x as isize + j as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(j, wt)| wt * tmp[reflect(y as isize + j as isize - r, h) * w + x])
                .sum();
        }
    }
    Map::new(h, w, out)
}

/// 8-bit RGB raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub w: usize,
    pub h: usize,
    pub pixels: Vec<u8>,
}

fn quantize(v: f64) -> u8 {
    (v + 0.5).floor() as u8
}

/// Linear ramp from white at 0 to `(0.7, 0, 0)` at 1, rounded half up.
pub fn reds_colormap(map: &Map) -> Result<RgbImage> {
    let mut pixels = Vec::with_capacity(3 * map.data.len());
    for (i, &v) in map.data.iter().enumerate() {
        ensure!(
            (0.0..=1.0).contains(&v),
            Error::Contract(format!("colormap input {v} at index {i} is outside [0, 1]"))
        );
        let gb = quantize(255.0 - 255.0 * v);
        pixels.extend([quantize(255.0 - 76.5 * v), gb, gb]);
    }
    Ok(RgbImage {
        w: map.w,
        h: map.h,
        pixels,
    })
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.w, img.h).into_bytes();
    out.extend(&img.pixels);
    out
}

pub fn write_ppm(img: &RgbImage, path: &Path) -> Result<()> {
    std::fs::write(path, encode_ppm(img)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_endpoints() {
        let m = Map::new(1, 3, vec![0.0, 1.0, 0.5]).unwrap();
        let img = reds_colormap(&m).unwrap();
        assert_eq!(img.pixels, vec![255, 255, 255, 179, 0, 0, 217, 128, 128]);
        assert!(reds_colormap(&Map::new(1, 1, vec![1.5]).unwrap()).is_err());
    }

    #[test]
    fn ppm_header() {
        let img = RgbImage {
            w: 2,
            h: 1,
            pixels: vec![1, 2, 3, 4, 5, 6],
        };
        assert_eq!(encode_ppm(&img), b"P6\n2 1\n255\n\x01\x02\x03\x04\x05\x06".to_vec());
    }

    #[test]
    fn reflection_indices() {
        assert_eq!(reflect(-1, 4), 0);
        assert_eq!(reflect(-2, 4), 1);
        assert_eq!(reflect(4, 4), 3);
        assert_eq!(reflect(9, 4), 1);
    }

    #[test]
    fn constant_map_normalizes_to_zero() {
        let m = Map::new(2, 2, vec![3.0; 4]).unwrap();
        assert_eq!(normalize(&m).data, vec![0.0; 4]);
    }
}

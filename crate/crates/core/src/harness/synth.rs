//! Procedural fundus-like images.
//!
//! Generation is split into geometry (disc, vessels, lesions), which depends
//! only on `(global_seed, seed_index)`, and a per-domain style pass.

use std::f64::consts::TAU;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::grade::{assign_grade, sample_inventory, LesionInventory};
use crate::error::{ensure, Error, Result};
use crate::rng::{fnv1a, splitmix64, stream, Rng};

/// Style shift of one synthetic domain.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainSpec {
    pub id: String,
    pub gamma: f64,
    /// Additive per-channel offset, each in `[0, 0.25]`.
    pub tint: [f64; 3],
    pub blur_radius: usize,
    pub noise_sigma: f64,
    pub thickness: f64,
    /// Left-to-right brightness falloff, in `[0, 0.5]`.
    pub illumination: f64,
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("domain `{}`: {what}", self.id));
        ensure!((0.5..=2.0).contains(&self.gamma), bad("gamma outside [0.5, 2]"));
        ensure!((0.0..=0.1).contains(&self.noise_sigma), bad("noise sigma outside [0, 0.1]"));
        ensure!(self.tint.iter().all(|t| (0.0..=0.25).contains(t)), bad("tint outside [0, 0.25]"));
        ensure!((0.0..=0.5).contains(&self.illumination), bad("illumination outside [0, 0.5]"));
        ensure!((0.5..=2.0).contains(&self.thickness), bad("thickness scale outside [0.5, 2]"));
        ensure!(self.blur_radius <= 2, bad("blur radius above 2"));
        ensure!(!self.id.is_empty(), bad("empty id"));
        Ok(())
    }
}

/// The four built-in domains `A` to `D`.
pub fn default_domains() -> Vec<DomainSpec> {
    let d = |id: &str, gamma, tint, blur_radius, noise_sigma, thickness, illumination| DomainSpec {
        id: id.into(),
        gamma,
        tint,
        blur_radius,
        noise_sigma,
        thickness,
        illumination,
    };
    vec![
        d("A", 1.0, [0.0, 0.0, 0.0], 0, 0.01, 1.0, 0.0),
        d("B", 0.7, [0.15, 0.05, 0.0], 1, 0.03, 1.3, 0.3),
        d("C", 1.5, [0.0, 0.1, 0.2], 0, 0.05, 0.8, 0.15),
        d("D", 1.2, [0.2, 0.2, 0.1], 1, 0.08, 1.1, 0.4),
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    /// `3 x size x size`, channel-major, values in `[0, 1]`.
    pub image: Vec<f64>,
    pub size: usize,
    pub grade: u8,
    pub inventory: LesionInventory,
    pub domain_id: String,
    pub seed_index: u64,
}

struct Canvas {
    size: usize,
    px: Vec<f64>,
}

impl Canvas {
    /// Blends `color` over a soft disk of radius `r` at `(cy, cx)`.
    fn disk(&mut self, cy: f64, cx: f64, r: f64, color: [f64; 3], alpha: f64) {
        let s = self.size;
        let reach = r + 1.0;
        let y0 = (cy - reach).floor().max(0.0) as usize;
        let x0 = (cx - reach).floor().max(0.0) as usize;
        let y1 = ((cy + reach).ceil() as usize).min(s - 1);
        let x1 = ((cx + reach).ceil() as usize).min(s - 1);
        if cy + reach < 0.0 || cx + reach < 0.0 {
            return;
        }
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
                let a = alpha * (r + 0.5 - d).clamp(0.0, 1.0);
                if a > 0.0 {
                    for (c, &col) in color.iter().enumerate() {
                        let p = &mut self.px[c * s * s + y * s + x];
                        *p += a * (col - *p);
                    }
                }
            }
        }
    }

    /// Smooth random walk painted with tapering disks; stops at the rim of
    /// the fundus disc.
    #[allow(clippy::too_many_arguments)]
    fn curve(&mut self, rng: &mut Rng, y: f64, x: f64, heading: f64, steps: usize, bend: f64, width: f64, color: [f64; 3]) {
        let turn = Normal::new(0.0, bend).expect("positive bend");
        let s = self.size as f64;
        let (mut y, mut x, mut h) = (y, x, heading);
        for i in 0..steps {
            if ((y - s / 2.0).powi(2) + (x - s / 2.0).powi(2)).sqrt() > DISC_RADIUS * s {
                break;
            }
            let taper = 1.0 - 0.5 * i as f64 / steps as f64;
            self.disk(y, x, width * taper, color, 0.9);
            h += turn.sample(rng);
            y += h.sin();
            x += h.cos();
        }
    }

    fn box_blur(&mut self, radius: usize) {
        if radius == 0 {
            return;
        }
        let s = self.size;
        let r = radius as isize;
        let clamp = |i: isize| i.clamp(0, s as isize - 1) as usize;
        for plane in self.px.chunks_mut(s * s) {
            let src = plane.to_vec();
            let mut tmp = vec![0.0; s * s];
            for y in 0..s {
                for x in 0..s {
                    let acc: f64 = (-r..=r).map(|d| src[y * s + clamp(x as isize + d)]).sum();
                    tmp[y * s + x] = acc / (2 * r + 1) as f64;
                }
            }
            for y in 0..s {
                for x in 0..s {
                    let acc: f64 = (-r..=r).map(|d| tmp[clamp(y as isize + d) * s + x]).sum();
                    plane[y * s + x] = acc / (2 * r + 1) as f64;
                }
            }
        }
    }
}

const DISC_RADIUS: f64 = 0.45;
/// Floor on the lesion size unit, in pixels. Below it, microaneurysms and
/// exudates shrink to a pixel or less and grades stop being learnable from
/// a few hundred images.
const MIN_LESION_UNIT: f64 = 2.0;

const VESSEL: [f64; 3] = [0.55, 0.12, 0.1];
const MICROANEURYSM: [f64; 3] = [0.45, 0.05, 0.05];
const HEMORRHAGE: [f64; 3] = [0.32, 0.03, 0.03];
const HARD_EXUDATE: [f64; 3] = [1.0, 0.95, 0.45];
const SOFT_EXUDATE: [f64; 3] = [0.95, 0.9, 0.8];

/// Random point inside the fundus disc, away from its rim.
fn lesion_site(rng: &mut Rng, s: f64) -> (f64, f64) {
    let rho = 0.36 * s * rng.random::<f64>().sqrt();
    let phi = rng.random::<f64>() * TAU;
    (s / 2.0 + rho * phi.sin(), s / 2.0 + rho * phi.cos())
}

/// Renders the domain-independent geometry into `[0, 1]`.
fn render_geometry(rng: &mut Rng, size: usize, inv: &LesionInventory, thickness: f64) -> Canvas {
    let s = size as f64;
    let mut canvas = Canvas {
        size,
        px: vec![0.0; 3 * size * size],
    };
    let (cy, cx, radius) = (s / 2.0, s / 2.0, DISC_RADIUS * s);
    let base = [0.85, 0.45, 0.25];
    for y in 0..size {
        for x in 0..size {
            let d = ((y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2)).sqrt() / radius;
            if d <= 1.0 {
                let shade = 1.0 - 0.35 * d * d;
                for (c, b) in base.iter().enumerate() {
                    canvas.px[c * size * size + y * size + x] = b * shade;
                }
            }
        }
    }
    let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let (oy, ox) = (cy + rng.random_range(-0.08..0.08) * s, cx + side * 0.22 * s);
    canvas.disk(oy, ox, 0.08 * s, [0.98, 0.9, 0.7], 1.0);

    let vessels = rng.random_range(3..=7);
    for _ in 0..vessels {
        let heading = rng.random::<f64>() * TAU;
        let steps = rng.random_range((0.5 * s) as usize..=(0.9 * s) as usize);
        let width = rng.random_range(0.8..1.6) * thickness * s / 64.0;
        canvas.curve(rng, oy, ox, heading, steps, 0.15, width, VESSEL);
    }

    let unit = (s / 64.0).max(MIN_LESION_UNIT);
    for _ in 0..inv.microaneurysms {
        let (y, x) = lesion_site(rng, s);
        canvas.disk(y, x, 0.9 * unit, MICROANEURYSM, 1.0);
    }
    for _ in 0..inv.hemorrhages {
        let (y, x) = lesion_site(rng, s);
        let r = rng.random_range(2.0..3.0) * unit;
        canvas.disk(y, x, r, HEMORRHAGE, 1.0);
        canvas.disk(y + rng.random_range(-1.0..1.0) * r, x + rng.random_range(-1.0..1.0) * r, 0.6 * r, HEMORRHAGE, 1.0);
    }
    for _ in 0..inv.hard_exudates {
        let (y, x) = lesion_site(rng, s);
        canvas.disk(y, x, 1.2 * unit, HARD_EXUDATE, 1.0);
    }
    for _ in 0..inv.soft_exudates {
        let (y, x) = lesion_site(rng, s);
        let r = rng.random_range(2.5..3.5) * unit;
        canvas.disk(y, x, r, SOFT_EXUDATE, 0.7);
    }
    for _ in 0..inv.neovascular_tangles {
        let (y, x) = lesion_site(rng, s);
        for _ in 0..5 {
            let steps = rng.random_range((8.0 * unit) as usize..=(12.0 * unit) as usize);
            let heading = rng.random::<f64>() * TAU;
            canvas.curve(rng, y, x, heading, steps, 0.9, 0.8 * unit, VESSEL);
        }
    }
    canvas
}

fn apply_style(canvas: &mut Canvas, rng: &mut Rng, domain: &DomainSpec) {
    canvas.box_blur(domain.blur_radius);
    let s = canvas.size;
    let noise = (domain.noise_sigma > 0.0).then(|| Normal::new(0.0, domain.noise_sigma).expect("valid sigma"));
    for c in 0..3 {
        for y in 0..s {
            for x in 0..s {
                let p = &mut canvas.px[c * s * s + y * s + x];
                let light = 0.75 * (1.0 - domain.illumination * x as f64 / s as f64);
                let mut v = p.powf(domain.gamma) * light + domain.tint[c];
                if let Some(n) = &noise {
                    v += n.sample(rng);
                }
                *p = v.clamp(0.0, 1.0);
            }
        }
    }
}

/// Geometry stream for `(global_seed, seed_index)`.
pub fn geometry_stream(global_seed: u64, seed_index: u64) -> Rng {
    stream(global_seed ^ seed_index)
}

pub fn generate_image(global_seed: u64, seed_index: u64, grade: u8, size: usize, domain: &DomainSpec) -> Result<SyntheticSample> {
    ensure!(size >= 8, Error::Contract(format!("image size must be >= 8, got {size}")));
    let mut geo = geometry_stream(global_seed, seed_index);
    let inventory = sample_inventory(&mut geo, grade)?;
    let mut canvas = render_geometry(&mut geo, size, &inventory, domain.thickness);
    let mut style = stream(splitmix64(global_seed ^ seed_index) ^ fnv1a(&domain.id));
    apply_style(&mut canvas, &mut style, domain);
    Ok(SyntheticSample {
        image: canvas.px,
        size,
        grade: assign_grade(&inventory),
        inventory,
        domain_id: domain.id.clone(),
        seed_index,
    })
}

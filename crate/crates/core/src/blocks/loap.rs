use crate::error::{ensure, Error, Result};
use crate::module::{join, Conv, Module, Role};
use crate::numerics::ops::{self, nchw};
use crate::numerics::tensor::Tensor;
use crate::rng::Rng;
use crate::spline::{KnotVector, SplineActivation};

/// Adaptive projector `s'_t = B_f * up(σ(A_f * s_t))`.
///
/// `B_f` starts at zero so a fresh projector contributes nothing.
#[derive(Clone, Debug)]
pub struct LoapModule {
    pub a_f: Conv,
    pub spline: SplineActivation,
    pub b_f: Conv,
    /// Nearest-neighbour upsampling factor applied before `B_f`.
    pub factor: usize,
}

impl LoapModule {
    pub fn new(
        rng: &mut Rng,
        c_in: usize,
        hidden: usize,
        c_out: usize,
        factor: usize,
        knots: KnotVector,
    ) -> Result<Self> {
        Ok(Self {
            a_f: Conv::kaiming(rng, c_in, hidden, 1, 1, 0, 1),
            spline: SplineActivation::identity(knots, hidden)?,
            b_f: Conv::zeros(hidden, c_out, 1, 1, 0, 1),
            factor,
        })
    }
}

impl Module for LoapModule {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor, Role)) {
        self.a_f.visit(&join(prefix, "a_f"), f);
        self.spline.visit(&join(prefix, "spline"), f);
        self.b_f.visit(&join(prefix, "b_f"), f);
    }
}

/// Projects `s_t` back to the host output extent `(ho, wo)`. An upsampled
/// map that overshoots by less than `factor` is center-cropped.
pub fn loap_forward(s: &Tensor, m: &LoapModule, ho: usize, wo: usize) -> Result<Tensor> {
    let (_, _, h, w) = nchw("loap_forward", s)?;
    let (uh, uw) = (h * m.factor, w * m.factor);
    let fits = |up: usize, target: usize| up >= target && up - target < m.factor.max(1);
    ensure!(
        fits(uh, ho) && fits(uw, wo),
        Error::shape(
            "loap_forward",
            format!("prior {:?} upsampled x{} cannot match host extent {ho}x{wo}", s.shape(), m.factor)
        )
    );
    let z = m.spline.forward(&m.a_f.forward(s)?)?;
    let z = ops::center_fit(&ops::nearest_upsample(&z, m.factor)?, ho, wo)?;
    m.b_f.forward(&z)
}

/// `h'_t = (A_c * h_t) + h_t + s'_t`.
pub fn loasp_fuse(h: &Tensor, s_prime: &Tensor, a_c: &Conv) -> Result<Tensor> {
    ensure!(
        h.shape() == s_prime.shape(),
        Error::shape("loasp_fuse", format!("host {:?} vs prior {:?}", h.shape(), s_prime.shape()))
    );
    let refined = a_c.forward(h)?;
    ops::add(&ops::add(&refined, h)?, s_prime)
}

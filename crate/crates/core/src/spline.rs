//! B-spline bases (Cox–de Boor) and the learnable per-channel spline
//! activation.
//!
//! Conventions: a `0/0` weight in the recursion counts as 0, and the last
//! non-empty knot interval is closed on the right so the basis still sums
//! to one at the upper end of the domain.

use crate::error::{ensure, Error, Result};
use crate::module::{join, Module, Role};
use crate::numerics::ops::nchw;
use crate::numerics::tensor::Tensor;

/// Non-decreasing knot sequence together with the spline degree.
#[derive(Clone, Debug, PartialEq)]
pub struct KnotVector {
    degree: usize,
    knots: Vec<f64>,
}

impl KnotVector {
    pub fn new(degree: usize, knots: Vec<f64>) -> Result<Self> {
        ensure!(
            knots.len() >= degree + 2,
            Error::Contract(format!("degree {degree} needs at least {} knots, got {}", degree + 2, knots.len()))
        );
        ensure!(
            knots.iter().all(|k| k.is_finite()) && knots.windows(2).all(|w| w[0] <= w[1]),
            Error::Contract(format!("knots must be finite and non-decreasing: {knots:?}"))
        );
        let kv = Self { degree, knots };
        let (lo, hi) = kv.domain();
        ensure!(lo < hi, Error::Contract(format!("degenerate spline domain [{lo}, {hi}]")));
        Ok(kv)
    }

    /// `p + 1` copies of `lo`, `g - 1` uniform interior knots, `p + 1`
    /// copies of `hi`; yields `g + p` basis functions.
    pub fn clamped_uniform(p: usize, g: usize, lo: f64, hi: f64) -> Result<Self> {
        ensure!(g >= 1, Error::Contract(format!("need at least one grid interval, got {g}")));
        ensure!(lo < hi, Error::Contract(format!("empty interval [{lo}, {hi}]")));
        let step = (hi - lo) / g as f64;
        let mut knots = vec![lo; p + 1];
        knots.extend((1..g).map(|i| lo + step * i as f64));
        knots.extend(std::iter::repeat_n(hi, p + 1));
        Self::new(p, knots)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of basis functions, `m - p` for knots `u_0..u_m`.
    pub fn basis_count(&self) -> usize {
        self.knots.len() - 1 - self.degree
    }

    /// `[u_p, u_{m-p}]`.
    pub fn domain(&self) -> (f64, f64) {
        let m = self.knots.len() - 1;
        (self.knots[self.degree], self.knots[m - self.degree])
    }

    /// Index `j` of the knot interval holding `x` (already inside the domain).
    fn span(&self, x: f64) -> usize {
        let (_, hi) = self.domain();
        let n = self.basis_count();
        if x >= hi {
            // last non-empty interval ending at hi
            let mut j = n - 1;
            while j > self.degree && self.knots[j] >= self.knots[j + 1] {
                j -= 1;
            }
            return j;
        }
        let j = self.knots.partition_point(|&u| u <= x) - 1;
        j.clamp(self.degree, n - 1)
    }
}

#[inline]
fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn degree_zero(i: usize, x: f64, u: &[f64]) -> f64 {
    let last = u[u.len() - 1];
    if (u[i] <= x && x < u[i + 1]) || (x == last && u[i] < u[i + 1] && u[i + 1] == last) {
        1.0
    } else {
        0.0
    }
}

fn recurse(i: usize, p: usize, x: f64, u: &[f64]) -> f64 {
    if p == 0 {
        return degree_zero(i, x, u);
    }
    ratio(x - u[i], u[i + p] - u[i]) * recurse(i, p - 1, x, u)
        + ratio(u[i + p + 1] - x, u[i + p + 1] - u[i + 1]) * recurse(i + 1, p - 1, x, u)
}

/// The `i`-th degree-`p` basis function at `x`, evaluated by direct
/// recursion over the raw knot sequence.
pub fn bspline_basis(i: usize, p: usize, x: f64, knots: &[f64]) -> Result<f64> {
    let n = knots.len().checked_sub(p + 1).unwrap_or(0);
    ensure!(
        i < n,
        Error::Contract(format!("basis index {i} out of range for {n} degree-{p} functions"))
    );
    Ok(recurse(i, p, x, knots))
}

/// Non-zero basis values at `x` (clamped into the domain): the span `j`,
/// the `p + 1` values of `σ_{j-p..=j}^p` and the `p` values of
/// `σ_{j-p+1..=j}^{p-1}` used for derivatives.
pub(crate) struct LocalBasis {
    pub span: usize,
    pub values: Vec<f64>,
    pub lower: Vec<f64>,
}

pub(crate) fn local_basis(kv: &KnotVector, x: f64) -> LocalBasis {
    let p = kv.degree;
    let u = &kv.knots;
    let (lo, hi) = kv.domain();
    let x = x.clamp(lo, hi);
    let j = kv.span(x);
    // level q holds σ_{j-q..=j}^q; entries beyond the window are zero
    let mut level = vec![degree_zero(j, x, u)];
    let mut lower = Vec::new();
    for q in 1..=p {
        let start = j - q;
        let mut next = Vec::with_capacity(q + 1);
        for i in start..=j {
            // previous level covers j-q+1..=j
            let prev_i = if i >= j - q + 1 { level[i - (j - q + 1)] } else { 0.0 };
            let prev_next = if i < j { level[i + 1 - (j - q + 1)] } else { 0.0 };
            next.push(
                ratio(x - u[i], u[i + q] - u[i]) * prev_i
                    + ratio(u[i + q + 1] - x, u[i + q + 1] - u[i + 1]) * prev_next,
            );
        }
        if q == p {
            lower = std::mem::replace(&mut level, next);
        } else {
            level = next;
        }
    }
    LocalBasis {
        span: j,
        values: level,
        lower,
    }
}

/// All `n` basis values at `x` after clamping `x` into the domain.
pub fn basis_all(x: f64, kv: &KnotVector) -> Vec<f64> {
    let lb = local_basis(kv, x);
    let mut out = vec![0.0; kv.basis_count()];
    let start = lb.span - kv.degree;
    out[start..=lb.span].copy_from_slice(&lb.values);
    out
}

/// Greville abscissae `(u_{i+1} + … + u_{i+p}) / p`, repeated per channel.
/// With these coefficients the spline reproduces `f(x) = x`.
pub fn greville_identity_init(kv: &KnotVector, channels: usize) -> Result<Vec<f64>> {
    let p = kv.degree;
    ensure!(
        p >= 1,
        Error::UnsupportedInit("degree-0 splines are piecewise constant and cannot reproduce x".into())
    );
    let row: Vec<f64> = (0..kv.basis_count())
        .map(|i| kv.knots[i + 1..=i + p].iter().sum::<f64>() / p as f64)
        .collect();
    Ok(row.repeat(channels))
}

/// Interval midpoints: the closest degree-0 stand-in for the identity.
pub fn midpoint_init(kv: &KnotVector, channels: usize) -> Vec<f64> {
    let row: Vec<f64> = (0..kv.basis_count())
        .map(|i| 0.5 * (kv.knots[i] + kv.knots[i + kv.degree + 1]))
        .collect();
    row.repeat(channels)
}

/// Per-channel learnable spline `y = Σ_i c[ch, i] σ_i^p(clamp(x))`.
#[derive(Clone, Debug)]
pub struct SplineActivation {
    pub knots: KnotVector,
    /// `[channels, n]`.
    pub coeffs: Tensor,
}

impl SplineActivation {
    pub fn new(knots: KnotVector, coeffs: Tensor) -> Result<Self> {
        ensure!(
            coeffs.shape().len() == 2 && coeffs.shape()[1] == knots.basis_count(),
            Error::shape(
                "spline",
                format!("coefficients {:?} for {} basis functions", coeffs.shape(), knots.basis_count())
            )
        );
        Ok(Self { knots, coeffs })
    }

    /// Identity-reproducing initialization (interval midpoints at degree 0).
    pub fn identity(knots: KnotVector, channels: usize) -> Result<Self> {
        let c = if knots.degree() == 0 {
            midpoint_init(&knots, channels)
        } else {
            greville_identity_init(&knots, channels)?
        };
        let coeffs = Tensor::param(&[channels, knots.basis_count()], c)?;
        Self::new(knots, coeffs)
    }

    pub fn channels(&self) -> usize {
        self.coeffs.shape()[0]
    }

    /// Scalar evaluation for one channel.
    pub fn eval_scalar(&self, channel: usize, x: f64) -> f64 {
        let n = self.knots.basis_count();
        let c = self.coeffs.data();
        let lb = local_basis(&self.knots, x);
        let start = lb.span - self.knots.degree();
        lb.values
            .iter()
            .enumerate()
            .map(|(k, b)| c[channel * n + start + k] * b)
            .sum()
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        spline_eval(self, input)
    }
}

impl Module for SplineActivation {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor, Role)) {
        f(join(prefix, "coeffs"), &self.coeffs, Role::Param);
    }
}

/// Applies the activation at every NCHW position, channel by channel.
pub fn spline_eval(act: &SplineActivation, input: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = nchw("spline_eval", input)?;
    ensure!(
        c == act.channels(),
        Error::shape(
            "spline_eval",
            format!("input {:?} for a {}-channel spline", input.shape(), act.channels())
        )
    );
    let kv = act.knots.clone();
    let p = kv.degree();
    let nb = kv.basis_count();
    let (lo, hi) = kv.domain();
    let hw = h * w;
    let coeffs = act.coeffs.to_vec();
    let x = input.to_vec();
    let mut out = vec![0.0; x.len()];
    let mut spans = vec![0usize; x.len()];
    let mut basis = vec![0.0; x.len() * (p + 1)];
    let mut slope = vec![0.0; x.len()];
    for (idx, &xv) in x.iter().enumerate() {
        let ch = (idx / hw) % c;
        let row = &coeffs[ch * nb..(ch + 1) * nb];
        let lb = local_basis(&kv, xv);
        let start = lb.span - p;
        out[idx] = lb.values.iter().zip(&row[start..=lb.span]).map(|(b, c)| b * c).sum();
        if p > 0 && (lo..=hi).contains(&xv) {
            let u = kv.knots();
            let mut d = 0.0;
            // σ_i' = p (σ_i^{p-1}/(u_{i+p}-u_i) - σ_{i+1}^{p-1}/(u_{i+p+1}-u_{i+1}))
            for (k, &ci) in row[start..=lb.span].iter().enumerate() {
                let i = start + k;
                let left = if k >= 1 { lb.lower[k - 1] } else { 0.0 };
                let right = if k < p { lb.lower[k] } else { 0.0 };
                d += ci * p as f64 * (ratio(left, u[i + p] - u[i]) - ratio(right, u[i + p + 1] - u[i + 1]));
            }
            slope[idx] = d;
        }
        spans[idx] = lb.span;
        basis[idx * (p + 1)..(idx + 1) * (p + 1)].copy_from_slice(&lb.values);
    }
    Ok(Tensor::from_op(
        "spline_eval",
        vec![n, c, h, w],
        out,
        vec![input.clone(), act.coeffs.clone()],
        move |ctx| {
            let g = ctx.grad_out;
            let gx = ctx.needs[0].then(|| g.iter().zip(&slope).map(|(g, s)| g * s).collect());
            let gc = ctx.needs[1].then(|| {
                let mut gc = vec![0.0; c * nb];
                for (idx, &gi) in g.iter().enumerate() {
                    let ch = (idx / hw) % c;
                    let start = spans[idx] - p;
                    for k in 0..=p {
                        gc[ch * nb + start + k] += gi * basis[idx * (p + 1) + k];
                    }
                }
                gc
            });
            vec![gx, gc]
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamped_uniform_layouts() {
        let kv = KnotVector::clamped_uniform(2, 2, -1.0, 1.0).unwrap();
        assert_eq!(kv.knots(), &[-1.0, -1.0, -1.0, 0.0, 1.0, 1.0, 1.0]);
        assert_eq!(kv.basis_count(), 4);
        let kv = KnotVector::clamped_uniform(0, 3, 0.0, 3.0).unwrap();
        assert_eq!(kv.knots(), &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(kv.basis_count(), 3);
        let kv = KnotVector::clamped_uniform(1, 1, 2.0, 5.0).unwrap();
        assert_eq!(kv.knots(), &[2.0, 2.0, 5.0, 5.0]);
        assert_eq!(kv.basis_count(), 2);
    }

    #[test]
    fn constructor_rejects_bad_input() {
        assert!(KnotVector::clamped_uniform(2, 0, -1.0, 1.0).is_err());
        assert!(KnotVector::clamped_uniform(2, 3, 1.0, 1.0).is_err());
        assert!(KnotVector::new(1, vec![0.0, 2.0, 1.0]).is_err());
    }

    #[test]
    fn hand_evaluated_recursion() {
        let u = [0.0, 1.0, 2.0];
        assert_eq!(bspline_basis(0, 0, 0.5, &u).unwrap(), 1.0);
        assert_eq!(bspline_basis(0, 1, 0.5, &u).unwrap(), 0.5);
        assert_eq!(bspline_basis(0, 1, 1.5, &u).unwrap(), 0.5);
        assert!(bspline_basis(1, 1, 0.5, &u).is_err());
    }

    #[test]
    fn lower_boundary_selects_first_basis() {
        let kv = KnotVector::clamped_uniform(3, 4, -1.0, 1.0).unwrap();
        let b = basis_all(-1.0, &kv);
        assert_eq!(b[0], 1.0);
        assert!(b[1..].iter().all(|&v| v == 0.0));
        let b = basis_all(1.0, &kv);
        assert_eq!(*b.last().unwrap(), 1.0);
        assert!(b[..b.len() - 1].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn greville_hand_values() {
        let kv = KnotVector::new(2, vec![-1.0, -1.0, -1.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(greville_identity_init(&kv, 1).unwrap(), vec![-1.0, -0.5, 0.5, 1.0]);
        let kv = KnotVector::new(1, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(greville_identity_init(&kv, 2).unwrap(), vec![0.0, 1.0, 0.0, 1.0]);
        let kv = KnotVector::clamped_uniform(0, 3, 0.0, 1.0).unwrap();
        assert!(matches!(greville_identity_init(&kv, 1), Err(Error::UnsupportedInit(_))));
    }

    #[test]
    fn identity_spline_values() {
        let kv = KnotVector::clamped_uniform(2, 2, -1.0, 1.0).unwrap();
        let act = SplineActivation::identity(kv, 1).unwrap();
        assert_eq!(act.eval_scalar(0, 0.0), 0.0);
        assert!((act.eval_scalar(0, 0.37) - 0.37).abs() < 1e-12);
        // clamped outside the domain
        assert!((act.eval_scalar(0, 3.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_coefficients_give_zero() {
        let kv = KnotVector::clamped_uniform(3, 6, -1.0, 1.0).unwrap();
        let act = SplineActivation::new(kv, Tensor::zeros(&[2, 9])).unwrap();
        let x = Tensor::new(&[1, 2, 2, 2], vec![0.1, -0.4, 0.9, 2.0, -3.0, 0.0, 0.5, 0.7]).unwrap();
        assert!(spline_eval(&act, &x).unwrap().to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let kv = KnotVector::clamped_uniform(1, 2, -1.0, 1.0).unwrap();
        let act = SplineActivation::identity(kv, 3).unwrap();
        let x = Tensor::zeros(&[1, 2, 2, 2]);
        assert!(matches!(spline_eval(&act, &x), Err(Error::Shape { .. })));
    }
}

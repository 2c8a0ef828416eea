//! Central finite differences, the oracle behind every gradient test.

use crate::error::{ensure, Error, Result};
use crate::numerics::tensor::Tensor;

pub const DEFAULT_FD_EPS: f64 = 1e-6;

fn checked(v: f64, at: usize) -> Result<f64> {
    ensure!(
        v.is_finite(),
        Error::Numeric(format!("function returned {v} while perturbing coordinate {at}"))
    );
    Ok(v)
}

/// `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)` for every coordinate `i`.
pub fn finite_difference_grad<F>(mut f: F, input: &Tensor, eps: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    ensure!(eps > 0.0, Error::Contract(format!("finite-difference step must be positive, got {eps}")));
    let base = input.to_vec();
    let mut grad = vec![0.0; base.len()];
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += eps;
        let mut minus = base.clone();
        minus[i] -= eps;
        let fp = checked(f(&Tensor::new(input.shape(), plus)?)?, i)?;
        let fm = checked(f(&Tensor::new(input.shape(), minus)?)?, i)?;
        grad[i] = (fp - fm) / (2.0 * eps);
    }
    Tensor::new(input.shape(), grad)
}

/// Finite differences with respect to selected coordinates of a leaf that is
/// read by `f` through shared storage. The leaf is restored afterwards.
pub fn finite_difference_in_place<F>(mut f: F, leaf: &Tensor, indices: &[usize], eps: f64) -> Result<Vec<f64>>
where
    F: FnMut() -> Result<f64>,
{
    ensure!(eps > 0.0, Error::Contract(format!("finite-difference step must be positive, got {eps}")));
    let mut out = Vec::with_capacity(indices.len());
    for &i in indices {
        let orig = leaf.data()[i];
        leaf.data_mut()[i] = orig + eps;
        let fp = f();
        leaf.data_mut()[i] = orig - eps;
        let fm = f();
        leaf.data_mut()[i] = orig;
        out.push((checked(fp?, i)? - checked(fm?, i)?) / (2.0 * eps));
    }
    Ok(out)
}

/// Norm-wise relative error `|a - b| / max(|a|, |b|)`; 0 when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb = numeric.iter().map(|b| b * b).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let x = Tensor::new(&[2], vec![1.0, 2.0]).unwrap();
        let g = finite_difference_grad(|t| Ok(t.data().iter().map(|v| v * v).sum()), &x, 1e-6).unwrap();
        assert!((g.to_vec()[0] - 2.0).abs() < 1e-8);
        assert!((g.to_vec()[1] - 4.0).abs() < 1e-8);
    }

    #[test]
    fn constant_and_sum() {
        let x = Tensor::new(&[3], vec![0.1, -5.0, 7.0]).unwrap();
        let g = finite_difference_grad(|_| Ok(4.2), &x, 1e-6).unwrap();
        assert_eq!(g.to_vec(), vec![0.0; 3]);
        let g = finite_difference_grad(|t| Ok(t.data().iter().sum()), &x, 1e-6).unwrap();
        assert!(g.to_vec().iter().all(|v| (v - 1.0).abs() < 1e-8));
    }

    #[test]
    fn non_finite_function_is_an_error() {
        let x = Tensor::new(&[1], vec![0.0]).unwrap();
        let err = finite_difference_grad(|_| Ok(f64::NAN), &x, 1e-6).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }
}

//! Central-difference gradient oracle.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared absolutely rather than relatively.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// `(f(x + h·e_i) − f(x − h·e_i)) / 2h` for every coordinate `i`.
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    let mut probe = x.clone();
    probe.clear_grad();
    let mut grad = vec![0.0; x.numel()];
    for (i, g) in grad.iter_mut().enumerate() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!(
                "objective is not finite around coordinate {i}"
            )));
        }
        *g = (plus - minus) / (2.0 * h);
    }
    Tensor::new(x.shape().to_vec(), grad)
}

/// Largest coordinate-wise `|a − b| / max(|a|, |b|, RELATIVE_FLOOR)`.
pub fn max_relative_error(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape(), "max_relative_error: shape mismatch");
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(RELATIVE_FLOOR))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_unit_gradient() {
        let x = Tensor::vector(vec![0.3, -1.2, 4.0]).unwrap();
        let g = finite_diff_grad(|t| Ok(t.sum()), &x, DEFAULT_STEP).unwrap();
        assert!(g.data().iter().all(|v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn square_at_three() {
        let x = Tensor::vector(vec![3.0]).unwrap();
        let g = finite_diff_grad(|t| Ok(t.data()[0] * t.data()[0]), &x, DEFAULT_STEP).unwrap();
        assert!((g.data()[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn non_finite_objective_errors() {
        let x = Tensor::vector(vec![0.0]).unwrap();
        let r = finite_diff_grad(|t| Ok(1.0 / (t.data()[0] - DEFAULT_STEP)), &x, DEFAULT_STEP);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }
}

use crate::diffcore::Matrix;
use crate::error::{Error, Result};

pub const GRAD_CHECK_EPS: f64 = 1e-5;

/// Compares an analytic gradient against central differences of `f`.
///
/// Returns `max_i |analytic_i - numeric_i| / max(1, |analytic_i|, |numeric_i|)`.
pub fn grad_check<F>(mut f: F, params: &Matrix, analytic: &Matrix, eps: f64) -> Result<f64>
where
    F: FnMut(&Matrix) -> f64,
{
    if !(eps > 0.0) {
        return Err(Error::Param(format!("eps must be positive, got {eps}")));
    }
    if !params.same_shape(analytic) {
        return Err(Error::shape("grad_check", params.shape_str(), analytic.shape_str()));
    }
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        let orig = params.as_slice()[i];
        probe.as_mut_slice()[i] = orig + eps;
        let up = f(&probe);
        probe.as_mut_slice()[i] = orig - eps;
        let down = f(&probe);
        probe.as_mut_slice()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Evaluation(format!("non-finite value at coordinate {i}")));
        }
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic.as_slice()[i];
        let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::sigmoid;

    #[test]
    fn quadratic_is_exact() {
        let x = Matrix::scalar(3.0);
        let err = grad_check(|p| p.as_slice()[0].powi(2), &x, &Matrix::scalar(6.0), 1e-5).unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn sigmoid_gradient() {
        let x = 0.7;
        let s = sigmoid(x);
        let err = grad_check(|p| sigmoid(p.as_slice()[0]), &Matrix::scalar(x), &Matrix::scalar(s * (1.0 - s)), 1e-5)
            .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn detects_wrong_gradient() {
        let x = Matrix::scalar(3.0);
        let err = grad_check(|p| p.as_slice()[0].powi(2), &x, &Matrix::scalar(12.0), 1e-5).unwrap();
        assert!(err > 0.1);
    }

    #[test]
    fn non_finite_value_is_an_error() {
        let x = Matrix::scalar(0.0);
        let res = grad_check(|p| 1.0 / (p.as_slice()[0] - p.as_slice()[0]), &x, &Matrix::scalar(0.0), 1e-5);
        assert!(matches!(res, Err(Error::Evaluation(_))));
    }

    #[test]
    fn multivariate() {
        // f = sum_i x_i^3, grad = 3 x_i^2
        let x = Matrix::row_vector(vec![0.5, -1.2, 2.0]);
        let g = x.map(|v| 3.0 * v * v);
        let err = grad_check(|p| p.as_slice().iter().map(|v| v.powi(3)).sum(), &x, &g, 1e-5).unwrap();
        assert!(err < 1e-8);
    }
}

//! Finite-difference verification of analytic gradients.

use crate::tensor::Tensor;

/// Compare analytic gradients against central differences of `f`.
///
/// `f` must be a deterministic scalar function of the parameter list
/// (freeze any rng streams before calling). Returns the worst relative
/// error over all coordinates, with the denominator floored at `1e-8`
/// so near-zero gradients do not blow the ratio up. Reports, never
/// fails: callers decide what error level is acceptable.
pub fn grad_check<F>(mut f: F, params: &[Tensor], analytic: &[Vec<f64>], eps: f64) -> f64
where
    F: FnMut(&[Tensor]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "one gradient per parameter");
    let mut worst: f64 = 0.0;
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, grad) in analytic.iter().enumerate() {
        assert_eq!(work[pi].numel(), grad.len(), "gradient shape mismatch");
        for j in 0..grad.len() {
            let orig = work[pi].data()[j];
            work[pi].data_mut()[j] = orig + eps;
            let plus = f(&work);
            work[pi].data_mut()[j] = orig - eps;
            let minus = f(&work);
            work[pi].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let denom = grad[j].abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((grad[j] - numeric).abs() / denom);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        // f(x) = 3x0 - 2x1 + 7; central differences are exact for
        // linear functions up to rounding.
        let p = Tensor::vector(vec![0.4, -1.3]);
        let err = grad_check(
            |ps| 3.0 * ps[0].data()[0] - 2.0 * ps[0].data()[1] + 7.0,
            &[p],
            &[vec![3.0, -2.0]],
            1e-5,
        );
        assert!(err <= 1e-10, "relative error {err}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let p = Tensor::vector(vec![2.0]);
        let err = grad_check(|ps| ps[0].data()[0].powi(2), &[p], &[vec![5.0]], 1e-5);
        assert!(err > 0.1);
    }
}

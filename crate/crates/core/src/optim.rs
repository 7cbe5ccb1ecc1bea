//! Bias-corrected Adam.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamHyper {
    pub fn with_lr(learning_rate: f64) -> Self {
        AdamHyper {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment buffers plus the shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    /// Zeroed state shaped after the parameter list it will update.
    pub fn for_params(params: &[&Tensor]) -> Self {
        AdamState {
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update over a parameter list and its matching gradients.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Vec<f64>],
    state: &mut AdamState,
    hyper: AdamHyper,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Contract(format!(
            "adam_step: {} params, {} grads, state for {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, p) in params.iter().enumerate() {
        if p.numel() != grads[i].len() || p.numel() != state.m[i].len() {
            return Err(Error::Contract(format!(
                "adam_step: size mismatch on parameter {i}: param {}, grad {}, state {}",
                p.numel(),
                grads[i].len(),
                state.m[i].len()
            )));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);

    for (i, p) in params.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let g = &grads[i];
        for (j, x) in p.data_mut().iter_mut().enumerate() {
            m[j] = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * g[j];
            v[j] = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *x -= hyper.learning_rate * m_hat / (v_hat.sqrt() + hyper.epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = Tensor::vector(vec![1.0, -2.0, 3.5]);
        let before = p.clone();
        let mut state = AdamState::for_params(&[&p]);
        adam_step(
            &mut [&mut p],
            &[vec![0.0; 3]],
            &mut state,
            AdamHyper::with_lr(0.01),
        )
        .unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_is_signed_learning_rate() {
        // With constant gradient g, bias correction makes m_hat = g and
        // v_hat = g^2, so the first update is -lr * g/(|g| + eps).
        let mut p = Tensor::vector(vec![0.0, 0.0]);
        let mut state = AdamState::for_params(&[&p]);
        adam_step(
            &mut [&mut p],
            &[vec![3.0, -0.25]],
            &mut state,
            AdamHyper::with_lr(0.01),
        )
        .unwrap();
        assert_abs_diff_eq!(p.data()[0], -0.01, epsilon = 1e-7);
        assert_abs_diff_eq!(p.data()[1], 0.01, epsilon = 1e-7);
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f(x) = 0.5 Σ (x - c)^2, gradient x - c.
        let target = [1.0, -2.0, 0.5, 4.0];
        let mut p = Tensor::vector(vec![0.0; 4]);
        let mut state = AdamState::for_params(&[&p]);
        let hyper = AdamHyper::with_lr(0.01);
        let mut loss = f64::INFINITY;
        for _ in 0..2000 {
            let g: Vec<f64> = p.data().iter().zip(&target).map(|(x, c)| x - c).collect();
            loss = 0.5 * g.iter().map(|v| v * v).sum::<f64>();
            if loss < 1e-6 {
                break;
            }
            adam_step(&mut [&mut p], &[g], &mut state, hyper).unwrap();
        }
        assert!(loss < 1e-6, "loss still {loss} after 2000 steps");
    }

    #[test]
    fn shape_mismatch_is_a_contract_error() {
        let mut p = Tensor::vector(vec![0.0; 3]);
        let mut state = AdamState::for_params(&[&p]);
        let err = adam_step(
            &mut [&mut p],
            &[vec![0.0; 2]],
            &mut state,
            AdamHyper::with_lr(0.01),
        )
        .unwrap_err();
        assert!(matches!(err, crate::error::Error::Contract(_)));
    }
}

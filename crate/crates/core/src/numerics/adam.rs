use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Hyper-parameters shared by every Adam state in one optimiser.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty folded into the gradient (`g + wd·θ`).
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Moment accumulators for one parameter matrix.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Matrix,
    pub v: Matrix,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize, config: AdamConfig) -> Self {
        AdamState {
            config,
            m: Matrix::zeros(rows, cols),
            v: Matrix::zeros(rows, cols),
            step_count: 0,
        }
    }

    pub fn for_param(param: &Matrix, config: AdamConfig) -> Self {
        AdamState::new(param.rows(), param.cols(), config)
    }
}

/// One bias-corrected Adam step, in place.
pub fn adam_update(params: &mut Matrix, grads: &Matrix, state: &mut AdamState) -> Result<()> {
    if params.shape() != grads.shape() || params.shape() != state.m.shape() {
        return Err(Error::Dimension(format!(
            "adam: params {:?}, grads {:?}, state {:?}",
            params.shape(),
            grads.shape(),
            state.m.shape()
        )));
    }
    grads.check_finite("adam gradient")?;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
        weight_decay,
    } = state.config;
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    let m = state.m.data_mut();
    let v = state.v.data_mut();
    for (i, (p, &g)) in params.data_mut().iter_mut().zip(grads.data()).enumerate() {
        let g = g + weight_decay * *p;
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_leaves_params() {
        let mut p = Matrix::from_vec(1, 3, vec![0.5, -1.0, 2.0]).unwrap();
        let before = p.clone();
        let mut st = AdamState::for_param(&p, AdamConfig::default());
        for _ in 0..3 {
            adam_update(&mut p, &Matrix::zeros(1, 3), &mut st).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_closed_form() {
        // step 1: m̂ = g, v̂ = g², Δ = lr·g/(|g| + ε)
        let mut p = Matrix::zeros(1, 1);
        let mut st = AdamState::for_param(&p, AdamConfig::default());
        adam_update(&mut p, &Matrix::from_vec(1, 1, vec![1.0]).unwrap(), &mut st).unwrap();
        let expected = -1e-3 * 1.0 / (1.0 + 1e-8);
        assert!((p[(0, 0)] - expected).abs() < 1e-18);
        assert!((p[(0, 0)] + 9.99999995e-4).abs() < 1e-11);
    }

    #[test]
    fn two_steps_match_unrolled_recurrence() {
        let (lr, b1, b2, eps, g) = (1e-3, 0.9, 0.999, 1e-8, 0.3);
        let mut theta = 1.0f64;
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - f64::powi(b1, t));
            let vh = v / (1.0 - f64::powi(b2, t));
            theta -= lr * mh / (vh.sqrt() + eps);
        }
        let mut p = Matrix::from_vec(1, 1, vec![1.0]).unwrap();
        let mut st = AdamState::for_param(&p, AdamConfig::default());
        let grad = Matrix::from_vec(1, 1, vec![g]).unwrap();
        adam_update(&mut p, &grad, &mut st).unwrap();
        adam_update(&mut p, &grad, &mut st).unwrap();
        assert!((p[(0, 0)] - theta).abs() < 1e-15);
        assert_eq!(st.step_count, 2);
    }

    #[test]
    fn rejects_bad_input() {
        let mut p = Matrix::zeros(2, 2);
        let mut st = AdamState::for_param(&p, AdamConfig::default());
        assert!(adam_update(&mut p, &Matrix::zeros(1, 2), &mut st).is_err());
        let nan = Matrix::from_vec(2, 2, vec![f64::NAN, 0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            adam_update(&mut p, &nan, &mut st),
            Err(Error::NonFinite(_))
        ));
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bias-corrected Adam over a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(n_params: usize, learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn with_defaults(n_params: usize, learning_rate: f64) -> Self {
        Self::new(n_params, learning_rate, 0.9, 0.999, 1e-8)
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        adam_step(self, params, grads)
    }
}

pub fn adam_step(adam: &mut AdamState, params: &mut [f64], grads: &[f64]) -> Result<()> {
    if params.len() != adam.m.len() || grads.len() != adam.m.len() {
        return Err(Error::input(format!(
            "Adam state holds {} moments, got {} parameters and {} gradients",
            adam.m.len(),
            params.len(),
            grads.len()
        )));
    }
    adam.step += 1;
    let t = adam.step as i32;
    let bc1 = 1.0 - adam.beta1.powi(t);
    let bc2 = 1.0 - adam.beta2.powi(t);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(adam.m.iter_mut().zip(adam.v.iter_mut())) {
        *m = adam.beta1 * *m + (1.0 - adam.beta1) * g;
        *v = adam.beta2 * *v + (1.0 - adam.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= adam.learning_rate * m_hat / (v_hat.sqrt() + adam.epsilon);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut adam = AdamState::with_defaults(3, 1e-3);
        let mut p = vec![1.0, -2.0, 0.5];
        adam.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn degenerate_betas_reduce_to_sign_step() {
        let (lr, eps) = (0.01, 1e-8);
        let mut adam = AdamState::new(3, lr, 0.0, 0.0, eps);
        let g = [0.3, -2.0, 1e-3];
        let mut p = vec![1.0, 1.0, 1.0];
        adam.step(&mut p, &g).unwrap();
        for (pi, gi) in p.iter().zip(g) {
            let expected = 1.0 - lr * gi / (gi.abs() + eps);
            assert!((pi - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn minimizes_a_parabola() {
        let mut adam = AdamState::with_defaults(1, 0.01);
        let mut x = vec![1.0];
        for _ in 0..200 {
            let g = [2.0 * x[0]];
            adam.step(&mut x, &g).unwrap();
        }
        assert!(x[0].abs() < 0.1, "{}", x[0]);
    }

    #[test]
    fn shape_mismatch() {
        let mut adam = AdamState::with_defaults(2, 0.01);
        assert!(adam.step(&mut [0.0; 3], &[0.0; 3]).is_err());
        assert!(adam.step(&mut [0.0; 2], &[0.0; 1]).is_err());
    }
}

//! Adam optimizer state for one parameter tensor.

use crate::error::{Error, Result};

pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;
pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// First/second moment accumulators plus step counter for one parameter
/// tensor; the moments always match the parameter's shape.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            learning_rate: DEFAULT_LEARNING_RATE,
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One standard Adam update over the whole tensor.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::dim("adam parameters", self.m.len(), params.len()));
        }
        if grads.len() != self.m.len() {
            return Err(Error::dim("adam gradients", self.m.len(), grads.len()));
        }
        let (c1, c2) = self.advance();
        for i in 0..params.len() {
            params[i] = adam_entry(
                &mut self.m[i],
                &mut self.v[i],
                grads[i],
                params[i],
                self.learning_rate,
                self.beta1,
                self.beta2,
                self.epsilon,
                c1,
                c2,
            );
        }
        Ok(())
    }

    /// Advances the step counter and returns the bias-correction factors
    /// `1/(1-beta1^t)` and `1/(1-beta2^t)`.
    fn advance(&mut self) -> (f64, f64) {
        self.step += 1;
        let c1 = 1.0 / (1.0 - self.beta1.powi(self.step as i32));
        let c2 = 1.0 / (1.0 - self.beta2.powi(self.step as i32));
        (c1, c2)
    }
}

/// The per-entry Adam rule; returns the updated parameter.
#[allow(clippy::too_many_arguments)]
#[inline]
fn adam_entry(
    m: &mut f64,
    v: &mut f64,
    g: f64,
    p: f64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    c1: f64,
    c2: f64,
) -> f64 {
    *m = beta1 * *m + (1.0 - beta1) * g;
    *v = beta2 * *v + (1.0 - beta2) * g * g;
    let m_hat = *m * c1;
    let v_hat = *v * c2;
    p - lr * m_hat / (v_hat.sqrt() + eps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_leaves_params_unchanged() {
        let mut state = AdamState::new(3);
        let mut p = vec![0.5, -0.25, 1.0];
        let orig = p.clone();
        state.update(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, orig);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn constant_grad_moves_against_gradient() {
        let mut state = AdamState::new(1);
        let mut p = vec![0.0];
        for _ in 0..100 {
            state.update(&mut p, &[2.5]).unwrap();
        }
        assert!(p[0] < -0.05, "p = {}", p[0]);
    }

    #[test]
    fn first_step_magnitude_matches_hand_evaluation() {
        // From m = v = 0 with grad 1: m_hat = 1, v_hat = 1, so the update is
        // -lr / (1 + eps) = -0.001 to within 1e-9.
        let mut state = AdamState::new(1);
        let mut p = vec![0.0];
        state.update(&mut p, &[1.0]).unwrap();
        assert!((p[0] + 0.001).abs() < 1e-9, "p = {}", p[0]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut state = AdamState::new(2);
        let mut p = vec![0.0; 3];
        assert!(state.update(&mut p, &[0.0; 3]).is_err());
        let mut p2 = vec![0.0; 2];
        assert!(state.update(&mut p2, &[0.0; 3]).is_err());
    }
}

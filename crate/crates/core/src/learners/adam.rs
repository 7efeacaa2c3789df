use serde::{Deserialize, Serialize};

use crate::error::{CcrError, Result};

/// Per-parameter first/second moment estimates for the Adam update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(num_params: usize) -> Self {
        AdamState {
            first_moment: vec![0.0; num_params],
            second_moment: vec![0.0; num_params],
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// One bias-corrected Adam step: `theta -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        let n = self.first_moment.len();
        if params.len() != n || grads.len() != n {
            return Err(CcrError::DimensionMismatch {
                expected: n,
                actual: if params.len() != n { params.len() } else { grads.len() },
            });
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        // f = theta^2 at theta = 1: gradient 2. After bias correction
        // m_hat = 2 and v_hat = 4, so the step is lr * 2 / (2 + 1e-8).
        let mut s = AdamState::new(1);
        let mut theta = [1.0];
        s.update(&mut theta, &[2.0], 0.001).unwrap();
        let expected = 1.0 - 0.001 * 2.0 / (2.0 + 1e-8);
        assert!((theta[0] - expected).abs() < 1e-15);
        assert!((theta[0] - 0.999).abs() < 1e-10);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut s = AdamState::new(3);
        let mut p = [1.0, -2.0, 0.5];
        s.update(&mut p, &[0.0; 3], 0.1).unwrap();
        assert_eq!(p, [1.0, -2.0, 0.5]);
    }

    #[test]
    fn step_counter_and_shape_check() {
        let mut s = AdamState::new(2);
        let mut p = [0.0, 0.0];
        assert_eq!(s.step_count, 0);
        s.update(&mut p, &[1.0, 1.0], 0.01).unwrap();
        s.update(&mut p, &[1.0, 1.0], 0.01).unwrap();
        assert_eq!(s.step_count, 2);
        assert!(s.update(&mut p, &[1.0], 0.01).is_err());
        assert!(s.update(&mut [0.0; 3], &[1.0; 3], 0.01).is_err());
    }

    #[test]
    fn converges_on_quadratic() {
        let mut s = AdamState::new(1);
        let mut theta = [3.0];
        for _ in 0..5000 {
            let g = [2.0 * theta[0]];
            s.update(&mut theta, &g, 0.01).unwrap();
        }
        assert!(theta[0].abs() < 1e-2);
    }
}

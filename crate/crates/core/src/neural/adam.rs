use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Adam optimiser state with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        check_dim(self.m.len(), params.len())?;
        check_dim(self.m.len(), grads.len())?;
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Domain("non-finite gradient".into()));
        }
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let mhat = *m / c1;
            let vhat = *v / c2;
            *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut adam = Adam::new(3, 0.1);
        let mut p = vec![1.0, -2.0, 3.0];
        adam.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m_hat = g, v_hat = g^2 after one step.
        let mut adam = Adam::new(1, 0.01);
        let mut p = vec![1.0];
        adam.step(&mut p, &[4.0]).unwrap();
        assert!((p[0] - (1.0 - 0.01 * 4.0 / (4.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn quadratic_converges() {
        // f(w) = w^2 from w = 1 with lr 1e-2. Reference iterates come from an
        // independent scalar replay of the recurrence.
        let mut adam = Adam::new(1, 1e-2);
        let mut w = vec![1.0];
        for k in 1..=220 {
            let g = [2.0 * w[0]];
            adam.step(&mut w, &g).unwrap();
            if k == 200 {
                assert!((w[0] - 0.015572485317246587).abs() < 1e-12, "{}", w[0]);
            }
        }
        assert!(w[0].abs() < 1e-2, "{}", w[0]);
    }

    #[test]
    fn shape_mismatch() {
        let mut adam = Adam::new(2, 0.1);
        assert!(adam.step(&mut [0.0], &[0.0]).is_err());
    }
}

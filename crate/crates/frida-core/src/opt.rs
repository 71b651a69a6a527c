//! Adam optimizer with bias correction.

use alloc::vec::Vec;

use crate::error::{FridaError, Result};
use crate::tensor::Tensor2;

/// Adam state: step counter plus first/second moment accumulators, one pair
/// per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    step: u64,
    m: Vec<Tensor2>,
    v: Vec<Tensor2>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Fresh state for parameter tensors shaped like `params`.
    pub fn new(params: &[&Tensor2], lr: f64, beta1: f64, beta2: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
            return Err(FridaError::Contract("Adam betas must lie in (0, 1)".into()));
        }
        let m = params
            .iter()
            .map(|p| Tensor2::zeros(p.rows(), p.cols()))
            .collect();
        let v = params
            .iter()
            .map(|p| Tensor2::zeros(p.rows(), p.cols()))
            .collect();
        Ok(AdamState {
            step: 0,
            m,
            v,
            lr,
            beta1,
            beta2,
            epsilon: 1e-8,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One Adam update. `params` and `grads` must mirror the construction
    /// shapes in order.
    pub fn step(&mut self, params: &mut [&mut Tensor2], grads: &[&Tensor2]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(FridaError::Contract("Adam tensor count mismatch".into()));
        }
        self.step += 1;
        let bc1 = 1.0 - libm::pow(self.beta1, self.step as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, self.step as f64);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if p.rows() != g.rows() || p.cols() != g.cols() {
                return Err(FridaError::Shape {
                    context: "Adam::step",
                    expected: (p.rows(), p.cols()),
                    got: (g.rows(), g.cols()),
                });
            }
            let pd = p.data_mut();
            let gd = g.data();
            let md = m.data_mut();
            let vd = v.data_mut();
            for i in 0..pd.len() {
                md[i] = self.beta1 * md[i] + (1.0 - self.beta1) * gd[i];
                vd[i] = self.beta2 * vd[i] + (1.0 - self.beta2) * gd[i] * gd[i];
                let mhat = md[i] / bc1;
                let vhat = vd[i] / bc2;
                pd[i] -= self.lr * mhat / (libm::sqrt(vhat) + self.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = Tensor2::from_vec(1, 3, vec![0.5, -1.0, 2.0]).unwrap();
        let g = Tensor2::zeros(1, 3);
        let mut state = AdamState::new(&[&p], 0.001, 0.5, 0.9).unwrap();
        let before = p.clone();
        for _ in 0..5 {
            state.step(&mut [&mut p], &[&g]).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(state.step_count(), 5);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // scalar parameter, g = 1 at step 1: bias-corrected ratio is 1, so
        // the update is -lr / (1 + eps) which is -lr up to 1e-9.
        let mut p = Tensor2::from_vec(1, 1, vec![0.0]).unwrap();
        let g = Tensor2::from_vec(1, 1, vec![1.0]).unwrap();
        let mut state = AdamState::new(&[&p], 0.001, 0.5, 0.9).unwrap();
        state.step(&mut [&mut p], &[&g]).unwrap();
        assert!((p.get(0, 0) + 0.001).abs() < 1e-9, "update {}", p.get(0, 0));
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut p = Tensor2::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
            let g = Tensor2::from_vec(2, 2, vec![0.1, -0.2, 0.3, -0.4]).unwrap();
            let mut state = AdamState::new(&[&p], 0.01, 0.5, 0.9).unwrap();
            for _ in 0..20 {
                state.step(&mut [&mut p], &[&g]).unwrap();
            }
            p
        };
        let a = run();
        let b = run();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn lr_zero_is_identity_on_params() {
        let mut p = Tensor2::from_vec(1, 2, vec![0.3, -0.7]).unwrap();
        let g = Tensor2::from_vec(1, 2, vec![5.0, -2.0]).unwrap();
        let mut state = AdamState::new(&[&p], 0.0, 0.5, 0.9).unwrap();
        let before = p.clone();
        for _ in 0..3 {
            state.step(&mut [&mut p], &[&g]).unwrap();
        }
        assert_eq!(p, before);
        // moments still accumulated
        assert!(state.m[0].get(0, 0) != 0.0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = Tensor2::zeros(2, 2);
        let g = Tensor2::zeros(2, 3);
        let mut state = AdamState::new(&[&p], 0.001, 0.5, 0.9).unwrap();
        assert!(state.step(&mut [&mut p], &[&g]).is_err());
    }
}

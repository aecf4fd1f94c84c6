//! Adam optimizer with bias correction.

use crate::tensor::{Tensor, TensorError};

/// Moment state for one optimized tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    step: u64,
    m: Tensor,
    v: Tensor,
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl AdamState {
    /// Defaults: beta1 0.9, beta2 0.999, epsilon 1e-8.
    pub fn new(shape: &[usize], lr: f32) -> Self {
        AdamState {
            step: 0,
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One Adam update; returns the new variable value.
    pub fn step(&mut self, var: &Tensor, grad: &Tensor) -> Result<Tensor, TensorError> {
        if var.shape() != grad.shape() || var.shape() != self.m.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "adam_step",
                lhs: var.shape().to_vec(),
                rhs: grad.shape().to_vec(),
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let mut out = vec![0.0f32; var.numel()];
        let m = self.m.data_mut();
        for ((mi, &gi), _) in m.iter_mut().zip(grad.data()).zip(0..) {
            *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
        }
        let v = self.v.data_mut();
        for (vi, &gi) in v.iter_mut().zip(grad.data()) {
            *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
        }
        for i in 0..out.len() {
            let m_hat = self.m.data()[i] / bc1;
            let v_hat = self.v.data()[i] / bc2;
            out[i] = var.data()[i] - self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Tensor::new(var.shape().to_vec(), out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_variable_unchanged() {
        let mut st = AdamState::new(&[3], 0.1);
        let var = Tensor::from_vec(vec![1.0, -2.0, 0.5]);
        let out = st.step(&var, &Tensor::zeros(&[3])).unwrap();
        assert_eq!(out.data(), var.data());
    }

    #[test]
    fn first_step_moves_by_lr_after_bias_correction() {
        // Hand-evaluated recurrence: m=0.1, v=0.001, m_hat=1, v_hat=1,
        // update = lr * 1 / (1 + eps) ~= lr.
        let mut st = AdamState::new(&[1], 0.1);
        let out = st
            .step(&Tensor::from_vec(vec![0.0]), &Tensor::from_vec(vec![1.0]))
            .unwrap();
        assert!((out.data()[0] + 0.1).abs() < 1e-6, "{}", out.data()[0]);
    }

    #[test]
    fn converges_on_scalar_quadratic() {
        // Independent scalar oracle for 100 steps on f(x) = (x-3)^2.
        let mut st = AdamState::new(&[1], 0.1);
        let mut x = Tensor::from_vec(vec![0.0]);
        for _ in 0..100 {
            let g = Tensor::from_vec(vec![2.0 * (x.data()[0] - 3.0)]);
            x = st.step(&x, &g).unwrap();
        }
        assert!((x.data()[0] - 3.0).abs() < 0.05, "{}", x.data()[0]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut st = AdamState::new(&[2], 0.1);
        let err = st
            .step(&Tensor::zeros(&[2]), &Tensor::zeros(&[3]))
            .unwrap_err();
        assert!(matches!(err, TensorError::ShapeMismatch { .. }));
    }
}

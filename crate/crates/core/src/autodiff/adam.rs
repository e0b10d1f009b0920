//! Bias-corrected Adam over a fixed list of parameter tensors.

use super::{Real, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub lr: Real,
    pub beta1: Real,
    pub beta2: Real,
    pub eps: Real,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment accumulators shaped like the parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub params: AdamParams,
    m: Vec<Vec<Real>>,
    v: Vec<Vec<Real>>,
    step_count: u64,
}

impl AdamState {
    pub fn new(params: AdamParams, tensors: &[&Tensor]) -> AdamState {
        AdamState {
            params,
            m: tensors.iter().map(|t| vec![0.0; t.numel()]).collect(),
            v: tensors.iter().map(|t| vec![0.0; t.numel()]).collect(),
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One update over all parameters; `grads[i]` pairs with `tensors[i]`.
    /// A missing gradient (None) leaves that parameter untouched.
    pub fn step(&mut self, tensors: &mut [&mut Tensor], grads: &[Option<&[Real]>]) {
        assert_eq!(tensors.len(), self.m.len(), "parameter count changed");
        assert_eq!(tensors.len(), grads.len());
        self.step_count += 1;
        let t = self.step_count as i32;
        let p = self.params;
        let bc1 = 1.0 - p.beta1.powi(t);
        let bc2 = 1.0 - p.beta2.powi(t);
        for ((tensor, grad), (m, v)) in tensors
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let Some(grad) = grad else { continue };
            assert_eq!(grad.len(), tensor.numel(), "gradient length mismatch");
            for i in 0..grad.len() {
                let g = grad[i];
                m[i] = p.beta1 * m[i] + (1.0 - p.beta1) * g;
                v[i] = p.beta2 * v[i] + (1.0 - p.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                tensor.data[i] -= p.lr * m_hat / (v_hat.sqrt() + p.eps);
            }
        }
    }
}

use super::{Matrix, NnError, Parameterized};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Bias-corrected Adam update on one flat tensor. `step` counts from 1.
pub fn adam_update<T: Scalar>(
    param: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    step: u64,
    config: &AdamConfig,
    lr: f64,
) {
    let b1 = T::of(config.beta1);
    let b2 = T::of(config.beta2);
    let eps = T::of(config.eps);
    let c1 = T::one() - T::of(config.beta1.powf(step as f64));
    let c2 = T::one() - T::of(config.beta2.powf(step as f64));
    let lr = T::of(lr);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (T::one() - b1) * g;
        v[i] = b2 * v[i] + (T::one() - b2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Adam optimizer state for one [`Parameterized`] model.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T = f64> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Matrix<T>>,
    second: Vec<Matrix<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, first: Vec::new(), second: Vec::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update. `grads` must share the architecture of `params`.
    pub fn step<P: Parameterized<T>>(&mut self, params: &mut P, grads: &P, lr: f64) -> Result<(), NnError> {
        let mut grad_list: Vec<Matrix<T>> = Vec::new();
        grads.visit_params("", &mut |_, g| grad_list.push(g.clone()));
        if self.first.is_empty() {
            self.first = grad_list.iter().map(|g| Matrix::zeros(g.rows(), g.cols())).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != grad_list.len() {
            return Err(NnError::ShapeMismatch {
                op: "adam",
                left: (self.first.len(), 1),
                right: (grad_list.len(), 1),
            });
        }
        self.step += 1;
        let step = self.step;
        let config = self.config;
        let mut idx = 0;
        let mut err = None;
        let (first, second) = (&mut self.first, &mut self.second);
        params.visit_params_mut("", &mut |_, p| {
            let g = &grad_list[idx];
            if p.shape() != g.shape() && err.is_none() {
                err = Some(NnError::ShapeMismatch { op: "adam", left: p.shape(), right: g.shape() });
            }
            if err.is_none() {
                adam_update(p.data_mut(), g.data(), first[idx].data_mut(), second[idx].data_mut(), step, &config, lr);
            }
            idx += 1;
        });
        err.map_or(Ok(()), Err)
    }
}

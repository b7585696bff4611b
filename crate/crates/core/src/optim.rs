//! Adam with bias correction and a step-decay learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::params::ParamSet;
use crate::tensor::{Scalar, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

/// One bias-corrected Adam update of `values` in place. `step` counts from 1.
pub fn adam_update<T: Scalar>(
    values: &mut [T],
    grads: &[T],
    moments: &mut Moments<T>,
    step: u64,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<(), TensorError> {
    let n = values.len();
    if grads.len() != n || moments.m.len() != n || moments.v.len() != n {
        return Err(TensorError::Dimension {
            op: "adam",
            detail: format!(
                "{n} values, {} grads, {}/{} moments",
                grads.len(),
                moments.m.len(),
                moments.v.len()
            ),
        });
    }
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let one = T::one();
    let t = step as i32;
    let c1 = one - b1.powi(t);
    let c2 = one - b2.powi(t);
    let (lr, eps) = (T::of(lr), T::of(cfg.eps));
    for i in 0..n {
        let g = grads[i];
        moments.m[i] = b1 * moments.m[i] + (one - b1) * g;
        moments.v[i] = b2 * moments.v[i] + (one - b2) * g * g;
        let m_hat = moments.m[i] / c1;
        let v_hat = moments.v[i] / c2;
        values[i] = values[i] - lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    moments: Vec<Moments<T>>,
    step: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParamSet<T>) -> Self {
        let moments = params
            .iter()
            .map(|p| Moments {
                m: vec![T::zero(); p.value.len()],
                v: vec![T::zero(); p.value.len()],
            })
            .collect();
        Self {
            config,
            moments,
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies the held gradients and clears them.
    pub fn step(&mut self, params: &mut ParamSet<T>, lr: f64) -> Result<(), TensorError> {
        if params.len() != self.moments.len() {
            return Err(TensorError::Dimension {
                op: "adam",
                detail: format!("{} parameters, optimizer tracks {}", params.len(), self.moments.len()),
            });
        }
        self.step += 1;
        for (p, mom) in params.iter_mut().zip(&mut self.moments) {
            let grad = p.grad.take().ok_or_else(|| TensorError::Dimension {
                op: "adam",
                detail: format!("no gradient for {}", p.name),
            })?;
            adam_update(p.value.data_mut(), grad.data(), mom, self.step, lr, &self.config)?;
        }
        params.zero_grads();
        Ok(())
    }
}

/// Step-decay schedule: `lr0 · factor^⌊epoch / every⌋`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrSchedule {
    pub lr0: f64,
    pub factor: f64,
    pub every: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            lr0: 2e-4,
            factor: 0.5,
            every: 5,
        }
    }
}

impl LrSchedule {
    pub fn lr(&self, epoch: usize) -> f64 {
        self.lr0 * self.factor.powi((epoch / self.every.max(1)) as i32)
    }
}

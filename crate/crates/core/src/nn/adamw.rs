//! AdamW with decoupled weight decay.

use ndarray::{Array1, Array2};

use super::{MlpGrads, MlpParams};
use crate::{Error, Result};

/// Optimizer hyperparameters. Defaults follow common practice for this kind
/// of model: learning rate `1e-4`, weight decay `1e-5`, betas `(0.9, 0.999)`
/// and epsilon `1e-8`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamWConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight decay must be non-negative"));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(beta.is_finite() && (0.0..1.0).contains(&beta)) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1)")));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        Ok(())
    }
}

/// First/second moment estimates, one pair of buffers per layer tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    step: u64,
    weight_m: Vec<Array2<f64>>,
    weight_v: Vec<Array2<f64>>,
    bias_m: Vec<Array1<f64>>,
    bias_v: Vec<Array1<f64>>,
}

impl AdamWState {
    /// Zeroed moments shaped like `params`.
    pub fn new(params: &MlpParams) -> Self {
        Self {
            step: 0,
            weight_m: params
                .layers()
                .iter()
                .map(|l| Array2::zeros(l.weight.dim()))
                .collect(),
            weight_v: params
                .layers()
                .iter()
                .map(|l| Array2::zeros(l.weight.dim()))
                .collect(),
            bias_m: params
                .layers()
                .iter()
                .map(|l| Array1::zeros(l.bias.len()))
                .collect(),
            bias_v: params
                .layers()
                .iter()
                .map(|l| Array1::zeros(l.bias.len()))
                .collect(),
        }
    }

    /// Completed optimizer steps.
    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One AdamW update, in place.
///
/// The decay is decoupled: parameters first shrink by `lr * weight_decay`
/// (so a zero-gradient step multiplies them by exactly
/// `1 - lr * weight_decay`) and the Adam direction
/// `m_hat / (sqrt(v_hat) + eps)` is subtracted afterwards.
///
/// Fails on shape mismatches and on non-finite gradient entries, leaving the
/// parameters untouched in both cases.
pub fn adamw_step(
    params: &mut MlpParams,
    grads: &MlpGrads,
    state: &mut AdamWState,
    cfg: &AdamWConfig,
) -> Result<()> {
    cfg.validate()?;
    if grads.layers.len() != params.layers().len() || state.weight_m.len() != params.layers().len()
    {
        return Err(Error::shape(
            "gradients/state do not match the parameter layout".to_string(),
        ));
    }
    for (idx, (layer, grad)) in params.layers().iter().zip(&grads.layers).enumerate() {
        if grad.weight.dim() != layer.weight.dim() || grad.bias.len() != layer.bias.len() {
            return Err(Error::shape(format!(
                "layer {idx}: gradient shape does not match parameters"
            )));
        }
        if grad.weight.iter().chain(grad.bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::numerical(format!(
                "layer {idx}: non-finite gradient entries"
            )));
        }
    }

    let t = state.step + 1;
    let bias1 = 1.0 - cfg.beta1.powi(t as i32);
    let bias2 = 1.0 - cfg.beta2.powi(t as i32);
    let decay = 1.0 - cfg.learning_rate * cfg.weight_decay;

    for (idx, layer) in params.iter_layers_mut().enumerate() {
        let grad = &grads.layers[idx];
        update_tensor(
            layer.weight.as_slice_mut().expect("contiguous weights"),
            grad.weight.as_slice().expect("contiguous gradients"),
            state.weight_m[idx].as_slice_mut().expect("contiguous state"),
            state.weight_v[idx].as_slice_mut().expect("contiguous state"),
            cfg,
            bias1,
            bias2,
            decay,
        );
        update_tensor(
            layer.bias.as_slice_mut().expect("contiguous bias"),
            grad.bias.as_slice().expect("contiguous gradients"),
            state.bias_m[idx].as_slice_mut().expect("contiguous state"),
            state.bias_v[idx].as_slice_mut().expect("contiguous state"),
            cfg,
            bias1,
            bias2,
            decay,
        );
    }
    state.step = t;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn update_tensor(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    cfg: &AdamWConfig,
    bias1: f64,
    bias2: f64,
    decay: f64,
) {
    for i in 0..param.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        let m_hat = m[i] / bias1;
        let v_hat = v[i] / bias2;
        param[i] = param[i] * decay - cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

use serde::{Deserialize, Serialize};

use super::layer::{DenseLayer, LayerGrad};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Self {
        Self {
            config,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    /// State for a list of dense layers (weights then bias, per layer).
    pub fn for_layers<'a>(
        config: AdamConfig,
        layers: impl IntoIterator<Item = &'a DenseLayer>,
    ) -> Self {
        let sizes: Vec<usize> = layers
            .into_iter()
            .flat_map(|l| [l.weights.len(), l.bias.len()])
            .collect();
        Self::new(config, &sizes)
    }
}

/// One bias-corrected Adam update. Increments `state.t`.
pub fn adam_step(params: &mut [&mut [f64]], grads: &[&[f64]], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} parameter tensors, {} gradients, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[i].len() {
            return Err(Error::ShapeMismatch(format!(
                "tensor {i}: {} params, {} grads, {} moments",
                p.len(),
                g.len(),
                state.m[i].len()
            )));
        }
    }

    state.t += 1;
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let t = state.t as i32;
    let correction1 = 1.0 - beta1.powi(t);
    let correction2 = 1.0 - beta2.powi(t);

    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        for j in 0..p.len() {
            let gj = g[j];
            m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
            v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
            let m_hat = m[j] / correction1;
            let v_hat = v[j] / correction2;
            p[j] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

/// Applies [`adam_step`] to layers and their matching gradients.
pub fn adam_step_layers(
    layers: &mut [&mut DenseLayer],
    grads: &[LayerGrad],
    state: &mut AdamState,
) -> Result<()> {
    if layers.len() != grads.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} layers but {} gradients",
            layers.len(),
            grads.len()
        )));
    }
    let mut params: Vec<&mut [f64]> = layers
        .iter_mut()
        .flat_map(|l| l.param_slices_mut())
        .collect();
    let grad_slices: Vec<&[f64]> = grads.iter().flat_map(LayerGrad::slices).collect();
    adam_step(&mut params, &grad_slices, state)
}

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::activation::Activation;
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Fully connected layer: `y = f(x W^T + b)` with `W` shaped
/// `(fan_out, fan_in)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

/// Zero-mean Gaussian weights with standard deviation
/// `activation.init_gain() / sqrt(fan_in)` and zero biases.
pub fn init_weights(
    fan_in: usize,
    fan_out: usize,
    activation: Activation,
    seed: u64,
) -> (Array2<f64>, Array1<f64>) {
    let mut rng = rng::stream(seed, rng::streams::INIT);
    init_weights_with(fan_in, fan_out, activation, &mut rng)
}

pub fn init_weights_with(
    fan_in: usize,
    fan_out: usize,
    activation: Activation,
    rng: &mut Rng,
) -> (Array2<f64>, Array1<f64>) {
    assert!(fan_in > 0 && fan_out > 0, "layer dimensions must be positive");
    let std = activation.init_gain() / (fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    let weights = Array2::from_shape_simple_fn((fan_out, fan_in), || normal.sample(rng));
    (weights, Array1::zeros(fan_out))
}

impl DenseLayer {
    pub fn new(fan_in: usize, fan_out: usize, activation: Activation, rng: &mut Rng) -> Self {
        let (weights, bias) = init_weights_with(fan_in, fan_out, activation, rng);
        Self {
            weights,
            bias,
            activation,
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize, activation: Activation) -> Self {
        Self {
            weights: Array2::zeros((fan_out, fan_in)),
            bias: Array1::zeros(fan_out),
            activation,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.ncols()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.nrows()
    }

    pub fn pre_activation(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weights.t());
        z += &self.bias;
        z
    }

    pub fn activate(&self, z: &Array2<f64>) -> Array2<f64> {
        let act = self.activation;
        z.mapv(|v| act.apply(v))
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut z = self.pre_activation(x);
        let act = self.activation;
        z.mapv_inplace(|v| act.apply(v));
        z
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub(crate) fn is_finite(&self) -> bool {
        self.weights.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }

    /// Weight and bias buffers as flat slices, in that order.
    pub(crate) fn param_slices_mut(&mut self) -> [&mut [f64]; 2] {
        [
            self.weights
                .as_slice_mut()
                .expect("weights are standard layout"),
            self.bias.as_slice_mut().expect("bias is contiguous"),
        ]
    }
}

/// Gradient of a loss with respect to one layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LayerGrad {
    pub fn zeros_like(layer: &DenseLayer) -> Self {
        Self {
            weights: Array2::zeros(layer.weights.raw_dim()),
            bias: Array1::zeros(layer.bias.raw_dim()),
        }
    }

    pub(crate) fn slices(&self) -> [&[f64]; 2] {
        [
            self.weights.as_slice().expect("standard layout"),
            self.bias.as_slice().expect("contiguous"),
        ]
    }

    pub fn squared_norm(&self) -> f64 {
        self.weights.iter().chain(self.bias.iter()).map(|g| g * g).sum()
    }
}

/// A chain of dense layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStack {
    pub layers: Vec<DenseLayer>,
}

/// Per-layer inputs and pre-activations from [`LayerStack::forward`].
#[derive(Debug, Clone)]
pub struct StackCache {
    pub inputs: Vec<Array2<f64>>,
    pub pre_activations: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

impl LayerStack {
    /// Builds `widths.len() - 1` layers; `activations[i]` applies to layer `i`.
    pub fn new(widths: &[usize], activations: &[Activation], rng: &mut Rng) -> Result<Self> {
        if widths.len() < 2 || activations.len() != widths.len() - 1 {
            return Err(Error::InvalidArgument(format!(
                "{} widths need {} activations, got {}",
                widths.len(),
                widths.len().saturating_sub(1),
                activations.len()
            )));
        }
        if widths.contains(&0) {
            return Err(Error::InvalidArgument("layer width 0".into()));
        }
        let layers = widths
            .windows(2)
            .zip(activations)
            .map(|(w, &act)| DenseLayer::new(w[0], w[1], act, rng))
            .collect();
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, DenseLayer::fan_in)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, DenseLayer::fan_out)
    }

    /// Checks that consecutive layer shapes line up.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::ShapeMismatch("empty layer stack".into()));
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].fan_out(),
                    i + 1,
                    pair[1].fan_in()
                )));
            }
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.bias.len() != layer.fan_out() {
                return Err(Error::ShapeMismatch(format!("layer {i} bias length")));
            }
            if !layer.is_finite() {
                return Err(Error::ShapeMismatch(format!("layer {i} has non-finite parameters")));
            }
        }
        Ok(())
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "input has {} columns, stack expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Forward pass without keeping intermediates.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let mut h = x.to_owned();
        for layer in &self.layers {
            h = layer.forward(h.view());
        }
        Ok(h)
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<StackCache> {
        self.check_input(&x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for layer in &self.layers {
            let z = layer.pre_activation(h.view());
            let next = layer.activate(&z);
            inputs.push(h);
            pre_activations.push(z);
            h = next;
        }
        Ok(StackCache {
            inputs,
            pre_activations,
            output: h,
        })
    }

    /// Backpropagates `d_output` (gradient w.r.t. the stack output). Returns
    /// per-layer gradients and the gradient w.r.t. the stack input.
    pub fn backward(
        &self,
        cache: &StackCache,
        d_output: Array2<f64>,
    ) -> Result<(Vec<LayerGrad>, Array2<f64>)> {
        if d_output.raw_dim() != cache.output.raw_dim() {
            return Err(Error::ShapeMismatch(format!(
                "output gradient {:?} vs output {:?}",
                d_output.shape(),
                cache.output.shape()
            )));
        }
        let last = self.layers.len().checked_sub(1);
        let (Some(last), Some(z)) = (last, cache.pre_activations.last()) else {
            return Err(Error::ShapeMismatch("cache does not match stack depth".into()));
        };
        let mut delta = d_output;
        scale_by_derivative(&mut delta, self.layers[last].activation, z);
        self.backward_pre_activation(cache, delta)
    }

    /// Like [`LayerStack::backward`], but `d_pre` is the gradient w.r.t. the
    /// last layer's pre-activation. Used when the loss is fused with the
    /// output nonlinearity (sigmoid plus binary cross-entropy).
    pub fn backward_pre_activation(
        &self,
        cache: &StackCache,
        d_pre: Array2<f64>,
    ) -> Result<(Vec<LayerGrad>, Array2<f64>)> {
        if cache.inputs.len() != self.layers.len() {
            return Err(Error::ShapeMismatch("cache does not match stack depth".into()));
        }
        if d_pre.raw_dim() != cache.output.raw_dim() {
            return Err(Error::ShapeMismatch(format!(
                "pre-activation gradient {:?} vs output {:?}",
                d_pre.shape(),
                cache.output.shape()
            )));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = d_pre;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if i + 1 < self.layers.len() {
                scale_by_derivative(&mut delta, layer.activation, &cache.pre_activations[i]);
            }
            let weights = delta.t().dot(&cache.inputs[i]);
            let bias = delta.sum_axis(Axis(0));
            let d_input = delta.dot(&layer.weights);
            grads.push(LayerGrad { weights, bias });
            delta = d_input;
        }
        grads.reverse();
        Ok((grads, delta))
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }
}

fn scale_by_derivative(delta: &mut Array2<f64>, act: Activation, z: &Array2<f64>) {
    if act != Activation::Identity {
        Zip::from(delta).and(z).for_each(|d, &z| *d *= act.derivative(z));
    }
}

/// SHA-256 over the bit patterns of every parameter, in layer order.
pub fn params_checksum<'a>(layers: impl IntoIterator<Item = &'a DenseLayer>) -> String {
    let mut hasher = Sha256::new();
    for layer in layers {
        hasher.update((layer.fan_out() as u64).to_le_bytes());
        hasher.update((layer.fan_in() as u64).to_le_bytes());
        for v in layer.weights.iter().chain(layer.bias.iter()) {
            hasher.update(v.to_bits().to_le_bytes());
        }
    }
    hex::encode(hasher.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand_distr::StandardNormal;

    #[test]
    fn init_std_matches_gain() {
        // 400 x 256 = 102400 draws.
        let (w, b) = init_weights(256, 400, Activation::Gelu, 7);
        let n = w.len() as f64;
        let mean = w.sum() / n;
        let std = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let expected = Activation::Gelu.init_gain() / 16.0;
        assert!((std - expected).abs() / expected < 0.10, "std {std} vs {expected}");
        assert!(mean.abs() < 0.02 * expected);
        assert!(b.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_weights(30, 20, Activation::Gelu, 3);
        let b = init_weights(30, 20, Activation::Gelu, 3);
        assert_eq!(a, b);
        let c = init_weights(30, 20, Activation::Gelu, 4);
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn gelu_stack_keeps_activation_variance() {
        let mut r = rng::stream(11, 0);
        let stack = LayerStack::new(
            &[256, 256, 256, 256],
            &[Activation::Gelu; 3],
            &mut r,
        )
        .unwrap();
        let x = Array2::from_shape_simple_fn((2000, 256), || StandardNormal.sample(&mut r));
        let cache = stack.forward(x.view()).unwrap();
        let outputs: Vec<&Array2<f64>> = cache.inputs[1..]
            .iter()
            .chain(std::iter::once(&cache.output))
            .collect();
        for (i, h) in outputs.iter().enumerate() {
            let n = h.len() as f64;
            let mean = h.sum() / n;
            let var = h.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!((0.5..=2.0).contains(&var), "layer {i} variance {var}");
        }
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let layer = DenseLayer {
            weights: Array2::eye(3),
            bias: Array1::zeros(3),
            activation: Activation::Identity,
        };
        let stack = LayerStack {
            layers: vec![layer],
        };
        let x = array![[1.0, -2.0, 3.5], [0.0, 4.0, -1.0]];
        assert_eq!(stack.predict(x.view()).unwrap(), x);
    }

    #[test]
    fn shape_errors() {
        let mut r = rng::stream(0, 0);
        let stack = LayerStack::new(&[4, 3], &[Activation::Gelu], &mut r).unwrap();
        assert!(stack.predict(Array2::zeros((2, 5)).view()).is_err());
        let cache = stack.forward(Array2::zeros((2, 4)).view()).unwrap();
        assert!(stack.backward(&cache, Array2::zeros((2, 4))).is_err());
        assert!(LayerStack::new(&[4, 3], &[], &mut r).is_err());

        let broken = LayerStack {
            layers: vec![
                DenseLayer::zeros(4, 3, Activation::Gelu),
                DenseLayer::zeros(2, 1, Activation::Gelu),
            ],
        };
        assert!(broken.validate().is_err());
    }

    #[test]
    fn checksum_tracks_parameters() {
        let mut layer = DenseLayer::zeros(2, 2, Activation::Gelu);
        let before = params_checksum([&layer]);
        assert_eq!(before, params_checksum([&layer]));
        layer.bias[1] = 1e-300;
        assert_ne!(before, params_checksum([&layer]));
    }
}

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::activation::Activation;
use super::layer::{params_checksum, DenseLayer, LayerGrad, LayerStack, StackCache};
use crate::error::{Error, Result};
use crate::rng;
use crate::scores::softmax_slice;

/// Dense GELU classifier with an optional auxiliary decoder.
///
/// The decoder reads the last trunk activation and mirrors the trunk widths
/// back to the input dimension, ending in an identity activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub trunk: LayerStack,
    pub classifier: DenseLayer,
    pub decoder: Option<LayerStack>,
}

/// Joint objective: `classification * CE + reconstruction * MSE`, where the
/// MSE is averaged over both examples and input dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub classification: f64,
    pub reconstruction: f64,
}

impl LossWeights {
    pub const CLASSIFIER_ONLY: LossWeights = LossWeights {
        classification: 1.0,
        reconstruction: 0.0,
    };
    pub const JOINT: LossWeights = LossWeights {
        classification: 1.0,
        reconstruction: 1.0,
    };

    pub fn validate(&self) -> Result<()> {
        let ok = |w: f64| w.is_finite() && w >= 0.0;
        if !ok(self.classification) || !ok(self.reconstruction) {
            return Err(Error::InvalidArgument(format!("invalid loss weights {self:?}")));
        }
        if self.classification == 0.0 && self.reconstruction == 0.0 {
            return Err(Error::InvalidArgument("both loss weights are zero".into()));
        }
        Ok(())
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::CLASSIFIER_ONLY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub cross_entropy: f64,
    pub reconstruction: f64,
}

/// Intermediates of [`Mlp::forward`], sufficient for [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct MlpCache {
    pub trunk: StackCache,
    pub logits: Array2<f64>,
    pub decoder: Option<StackCache>,
}

impl MlpCache {
    pub fn reconstruction(&self) -> Option<&Array2<f64>> {
        self.decoder.as_ref().map(|c| &c.output)
    }

    pub fn inputs(&self) -> &Array2<f64> {
        &self.trunk.inputs[0]
    }
}

/// Gradients for every layer, in [`Mlp::layers`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn norm(&self) -> f64 {
        self.layers.iter().map(LayerGrad::squared_norm).sum::<f64>().sqrt()
    }
}

impl Mlp {
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        num_classes: usize,
        with_decoder: bool,
        seed: u64,
    ) -> Result<Self> {
        if hidden.is_empty() {
            return Err(Error::InvalidArgument("need at least one hidden layer".into()));
        }
        if num_classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "classifier needs at least 2 classes, got {num_classes}"
            )));
        }
        let mut r = rng::stream(seed, rng::streams::INIT);
        let mut widths = vec![input_dim];
        widths.extend_from_slice(hidden);
        let trunk = LayerStack::new(&widths, &vec![Activation::Gelu; hidden.len()], &mut r)?;
        let last = *hidden.last().expect("non-empty");
        let classifier = DenseLayer::new(last, num_classes, Activation::Identity, &mut r);
        let decoder = if with_decoder {
            let mut dec_widths: Vec<usize> = hidden.iter().rev().copied().collect();
            dec_widths.push(input_dim);
            let mut acts = vec![Activation::Gelu; dec_widths.len() - 1];
            *acts.last_mut().expect("non-empty") = Activation::Identity;
            Some(LayerStack::new(&dec_widths, &acts, &mut r)?)
        } else {
            None
        };
        Ok(Self {
            trunk,
            classifier,
            decoder,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.trunk.input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.fan_out()
    }

    pub fn has_decoder(&self) -> bool {
        self.decoder.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        self.trunk.validate()?;
        let hidden = self.trunk.output_dim();
        if self.classifier.fan_in() != hidden {
            return Err(Error::ShapeMismatch(format!(
                "classifier expects {} inputs, trunk emits {hidden}",
                self.classifier.fan_in()
            )));
        }
        if self.num_classes() < 2 {
            return Err(Error::ShapeMismatch("classifier head narrower than 2".into()));
        }
        if let Some(dec) = &self.decoder {
            dec.validate()?;
            if dec.input_dim() != hidden || dec.output_dim() != self.input_dim() {
                return Err(Error::ShapeMismatch(format!(
                    "decoder maps {} -> {}, expected {hidden} -> {}",
                    dec.input_dim(),
                    dec.output_dim(),
                    self.input_dim()
                )));
            }
        }
        Ok(())
    }

    /// All layers in canonical order: trunk, classifier, decoder.
    pub fn layers(&self) -> impl Iterator<Item = &DenseLayer> {
        self.trunk
            .layers
            .iter()
            .chain(std::iter::once(&self.classifier))
            .chain(self.decoder.iter().flat_map(|d| d.layers.iter()))
    }

    pub fn layers_mut(&mut self) -> Vec<&mut DenseLayer> {
        let mut out: Vec<&mut DenseLayer> = self.trunk.layers.iter_mut().collect();
        out.push(&mut self.classifier);
        if let Some(dec) = &mut self.decoder {
            out.extend(dec.layers.iter_mut());
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(DenseLayer::param_count).sum()
    }

    pub fn checksum(&self) -> String {
        params_checksum(self.layers())
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<MlpCache> {
        let trunk = self.trunk.forward(x)?;
        let logits = self.classifier.forward(trunk.output.view());
        let decoder = match &self.decoder {
            Some(dec) => Some(dec.forward(trunk.output.view())?),
            None => None,
        };
        Ok(MlpCache {
            trunk,
            logits,
            decoder,
        })
    }

    pub fn logits(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let h = self.trunk.predict(x)?;
        Ok(self.classifier.forward(h.view()))
    }

    /// Logits and reconstruction without keeping backprop intermediates.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, Option<Array2<f64>>)> {
        let h = self.trunk.predict(x)?;
        let logits = self.classifier.forward(h.view());
        let recon = match &self.decoder {
            Some(dec) => Some(dec.predict(h.view())?),
            None => None,
        };
        Ok((logits, recon))
    }

    fn check_targets(&self, cache: &MlpCache, labels: &[usize]) -> Result<()> {
        if labels.len() != cache.logits.nrows() {
            return Err(Error::LengthMismatch {
                what: "labels vs batch",
                left: labels.len(),
                right: cache.logits.nrows(),
            });
        }
        let k = self.num_classes();
        if let Some(&label) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::LabelOutOfRange { label, classes: k });
        }
        Ok(())
    }

    pub fn loss(
        &self,
        cache: &MlpCache,
        labels: &[usize],
        weights: LossWeights,
    ) -> Result<LossBreakdown> {
        self.check_targets(cache, labels)?;
        let n = labels.len() as f64;
        let cross_entropy = cache
            .logits
            .outer_iter()
            .zip(labels)
            .map(|(row, &y)| {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                lse - row[y]
            })
            .sum::<f64>()
            / n;
        let reconstruction = match cache.reconstruction() {
            Some(r) => {
                let x = cache.inputs();
                (r - x).mapv(|d| d * d).sum() / (x.len() as f64)
            }
            None if weights.reconstruction > 0.0 => return Err(Error::MissingDecoder),
            None => 0.0,
        };
        Ok(LossBreakdown {
            total: weights.classification * cross_entropy + weights.reconstruction * reconstruction,
            cross_entropy,
            reconstruction,
        })
    }

    pub fn backward(
        &self,
        cache: &MlpCache,
        labels: &[usize],
        weights: LossWeights,
    ) -> Result<Gradients> {
        self.check_targets(cache, labels)?;
        if weights.reconstruction > 0.0 && self.decoder.is_none() {
            return Err(Error::MissingDecoder);
        }
        let n = labels.len() as f64;
        let mut d_logits = logit_gradient(&cache.logits, labels);
        d_logits *= weights.classification / n;

        let hidden = &cache.trunk.output;
        let classifier_grad = LayerGrad {
            weights: d_logits.t().dot(hidden),
            bias: d_logits.sum_axis(Axis(0)),
        };
        let mut d_hidden = d_logits.dot(&self.classifier.weights);

        let mut decoder_grads = Vec::new();
        if let (Some(dec), Some(dec_cache)) = (&self.decoder, &cache.decoder) {
            let x = cache.inputs();
            let scale = 2.0 * weights.reconstruction / x.len() as f64;
            let d_recon = (&dec_cache.output - x) * scale;
            let (grads, d_h) = dec.backward(dec_cache, d_recon)?;
            d_hidden += &d_h;
            decoder_grads = grads;
        }

        let (mut layers, _) = self.trunk.backward(&cache.trunk, d_hidden)?;
        layers.push(classifier_grad);
        layers.extend(decoder_grads);
        Ok(Gradients { layers })
    }
}

/// `softmax(logits) - onehot(labels)`, row by row, unscaled.
pub fn logit_gradient(logits: &Array2<f64>, labels: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros(logits.raw_dim());
    for ((mut row_out, row), &y) in out.outer_iter_mut().zip(logits.outer_iter()).zip(labels) {
        let probs = softmax_slice(row.as_slice().expect("contiguous rows"));
        for (o, p) in row_out.iter_mut().zip(probs) {
            *o = p;
        }
        row_out[y] -= 1.0;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn decoder_mirrors_trunk() {
        let mlp = Mlp::new(784, &[256, 128, 64], 10, true, 0).unwrap();
        let dec = mlp.decoder.as_ref().unwrap();
        let widths: Vec<(usize, usize)> =
            dec.layers.iter().map(|l| (l.fan_in(), l.fan_out())).collect();
        assert_eq!(widths, vec![(64, 128), (128, 256), (256, 784)]);
        assert_eq!(dec.layers.last().unwrap().activation, Activation::Identity);
        mlp.validate().unwrap();
    }

    #[test]
    fn zero_weights_give_uniform_softmax() {
        let mut mlp = Mlp::new(5, &[4], 3, false, 0).unwrap();
        for layer in mlp.layers_mut() {
            layer.weights.fill(0.0);
        }
        let x = array![[0.3, 0.1, 0.9, 0.0, 1.0]];
        let logits = mlp.logits(x.view()).unwrap();
        let probs = softmax_slice(logits.row(0).as_slice().unwrap());
        for p in probs {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let mlp = Mlp::new(6, &[5, 4], 3, true, 9).unwrap();
        let x = Array2::from_shape_fn((4, 6), |(i, j)| (i * 6 + j) as f64 / 24.0);
        let a = mlp.forward(x.view()).unwrap();
        let b = mlp.forward(x.view()).unwrap();
        assert_eq!(a.logits, b.logits);
        assert_eq!(a.reconstruction(), b.reconstruction());
    }

    #[test]
    fn logit_gradient_identity() {
        let logits = array![[2.0, -1.0, 0.5], [0.0, 0.0, 0.0]];
        let g = logit_gradient(&logits, &[0, 2]);
        for (r, &y) in [0usize, 2].iter().enumerate() {
            let probs = softmax_slice(logits.row(r).as_slice().unwrap());
            for k in 0..3 {
                let onehot = if k == y { 1.0 } else { 0.0 };
                assert_eq!(g[[r, k]], probs[k] - onehot);
            }
        }
    }

    #[test]
    fn confident_correct_logits_have_vanishing_gradient() {
        let mut mlp = Mlp::new(2, &[2], 2, false, 0).unwrap();
        for layer in mlp.layers_mut() {
            layer.weights.fill(0.0);
        }
        mlp.classifier.bias = array![60.0, -60.0];
        let x = array![[0.5, 0.5], [0.1, 0.9]];
        let cache = mlp.forward(x.view()).unwrap();
        let g = mlp.backward(&cache, &[0, 0], LossWeights::CLASSIFIER_ONLY).unwrap();
        assert!(g.norm() < 1e-40, "norm {}", g.norm());
    }

    #[test]
    fn perfect_reconstruction_has_zero_decoder_gradient() {
        // Identity trunk and decoder, so the reconstruction equals the input.
        let eye = |n| DenseLayer {
            weights: Array2::eye(n),
            bias: ndarray::Array1::zeros(n),
            activation: Activation::Identity,
        };
        let mlp = Mlp {
            trunk: LayerStack { layers: vec![eye(3)] },
            classifier: DenseLayer::zeros(3, 2, Activation::Identity),
            decoder: Some(LayerStack { layers: vec![eye(3)] }),
        };
        let x = array![[0.2, 0.4, 0.9]];
        let cache = mlp.forward(x.view()).unwrap();
        assert_eq!(cache.reconstruction().unwrap(), &x);
        let weights = LossWeights {
            classification: 0.0,
            reconstruction: 1.0,
        };
        let g = mlp.backward(&cache, &[0], weights).unwrap();
        assert_eq!(g.norm(), 0.0);
    }

    #[test]
    fn label_and_decoder_errors() {
        let mlp = Mlp::new(3, &[4], 2, false, 0).unwrap();
        let cache = mlp.forward(Array2::zeros((1, 3)).view()).unwrap();
        assert!(matches!(
            mlp.backward(&cache, &[2], LossWeights::CLASSIFIER_ONLY),
            Err(Error::LabelOutOfRange { .. })
        ));
        assert!(matches!(
            mlp.backward(&cache, &[0], LossWeights::JOINT),
            Err(Error::MissingDecoder)
        ));
        assert!(mlp.forward(Array2::zeros((1, 4)).view()).is_err());
    }
}

//! A sigmoid scorer stacked on a frozen classifier with an auxiliary decoder.
//!
//! The scorer reads the element-wise squared reconstruction residual
//! `(x - decode(x))^2` concatenated with the classifier's softmax vector and
//! is trained to output 1 for clean inputs and 0 for distorted ones. Its
//! output is a normality score: higher means more in-distribution.

use std::path::Path;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{distort, Dataset, DistortionKind, DistortionRange};
use crate::error::{Error, Result};
use crate::nn::adam::{adam_step_layers, AdamConfig, AdamState};
use crate::nn::checkpoint;
use crate::nn::layer::{params_checksum, LayerStack};
use crate::nn::mlp::Mlp;
use crate::nn::Activation;
use crate::rng;
use crate::scores::{softmax_slice, SoftmaxDist};

pub const DEFAULT_SCORER_HIDDEN: [usize; 1] = [128];
/// Two epochs at the Adam default rate leave the scorer underfit; these
/// were picked by the scorer's own loss on the clean/distorted set.
pub const DEFAULT_SCORER_BATCH: usize = 32;
pub const DEFAULT_SCORER_LEARNING_RATE: f64 = 1e-2;
pub const DEFAULT_SCORER_EPOCHS: usize = 2;
pub const ABMOD_FORMAT: &str = "ood-baseline/abmod/1";

/// Class index of clean examples in an abnormal set (the sigmoid target 1).
pub const NORMAL: usize = 1;
/// Class index of distorted examples (the sigmoid target 0).
pub const ABNORMAL: usize = 0;

/// Which backbone outputs feed the scorer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputRecipe {
    /// `(x - reconstruction)^2` followed by the softmax probability vector.
    ResidualAndProbabilities,
}

/// The scorer's view of one input.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerInput {
    pub squared_residual: Vec<f64>,
    pub probabilities: SoftmaxDist,
}

impl ScorerInput {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.squared_residual.clone();
        v.extend_from_slice(self.probabilities.probs());
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbnormalityModule {
    backbone: Mlp,
    backbone_checksum: String,
    /// Hidden GELU layers then one sigmoid unit.
    pub scorer: LayerStack,
    pub input_recipe: InputRecipe,
}

/// Wraps a trained classifier+decoder. The backbone is only reachable by
/// shared reference afterwards.
pub fn build_module(backbone: Mlp, scorer_hidden: &[usize], seed: u64) -> Result<AbnormalityModule> {
    backbone.validate()?;
    if !backbone.has_decoder() {
        return Err(Error::MissingDecoder);
    }
    if scorer_hidden.is_empty() {
        return Err(Error::InvalidArgument("scorer needs a hidden layer".into()));
    }
    let mut widths = vec![backbone.input_dim() + backbone.num_classes()];
    widths.extend_from_slice(scorer_hidden);
    widths.push(1);
    let mut acts = vec![Activation::Gelu; scorer_hidden.len()];
    acts.push(Activation::Sigmoid);
    let scorer = LayerStack::new(
        &widths,
        &acts,
        &mut rng::stream(seed, rng::streams::SCORER_INIT),
    )?;
    Ok(AbnormalityModule {
        backbone_checksum: backbone.checksum(),
        backbone,
        scorer,
        input_recipe: InputRecipe::ResidualAndProbabilities,
    })
}

impl AbnormalityModule {
    pub fn backbone(&self) -> &Mlp {
        &self.backbone
    }

    /// Checksum recorded when the module was built.
    pub fn backbone_checksum(&self) -> &str {
        &self.backbone_checksum
    }

    pub fn scorer_input_dim(&self) -> usize {
        self.scorer.input_dim()
    }

    fn check_frozen(&self) -> Result<()> {
        if self.backbone.checksum() != self.backbone_checksum {
            return Err(Error::BackboneModified);
        }
        Ok(())
    }

    /// Scorer features for a batch, one row per input.
    pub fn features(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        let (logits, recon) = self.backbone.predict(inputs)?;
        let recon = recon.ok_or(Error::MissingDecoder)?;
        let residual = (&inputs - &recon).mapv(|d| d * d);
        let mut probs = logits;
        for mut row in probs.outer_iter_mut() {
            let p = softmax_slice(row.as_slice().expect("contiguous"));
            row.iter_mut().zip(p).for_each(|(r, p)| *r = p);
        }
        concatenate(Axis(1), &[residual.view(), probs.view()])
            .map_err(|e| Error::ShapeMismatch(e.to_string()))
    }

    pub fn scorer_input(&self, input: &[f64]) -> Result<ScorerInput> {
        let x = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        let f = self.features(x)?;
        let d = self.backbone.input_dim();
        Ok(ScorerInput {
            squared_residual: f.slice(s![0, ..d]).to_vec(),
            probabilities: SoftmaxDist::from_probs(f.slice(s![0, d..]).to_vec())?,
        })
    }

    fn score_features(&self, features: ArrayView2<f64>) -> Result<Vec<f64>> {
        Ok(self.scorer.predict(features)?.column(0).to_vec())
    }

    /// Normality scores for every row, in `(0, 1)` up to floating-point
    /// saturation; higher is more normal.
    pub fn normality_scores(&self, inputs: ArrayView2<f64>) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(inputs.nrows());
        for chunk in inputs.axis_chunks_iter(Axis(0), crate::nn::train::EVAL_CHUNK) {
            out.extend(self.score_features(self.features(chunk)?.view())?);
        }
        Ok(out)
    }

    pub fn normality_score(&self, input: &[f64]) -> Result<f64> {
        let x = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Ok(self.normality_scores(x)?[0])
    }

    /// Trains only the scorer with binary cross-entropy on a set built by
    /// [`make_abnormal_set`]. Fails if the backbone changed.
    pub fn train_scorer(&mut self, data: &Dataset, config: &ScorerTrainConfig) -> Result<ScorerLog> {
        config.validate()?;
        self.check_frozen()?;
        if data.is_empty() {
            return Err(Error::InvalidArgument("abnormal set is empty".into()));
        }
        let labels = data.require_labels()?;
        if let Some(&l) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::LabelOutOfRange { label: l, classes: 2 });
        }
        let before = self.backbone.checksum();
        let features = self.features(data.inputs.view())?;
        let targets: Vec<f64> = labels.iter().map(|&l| l as f64).collect();

        let adam = AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        };
        let mut state = AdamState::for_layers(adam, &self.scorer.layers);
        let mut shuffle = rng::stream(config.seed, rng::streams::SCORER_SHUFFLE);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut epoch_loss = Vec::with_capacity(config.epochs);

        for _ in 0..config.epochs {
            order.shuffle(&mut shuffle);
            let mut total = 0.0;
            for batch in order.chunks(config.batch_size) {
                let x = features.select(Axis(0), batch);
                let cache = self.scorer.forward(x.view())?;
                let z = cache.pre_activations.last().expect("non-empty stack");
                let n = batch.len() as f64;
                let mut d_z = Array2::zeros(z.raw_dim());
                for (k, &i) in batch.iter().enumerate() {
                    let (zk, y) = (z[[k, 0]], targets[i]);
                    total += bce_from_logit(zk, y);
                    d_z[[k, 0]] = (cache.output[[k, 0]] - y) / n;
                }
                let (grads, _) = self.scorer.backward_pre_activation(&cache, d_z)?;
                let mut layers: Vec<_> = self.scorer.layers.iter_mut().collect();
                adam_step_layers(&mut layers, &grads, &mut state)?;
            }
            epoch_loss.push(total / data.len() as f64);
        }

        let after = self.backbone.checksum();
        if after != before {
            return Err(Error::BackboneModified);
        }
        Ok(ScorerLog {
            epoch_loss,
            backbone_checksum_before: before,
            backbone_checksum_after: after,
            scorer_checksum: params_checksum(&self.scorer.layers),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        checkpoint::encode(ABMOD_FORMAT, self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let module: AbnormalityModule = checkpoint::decode(ABMOD_FORMAT, text)?;
        module.backbone.validate()?;
        module.scorer.validate()?;
        module.check_frozen()?;
        if module.scorer.input_dim() != module.backbone.input_dim() + module.backbone.num_classes()
            || module.scorer.output_dim() != 1
        {
            return Err(Error::ShapeMismatch("scorer does not fit backbone".into()));
        }
        Ok(module)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        checkpoint::write(path.as_ref(), &self.to_json()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&checkpoint::read(path.as_ref())?)
    }
}

/// `-y ln(sigmoid(z)) - (1 - y) ln(1 - sigmoid(z))`, stable for large `|z|`.
fn bce_from_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - y * z + (-z.abs()).exp().ln_1p()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ScorerTrainConfig {
    fn default() -> Self {
        Self {
            epochs: DEFAULT_SCORER_EPOCHS,
            batch_size: DEFAULT_SCORER_BATCH,
            learning_rate: DEFAULT_SCORER_LEARNING_RATE,
            seed: 0,
        }
    }
}

impl ScorerTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("scorer epochs and batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("scorer learning_rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerLog {
    /// Mean binary cross-entropy per epoch, accumulated over mini-batches.
    pub epoch_loss: Vec<f64>,
    pub backbone_checksum_before: String,
    pub backbone_checksum_after: String,
    pub scorer_checksum: String,
}

/// A balanced normal/abnormal dataset and the distortion applied to each
/// abnormal row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbnormalSet {
    /// Clean rows first (label [`NORMAL`]), then their distorted copies in
    /// the same order (label [`ABNORMAL`]).
    pub data: Dataset,
    pub applied: Vec<DistortionKind>,
}

/// Each clean example appears once as normal and once distorted. The
/// distortion family and its strength are drawn per example.
pub fn make_abnormal_set(
    clean: &Dataset,
    distortions: &[DistortionRange],
    seed: u64,
) -> Result<AbnormalSet> {
    if clean.is_empty() {
        return Err(Error::InvalidArgument("no clean examples".into()));
    }
    if distortions.is_empty() {
        return Err(Error::InvalidArgument("no distortions".into()));
    }
    for d in distortions {
        d.validate()?;
    }
    let mut r = rng::stream(seed, rng::streams::DISTORTION);
    let n = clean.len();
    let mut distorted = Array2::zeros((n, clean.dim()));
    let mut applied = Vec::with_capacity(n);
    for (i, row) in clean.inputs.outer_iter().enumerate() {
        let family = &distortions[r.random_range(0..distortions.len())];
        let kind = family.sample(&mut r);
        let out = distort(&row.to_vec(), &kind, clean.shape, r.random())?;
        distorted.row_mut(i).assign(&ndarray::ArrayView1::from(&out));
        applied.push(kind);
    }
    let inputs = concatenate(Axis(0), &[clean.inputs.view(), distorted.view()])
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    let mut labels = vec![NORMAL; n];
    labels.extend(std::iter::repeat_n(ABNORMAL, n));
    let mut data = Dataset::labeled(inputs, labels, 2, format!("abnormal({})", clean.provenance))?;
    data.shape = clean.shape;
    Ok(AbnormalSet { data, applied })
}

use ndarray::{s, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step_layers, AdamConfig, AdamState};
use super::mlp::{LossWeights, Mlp};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng;
use crate::scores::{argmax, softmax_slice, SoftmaxDist};

/// Rows per forward pass when evaluating.
pub const EVAL_CHUNK: usize = 1024;

/// Patience used when early stopping is switched on without a value.
pub const DEFAULT_PATIENCE: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub loss_weights: LossWeights,
    pub hidden: Vec<usize>,
    /// Attach the reconstruction head.
    pub decoder: bool,
    /// Stop after this many epochs without a validation-loss improvement and
    /// restore the best parameters. Needs validation data.
    pub early_stopping_patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 128,
            seed: 0,
            learning_rate: AdamConfig::default().learning_rate,
            loss_weights: LossWeights::CLASSIFIER_ONLY,
            hidden: vec![256, 256, 256],
            decoder: false,
            early_stopping_patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config(format!("bad hidden widths {:?}", self.hidden)));
        }
        if self.early_stopping_patience == Some(0) {
            return Err(Error::Config("early stopping patience must be at least 1".into()));
        }
        self.loss_weights.validate()?;
        if self.loss_weights.reconstruction > 0.0 && !self.decoder {
            return Err(Error::Config(
                "reconstruction weight set but no decoder attached".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-example loss over the epoch's mini-batches.
    pub train_loss: f64,
    pub train_cross_entropy: f64,
    pub train_reconstruction: f64,
    /// Error rate on the mini-batches, measured before each update.
    pub train_error: f64,
    pub validation_loss: Option<f64>,
    pub validation_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    /// Epoch (1-based) whose parameters were returned.
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub checksum: String,
}

fn check_data(model_classes: usize, dim: usize, data: &Dataset, what: &str) -> Result<()> {
    if data.is_empty() {
        return Err(Error::InvalidArgument(format!("{what} set is empty")));
    }
    if data.dim() != dim {
        return Err(Error::ShapeMismatch(format!(
            "{what} rows have {} columns, model expects {dim}",
            data.dim()
        )));
    }
    let labels = data.require_labels()?;
    if let Some(&label) = labels.iter().find(|&&l| l >= model_classes) {
        return Err(Error::LabelOutOfRange {
            label,
            classes: model_classes,
        });
    }
    Ok(())
}

/// Trains a fresh network with seeded initialization and seeded per-epoch
/// shuffling. The class count is taken from `train.class_count`.
pub fn train_classifier(
    config: &TrainConfig,
    train: &Dataset,
    validation: Option<&Dataset>,
) -> Result<(Mlp, TrainingLog)> {
    config.validate()?;
    let mut model = Mlp::new(
        train.dim(),
        &config.hidden,
        train.class_count,
        config.decoder,
        config.seed,
    )?;
    let log = fit(&mut model, config, train, validation)?;
    Ok((model, log))
}

/// Continues training `model` in place.
pub fn fit(
    model: &mut Mlp,
    config: &TrainConfig,
    train: &Dataset,
    validation: Option<&Dataset>,
) -> Result<TrainingLog> {
    config.validate()?;
    check_data(model.num_classes(), model.input_dim(), train, "training")?;
    if let Some(v) = validation {
        check_data(model.num_classes(), model.input_dim(), v, "validation")?;
    }
    if config.early_stopping_patience.is_some() && validation.is_none() {
        return Err(Error::Config("early stopping needs validation data".into()));
    }
    if config.loss_weights.reconstruction > 0.0 && !model.has_decoder() {
        return Err(Error::MissingDecoder);
    }
    let labels = train.require_labels()?;
    let weights = config.loss_weights;
    let adam = AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    };
    let mut state = AdamState::for_layers(adam, model.layers());
    let mut shuffle = rng::stream(config.seed, rng::streams::SHUFFLE);
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Mlp)> = None;
    let mut stopped_early = false;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle);
        let (mut loss_sum, mut ce_sum, mut rec_sum, mut wrong) = (0.0, 0.0, 0.0, 0usize);
        for batch in order.chunks(config.batch_size) {
            let x = train.inputs.select(Axis(0), batch);
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let cache = model.forward(x.view())?;
            let loss = model.loss(&cache, &y, weights)?;
            let n = batch.len() as f64;
            loss_sum += loss.total * n;
            ce_sum += loss.cross_entropy * n;
            rec_sum += loss.reconstruction * n;
            wrong += cache
                .logits
                .outer_iter()
                .zip(&y)
                .filter(|(row, &t)| argmax(row.as_slice().expect("contiguous")) != t)
                .count();
            let grads = model.backward(&cache, &y, weights)?;
            adam_step_layers(&mut model.layers_mut(), &grads.layers, &mut state)?;
        }
        let n = train.len() as f64;
        let (validation_loss, validation_error) = match validation {
            Some(v) => {
                let (l, e) = loss_and_error(model, v, weights)?;
                (Some(l), Some(e))
            }
            None => (None, None),
        };
        epochs.push(EpochLog {
            epoch,
            train_loss: loss_sum / n,
            train_cross_entropy: ce_sum / n,
            train_reconstruction: rec_sum / n,
            train_error: wrong as f64 / n,
            validation_loss,
            validation_error,
        });

        if let (Some(patience), Some(vl)) = (config.early_stopping_patience, validation_loss) {
            match &best {
                Some((b, _, _)) if vl >= *b => {}
                _ => best = Some((vl, epoch, model.clone())),
            }
            let best_epoch = best.as_ref().map_or(epoch, |b| b.1);
            if epoch - best_epoch >= patience {
                stopped_early = true;
                break;
            }
        }
    }

    let best_epoch = match best {
        Some((_, e, params)) => {
            *model = params;
            e
        }
        None => epochs.len(),
    };
    model.validate()?;
    Ok(TrainingLog {
        epochs,
        best_epoch,
        stopped_early,
        checksum: model.checksum(),
    })
}

/// Mean loss and error rate over a labeled dataset, in chunks.
pub fn loss_and_error(model: &Mlp, data: &Dataset, weights: LossWeights) -> Result<(f64, f64)> {
    let labels = data.require_labels()?;
    let (mut loss, mut wrong) = (0.0, 0usize);
    for (start, chunk) in chunks(data.inputs.view()) {
        let y = &labels[start..start + chunk.nrows()];
        let cache = model.forward(chunk)?;
        loss += model.loss(&cache, y, weights)?.total * chunk.nrows() as f64;
        wrong += cache
            .logits
            .outer_iter()
            .zip(y)
            .filter(|(row, &t)| argmax(row.as_slice().expect("contiguous")) != t)
            .count();
    }
    let n = data.len() as f64;
    Ok((loss / n, wrong as f64 / n))
}

fn chunks(x: ArrayView2<'_, f64>) -> impl Iterator<Item = (usize, ArrayView2<'_, f64>)> {
    (0..x.nrows()).step_by(EVAL_CHUNK).map(move |start| {
        let end = (start + EVAL_CHUNK).min(x.nrows());
        (start, x.slice_move(s![start..end, ..]))
    })
}

/// Softmax distributions for every row, in input order.
pub fn predict_distributions(model: &Mlp, inputs: ArrayView2<f64>) -> Result<Vec<SoftmaxDist>> {
    let mut out = Vec::with_capacity(inputs.nrows());
    for (_, chunk) in chunks(inputs) {
        let logits = model.logits(chunk)?;
        for row in logits.outer_iter() {
            let probs = softmax_slice(row.as_slice().expect("contiguous"));
            out.push(SoftmaxDist::from_probs(probs)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub error_rate: f64,
    pub predictions: Vec<usize>,
    pub distributions: Vec<SoftmaxDist>,
}

/// Error rate and per-example distributions on a labeled dataset.
pub fn evaluate(model: &Mlp, data: &Dataset) -> Result<Evaluation> {
    let labels = data.require_labels()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("evaluation set is empty".into()));
    }
    let distributions = predict_distributions(model, data.inputs.view())?;
    let predictions: Vec<usize> = distributions.iter().map(|d| argmax(d.probs())).collect();
    let wrong = predictions.iter().zip(labels).filter(|(p, l)| p != l).count();
    Ok(Evaluation {
        error_rate: wrong as f64 / data.len() as f64,
        predictions,
        distributions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand_distr::{Distribution, Normal};

    fn blobs(n: usize, seed: u64) -> Dataset {
        let mut r = rng::stream(seed, 0);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let inputs = Array2::from_shape_fn((n, 2), |(i, _)| {
            let centre = if labels[i] == 0 { -1.0 } else { 1.0 };
            centre + noise.sample(&mut r)
        });
        Dataset::labeled(inputs, labels, 2, "blobs").unwrap()
    }

    fn small() -> TrainConfig {
        TrainConfig {
            epochs: 20,
            batch_size: 16,
            hidden: vec![8],
            ..TrainConfig::default()
        }
    }

    #[test]
    fn separable_blobs_reach_zero_training_error() {
        let data = blobs(200, 1);
        let (model, log) = train_classifier(&small(), &data, None).unwrap();
        assert_eq!(evaluate(&model, &data).unwrap().error_rate, 0.0);
        assert_eq!(log.epochs.len(), 20);
        assert!(log.epochs.last().unwrap().train_loss < log.epochs[0].train_loss);
    }

    #[test]
    fn training_is_deterministic() {
        let data = blobs(64, 2);
        let (a, la) = train_classifier(&small(), &data, None).unwrap();
        let (b, lb) = train_classifier(&small(), &data, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
    }

    #[test]
    fn zero_model_errs_like_uniform_guessing() {
        let labels: Vec<usize> = (0..100).map(|i| i % 10).collect();
        let data = Dataset::labeled(Array2::zeros((100, 4)), labels, 10, "flat").unwrap();
        let mut model = Mlp::new(4, &[3], 10, false, 0).unwrap();
        for layer in model.layers_mut() {
            layer.weights.fill(0.0);
        }
        let eval = evaluate(&model, &data).unwrap();
        assert!((eval.error_rate - 0.9).abs() < 1e-12);
        assert_eq!(eval.distributions.len(), 100);
        assert!(eval.distributions.iter().all(|d| (d.probs()[0] - 0.1).abs() < 1e-15));
    }

    #[test]
    fn early_stopping_restores_best_epoch() {
        let train = blobs(64, 3);
        let validation = blobs(32, 4);
        let config = TrainConfig {
            epochs: 40,
            early_stopping_patience: Some(DEFAULT_PATIENCE),
            learning_rate: 0.05,
            ..small()
        };
        let (model, log) = train_classifier(&config, &train, Some(&validation)).unwrap();
        let best = log.epochs[log.best_epoch - 1].validation_loss.unwrap();
        let min = log
            .epochs
            .iter()
            .filter_map(|e| e.validation_loss)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(best, min);
        let (restored, _) = loss_and_error(&model, &validation, config.loss_weights).unwrap();
        assert_eq!(restored, best);
        if log.stopped_early {
            assert_eq!(log.epochs.len(), log.best_epoch + DEFAULT_PATIENCE);
        }
    }

    #[test]
    fn config_and_data_errors() {
        let data = blobs(10, 5);
        let bad = TrainConfig {
            epochs: 0,
            ..small()
        };
        assert!(train_classifier(&bad, &data, None).is_err());
        let no_decoder = TrainConfig {
            loss_weights: LossWeights::JOINT,
            ..small()
        };
        assert!(train_classifier(&no_decoder, &data, None).is_err());
        let patience = TrainConfig {
            early_stopping_patience: Some(3),
            ..small()
        };
        assert!(train_classifier(&patience, &data, None).is_err());
        let empty = data.select(&[]);
        assert!(train_classifier(&small(), &empty, None).is_err());
    }
}

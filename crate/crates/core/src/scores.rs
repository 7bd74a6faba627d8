//! Detector scores derived from classifier outputs.
//!
//! The baseline detector is the maximum softmax probability: correctly
//! classified and in-distribution inputs tend to receive a larger predicted
//! class probability than misclassified or out-of-distribution ones.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Raw class scores (softmax inputs). At least two classes, all finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Logits(Vec<f64>);

impl Logits {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidLogits(format!(
                "need at least 2 classes, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidLogits(format!(
                "non-finite logit {} at class {i}",
                values[i]
            )));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    /// Logits with one class removed.
    pub fn without(&self, class: usize) -> Result<Self> {
        if class >= self.0.len() {
            return Err(Error::InvalidArgument(format!(
                "class {class} out of range for {} logits",
                self.0.len()
            )));
        }
        let mut values = self.0.clone();
        values.remove(class);
        Logits::new(values)
    }
}

impl TryFrom<Vec<f64>> for Logits {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Logits::new(values)
    }
}

impl From<Logits> for Vec<f64> {
    fn from(l: Logits) -> Self {
        l.0
    }
}

/// A normalized probability vector over `K >= 2` classes.
///
/// Entries can underflow to exactly zero when logit gaps exceed roughly 745,
/// so the invariant is `p_i in [0, 1]` with `sum p = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SoftmaxDist(Vec<f64>);

/// Tolerance on the total mass of a probability vector accepted from outside.
pub const PROB_SUM_TOLERANCE: f64 = 1e-9;

impl SoftmaxDist {
    /// Validates an externally produced probability vector.
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidDistribution(format!(
                "need at least 2 classes, got {}",
                probs.len()
            )));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidDistribution(
                "probability outside [0, 1]".into(),
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(Error::InvalidDistribution(format!(
                "probabilities sum to {total}"
            )));
        }
        Ok(Self(probs))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    /// Shannon entropy in nats, with `0 log 0 = 0`.
    pub fn entropy(&self) -> f64 {
        -self
            .0
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.ln())
            .sum::<f64>()
    }
}

impl TryFrom<Vec<f64>> for SoftmaxDist {
    type Error = Error;

    fn try_from(probs: Vec<f64>) -> Result<Self> {
        SoftmaxDist::from_probs(probs)
    }
}

impl From<SoftmaxDist> for Vec<f64> {
    fn from(d: SoftmaxDist) -> Self {
        d.0
    }
}

/// Max-subtracted softmax.
pub fn softmax(logits: &Logits) -> SoftmaxDist {
    SoftmaxDist(softmax_slice(logits.values()))
}

pub(crate) fn softmax_slice(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the first maximal entry; ties go to the lowest index.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Maximum probability and its class.
pub fn max_prob(dist: &SoftmaxDist) -> (f64, usize) {
    let class = argmax(&dist.0);
    (dist.0[class], class)
}

/// `KL(p || uniform) = log K - H(p)`.
pub fn kl_from_uniform(dist: &SoftmaxDist) -> f64 {
    ((dist.num_classes() as f64).ln() - dist.entropy()).max(0.0)
}

pub fn neg_entropy(dist: &SoftmaxDist) -> f64 {
    -dist.entropy()
}

/// Which statistic of a softmax distribution serves as the detector score.
/// Larger is "more confident" for all three.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreKind {
    #[default]
    MaxProb,
    KlFromUniform,
    NegEntropy,
}

impl ScoreKind {
    pub fn score(self, dist: &SoftmaxDist) -> f64 {
        match self {
            ScoreKind::MaxProb => max_prob(dist).0,
            ScoreKind::KlFromUniform => kl_from_uniform(dist),
            ScoreKind::NegEntropy => neg_entropy(dist),
        }
    }
}

impl std::str::FromStr for ScoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max-prob" | "msp" => Ok(ScoreKind::MaxProb),
            "kl-from-uniform" | "kl" => Ok(ScoreKind::KlFromUniform),
            "neg-entropy" => Ok(ScoreKind::NegEntropy),
            other => Err(Error::InvalidArgument(format!("unknown score kind {other:?}"))),
        }
    }
}

/// How per-frame scores combine into one sequence score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregator {
    #[default]
    Mean,
    Median,
    Min,
}

impl Aggregator {
    pub fn aggregate(self, values: &[f64]) -> f64 {
        match self {
            Aggregator::Mean => values.iter().sum::<f64>() / values.len() as f64,
            Aggregator::Min => values.iter().copied().fold(f64::INFINITY, f64::min),
            Aggregator::Median => {
                let mut sorted = values.to_vec();
                sorted.sort_by(f64::total_cmp);
                let mid = sorted.len() / 2;
                if sorted.len() % 2 == 1 {
                    sorted[mid]
                } else {
                    (sorted[mid - 1] + sorted[mid]) / 2.0
                }
            }
        }
    }
}

/// Scores a sequence of per-timestep logits.
///
/// With `blank_index` set, that class's logit is dropped from every frame
/// before the softmax, so frames dominated by the blank symbol are judged by
/// how the remaining classes share probability.
pub fn score_sequence(
    frames: &[Logits],
    blank_index: Option<usize>,
    kind: ScoreKind,
    aggregator: Aggregator,
) -> Result<f64> {
    if frames.is_empty() {
        return Err(Error::InvalidArgument("sequence has no frames".into()));
    }
    let mut per_frame = Vec::with_capacity(frames.len());
    for (t, frame) in frames.iter().enumerate() {
        let dist = match blank_index {
            None => softmax(frame),
            Some(blank) => {
                if blank >= frame.num_classes() {
                    return Err(Error::InvalidArgument(format!(
                        "blank index {blank} out of range for frame {t} with {} classes",
                        frame.num_classes()
                    )));
                }
                if frame.num_classes() < 3 {
                    return Err(Error::InvalidArgument(format!(
                        "frame {t}: blank exclusion needs at least 3 classes"
                    )));
                }
                softmax(&frame.without(blank)?)
            }
        };
        per_frame.push(kind.score(&dist));
    }
    Ok(aggregator.aggregate(&per_frame))
}

/// Splits scores by whether the prediction matched the label:
/// `(success_scores, error_scores)`.
pub fn partition_by_correctness(
    predictions: &[usize],
    labels: &[usize],
    scores: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch {
            what: "predictions vs labels",
            left: predictions.len(),
            right: labels.len(),
        });
    }
    if predictions.len() != scores.len() {
        return Err(Error::LengthMismatch {
            what: "predictions vs scores",
            left: predictions.len(),
            right: scores.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::InvalidArgument("no predictions".into()));
    }
    let mut success = Vec::new();
    let mut error = Vec::new();
    for ((p, l), &s) in predictions.iter().zip(labels).zip(scores) {
        if p == l {
            success.push(s);
        } else {
            error.push(s);
        }
    }
    Ok((success, error))
}

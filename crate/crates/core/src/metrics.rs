//! Threshold-free evaluation of binary detectors.
//!
//! Every function here takes two score populations: `positives` and
//! `negatives`. A detector is better when positives score higher. Ties are
//! resolved with the Mann-Whitney average-rank convention, so a tied
//! (positive, negative) pair counts one half toward the AUROC numerator.
//!
//! The AUROC is computed from integer rank sums (ranks are doubled so every
//! tie-averaged rank stays an integer), which makes the complement and
//! negation identities hold bit-for-bit rather than approximately.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use libm::erfc;

use crate::error::{Error, Result};

/// Minimum per-class population size for which the normal approximation of
/// the rank-sum statistic is considered valid.
pub const RANK_SUM_MIN_SAMPLE: usize = 8;

/// Minimum per-class population size accepted by [`build_report`].
pub const REPORT_MIN_PER_CLASS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "pos")]
    Positive,
    #[serde(rename = "neg")]
    Negative,
}

/// A detector score together with its ground-truth label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredExample {
    pub score: f64,
    pub label: Label,
}

impl ScoredExample {
    pub fn new(score: f64, label: Label) -> Result<Self> {
        if !score.is_finite() {
            return Err(Error::InvalidScore {
                index: 0,
                value: score,
            });
        }
        Ok(Self { score, label })
    }
}

/// Splits labeled examples into `(positives, negatives)` score vectors.
pub fn split_by_label(examples: &[ScoredExample]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for (index, ex) in examples.iter().enumerate() {
        if !ex.score.is_finite() {
            return Err(Error::InvalidScore {
                index,
                value: ex.score,
            });
        }
        match ex.label {
            Label::Positive => positives.push(ex.score),
            Label::Negative => negatives.push(ex.score),
        }
    }
    Ok((positives, negatives))
}

/// Confusion counts for the rule "predict positive when score >= threshold".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn at_threshold(positives: &[f64], negatives: &[f64], threshold: f64) -> Self {
        let tp = positives.iter().filter(|&&s| s >= threshold).count();
        let fp = negatives.iter().filter(|&&s| s >= threshold).count();
        Self {
            tp,
            fp,
            tn: negatives.len() - fp,
            fn_: positives.len() - tp,
        }
    }

    pub fn positives(&self) -> usize {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> usize {
        self.fp + self.tn
    }

    pub fn tpr(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn fpr(&self) -> f64 {
        ratio(self.fp, self.fp + self.tn)
    }

    /// Precision; defined as 1 when nothing is predicted positive.
    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            1.0
        } else {
            ratio(self.tp, self.tp + self.fp)
        }
    }

    pub fn recall(&self) -> f64 {
        self.tpr()
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Score threshold producing this point; `+inf` for the origin.
    pub threshold: f64,
}

/// ROC curve with one point per distinct score plus the `(0, 0)` origin.
/// The last point is always `(1, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

impl RocCurve {
    /// Trapezoidal area under the curve.
    pub fn area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    pub threshold: f64,
}

/// Precision-recall curve with one point per distinct score, in order of
/// decreasing threshold (so recall is non-decreasing).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

impl PrCurve {
    /// Step-wise (non-interpolated) area: `sum (r_k - r_{k-1}) * p_k`.
    pub fn step_area(&self) -> f64 {
        let mut prev_recall = 0.0;
        let mut area = 0.0;
        for p in &self.points {
            area += (p.recall - prev_recall) * p.precision;
            prev_recall = p.recall;
        }
        area
    }
}

/// Scores grouped into tie blocks, highest score first.
struct TieGroups {
    /// `(score, positives in block, negatives in block)`
    groups: Vec<(f64, usize, usize)>,
    n_pos: usize,
    n_neg: usize,
}

impl TieGroups {
    fn new(positives: &[f64], negatives: &[f64]) -> Result<Self> {
        validate(positives, negatives)?;
        let mut all: Vec<(f64, bool)> = positives
            .iter()
            .map(|&s| (s, true))
            .chain(negatives.iter().map(|&s| (s, false)))
            .collect();
        // Finite by validation, so partial_cmp is total here; it also treats
        // -0.0 and 0.0 as the same score.
        all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));

        let mut groups: Vec<(f64, usize, usize)> = Vec::new();
        for (score, is_pos) in all {
            match groups.last_mut() {
                Some(last) if last.0 == score => {
                    if is_pos {
                        last.1 += 1;
                    } else {
                        last.2 += 1;
                    }
                }
                _ => groups.push((score, is_pos as usize, (!is_pos) as usize)),
            }
        }
        Ok(Self {
            groups,
            n_pos: positives.len(),
            n_neg: negatives.len(),
        })
    }

    /// Twice the Mann-Whitney U statistic of the positives, as an exact integer.
    ///
    /// Walking from the lowest score up, a block occupying ascending ranks
    /// `lo..=hi` gives every member the average rank `(lo + hi) / 2`.
    fn doubled_u(&self) -> u64 {
        let mut below = 0u64;
        let mut doubled_rank_sum = 0u64;
        for &(_, pos, neg) in self.groups.iter().rev() {
            let size = (pos + neg) as u64;
            let lo = below + 1;
            let hi = below + size;
            doubled_rank_sum += pos as u64 * (lo + hi);
            below = hi;
        }
        let m = self.n_pos as u64;
        doubled_rank_sum - m * (m + 1)
    }

    /// `sum (t^3 - t)` over tie blocks, for the variance correction.
    fn tie_term(&self) -> f64 {
        self.groups
            .iter()
            .map(|&(_, p, n)| {
                let t = (p + n) as f64;
                t * t * t - t
            })
            .sum()
    }
}

fn validate(positives: &[f64], negatives: &[f64]) -> Result<()> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::DegeneratePopulation(format!(
            "{} positives and {} negatives",
            positives.len(),
            negatives.len()
        )));
    }
    for (index, &value) in positives.iter().chain(negatives).enumerate() {
        if !value.is_finite() {
            return Err(Error::InvalidScore { index, value });
        }
    }
    Ok(())
}

/// Probability that a random positive outscores a random negative, ties
/// counted half. Runs in `O((m + n) log(m + n))`.
pub fn auroc(positives: &[f64], negatives: &[f64]) -> Result<f64> {
    let groups = TieGroups::new(positives, negatives)?;
    let pairs = 2 * positives.len() as u64 * negatives.len() as u64;
    Ok(groups.doubled_u() as f64 / pairs as f64)
}

/// Mann-Whitney U statistic of `positives` against `negatives`
/// (`U = auroc * |P| * |N|`).
pub fn mann_whitney_u(positives: &[f64], negatives: &[f64]) -> Result<f64> {
    let groups = TieGroups::new(positives, negatives)?;
    Ok(groups.doubled_u() as f64 / 2.0)
}

pub fn roc_curve(positives: &[f64], negatives: &[f64]) -> Result<RocCurve> {
    let groups = TieGroups::new(positives, negatives)?;
    let (p, n) = (groups.n_pos as f64, groups.n_neg as f64);
    let mut points = Vec::with_capacity(groups.groups.len() + 1);
    points.push(RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    });
    let (mut tp, mut fp) = (0usize, 0usize);
    for &(score, pos, neg) in &groups.groups {
        tp += pos;
        fp += neg;
        points.push(RocPoint {
            fpr: fp as f64 / n,
            tpr: tp as f64 / p,
            threshold: score,
        });
    }
    Ok(RocCurve { points })
}

pub fn pr_curve(positives: &[f64], negatives: &[f64]) -> Result<PrCurve> {
    let groups = TieGroups::new(positives, negatives)?;
    let p = groups.n_pos as f64;
    let (mut tp, mut fp) = (0usize, 0usize);
    let points = groups
        .groups
        .iter()
        .map(|&(score, pos, neg)| {
            tp += pos;
            fp += neg;
            PrPoint {
                recall: tp as f64 / p,
                precision: tp as f64 / (tp + fp) as f64,
                threshold: score,
            }
        })
        .collect();
    Ok(PrCurve { points })
}

/// Non-interpolated average precision: the mean, over positives in
/// descending score order, of the precision at each positive's rank. A tie
/// block is a single threshold, so its positives share the precision at the
/// block boundary.
pub fn average_precision(positives: &[f64], negatives: &[f64]) -> Result<f64> {
    let groups = TieGroups::new(positives, negatives)?;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut sum = 0.0;
    for &(_, pos, neg) in &groups.groups {
        tp += pos;
        fp += neg;
        if pos > 0 {
            sum += pos as f64 * tp as f64 / (tp + fp) as f64;
        }
    }
    Ok(sum / groups.n_pos as f64)
}

/// Areas a random detector achieves on a population of the given sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baselines {
    pub auroc: f64,
    pub aupr: f64,
}

pub fn random_baselines(n_positive: usize, n_negative: usize) -> Result<Baselines> {
    if n_positive == 0 || n_negative == 0 {
        return Err(Error::DegeneratePopulation(format!(
            "{n_positive} positives and {n_negative} negatives"
        )));
    }
    Ok(Baselines {
        auroc: 0.5,
        aupr: n_positive as f64 / (n_positive + n_negative) as f64,
    })
}

/// Wilcoxon rank-sum / Mann-Whitney U test, normal approximation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankSumTest {
    pub u: f64,
    pub z: f64,
    /// Two-sided p-value.
    pub p_value: f64,
    /// Set when either population is smaller than [`RANK_SUM_MIN_SAMPLE`];
    /// the normal approximation is then unreliable.
    pub small_sample: bool,
}

/// Two-sided rank-sum test with tie-corrected variance and a 0.5 continuity
/// correction.
pub fn rank_sum_test(positives: &[f64], negatives: &[f64]) -> Result<RankSumTest> {
    let groups = TieGroups::new(positives, negatives)?;
    let m = groups.n_pos as f64;
    let n = groups.n_neg as f64;
    let total = m + n;
    let u = groups.doubled_u() as f64 / 2.0;
    let mean = m * n / 2.0;
    let variance = m * n / 12.0 * ((total + 1.0) - groups.tie_term() / (total * (total - 1.0)));

    let deviation = u - mean;
    let corrected = (deviation.abs() - 0.5).max(0.0);
    let z = if variance > 0.0 {
        deviation.signum() * corrected / variance.sqrt()
    } else {
        0.0
    };
    let p_value = erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0);
    Ok(RankSumTest {
        u,
        z,
        p_value,
        small_sample: groups.n_pos < RANK_SUM_MIN_SAMPLE || groups.n_neg < RANK_SUM_MIN_SAMPLE,
    })
}

/// AUROC, both AUPRs, base rate and rank-sum p-value for a pair of score
/// populations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub auroc: f64,
    /// Average precision with the first population as positive.
    pub aupr_positive: f64,
    /// Average precision with the second population as positive and every
    /// score negated.
    pub aupr_negative: f64,
    pub base_rate_positive: f64,
    pub n_positive: usize,
    pub n_negative: usize,
    pub mean_score_positive: f64,
    pub mean_score_negative: f64,
    pub ranksum_p: f64,
}

impl DetectionReport {
    pub fn base_rate_negative(&self) -> f64 {
        self.n_negative as f64 / (self.n_positive + self.n_negative) as f64
    }
}

/// Builds a report treating `first` (successes, or in-distribution examples)
/// as the positive class. The "negative-as-positive" AUPR is computed by
/// negating every score, which leaves the AUROC unchanged.
pub fn build_report(first: &[f64], second: &[f64]) -> Result<DetectionReport> {
    if first.len() < REPORT_MIN_PER_CLASS || second.len() < REPORT_MIN_PER_CLASS {
        return Err(Error::DegeneratePopulation(format!(
            "report needs at least {REPORT_MIN_PER_CLASS} examples per class, got {} and {}",
            first.len(),
            second.len()
        )));
    }
    let auroc = auroc(first, second)?;
    let aupr_positive = average_precision(first, second)?;
    let negated_second: Vec<f64> = second.iter().map(|s| -s).collect();
    let negated_first: Vec<f64> = first.iter().map(|s| -s).collect();
    let aupr_negative = average_precision(&negated_second, &negated_first)?;
    let baselines = random_baselines(first.len(), second.len())?;
    let ranksum = rank_sum_test(first, second)?;
    Ok(DetectionReport {
        auroc,
        aupr_positive,
        aupr_negative,
        base_rate_positive: baselines.aupr,
        n_positive: first.len(),
        n_negative: second.len(),
        mean_score_positive: mean(first),
        mean_score_negative: mean(second),
        ranksum_p: ranksum.p_value,
    })
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

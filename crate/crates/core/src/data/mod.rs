//! Labeled example collections, MNIST-format ingestion, synthetic
//! out-of-distribution sources and input corruptions.

mod distort;
mod holdout;
mod idx;
mod noise;

pub use distort::{distort, DistortionKind, DistortionRange, ImageShape};
pub use holdout::{class_holdout_split, HoldoutSplit};
pub use idx::{load_idx, read_idx_images, read_idx_labels, write_idx, IMAGES_MAGIC, LABELS_MAGIC};
pub use noise::{colored_noise, gen_gaussian_images, gen_uniform_images, mix_signals, NoiseColor};

use ndarray::{concatenate, Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Rows of `inputs` are examples. Unlabeled collections (synthetic noise,
/// external OOD data) have `labels == None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub inputs: Array2<f64>,
    pub labels: Option<Vec<usize>>,
    pub class_count: usize,
    /// Image geometry when rows are flattened images.
    pub shape: Option<ImageShape>,
    pub provenance: String,
}

impl Dataset {
    pub fn labeled(
        inputs: Array2<f64>,
        labels: Vec<usize>,
        class_count: usize,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if labels.len() != inputs.nrows() {
            return Err(Error::LengthMismatch {
                what: "labels vs inputs",
                left: labels.len(),
                right: inputs.nrows(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: class_count,
            });
        }
        check_finite(&inputs)?;
        Ok(Self {
            inputs,
            labels: Some(labels),
            class_count,
            shape: None,
            provenance: provenance.into(),
        })
    }

    pub fn unlabeled(inputs: Array2<f64>, provenance: impl Into<String>) -> Result<Self> {
        check_finite(&inputs)?;
        Ok(Self {
            inputs,
            labels: None,
            class_count: 0,
            shape: None,
            provenance: provenance.into(),
        })
    }

    pub fn with_shape(mut self, shape: ImageShape) -> Result<Self> {
        if shape.len() != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} image shape for {}-dimensional rows",
                shape.rows,
                shape.cols,
                self.dim()
            )));
        }
        self.shape = Some(shape);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    /// Labels, or an error naming the dataset when it is unlabeled.
    pub fn require_labels(&self) -> Result<&[usize]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument(format!("dataset {:?} has no labels", self.provenance)))
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select(Axis(0), indices),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            class_count: self.class_count,
            shape: self.shape,
            provenance: self.provenance.clone(),
        }
    }

    /// The first `n` examples (or all of them).
    pub fn head(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        let mut out = self.select(&idx);
        if n < self.len() {
            out.provenance = format!("{}[..{n}]", self.provenance);
        }
        out
    }

    /// A seeded random subset of `n` examples.
    pub fn sample(&self, n: usize, seed: u64) -> Self {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut rng::stream(seed, rng::streams::SUBSET));
        idx.truncate(n);
        self.select(&idx)
    }

    /// Stacks datasets with equal dimension. Labels survive only when every
    /// part is labeled.
    pub fn concat(parts: &[&Dataset], provenance: impl Into<String>) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("nothing to concatenate".into()))?;
        if let Some(bad) = parts.iter().find(|d| d.dim() != first.dim()) {
            return Err(Error::ShapeMismatch(format!(
                "cannot stack {}-dim rows with {}-dim rows",
                first.dim(),
                bad.dim()
            )));
        }
        let views: Vec<_> = parts.iter().map(|d| d.inputs.view()).collect();
        let inputs = concatenate(Axis(0), &views)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        let labels = parts
            .iter()
            .map(|d| d.labels.clone())
            .collect::<Option<Vec<_>>>()
            .map(|v| v.concat());
        let class_count = parts.iter().map(|d| d.class_count).max().unwrap_or(0);
        let shape = if parts.iter().all(|d| d.shape == first.shape) {
            first.shape
        } else {
            None
        };
        Ok(Self {
            class_count: if labels.is_some() { class_count } else { 0 },
            inputs,
            labels,
            shape,
            provenance: provenance.into(),
        })
    }

    /// True when every value lies in `[0, 1]`.
    pub fn is_unit_range(&self) -> bool {
        self.inputs.iter().all(|v| (0.0..=1.0).contains(v))
    }
}

fn check_finite(inputs: &Array2<f64>) -> Result<()> {
    if let Some((i, v)) = inputs.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "non-finite input value {v} at flat index {i}"
        )));
    }
    Ok(())
}

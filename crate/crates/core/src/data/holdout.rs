use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

/// In-distribution examples with contiguous labels, and the held-out classes
/// with their original labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutSplit {
    pub in_dist: Dataset,
    pub out_dist: Dataset,
    /// Original label to remapped in-distribution label.
    pub label_map: BTreeMap<usize, usize>,
    pub held_out: BTreeSet<usize>,
}

/// Removes every example of the `held_out` classes. The remaining classes
/// are relabeled `0..K'` in ascending order of their original label.
pub fn class_holdout_split(dataset: &Dataset, held_out: &BTreeSet<usize>) -> Result<HoldoutSplit> {
    let labels = dataset.require_labels()?;
    if held_out.is_empty() {
        return Err(Error::InvalidArgument("no classes held out".into()));
    }
    if let Some(&c) = held_out.iter().find(|&&c| c >= dataset.class_count) {
        return Err(Error::LabelOutOfRange {
            label: c,
            classes: dataset.class_count,
        });
    }
    let kept: Vec<usize> = (0..dataset.class_count)
        .filter(|c| !held_out.contains(c))
        .collect();
    if kept.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "holding out {held_out:?} leaves {} class(es); need at least 2",
            kept.len()
        )));
    }
    let label_map: BTreeMap<usize, usize> =
        kept.iter().enumerate().map(|(new, &old)| (old, new)).collect();

    let (inside, outside): (Vec<usize>, Vec<usize>) =
        (0..dataset.len()).partition(|&i| !held_out.contains(&labels[i]));

    let mut in_dist = dataset.select(&inside);
    in_dist.labels = in_dist
        .labels
        .map(|l| l.into_iter().map(|c| label_map[&c]).collect());
    in_dist.class_count = kept.len();
    in_dist.provenance = format!("{} without classes {held_out:?}", dataset.provenance);

    let mut out_dist = dataset.select(&outside);
    out_dist.provenance = format!("{} classes {held_out:?}", dataset.provenance);

    Ok(HoldoutSplit {
        in_dist,
        out_dist,
        label_map,
        held_out: held_out.clone(),
    })
}

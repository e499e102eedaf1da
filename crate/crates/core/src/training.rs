//! Assembling per-task training sets from labelled cohorts.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::domain::{is_positive_for_task, GroundTruthLabel, ModelTask, OctVolume};
use crate::ingest::BScanTruth;
use crate::model::TrainingItem;
use crate::preprocess::normalize;
use crate::rng::{derive_seed, seeded};

/// A volume with its per-B-scan labels and optional generator truth.
#[derive(Debug, Clone, Copy)]
pub struct LabelledVolume<'a> {
    pub volume: &'a OctVolume,
    /// One label per B-scan.
    pub labels: &'a [GroundTruthLabel],
    pub truth: Option<&'a [BScanTruth]>,
}

/// Training target for one B-scan, or `None` when it should be skipped.
///
/// Quality targets need generator truth (positive = gradable). Disease
/// targets come from the label; B-scans known to be ungradable are skipped.
pub fn bscan_target(task: ModelTask, label: GroundTruthLabel, truth: Option<&BScanTruth>) -> Option<bool> {
    match task.evaluation_task() {
        None => truth.map(|t| t.gradable),
        Some(eval_task) => match truth {
            Some(t) if !t.gradable => None,
            _ => Some(is_positive_for_task(label, eval_task)),
        },
    }
}

/// Normalized images with binary targets for `task`, in volume order.
pub fn assemble(volumes: &[LabelledVolume<'_>], task: ModelTask, size: (usize, usize)) -> Vec<TrainingItem> {
    let mut items = Vec::new();
    for lv in volumes {
        for (i, scan) in lv.volume.bscans().iter().enumerate() {
            let truth = lv.truth.map(|t| &t[i]);
            if let Some(positive) = bscan_target(task, lv.labels[i], truth) {
                items.push(TrainingItem::new(normalize(scan, size), positive));
            }
        }
    }
    items
}

/// Splits volume indices into (train, validation), stratified by `keys`,
/// holding out about `val_fraction` of each stratum (at least one volume
/// whenever a stratum has two or more). Both lists are sorted.
pub fn stratified_split<K: Ord + Copy>(keys: &[K], val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut strata: BTreeMap<K, Vec<usize>> = BTreeMap::new();
    for (i, k) in keys.iter().enumerate() {
        strata.entry(*k).or_default().push(i);
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (s, (_, mut idx)) in strata.into_iter().enumerate() {
        idx.shuffle(&mut seeded(derive_seed(seed, &[0x5B117, s as u64])));
        let mut n_val = (val_fraction * idx.len() as f64).round() as usize;
        if idx.len() >= 2 {
            n_val = n_val.clamp(1, idx.len() - 1);
        } else {
            n_val = 0;
        }
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

//! Decision layer: quality gating, per-B-scan scoring, volume aggregation,
//! General-AMD pooling and fusion into one classification.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::{ClassDecision, ModelTask, OctVolume, Pathology, ScoreVector, Thresholds};
use crate::error::{ModelError, PipelineError};
use crate::model::{load_weights, TrainedModel};
use crate::preprocess::{normalize, NormalizedBScan};

/// The five classifiers of one run. All share an input size.
#[derive(Debug, Clone)]
pub struct ModelBank {
    pub anomaly: TrainedModel,
    pub dry_amd: TrainedModel,
    pub wet_amd: TrainedModel,
    pub dme: TrainedModel,
    pub quality: TrainedModel,
}

impl ModelBank {
    pub fn new(
        anomaly: TrainedModel,
        dry_amd: TrainedModel,
        wet_amd: TrainedModel,
        dme: TrainedModel,
        quality: TrainedModel,
    ) -> Result<Self, PipelineError> {
        let bank = Self { anomaly, dry_amd, wet_amd, dme, quality };
        let size = bank.anomaly.input_size();
        for (expected, m) in bank.models() {
            if m.task() != expected {
                return Err(PipelineError::Bank(format!("{expected} slot holds a {} model", m.task())));
            }
            if m.input_size() != size {
                return Err(PipelineError::Bank(format!(
                    "{expected} model expects {:?}, anomaly model expects {size:?}",
                    m.input_size()
                )));
            }
        }
        Ok(bank)
    }

    /// Loads `<task>.poct` for every task from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, PipelineError> {
        let load = |task: ModelTask| -> Result<TrainedModel, PipelineError> {
            Ok(load_weights(&Self::model_path(dir, task))?)
        };
        Self::new(
            load(ModelTask::Anomaly)?,
            load(ModelTask::DryAmd)?,
            load(ModelTask::WetAmd)?,
            load(ModelTask::Dme)?,
            load(ModelTask::Quality)?,
        )
    }

    pub fn model_path(dir: &Path, task: ModelTask) -> std::path::PathBuf {
        dir.join(format!("{}.poct", task.short_name()))
    }

    pub fn models(&self) -> [(ModelTask, &TrainedModel); 5] {
        [
            (ModelTask::Anomaly, &self.anomaly),
            (ModelTask::DryAmd, &self.dry_amd),
            (ModelTask::WetAmd, &self.wet_amd),
            (ModelTask::Dme, &self.dme),
            (ModelTask::Quality, &self.quality),
        ]
    }

    pub fn input_size(&self) -> (usize, usize) {
        self.anomaly.input_size()
    }

    /// Disease scores for one canonical image.
    pub fn score(&self, img: &NormalizedBScan) -> Result<ScoreVector, ModelError> {
        Ok(ScoreVector {
            anomaly: self.anomaly.forward(img)?,
            dry_amd: self.dry_amd.forward(img)?,
            wet_amd: self.wet_amd.forward(img)?,
            dme: self.dme.forward(img)?,
        })
    }
}

/// Quality score and gradability; the lower bound is closed.
pub fn grade_quality(bank: &ModelBank, img: &NormalizedBScan, t_quality: f64) -> Result<(f64, bool), ModelError> {
    let score = bank.quality.forward(img)?;
    Ok((score, is_gradable(score, t_quality)))
}

pub fn is_gradable(score: f64, t_quality: f64) -> bool {
    score >= t_quality
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityRating {
    /// 100 x gradable / total.
    pub raw: f64,
    /// `raw` rounded to the nearest integer, halves away from zero.
    pub percent: u32,
}

/// Percentage of gradable B-scans.
pub fn dataset_quality_rating(gradable_flags: &[bool]) -> Result<QualityRating, PipelineError> {
    if gradable_flags.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }
    let good = gradable_flags.iter().filter(|&&g| g).count();
    let raw = 100.0 * good as f64 / gradable_flags.len() as f64;
    Ok(QualityRating { raw, percent: raw.round() as u32 })
}

/// B-scan to volume reduction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum AggregationPolicy {
    #[default]
    Max,
    Mean,
    TopKMean(usize),
}

impl fmt::Display for AggregationPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AggregationPolicy::Max => f.write_str("max"),
            AggregationPolicy::Mean => f.write_str("mean"),
            AggregationPolicy::TopKMean(k) => write!(f, "topk:{k}"),
        }
    }
}

impl FromStr for AggregationPolicy {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "max" => Ok(AggregationPolicy::Max),
            "mean" => Ok(AggregationPolicy::Mean),
            _ => {
                let k = s
                    .strip_prefix("topk:")
                    .and_then(|k| k.parse::<usize>().ok())
                    .filter(|&k| k >= 1)
                    .ok_or_else(|| PipelineError::Policy(format!("`{s}` (expected max, mean or topk:K with K >= 1)")))?;
                Ok(AggregationPolicy::TopKMean(k))
            }
        }
    }
}

/// Reduces per-B-scan scores to one value. Values are sorted first, so the
/// result is bit-identical under any permutation of the input.
pub fn aggregate(values: &[f64], policy: AggregationPolicy) -> Result<f64, PipelineError> {
    if values.is_empty() {
        return Err(PipelineError::Policy("no B-scan scores to aggregate".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mean_of = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    match policy {
        AggregationPolicy::Max => Ok(sorted[0]),
        AggregationPolicy::Mean => Ok(mean_of(&sorted)),
        AggregationPolicy::TopKMean(k) => {
            if k == 0 || k > sorted.len() {
                return Err(PipelineError::Policy(format!("topk:{k} needs 1..={} B-scans", sorted.len())));
            }
            Ok(mean_of(&sorted[..k]))
        }
    }
}

/// How dry and wet scores combine into the General AMD score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PoolingMode {
    #[default]
    Max,
    /// 1 - (1 - dry)(1 - wet)
    ProbabilisticOr,
}

pub fn pool_general_amd(v: &ScoreVector, mode: PoolingMode) -> f64 {
    match mode {
        PoolingMode::Max => v.dry_amd.max(v.wet_amd),
        PoolingMode::ProbabilisticOr => 1.0 - (1.0 - v.dry_amd) * (1.0 - v.wet_amd),
    }
}

/// Fuses independent scores into one decision.
///
/// The anomaly flag uses only the anomaly score. Among pathologies at or
/// above threshold, wet AMD always beats dry AMD; AMD against DME goes to the
/// higher score, with exact ties broken WET_AMD > DME > DRY_AMD.
pub fn classify(v: &ScoreVector, t: &Thresholds) -> ClassDecision {
    classify_with(v, t, PoolingMode::Max)
}

pub fn classify_with(v: &ScoreVector, t: &Thresholds, pooling: PoolingMode) -> ClassDecision {
    let dry = v.dry_amd >= t.dry_amd;
    let wet = v.wet_amd >= t.wet_amd;
    let dme = v.dme >= t.dme;

    // Strongest AMD candidate after wet-over-dry.
    let amd = if wet {
        Some((Pathology::WetAmd, v.wet_amd))
    } else if dry {
        Some((Pathology::DryAmd, v.dry_amd))
    } else {
        None
    };
    let pathology = match (amd, dme) {
        (None, false) => Pathology::None,
        (None, true) => Pathology::Dme,
        (Some((p, _)), false) => p,
        (Some((p, score)), true) => {
            if score > v.dme || (score == v.dme && p == Pathology::WetAmd) {
                p
            } else {
                Pathology::Dme
            }
        }
    };
    ClassDecision {
        anomaly_flag: v.anomaly >= t.anomaly,
        pathology,
        general_amd_score: pool_general_amd(v, pooling),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringOptions {
    pub policy: AggregationPolicy,
    /// Drop ungradable B-scans before aggregating, unless all are ungradable.
    pub gate_quality: bool,
    pub pooling: PoolingMode,
}

impl Default for ScoringOptions {
    fn default() -> Self {
        Self { policy: AggregationPolicy::Max, gate_quality: false, pooling: PoolingMode::Max }
    }
}

/// Volume-level scores as written to the prediction dump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeScores {
    pub anomaly: f64,
    pub dry_amd: f64,
    pub wet_amd: f64,
    pub dme: f64,
    pub general_amd: f64,
}

impl VolumeScores {
    pub fn score_vector(&self) -> ScoreVector {
        ScoreVector { anomaly: self.anomaly, dry_amd: self.dry_amd, wet_amd: self.wet_amd, dme: self.dme }
    }
}

/// One line of the prediction dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumePrediction {
    pub volume_id: String,
    pub dataset_id: String,
    pub scores: VolumeScores,
    pub decision: ClassDecision,
    pub gradable_fraction: f64,
    pub bscan_scores: Vec<ScoreVector>,
    pub bscan_quality: Vec<f64>,
    pub bscan_gradable: Vec<bool>,
}

impl VolumePrediction {
    pub fn volume_scores(&self) -> ScoreVector {
        self.scores.score_vector()
    }
}

/// Scores every B-scan with all five models and reduces to a volume
/// prediction. Quality only excludes B-scans when `opts.gate_quality` is set.
pub fn score_volume(
    bank: &ModelBank,
    volume: &OctVolume,
    dataset_id: &str,
    opts: &ScoringOptions,
    t: &Thresholds,
) -> Result<VolumePrediction, PipelineError> {
    let size = bank.input_size();
    let mut bscan_scores = Vec::with_capacity(volume.bscans().len());
    let mut bscan_quality = Vec::with_capacity(volume.bscans().len());
    let mut bscan_gradable = Vec::with_capacity(volume.bscans().len());
    for scan in volume.bscans() {
        let img = normalize(scan, size);
        let (q, gradable) = grade_quality(bank, &img, t.quality)?;
        bscan_scores.push(bank.score(&img)?);
        bscan_quality.push(q);
        bscan_gradable.push(gradable);
    }
    let mut used: Vec<&ScoreVector> = bscan_scores
        .iter()
        .zip(&bscan_gradable)
        .filter(|(_, &g)| !opts.gate_quality || g)
        .map(|(s, _)| s)
        .collect();
    if used.is_empty() {
        used = bscan_scores.iter().collect();
    }
    let reduce = |f: fn(&ScoreVector) -> f64| aggregate(&used.iter().map(|s| f(s)).collect::<Vec<_>>(), opts.policy);
    let v = ScoreVector {
        anomaly: reduce(|s| s.anomaly)?,
        dry_amd: reduce(|s| s.dry_amd)?,
        wet_amd: reduce(|s| s.wet_amd)?,
        dme: reduce(|s| s.dme)?,
    };
    let decision = classify_with(&v, t, opts.pooling);
    let gradable_fraction = bscan_gradable.iter().filter(|&&g| g).count() as f64 / bscan_gradable.len() as f64;
    Ok(VolumePrediction {
        volume_id: volume.volume_id().to_string(),
        dataset_id: dataset_id.to_string(),
        scores: VolumeScores {
            anomaly: v.anomaly,
            dry_amd: v.dry_amd,
            wet_amd: v.wet_amd,
            dme: v.dme,
            general_amd: decision.general_amd_score,
        },
        decision,
        gradable_fraction,
        bscan_scores,
        bscan_quality,
        bscan_gradable,
    })
}

/// JSON lines, one prediction per line, in input order.
pub fn write_predictions<W: Write>(mut out: W, preds: &[VolumePrediction]) -> std::io::Result<()> {
    for p in preds {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Parses a prediction dump; blank lines are skipped. Errors carry the
/// 1-based line number.
pub fn read_predictions<R: BufRead>(input: R) -> Result<Vec<VolumePrediction>, (usize, String)> {
    let mut preds = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| (i + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        preds.push(serde_json::from_str(&line).map_err(|e| (i + 1, e.to_string()))?);
    }
    Ok(preds)
}

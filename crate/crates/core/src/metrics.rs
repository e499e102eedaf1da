//! ROC analysis, operating-point statistics and dataset reports.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::domain::{is_positive_for_task, ClassDecision, GroundTruthLabel, Pathology, ScoreVector, TaskId, Thresholds};
use crate::error::MetricsError;
use crate::ingest::{DatasetManifest, LabelGranularity};
use crate::pipeline::{classify, dataset_quality_rating, pool_general_amd, PoolingMode, VolumePrediction};

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<(usize, usize), MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch { scores: scores.len(), labels: labels.len() });
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricsError::SingleClass { positives, negatives });
    }
    Ok((positives, negatives))
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Rank-sum form with mid-ranks, O(n log n).
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricsError> {
    let (n_pos, n_neg) = check_inputs(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share their mean
        let mid_rank = (i + j + 2) as f64 / 2.0;
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k]).count();
        pos_rank_sum += mid_rank * pos_in_group as f64;
        i = j + 1;
    }
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Predictions are positive for scores >= threshold. The first point
    /// uses +inf.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auroc: f64,
}

impl RocCurve {
    /// Trapezoidal area under the points.
    pub fn trapezoid_area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
            .sum()
    }
}

/// One point per distinct score (descending) plus the +inf sentinel at
/// (0, 0).
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<RocCurve, MetricsError> {
    let (n_pos, n_neg) = check_inputs(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0, threshold: f64::INFINITY }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint { fpr: fp as f64 / n_neg as f64, tpr: tp as f64 / n_pos as f64, threshold: s });
    }
    let mut curve = RocCurve { points, auroc: 0.0 };
    curve.auroc = curve.trapezoid_area();
    Ok(curve)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub accuracy: f64,
    /// Absent when there are no positives.
    pub sensitivity: Option<f64>,
    /// Absent when there are no negatives.
    pub specificity: Option<f64>,
}

/// Confusion statistics for already-binarized predictions.
pub fn confusion(predicted: &[bool], labels: &[bool]) -> Result<OperatingPoint, MetricsError> {
    if predicted.len() != labels.len() {
        return Err(MetricsError::LengthMismatch { scores: predicted.len(), labels: labels.len() });
    }
    if labels.is_empty() {
        return Err(MetricsError::Empty);
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &l) in predicted.iter().zip(labels) {
        match (p, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let ratio = |a: usize, b: usize| (a + b > 0).then(|| a as f64 / (a + b) as f64);
    Ok(OperatingPoint {
        tp,
        fp,
        tn,
        fn_,
        accuracy: (tp + tn) as f64 / labels.len() as f64,
        sensitivity: ratio(tp, fn_),
        specificity: ratio(tn, fp),
    })
}

/// Prediction is positive iff score >= t.
pub fn confusion_at_threshold(scores: &[f64], labels: &[bool], t: f64) -> Result<OperatingPoint, MetricsError> {
    let predicted: Vec<bool> = scores.iter().map(|&s| s >= t).collect();
    confusion(&predicted, labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: TaskId,
    pub n_positive: usize,
    pub n_negative: usize,
    pub auroc: f64,
    pub accuracy: f64,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub dataset_id: String,
    pub scanner_id: String,
    pub granularity: LabelGranularity,
    pub n_volumes: usize,
    pub n_bscans: usize,
    /// Thresholds the operating-point statistics were computed at.
    pub thresholds: Thresholds,
    pub quality_rating: u32,
    pub quality_rating_raw: f64,
    /// Only tasks with both classes present, in column order.
    pub tasks: Vec<TaskReport>,
}

impl EvaluationReport {
    pub fn task(&self, task: TaskId) -> Option<&TaskReport> {
        self.tasks.iter().find(|t| t.task == task)
    }
}

/// Raw score for a task. General AMD uses the pooled dry/wet score.
pub fn task_score(v: &ScoreVector, task: TaskId) -> f64 {
    match task {
        TaskId::Anomaly => v.anomaly,
        TaskId::GeneralAmd => pool_general_amd(v, PoolingMode::Max),
        TaskId::DryAmd => v.dry_amd,
        TaskId::WetAmd => v.wet_amd,
        TaskId::Dme => v.dme,
    }
}

/// Binary call for a task from a fused decision. Anomaly reads the anomaly
/// flag; the pathology tasks read the single fused pathology.
pub fn task_call(d: &ClassDecision, task: TaskId) -> bool {
    match task {
        TaskId::Anomaly => d.anomaly_flag,
        TaskId::GeneralAmd => matches!(d.pathology, Pathology::DryAmd | Pathology::WetAmd),
        TaskId::DryAmd => d.pathology == Pathology::DryAmd,
        TaskId::WetAmd => d.pathology == Pathology::WetAmd,
        TaskId::Dme => d.pathology == Pathology::Dme,
    }
}

/// Scores a dataset against its manifest. Volume-granularity datasets are
/// evaluated per volume, B-scan-granularity datasets per B-scan. Decisions
/// are recomputed from the stored scores at `t`.
pub fn evaluate_dataset(
    predictions: &[VolumePrediction],
    manifest: &DatasetManifest,
    t: &Thresholds,
) -> Result<EvaluationReport, MetricsError> {
    let by_id: HashMap<&str, &VolumePrediction> = predictions.iter().map(|p| (p.volume_id.as_str(), p)).collect();
    if let Some(extra) = predictions.iter().find(|p| manifest.entry(&p.volume_id).is_none()) {
        return Err(MetricsError::GranularityMismatch {
            volume_id: extra.volume_id.clone(),
            reason: "prediction has no manifest entry".into(),
        });
    }

    let mut units: Vec<(GroundTruthLabel, ScoreVector)> = Vec::new();
    let mut gradable = Vec::with_capacity(manifest.n_bscans());
    for entry in &manifest.entries {
        let pred = by_id
            .get(entry.volume_id.as_str())
            .ok_or_else(|| MetricsError::MissingPrediction(entry.volume_id.clone()))?;
        let n = entry.bscan_paths.len();
        if pred.bscan_scores.len() != n || pred.bscan_gradable.len() != n {
            return Err(MetricsError::GranularityMismatch {
                volume_id: entry.volume_id.clone(),
                reason: format!("{n} B-scans in manifest, {} scored", pred.bscan_scores.len()),
            });
        }
        gradable.extend_from_slice(&pred.bscan_gradable);
        match manifest.label_granularity {
            LabelGranularity::Volume => units.push((entry.volume_label(), pred.volume_scores())),
            LabelGranularity::Bscan => {
                units.extend(pred.bscan_scores.iter().enumerate().map(|(i, s)| (entry.bscan_label(i), *s)));
            }
        }
    }
    let rating = dataset_quality_rating(&gradable).map_err(|_| MetricsError::Empty)?;
    let decisions: Vec<ClassDecision> = units.iter().map(|(_, s)| classify(s, t)).collect();

    let mut tasks = Vec::new();
    for task in TaskId::ALL {
        let labels: Vec<bool> = units.iter().map(|(l, _)| is_positive_for_task(*l, task)).collect();
        let n_positive = labels.iter().filter(|&&l| l).count();
        let n_negative = labels.len() - n_positive;
        if n_positive == 0 || n_negative == 0 {
            continue;
        }
        let scores: Vec<f64> = units.iter().map(|(_, s)| task_score(s, task)).collect();
        let calls: Vec<bool> = decisions.iter().map(|d| task_call(d, task)).collect();
        let op = confusion(&calls, &labels)?;
        tasks.push(TaskReport {
            task,
            n_positive,
            n_negative,
            auroc: auroc(&scores, &labels)?,
            accuracy: op.accuracy,
            sensitivity: op.sensitivity,
            specificity: op.specificity,
        });
    }
    Ok(EvaluationReport {
        dataset_id: manifest.dataset_id.clone(),
        scanner_id: manifest.scanner_id.clone(),
        granularity: manifest.label_granularity,
        n_volumes: manifest.entries.len(),
        n_bscans: manifest.n_bscans(),
        thresholds: *t,
        quality_rating: rating.percent,
        quality_rating_raw: rating.raw,
        tasks,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown report format `{other}` (expected md, csv or json)")),
        }
    }
}

pub const BSCAN_FOOTNOTE: &str = "* AUROC evaluated at B-scan level, not whole volume level";

/// Two decimals, or three from 0.995 up.
pub fn format_auroc(a: f64) -> String {
    if a >= 0.995 {
        format!("{a:.3}")
    } else {
        format!("{a:.2}")
    }
}

fn format_rate(r: Option<f64>) -> String {
    r.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"))
}

/// Thousands separators: 12800 -> "12,800".
pub fn format_count(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

/// A single task cell, e.g. `ROC: 0.99* Acc: 0.96 Se: 0.94 Sp: 0.98`.
pub fn format_task_cell(t: &TaskReport, bscan_level: bool) -> String {
    format!(
        "ROC: {}{} Acc: {:.2} Se: {} Sp: {}",
        format_auroc(t.auroc),
        if bscan_level { "*" } else { "" },
        t.accuracy,
        format_rate(t.sensitivity),
        format_rate(t.specificity)
    )
}

fn format_thresholds(t: &Thresholds) -> String {
    format!(
        "anomaly {:.2}, dry AMD {:.2}, wet AMD {:.2}, DME {:.2}, quality {:.2}",
        t.anomaly, t.dry_amd, t.wet_amd, t.dme, t.quality
    )
}

fn thresholds_equal(a: &Thresholds, b: &Thresholds) -> bool {
    [
        (a.anomaly, b.anomaly),
        (a.dry_amd, b.dry_amd),
        (a.wet_amd, b.wet_amd),
        (a.dme, b.dme),
        (a.quality, b.quality),
    ]
    .iter()
    .all(|(x, y)| x.total_cmp(y) == Ordering::Equal)
}

pub fn render_report(reports: &[EvaluationReport], format: ReportFormat) -> String {
    match format {
        ReportFormat::Markdown => render_markdown(reports),
        ReportFormat::Csv => render_csv(reports),
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(reports).expect("reports serialize");
            s.push('\n');
            s
        }
    }
}

fn render_markdown(reports: &[EvaluationReport]) -> String {
    let mut out = String::new();
    out.push_str("| Dataset | Number of OCT volumes (slices) |");
    for task in TaskId::ALL {
        let _ = write!(out, " {} |", task.column_title());
    }
    out.push_str(" Quality Rating (%) |\n|");
    out.push_str(&"---|".repeat(TaskId::ALL.len() + 3));
    out.push('\n');
    for r in reports {
        let bscan_level = r.granularity == LabelGranularity::Bscan;
        let _ = write!(
            out,
            "| {} ({}) | {} ({}) |",
            r.dataset_id,
            r.scanner_id,
            format_count(r.n_volumes),
            format_count(r.n_bscans)
        );
        for task in TaskId::ALL {
            match r.task(task) {
                Some(t) => {
                    let _ = write!(out, " {} |", format_task_cell(t, bscan_level));
                }
                None => out.push_str("  |"),
            }
        }
        let _ = writeln!(out, " {} |", r.quality_rating);
    }
    if reports.iter().any(|r| r.granularity == LabelGranularity::Bscan) {
        out.push('\n');
        out.push_str(BSCAN_FOOTNOTE);
        out.push('\n');
    }
    if let Some(first) = reports.first() {
        out.push('\n');
        if reports.iter().all(|r| thresholds_equal(&r.thresholds, &first.thresholds)) {
            let _ = writeln!(out, "Operating thresholds (all datasets): {}", format_thresholds(&first.thresholds));
        } else {
            for r in reports {
                let _ = writeln!(out, "Operating thresholds for {}: {}", r.dataset_id, format_thresholds(&r.thresholds));
            }
        }
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn render_csv(reports: &[EvaluationReport]) -> String {
    let mut out = String::from(
        "dataset_id,scanner_id,granularity,n_volumes,n_bscans,task,auroc,accuracy,sensitivity,specificity,\
         quality_rating,t_anomaly,t_dry_amd,t_wet_amd,t_dme,t_quality\n",
    );
    for r in reports {
        let prefix = format!(
            "{},{},{},{},{}",
            csv_field(&r.dataset_id),
            csv_field(&r.scanner_id),
            r.granularity.as_str(),
            r.n_volumes,
            r.n_bscans
        );
        let t = &r.thresholds;
        let suffix = format!(
            "{},{:.2},{:.2},{:.2},{:.2},{:.2}",
            r.quality_rating, t.anomaly, t.dry_amd, t.wet_amd, t.dme, t.quality
        );
        if r.tasks.is_empty() {
            let _ = writeln!(out, "{prefix},,,,,,{suffix}");
        }
        for task in &r.tasks {
            let _ = writeln!(
                out,
                "{prefix},{},{},{:.2},{},{},{suffix}",
                task.task,
                format_auroc(task.auroc),
                task.accuracy,
                format_rate(task.sensitivity),
                format_rate(task.specificity),
            );
        }
    }
    out
}

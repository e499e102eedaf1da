//! Shared data types and the label taxonomy.
//!
//! Everything here is immutable once constructed and is `Send + Sync`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::DomainError;

/// Smallest accepted B-scan edge, in pixels.
pub const MIN_BSCAN_EDGE: usize = 8;

/// One 8-bit grayscale OCT slice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BScan {
    height: usize,
    width: usize,
    index: usize,
    pixels: Vec<u8>,
}

impl BScan {
    pub fn new(height: usize, width: usize, index: usize, pixels: Vec<u8>) -> Result<Self, DomainError> {
        if height < MIN_BSCAN_EDGE || width < MIN_BSCAN_EDGE {
            return Err(DomainError::BScanTooSmall { height, width });
        }
        if pixels.len() != height * width {
            return Err(DomainError::PixelCount {
                expected: height * width,
                actual: pixels.len(),
            });
        }
        Ok(Self { height, width, index, pixels })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Position within the owning volume.
    pub fn index(&self) -> usize {
        self.index
    }

    /// Row-major pixel buffer.
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }
}

/// Volume-level ground truth. Exactly one value per eye.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GroundTruthLabel {
    Normal,
    DryAmd,
    WetAmd,
    Dme,
    /// Abnormal, but not one of the three named pathologies.
    AnomalousOther,
}

impl GroundTruthLabel {
    pub const ALL: [GroundTruthLabel; 5] = [
        GroundTruthLabel::Normal,
        GroundTruthLabel::DryAmd,
        GroundTruthLabel::WetAmd,
        GroundTruthLabel::Dme,
        GroundTruthLabel::AnomalousOther,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GroundTruthLabel::Normal => "NORMAL",
            GroundTruthLabel::DryAmd => "DRY_AMD",
            GroundTruthLabel::WetAmd => "WET_AMD",
            GroundTruthLabel::Dme => "DME",
            GroundTruthLabel::AnomalousOther => "ANOMALOUS_OTHER",
        }
    }
}

impl fmt::Display for GroundTruthLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The binary tasks evaluated against ground truth. `GeneralAmd` is derived
/// from the dry and wet classifiers; it has no model of its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskId {
    Anomaly,
    GeneralAmd,
    DryAmd,
    WetAmd,
    Dme,
}

impl TaskId {
    /// Report column order.
    pub const ALL: [TaskId; 5] = [
        TaskId::Anomaly,
        TaskId::GeneralAmd,
        TaskId::DryAmd,
        TaskId::WetAmd,
        TaskId::Dme,
    ];

    pub fn column_title(self) -> &'static str {
        match self {
            TaskId::Anomaly => "General Anomaly",
            TaskId::GeneralAmd => "General AMD",
            TaskId::DryAmd => "Dry AMD",
            TaskId::WetAmd => "Wet AMD",
            TaskId::Dme => "DME",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskId::Anomaly => "anomaly",
            TaskId::GeneralAmd => "general_amd",
            TaskId::DryAmd => "dry_amd",
            TaskId::WetAmd => "wet_amd",
            TaskId::Dme => "dme",
        }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Binarize a five-way label for one binary task.
pub fn is_positive_for_task(label: GroundTruthLabel, task: TaskId) -> bool {
    use GroundTruthLabel as L;
    match task {
        TaskId::Anomaly => label != L::Normal,
        TaskId::DryAmd => label == L::DryAmd,
        TaskId::WetAmd => label == L::WetAmd,
        TaskId::Dme => label == L::Dme,
        TaskId::GeneralAmd => matches!(label, L::DryAmd | L::WetAmd),
    }
}

/// What a trained network was trained to detect. One model per variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelTask {
    Anomaly,
    DryAmd,
    WetAmd,
    Dme,
    Quality,
}

impl ModelTask {
    pub const ALL: [ModelTask; 5] = [
        ModelTask::Anomaly,
        ModelTask::DryAmd,
        ModelTask::WetAmd,
        ModelTask::Dme,
        ModelTask::Quality,
    ];

    /// Stable byte written into weight files.
    pub fn code(self) -> u8 {
        match self {
            ModelTask::Anomaly => 0,
            ModelTask::DryAmd => 1,
            ModelTask::WetAmd => 2,
            ModelTask::Dme => 3,
            ModelTask::Quality => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.code() == code)
    }

    /// Short name used on the command line and for model file stems.
    pub fn short_name(self) -> &'static str {
        match self {
            ModelTask::Anomaly => "anomaly",
            ModelTask::DryAmd => "dry",
            ModelTask::WetAmd => "wet",
            ModelTask::Dme => "dme",
            ModelTask::Quality => "quality",
        }
    }

    /// The evaluation task a disease model feeds; `None` for quality.
    pub fn evaluation_task(self) -> Option<TaskId> {
        match self {
            ModelTask::Anomaly => Some(TaskId::Anomaly),
            ModelTask::DryAmd => Some(TaskId::DryAmd),
            ModelTask::WetAmd => Some(TaskId::WetAmd),
            ModelTask::Dme => Some(TaskId::Dme),
            ModelTask::Quality => None,
        }
    }
}

impl fmt::Display for ModelTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for ModelTask {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|t| t.short_name() == s)
            .ok_or_else(|| DomainError::UnknownTask(s.to_string()))
    }
}

/// An eye: ordered B-scans of identical size plus its label.
#[derive(Debug, Clone, PartialEq)]
pub struct OctVolume {
    volume_id: String,
    bscans: Vec<BScan>,
    label: GroundTruthLabel,
    site_id: String,
    scanner_id: String,
}

impl OctVolume {
    pub fn new(
        volume_id: impl Into<String>,
        bscans: Vec<BScan>,
        label: GroundTruthLabel,
        site_id: impl Into<String>,
        scanner_id: impl Into<String>,
    ) -> Result<Self, DomainError> {
        let volume_id = volume_id.into();
        let Some(first) = bscans.first() else {
            return Err(DomainError::EmptyVolume(volume_id));
        };
        let (h, w) = (first.height(), first.width());
        for (i, scan) in bscans.iter().enumerate() {
            if scan.index() != i {
                return Err(DomainError::IndexGap {
                    volume_id,
                    expected: i,
                    actual: scan.index(),
                });
            }
            if scan.height() != h || scan.width() != w {
                return Err(DomainError::HeterogeneousSize {
                    volume_id,
                    expected: (h, w),
                    actual: (scan.height(), scan.width()),
                });
            }
        }
        Ok(Self {
            volume_id,
            bscans,
            label,
            site_id: site_id.into(),
            scanner_id: scanner_id.into(),
        })
    }

    pub fn volume_id(&self) -> &str {
        &self.volume_id
    }

    pub fn bscans(&self) -> &[BScan] {
        &self.bscans
    }

    pub fn label(&self) -> GroundTruthLabel {
        self.label
    }

    pub fn site_id(&self) -> &str {
        &self.site_id
    }

    pub fn scanner_id(&self) -> &str {
        &self.scanner_id
    }

    /// Returns a copy with B-scans reordered by `order` and re-indexed.
    /// Used to check that volume scoring ignores slice order.
    pub fn permuted(&self, order: &[usize]) -> Result<Self, DomainError> {
        let bscans = order
            .iter()
            .enumerate()
            .map(|(new_idx, &old)| {
                let s = &self.bscans[old];
                BScan::new(s.height, s.width, new_idx, s.pixels.clone())
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(
            self.volume_id.clone(),
            bscans,
            self.label,
            self.site_id.clone(),
            self.scanner_id.clone(),
        )
    }
}

/// Independent per-task probabilities. No sum-to-one constraint.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreVector {
    pub anomaly: f64,
    pub dry_amd: f64,
    pub wet_amd: f64,
    pub dme: f64,
}

impl ScoreVector {
    pub fn new(anomaly: f64, dry_amd: f64, wet_amd: f64, dme: f64) -> Result<Self, DomainError> {
        let v = Self { anomaly, dry_amd, wet_amd, dme };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        for (name, p) in [
            ("anomaly", self.anomaly),
            ("dry_amd", self.dry_amd),
            ("wet_amd", self.wet_amd),
            ("dme", self.dme),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(DomainError::ProbabilityRange { field: name, value: p });
            }
        }
        Ok(())
    }

    pub fn get(&self, task: ModelTask) -> Option<f64> {
        match task {
            ModelTask::Anomaly => Some(self.anomaly),
            ModelTask::DryAmd => Some(self.dry_amd),
            ModelTask::WetAmd => Some(self.wet_amd),
            ModelTask::Dme => Some(self.dme),
            ModelTask::Quality => None,
        }
    }
}

/// One of the three named pathologies, or none.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Pathology {
    None,
    DryAmd,
    WetAmd,
    Dme,
}

/// Final fused classification of one image or volume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassDecision {
    pub anomaly_flag: bool,
    pub pathology: Pathology,
    pub general_amd_score: f64,
}

/// Operating thresholds. One instance serves a whole evaluation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub anomaly: f64,
    pub dry_amd: f64,
    pub wet_amd: f64,
    pub dme: f64,
    pub quality: f64,
}

impl Thresholds {
    pub fn new(anomaly: f64, dry_amd: f64, wet_amd: f64, dme: f64, quality: f64) -> Result<Self, DomainError> {
        let t = Self { anomaly, dry_amd, wet_amd, dme, quality };
        t.validate()?;
        Ok(t)
    }

    /// The same cutoff for every task.
    pub fn uniform(t: f64) -> Result<Self, DomainError> {
        Self::new(t, t, t, t, t)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        for (name, t) in [
            ("anomaly", self.anomaly),
            ("dry_amd", self.dry_amd),
            ("wet_amd", self.wet_amd),
            ("dme", self.dme),
            ("quality", self.quality),
        ] {
            if !(t > 0.0 && t < 1.0) {
                return Err(DomainError::ThresholdRange { field: name, value: t });
            }
        }
        Ok(())
    }
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { anomaly: 0.5, dry_amd: 0.5, wet_amd: 0.5, dme: 0.5, quality: 0.5 }
    }
}

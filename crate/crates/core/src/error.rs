use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DomainError {
    #[error("B-scan must be at least 8x8, got {height}x{width}")]
    BScanTooSmall { height: usize, width: usize },
    #[error("pixel buffer holds {actual} values, expected {expected}")]
    PixelCount { expected: usize, actual: usize },
    #[error("volume `{0}` has no B-scans")]
    EmptyVolume(String),
    #[error("volume `{volume_id}`: B-scan index {actual} found where {expected} was expected")]
    IndexGap { volume_id: String, expected: usize, actual: usize },
    #[error("volume `{volume_id}`: B-scan size {actual:?} differs from {expected:?}")]
    HeterogeneousSize {
        volume_id: String,
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("{field} = {value} is not a probability")]
    ProbabilityRange { field: &'static str, value: f64 },
    #[error("threshold {field} = {value} must lie strictly between 0 and 1")]
    ThresholdRange { field: &'static str, value: f64 },
    #[error("unknown task `{0}`")]
    UnknownTask(String),
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("{}: schema violation at `{field}`: {reason}", path.display())]
    SchemaViolation { path: PathBuf, field: String, reason: String },
    #[error("{}: listed B-scan file is absent: {}", manifest.display(), missing.display())]
    DanglingPath { manifest: PathBuf, missing: PathBuf },
    #[error("{}: cannot decode image: {reason}", path.display())]
    DecodeError { path: PathBuf, reason: String },
    #[error("volume `{volume_id}`: B-scan {} is {actual:?}, expected {expected:?}", path.display())]
    HeterogeneousSize {
        volume_id: String,
        path: PathBuf,
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("invalid phantom configuration: {0}")]
    InvalidConfig(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    ConfigError(String),
    #[error("input is {actual:?}, model expects {expected:?}")]
    ShapeMismatch { expected: (usize, usize), actual: (usize, usize) },
    #[error("training split `{0}` does not contain both classes")]
    DegenerateSplit(&'static str),
    #[error("loss became non-finite at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("invalid training configuration: {0}")]
    TrainConfig(String),
    #[error("corrupt weight file: {0}")]
    CorruptFile(String),
    #[error("unsupported weight file version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("model bank: {0}")]
    Bank(String),
    #[error("invalid aggregation policy: {0}")]
    Policy(String),
    #[error("cannot rate quality of an empty dataset")]
    EmptyDataset,
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("AUROC needs at least one positive and one negative (got {positives} / {negatives})")]
    SingleClass { positives: usize, negatives: usize },
    #[error("score and label lists differ in length ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("no prediction for volume `{0}`")]
    MissingPrediction(String),
    #[error("volume `{volume_id}`: {reason}")]
    GranularityMismatch { volume_id: String, reason: String },
    #[error("nothing to evaluate")]
    Empty,
}

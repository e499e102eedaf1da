//! Macular OCT triage pipeline.
//!
//! Small VGG-style binary classifiers score each B-scan for general
//! anomaly, dry AMD, wet AMD and DME, plus an image-quality model. Scores are
//! aggregated per volume, fused into one decision and evaluated with
//! rank-based ROC statistics. Synthetic phantom cohorts stand in for
//! clinical data so every stage can be exercised end to end.

pub mod domain;
pub mod error;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod preprocess;
pub mod rng;
pub mod training;

pub use domain::{
    is_positive_for_task, BScan, ClassDecision, GroundTruthLabel, ModelTask, OctVolume, Pathology, ScoreVector,
    TaskId, Thresholds,
};
pub use error::{DomainError, IngestError, MetricsError, ModelError, PipelineError};

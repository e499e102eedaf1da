//! Dataset manifest: one JSON document describing a cohort.
//!
//! ```json
//! {
//!   "dataset_id": "B1",
//!   "scanner_id": "heidelberg-spectralis",
//!   "label_granularity": "VOLUME",
//!   "entries": [
//!     {"volume_id": "v1", "site_id": "s1", "label": "DME", "bscan_paths": ["v1/000.png"]}
//!   ]
//! }
//! ```
//!
//! With `"label_granularity": "BSCAN"` every entry carries `labels` (one per
//! path) instead of `label`. Any other key is rejected.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::domain::GroundTruthLabel;
use crate::error::IngestError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LabelGranularity {
    Volume,
    Bscan,
}

impl LabelGranularity {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelGranularity::Volume => "VOLUME",
            LabelGranularity::Bscan => "BSCAN",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EntryLabel {
    Volume(GroundTruthLabel),
    PerBScan(Vec<GroundTruthLabel>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub volume_id: String,
    pub site_id: String,
    pub label: EntryLabel,
    /// Relative to the manifest's directory.
    pub bscan_paths: Vec<PathBuf>,
}

impl ManifestEntry {
    /// Ground truth for B-scan `i`.
    pub fn bscan_label(&self, i: usize) -> GroundTruthLabel {
        match &self.label {
            EntryLabel::Volume(l) => *l,
            EntryLabel::PerBScan(ls) => ls[i],
        }
    }

    /// Volume-level label. For per-B-scan ground truth this is the first
    /// non-normal label, or NORMAL when every B-scan is normal.
    pub fn volume_label(&self) -> GroundTruthLabel {
        match &self.label {
            EntryLabel::Volume(l) => *l,
            EntryLabel::PerBScan(ls) => ls
                .iter()
                .copied()
                .find(|l| *l != GroundTruthLabel::Normal)
                .unwrap_or(GroundTruthLabel::Normal),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub dataset_id: String,
    pub scanner_id: String,
    pub label_granularity: LabelGranularity,
    pub entries: Vec<ManifestEntry>,
    /// Directory the B-scan paths are resolved against.
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    /// Distinct sites in first-appearance order.
    pub fn site_ids(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.entries
            .iter()
            .filter(|e| seen.insert(e.site_id.as_str()))
            .map(|e| e.site_id.clone())
            .collect()
    }

    pub fn n_bscans(&self) -> usize {
        self.entries.iter().map(|e| e.bscan_paths.len()).sum()
    }

    pub fn entry(&self, volume_id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.volume_id == volume_id)
    }

    pub fn to_json(&self) -> Value {
        let entries: Vec<Value> = self
            .entries
            .iter()
            .map(|e| {
                let mut m = Map::new();
                m.insert("volume_id".into(), Value::from(e.volume_id.clone()));
                m.insert("site_id".into(), Value::from(e.site_id.clone()));
                match &e.label {
                    EntryLabel::Volume(l) => {
                        m.insert("label".into(), Value::from(l.as_str()));
                    }
                    EntryLabel::PerBScan(ls) => {
                        m.insert("labels".into(), ls.iter().map(|l| Value::from(l.as_str())).collect());
                    }
                }
                m.insert(
                    "bscan_paths".into(),
                    e.bscan_paths.iter().map(|p| Value::from(path_to_manifest_string(p))).collect(),
                );
                Value::Object(m)
            })
            .collect();
        let mut top = Map::new();
        top.insert("dataset_id".into(), Value::from(self.dataset_id.clone()));
        top.insert("scanner_id".into(), Value::from(self.scanner_id.clone()));
        top.insert("label_granularity".into(), Value::from(self.label_granularity.as_str()));
        top.insert("entries".into(), Value::Array(entries));
        Value::Object(top)
    }
}

fn path_to_manifest_string(p: &Path) -> String {
    p.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// Writes the manifest as pretty-printed JSON.
pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<(), IngestError> {
    let mut text = serde_json::to_string_pretty(&manifest.to_json()).expect("manifest serializes");
    text.push('\n');
    fs::write(path, text).map_err(|source| IngestError::Io { path: path.to_path_buf(), source })
}

/// Reads and validates a manifest, including that every listed B-scan file
/// exists.
pub fn parse_manifest(path: &Path) -> Result<DatasetManifest, IngestError> {
    if !path.is_file() {
        return Err(IngestError::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|source| IngestError::Io { path: path.to_path_buf(), source })?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let manifest = manifest_from_str(&text, path, base_dir)?;
    for entry in &manifest.entries {
        for rel in &entry.bscan_paths {
            let full = manifest.base_dir.join(rel);
            if !full.is_file() {
                return Err(IngestError::DanglingPath { manifest: path.to_path_buf(), missing: full });
            }
        }
    }
    Ok(manifest)
}

/// Schema validation without touching the filesystem. `origin` is only used
/// in error messages.
pub fn manifest_from_str(text: &str, origin: &Path, base_dir: PathBuf) -> Result<DatasetManifest, IngestError> {
    let violation = |field: &str, reason: &str| IngestError::SchemaViolation {
        path: origin.to_path_buf(),
        field: field.to_string(),
        reason: reason.to_string(),
    };
    let root: Value = serde_json::from_str(text).map_err(|e| violation("<document>", &e.to_string()))?;
    let top = root.as_object().ok_or_else(|| violation("<document>", "expected a JSON object"))?;
    check_keys(top, &["dataset_id", "scanner_id", "label_granularity", "entries"], &[], "", &violation)?;

    let dataset_id = string_field(top, "dataset_id", "dataset_id", &violation)?;
    if dataset_id.is_empty() {
        return Err(violation("dataset_id", "must be non-empty"));
    }
    let scanner_id = string_field(top, "scanner_id", "scanner_id", &violation)?;
    let label_granularity = match string_field(top, "label_granularity", "label_granularity", &violation)?.as_str() {
        "VOLUME" => LabelGranularity::Volume,
        "BSCAN" => LabelGranularity::Bscan,
        other => return Err(violation("label_granularity", &format!("expected VOLUME or BSCAN, got `{other}`"))),
    };
    let raw_entries = top["entries"]
        .as_array()
        .ok_or_else(|| violation("entries", "expected an array"))?;
    if raw_entries.is_empty() {
        return Err(violation("entries", "at least one entry is required"));
    }

    let mut ids = BTreeSet::new();
    let mut entries = Vec::with_capacity(raw_entries.len());
    for (i, raw) in raw_entries.iter().enumerate() {
        let at = |f: &str| format!("entries[{i}].{f}");
        let obj = raw
            .as_object()
            .ok_or_else(|| violation(&format!("entries[{i}]"), "expected an object"))?;
        let label_key = match label_granularity {
            LabelGranularity::Volume => "label",
            LabelGranularity::Bscan => "labels",
        };
        check_keys(obj, &["volume_id", "site_id", "bscan_paths", label_key], &[], &format!("entries[{i}]."), &violation)?;

        let volume_id = string_field(obj, "volume_id", &at("volume_id"), &violation)?;
        if volume_id.is_empty() {
            return Err(violation(&at("volume_id"), "must be non-empty"));
        }
        if !ids.insert(volume_id.clone()) {
            return Err(violation(&at("volume_id"), &format!("duplicate volume id `{volume_id}`")));
        }
        let site_id = string_field(obj, "site_id", &at("site_id"), &violation)?;
        let paths = obj["bscan_paths"]
            .as_array()
            .ok_or_else(|| violation(&at("bscan_paths"), "expected an array"))?;
        if paths.is_empty() {
            return Err(violation(&at("bscan_paths"), "at least one path is required"));
        }
        let mut bscan_paths = Vec::with_capacity(paths.len());
        for (j, p) in paths.iter().enumerate() {
            let s = p
                .as_str()
                .ok_or_else(|| violation(&format!("entries[{i}].bscan_paths[{j}]"), "expected a string"))?;
            let pb = PathBuf::from(s);
            if s.is_empty() || pb.is_absolute() {
                return Err(violation(&format!("entries[{i}].bscan_paths[{j}]"), "must be a non-empty relative path"));
            }
            bscan_paths.push(pb);
        }
        let label = match label_granularity {
            LabelGranularity::Volume => EntryLabel::Volume(parse_label(&obj["label"], &at("label"), &violation)?),
            LabelGranularity::Bscan => {
                let ls = obj["labels"]
                    .as_array()
                    .ok_or_else(|| violation(&at("labels"), "expected an array"))?;
                if ls.len() != bscan_paths.len() {
                    return Err(violation(
                        &at("labels"),
                        &format!("{} labels for {} B-scan paths", ls.len(), bscan_paths.len()),
                    ));
                }
                let parsed = ls
                    .iter()
                    .enumerate()
                    .map(|(j, l)| parse_label(l, &format!("entries[{i}].labels[{j}]"), &violation))
                    .collect::<Result<Vec<_>, _>>()?;
                EntryLabel::PerBScan(parsed)
            }
        };
        entries.push(ManifestEntry { volume_id, site_id, label, bscan_paths });
    }
    Ok(DatasetManifest { dataset_id, scanner_id, label_granularity, entries, base_dir })
}

fn check_keys(
    obj: &Map<String, Value>,
    required: &[&str],
    optional: &[&str],
    prefix: &str,
    violation: &impl Fn(&str, &str) -> IngestError,
) -> Result<(), IngestError> {
    for key in obj.keys() {
        if !required.contains(&key.as_str()) && !optional.contains(&key.as_str()) {
            return Err(violation(&format!("{prefix}{key}"), "unknown key"));
        }
    }
    for key in required {
        if !obj.contains_key(*key) {
            return Err(violation(&format!("{prefix}{key}"), "missing required key"));
        }
    }
    Ok(())
}

fn string_field(
    obj: &Map<String, Value>,
    key: &str,
    field: &str,
    violation: &impl Fn(&str, &str) -> IngestError,
) -> Result<String, IngestError> {
    obj[key]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| violation(field, "expected a string"))
}

fn parse_label(
    v: &Value,
    field: &str,
    violation: &impl Fn(&str, &str) -> IngestError,
) -> Result<GroundTruthLabel, IngestError> {
    let s = v.as_str().ok_or_else(|| violation(field, "expected a label string"))?;
    GroundTruthLabel::ALL
        .into_iter()
        .find(|l| l.as_str() == s)
        .ok_or_else(|| violation(field, &format!("unknown label `{s}`")))
}

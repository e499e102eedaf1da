//! Cohort loading and synthetic cohort generation.

mod manifest;
mod phantom;

pub use manifest::{
    manifest_from_str, parse_manifest, write_manifest, DatasetManifest, EntryLabel, LabelGranularity, ManifestEntry,
};
pub use phantom::{
    bscan_path, generate_phantom_dataset, read_truth, synthesize_cohort, truth_for, BScanTruth, PhantomConfig,
    PhantomVolume, SiteProfile, TruthSidecar, MANIFEST_FILE, PHANTOM_CLASSES, TRUTH_FILE,
};

use std::path::Path;

use rayon::prelude::*;

use crate::domain::{BScan, OctVolume};
use crate::error::IngestError;

/// Decodes every B-scan of `entry` (paths relative to `base`) as 8-bit
/// grayscale. All B-scans of one volume must share a size.
pub fn load_volume(entry: &ManifestEntry, base: &Path, scanner_id: &str) -> Result<OctVolume, IngestError> {
    let mut bscans: Vec<BScan> = Vec::with_capacity(entry.bscan_paths.len());
    for (i, rel) in entry.bscan_paths.iter().enumerate() {
        let path = base.join(rel);
        if !path.is_file() {
            return Err(IngestError::MissingFile(path));
        }
        let img = image::open(&path)
            .map_err(|e| IngestError::DecodeError { path: path.clone(), reason: e.to_string() })?
            .into_luma8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        if let Some(first) = bscans.first() {
            if (first.height(), first.width()) != (h, w) {
                return Err(IngestError::HeterogeneousSize {
                    volume_id: entry.volume_id.clone(),
                    path,
                    expected: (first.height(), first.width()),
                    actual: (h, w),
                });
            }
        }
        let scan = BScan::new(h, w, i, img.into_raw())
            .map_err(|e| IngestError::DecodeError { path: path.clone(), reason: e.to_string() })?;
        bscans.push(scan);
    }
    Ok(OctVolume::new(
        entry.volume_id.clone(),
        bscans,
        entry.volume_label(),
        entry.site_id.clone(),
        scanner_id,
    )?)
}

/// Loads every volume of a manifest, in manifest order.
pub fn load_dataset(manifest: &DatasetManifest) -> Result<Vec<OctVolume>, IngestError> {
    manifest
        .entries
        .par_iter()
        .map(|e| load_volume(e, &manifest.base_dir, &manifest.scanner_id))
        .collect()
}

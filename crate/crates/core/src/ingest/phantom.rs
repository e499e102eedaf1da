//! Synthetic OCT-like cohorts with known ground truth.
//!
//! Each B-scan is a layered retina (nerve fibre layer, inner plexiform,
//! outer nuclear, photoreceptor line, RPE) above a fading choroid, with a
//! foveal pit near the central slice. Pathology is painted as parametric
//! primitives:
//!
//! - dry AMD: Gaussian drusen lifting the RPE band;
//! - wet AMD: drusen plus dark sub-retinal fluid lobes;
//! - DME: retinal thickening, dark intraretinal cysts and bright foci.
//!
//! A site profile sets noise, contrast and effective resolution. A fixed
//! fraction of B-scans is degraded (contrast crush plus heavy noise) and
//! flagged ungradable in the sidecar.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{ExtendedColorType, ImageFormat};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::manifest::{write_manifest, DatasetManifest, EntryLabel, LabelGranularity, ManifestEntry};
use crate::domain::{BScan, GroundTruthLabel, OctVolume};
use crate::error::IngestError;
use crate::rng::{derive_seed, seeded};

/// Labels emitted by the generator, in output order.
pub const PHANTOM_CLASSES: [GroundTruthLabel; 4] = [
    GroundTruthLabel::Normal,
    GroundTruthLabel::DryAmd,
    GroundTruthLabel::WetAmd,
    GroundTruthLabel::Dme,
];

pub const TRUTH_FILE: &str = "truth.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SiteProfile {
    Clean,
    Noisy,
    Lowres,
}

impl SiteProfile {
    pub fn name(self) -> &'static str {
        match self {
            SiteProfile::Clean => "clean",
            SiteProfile::Noisy => "noisy",
            SiteProfile::Lowres => "lowres",
        }
    }

    fn acquisition(self) -> Acquisition {
        match self {
            SiteProfile::Clean => Acquisition { additive: 0.03, speckle: 0.10, gain: 1.0, offset: 0.0, downsample: 1 },
            SiteProfile::Noisy => Acquisition { additive: 0.07, speckle: 0.22, gain: 0.85, offset: 0.03, downsample: 1 },
            SiteProfile::Lowres => Acquisition { additive: 0.04, speckle: 0.12, gain: 0.95, offset: 0.0, downsample: 2 },
        }
    }
}

impl std::str::FromStr for SiteProfile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "clean" => Ok(SiteProfile::Clean),
            "noisy" => Ok(SiteProfile::Noisy),
            "lowres" => Ok(SiteProfile::Lowres),
            other => Err(format!("unknown site profile `{other}` (expected clean, noisy or lowres)")),
        }
    }
}

struct Acquisition {
    additive: f64,
    speckle: f64,
    gain: f64,
    offset: f64,
    downsample: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    pub n_volumes_per_class: usize,
    pub bscans_per_volume: usize,
    pub image_height: usize,
    pub image_width: usize,
    pub site_profile: SiteProfile,
    /// Scales lesion contrast and size, 0..=1.
    pub lesion_intensity_scale: f64,
    pub ungradable_fraction: f64,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            n_volumes_per_class: 4,
            bscans_per_volume: 8,
            image_height: 64,
            image_width: 64,
            site_profile: SiteProfile::Clean,
            lesion_intensity_scale: 1.0,
            ungradable_fraction: 0.0,
            seed: 7,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<(), IngestError> {
        let bad = |m: &str| Err(IngestError::InvalidConfig(m.to_string()));
        if self.n_volumes_per_class == 0 || self.bscans_per_volume == 0 {
            return bad("counts must be at least 1");
        }
        if self.image_height < 16 || self.image_width < 16 {
            return bad("phantom images must be at least 16x16");
        }
        if !(0.0..=1.0).contains(&self.lesion_intensity_scale) {
            return bad("lesion_intensity_scale must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.ungradable_fraction) {
            return bad("ungradable_fraction must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn total_bscans(&self) -> usize {
        PHANTOM_CLASSES.len() * self.n_volumes_per_class * self.bscans_per_volume
    }

    /// round(fraction x total), halves away from zero.
    pub fn ungradable_count(&self) -> usize {
        (self.ungradable_fraction * self.total_bscans() as f64).round() as usize
    }

    pub fn dataset_id(&self) -> String {
        format!("phantom-{}-s{}", self.site_profile.name(), self.seed)
    }
}

/// Generator ground truth for one B-scan.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BScanTruth {
    pub gradable: bool,
    pub lesions: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct PhantomVolume {
    pub volume: OctVolume,
    pub truth: Vec<BScanTruth>,
}

/// Renders the cohort in memory: classes in [`PHANTOM_CLASSES`] order,
/// `n_volumes_per_class` volumes each.
pub fn synthesize_cohort(config: &PhantomConfig) -> Result<Vec<PhantomVolume>, IngestError> {
    config.validate()?;
    let degraded = degraded_slots(config);
    let site_id = format!("site-{}", config.site_profile.name());
    let scanner_id = format!("phantom-{}", config.site_profile.name());
    let mut out = Vec::with_capacity(PHANTOM_CLASSES.len() * config.n_volumes_per_class);
    let mut slot = 0;
    for (class_idx, &label) in PHANTOM_CLASSES.iter().enumerate() {
        for v in 0..config.n_volumes_per_class {
            let volume_id = volume_id(config, label, v);
            let anatomy = Anatomy::draw(&mut seeded(derive_seed(config.seed, &[1, class_idx as u64, v as u64])));
            let mut bscans = Vec::with_capacity(config.bscans_per_volume);
            let mut truth = Vec::with_capacity(config.bscans_per_volume);
            for b in 0..config.bscans_per_volume {
                let mut rng = seeded(derive_seed(config.seed, &[2, class_idx as u64, v as u64, b as u64]));
                let gradable = !degraded[slot];
                slot += 1;
                let (pixels, lesions) = render_bscan(config, label, &anatomy, b, gradable, &mut rng);
                bscans.push(BScan::new(config.image_height, config.image_width, b, pixels)?);
                truth.push(BScanTruth { gradable, lesions });
            }
            let volume = OctVolume::new(volume_id, bscans, label, site_id.clone(), scanner_id.clone())?;
            out.push(PhantomVolume { volume, truth });
        }
    }
    Ok(out)
}

fn volume_id(config: &PhantomConfig, label: GroundTruthLabel, n: usize) -> String {
    format!("{}-{}-{:04}", config.site_profile.name(), label.as_str().to_ascii_lowercase(), n)
}

fn degraded_slots(config: &PhantomConfig) -> Vec<bool> {
    let total = config.total_bscans();
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut seeded(derive_seed(config.seed, &[0xDE6])));
    let mut flags = vec![false; total];
    for &i in &order[..config.ungradable_count().min(total)] {
        flags[i] = true;
    }
    flags
}

/// Relative image path of B-scan `b` in volume `volume_id`.
pub fn bscan_path(volume_id: &str, b: usize) -> PathBuf {
    PathBuf::from("images").join(volume_id).join(format!("{b:03}.png"))
}

/// Writes `images/<volume>/<nnn>.png`, `manifest.json` and `truth.json`
/// under `out` and returns the manifest.
pub fn generate_phantom_dataset(config: &PhantomConfig, out: &Path) -> Result<DatasetManifest, IngestError> {
    let cohort = synthesize_cohort(config)?;
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| IngestError::Io { path, source }
    };
    fs::create_dir_all(out).map_err(io_err(out))?;

    let mut entries = Vec::with_capacity(cohort.len());
    let mut truth_map = BTreeMap::new();
    for pv in &cohort {
        let vid = pv.volume.volume_id();
        let dir = out.join("images").join(vid);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let mut paths = Vec::with_capacity(pv.volume.bscans().len());
        for (b, (scan, truth)) in pv.volume.bscans().iter().zip(&pv.truth).enumerate() {
            let rel = bscan_path(vid, b);
            let full = out.join(&rel);
            image::save_buffer_with_format(
                &full,
                scan.pixels(),
                scan.width() as u32,
                scan.height() as u32,
                ExtendedColorType::L8,
                ImageFormat::Png,
            )
            .map_err(|e| IngestError::Io { path: full.clone(), source: std::io::Error::other(e) })?;
            truth_map.insert(manifest_key(&rel), truth.clone());
            paths.push(rel);
        }
        entries.push(ManifestEntry {
            volume_id: vid.to_string(),
            site_id: pv.volume.site_id().to_string(),
            label: EntryLabel::Volume(pv.volume.label()),
            bscan_paths: paths,
        });
    }
    let manifest = DatasetManifest {
        dataset_id: config.dataset_id(),
        scanner_id: format!("phantom-{}", config.site_profile.name()),
        label_granularity: LabelGranularity::Volume,
        entries,
        base_dir: out.to_path_buf(),
    };
    write_manifest(&manifest, &out.join(MANIFEST_FILE))?;
    let truth_path = out.join(TRUTH_FILE);
    let mut text = serde_json::to_string_pretty(&truth_map).expect("truth serializes");
    text.push('\n');
    fs::write(&truth_path, text).map_err(io_err(&truth_path))?;
    Ok(manifest)
}

fn manifest_key(rel: &Path) -> String {
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// Generator sidecar keyed by manifest-relative B-scan path.
pub type TruthSidecar = BTreeMap<String, BScanTruth>;

pub fn read_truth(path: &Path) -> Result<TruthSidecar, IngestError> {
    if !path.is_file() {
        return Err(IngestError::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|source| IngestError::Io { path: path.to_path_buf(), source })?;
    serde_json::from_str(&text).map_err(|e| IngestError::SchemaViolation {
        path: path.to_path_buf(),
        field: "<document>".into(),
        reason: e.to_string(),
    })
}

/// Looks up the sidecar record for a manifest-relative path.
pub fn truth_for<'a>(sidecar: &'a TruthSidecar, rel: &Path) -> Option<&'a BScanTruth> {
    sidecar.get(&manifest_key(rel))
}

/// Per-volume geometry shared by all of its B-scans. Lengths are fractions
/// of image height (vertical) or width (horizontal).
struct Anatomy {
    rpe_depth: f64,
    thickness: f64,
    tilt: f64,
    bowl: f64,
    fovea_x: f64,
    pit_depth: f64,
}

impl Anatomy {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        Self {
            rpe_depth: rng.gen_range(0.58..0.66),
            thickness: rng.gen_range(0.22..0.27),
            tilt: rng.gen_range(-0.05..0.05),
            bowl: rng.gen_range(0.0..0.06),
            fovea_x: rng.gen_range(0.44..0.56),
            pit_depth: rng.gen_range(0.06..0.10),
        }
    }
}

fn gauss(x: f64, sigma: f64) -> f64 {
    (-0.5 * (x / sigma).powi(2)).exp()
}

/// Smooth inside-ness of an ellipse: 1 at the centre, 0 outside.
fn ellipse(x: f64, y: f64, cx: f64, cy: f64, rx: f64, ry: f64) -> f64 {
    let r2 = ((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2);
    if r2 >= 1.0 {
        0.0
    } else {
        (1.0 - r2).sqrt().min(1.0).powf(0.5)
    }
}

struct Drusen {
    x: f64,
    sigma: f64,
    height: f64,
}

struct Lobe {
    x: f64,
    /// Depth within the retina (0 = inner surface, 1 = RPE) or, for
    /// sub-retinal fluid, negative offset above the RPE.
    depth: f64,
    rx: f64,
    ry: f64,
}

fn render_bscan(
    config: &PhantomConfig,
    label: GroundTruthLabel,
    anatomy: &Anatomy,
    b: usize,
    gradable: bool,
    rng: &mut ChaCha8Rng,
) -> (Vec<u8>, Vec<String>) {
    let acq = config.site_profile.acquisition();
    let (full_h, full_w) = (config.image_height, config.image_width);
    let (h, w) = (full_h / acq.downsample, full_w / acq.downsample);
    let s = config.lesion_intensity_scale;

    // The pit fades away from the central slice.
    let n = config.bscans_per_volume as f64;
    let offset = if n > 1.0 { (b as f64 - (n - 1.0) / 2.0) / (n / 2.0) } else { 0.0 };
    let pit = anatomy.pit_depth * gauss(offset, 0.45);
    let jitter = rng.gen_range(-0.015..0.015);

    let mut lesions = Vec::new();
    let mut drusen = Vec::new();
    let mut fluid = Vec::new();
    let mut cysts = Vec::new();
    let mut foci: Vec<(f64, f64)> = Vec::new();
    let mut thickening = 0.0;
    let mut thick_x = 0.5;

    if matches!(label, GroundTruthLabel::DryAmd | GroundTruthLabel::WetAmd) {
        let k = if label == GroundTruthLabel::DryAmd { rng.gen_range(2..=4) } else { rng.gen_range(1..=3) };
        for _ in 0..k {
            drusen.push(Drusen {
                x: rng.gen_range(0.2..0.8),
                sigma: rng.gen_range(0.035..0.06),
                height: rng.gen_range(0.05..0.085) * s,
            });
        }
        lesions.push("drusen".to_string());
    }
    if label == GroundTruthLabel::WetAmd {
        for _ in 0..rng.gen_range(1..=2) {
            fluid.push(Lobe {
                x: rng.gen_range(0.3..0.7),
                depth: 0.0,
                rx: rng.gen_range(0.09..0.15) * (0.5 + 0.5 * s),
                ry: rng.gen_range(0.035..0.055) * (0.5 + 0.5 * s),
            });
        }
        lesions.push("fluid".to_string());
    }
    if label == GroundTruthLabel::Dme {
        thickening = rng.gen_range(0.35..0.55) * s;
        thick_x = rng.gen_range(0.35..0.65);
        for _ in 0..rng.gen_range(3..=5) {
            cysts.push(Lobe {
                x: rng.gen_range(0.25..0.75),
                depth: rng.gen_range(0.35..0.65),
                rx: rng.gen_range(0.035..0.06) * (0.5 + 0.5 * s),
                ry: rng.gen_range(0.10..0.16) * (0.5 + 0.5 * s),
            });
        }
        for _ in 0..rng.gen_range(4..=7) {
            foci.push((rng.gen_range(0.2..0.8), rng.gen_range(0.3..0.85)));
        }
        lesions.extend(["cyst", "foci", "thickening"].map(String::from));
    }

    let mut canvas = vec![0.0f64; h * w];
    for x in 0..w {
        let xf = (x as f64 + 0.5) / w as f64;
        let centred = xf - 0.5;
        let bruch = anatomy.rpe_depth + jitter + anatomy.tilt * centred + anatomy.bowl * 4.0 * centred * centred;
        let lift: f64 = drusen.iter().map(|d| d.height * gauss(xf - d.x, d.sigma)).sum();
        let rpe = bruch - lift;
        let mut thickness = anatomy.thickness - pit * gauss(xf - anatomy.fovea_x, 0.09);
        thickness *= 1.0 + thickening * gauss(xf - thick_x, 0.16);
        let top = rpe - thickness;

        for y in 0..h {
            let yf = (y as f64 + 0.5) / h as f64;
            let mut v = if yf < top {
                0.04
            } else if yf < rpe - 0.03 {
                let d = (yf - top) / (rpe - 0.03 - top);
                retina_band(d)
            } else if yf < rpe {
                0.92
            } else if yf < bruch {
                // drusen material between the lifted RPE and Bruch's membrane
                0.55 + 0.1 * s
            } else {
                let below = yf - bruch;
                0.1 + 0.3 * (-below / 0.08).exp()
            };

            for lobe in &fluid {
                // Sub-retinal fluid sits just above the RPE.
                let cy = rpe_at(anatomy, jitter, &drusen, lobe.x) - 0.03 - lobe.ry * 0.9;
                let e = ellipse(xf, yf, lobe.x, cy, lobe.rx, lobe.ry);
                v = v * (1.0 - e * s) + 0.02 * e * s;
            }
            if yf > top && yf < rpe {
                let d = (yf - top) / (rpe - top);
                for cyst in &cysts {
                    let e = ellipse(xf, d, cyst.x, cyst.depth, cyst.rx, cyst.ry);
                    v = v * (1.0 - e * s) + 0.03 * e * s;
                }
                for &(fx, fd) in &foci {
                    let r = ((xf - fx) / 0.02).powi(2) + ((d - fd) / 0.07).powi(2);
                    if r < 1.0 {
                        v = v.max(0.7 + 0.25 * s);
                    }
                }
            }
            canvas[y * w + x] = v;
        }
    }

    let mut noisy: Vec<f64> = canvas
        .iter()
        .map(|&v| {
            let z: f64 = StandardNormal.sample(rng);
            let speckle = 1.0 + acq.speckle * z;
            let add: f64 = StandardNormal.sample(rng);
            acq.offset + acq.gain * v * speckle + acq.additive * add
        })
        .collect();
    if acq.downsample > 1 {
        noisy = upsample(&noisy, h, w, full_h, full_w);
    }
    if !gradable {
        let mean = noisy.iter().sum::<f64>() / noisy.len() as f64;
        for v in &mut noisy {
            let n: f64 = StandardNormal.sample(rng);
            *v = mean + 0.15 * (*v - mean) + 0.25 * n;
        }
    }
    let pixels = noisy.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    (pixels, lesions)
}

fn rpe_at(anatomy: &Anatomy, jitter: f64, drusen: &[Drusen], xf: f64) -> f64 {
    let centred = xf - 0.5;
    let bruch = anatomy.rpe_depth + jitter + anatomy.tilt * centred + anatomy.bowl * 4.0 * centred * centred;
    bruch - drusen.iter().map(|d| d.height * gauss(xf - d.x, d.sigma)).sum::<f64>()
}

/// Intensity profile through the neural retina, `d` in [0, 1] from the
/// inner surface to the top of the RPE band.
fn retina_band(d: f64) -> f64 {
    match d {
        d if d < 0.12 => 0.78 - 1.2 * d,
        d if d < 0.40 => 0.46,
        d if d < 0.55 => 0.30,
        d if d < 0.84 => 0.17,
        d if d < 0.90 => 0.72,
        _ => 0.35,
    }
}

fn upsample(src: &[f64], h: usize, w: usize, th: usize, tw: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(th * tw);
    let sy = h as f64 / th as f64;
    let sx = w as f64 / tw as f64;
    for y in 0..th {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f64;
        for x in 0..tw {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f64;
            let top = src[y0 * w + x0] * (1.0 - wx) + src[y0 * w + x1] * wx;
            let bot = src[y1 * w + x0] * (1.0 - wx) + src[y1 * w + x1] * wx;
            out.push(top * (1.0 - wy) + bot * wy);
        }
    }
    out
}

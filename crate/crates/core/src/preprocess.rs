//! Canonical resizing and seeded training-time augmentation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::BScan;
use crate::rng::{derive_seed, seeded};

/// Default canonical edge length.
pub const DEFAULT_CANONICAL: (usize, usize) = (224, 224);

/// A B-scan resampled to the canonical size with intensities in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedBScan {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl NormalizedBScan {
    /// Values are clamped into [0, 1].
    pub fn from_values(height: usize, width: usize, mut pixels: Vec<f32>) -> Self {
        assert_eq!(pixels.len(), height * width, "pixel buffer size");
        for p in &mut pixels {
            *p = p.clamp(0.0, 1.0);
        }
        Self { height, width, pixels }
    }

    pub fn constant(height: usize, width: usize, value: f32) -> Self {
        Self::from_values(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.width + col]
    }
}

/// Resize to `target` (bilinear, half-pixel centres, edge clamped) and map
/// intensities by the fixed affine map v / 255.
pub fn normalize(scan: &BScan, target: (usize, usize)) -> NormalizedBScan {
    let (th, tw) = target;
    let (h, w) = (scan.height(), scan.width());
    let src = scan.pixels();
    if (h, w) == (th, tw) {
        let pixels = src.iter().map(|&v| f32::from(v) / 255.0).collect();
        return NormalizedBScan { height: th, width: tw, pixels };
    }

    let sy = h as f64 / th as f64;
    let sx = w as f64 / tw as f64;
    // Column taps are shared by every row.
    let cols: Vec<(usize, usize, f64)> = (0..tw)
        .map(|x| {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            (x0, (x0 + 1).min(w - 1), fx - x0 as f64)
        })
        .collect();
    let mut pixels = Vec::with_capacity(th * tw);
    for y in 0..th {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f64;
        let r0 = &src[y0 * w..(y0 + 1) * w];
        let r1 = &src[y1 * w..(y1 + 1) * w];
        for &(x0, x1, wx) in &cols {
            let top = f64::from(r0[x0]) * (1.0 - wx) + f64::from(r0[x1]) * wx;
            let bottom = f64::from(r1[x0]) * (1.0 - wx) + f64::from(r1[x1]) * wx;
            let v = (top * (1.0 - wy) + bottom * wy) / 255.0;
            pixels.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    NormalizedBScan { height: th, width: tw, pixels }
}

/// Half-widths of the uniform augmentation ranges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    /// Degrees.
    pub rotation: f64,
    /// Fraction of the image extent, per axis.
    pub translation: f64,
    /// Zoom factor is drawn from [1 - zoom, 1 + zoom].
    pub zoom: f64,
    /// Additive intensity shift.
    pub brightness: f64,
}

impl AugmentParams {
    pub const NONE: AugmentParams = AugmentParams { rotation: 0.0, translation: 0.0, zoom: 0.0, brightness: 0.0 };

    pub fn is_valid(&self) -> bool {
        [self.rotation, self.translation, self.zoom, self.brightness]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0)
            && self.zoom < 1.0
    }
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self { rotation: 10.0, translation: 0.05, zoom: 0.1, brightness: 0.1 }
    }
}

/// One concrete draw of augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcreteAugmentation {
    pub rotation_deg: f64,
    /// Horizontal shift as a fraction of width.
    pub shift_x: f64,
    /// Vertical shift as a fraction of height.
    pub shift_y: f64,
    pub zoom: f64,
    pub brightness: f64,
}

impl ConcreteAugmentation {
    pub const IDENTITY: ConcreteAugmentation =
        ConcreteAugmentation { rotation_deg: 0.0, shift_x: 0.0, shift_y: 0.0, zoom: 1.0, brightness: 0.0 };

    pub fn is_identity(&self) -> bool {
        self.is_geometric_identity() && self.brightness == 0.0
    }

    fn is_geometric_identity(&self) -> bool {
        self.rotation_deg == 0.0 && self.shift_x == 0.0 && self.shift_y == 0.0 && self.zoom == 1.0
    }
}

fn symmetric<R: Rng>(rng: &mut R, half_width: f64) -> f64 {
    // Always consume one draw so the stream layout does not depend on params.
    let u: f64 = rng.gen();
    if half_width > 0.0 {
        (2.0 * u - 1.0) * half_width
    } else {
        0.0
    }
}

/// Draw an augmentation as a pure function of (seed, epoch, item_index).
pub fn sample_augmentation(params: &AugmentParams, rng_seed: u64, epoch: u64, item_index: u64) -> ConcreteAugmentation {
    let mut rng = seeded(derive_seed(rng_seed, &[0xA0_6E, epoch, item_index]));
    let rotation_deg = symmetric(&mut rng, params.rotation);
    let shift_x = symmetric(&mut rng, params.translation);
    let shift_y = symmetric(&mut rng, params.translation);
    let zoom = 1.0 + symmetric(&mut rng, params.zoom);
    let brightness = symmetric(&mut rng, params.brightness);
    ConcreteAugmentation { rotation_deg, shift_x, shift_y, zoom, brightness }
}

/// Rotate about the centre, translate, zoom about the centre, then shift
/// brightness and clamp. Out-of-frame samples read as 0.
pub fn apply_augmentation(img: &NormalizedBScan, aug: &ConcreteAugmentation) -> NormalizedBScan {
    if aug.is_identity() {
        return img.clone();
    }
    let (h, w) = img.shape();
    let mut pixels = if aug.is_geometric_identity() {
        img.pixels.clone()
    } else {
        warp(img, aug)
    };
    if aug.brightness != 0.0 {
        for p in &mut pixels {
            *p = (f64::from(*p) + aug.brightness).clamp(0.0, 1.0) as f32;
        }
    }
    NormalizedBScan { height: h, width: w, pixels }
}

fn warp(img: &NormalizedBScan, aug: &ConcreteAugmentation) -> Vec<f32> {
    let (h, w) = img.shape();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let theta = aug.rotation_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    let tx = aug.shift_x * w as f64;
    let ty = aug.shift_y * h as f64;
    let inv_zoom = 1.0 / aug.zoom;

    let sample = |fy: f64, fx: f64| -> f64 {
        let y0 = fy.floor();
        let x0 = fx.floor();
        let wy = fy - y0;
        let wx = fx - x0;
        let at = |yy: f64, xx: f64| -> f64 {
            if yy < 0.0 || xx < 0.0 || yy > (h - 1) as f64 || xx > (w - 1) as f64 {
                0.0
            } else {
                f64::from(img.get(yy as usize, xx as usize))
            }
        };
        let top = at(y0, x0) * (1.0 - wx) + at(y0, x0 + 1.0) * wx;
        let bottom = at(y0 + 1.0, x0) * (1.0 - wx) + at(y0 + 1.0, x0 + 1.0) * wx;
        top * (1.0 - wy) + bottom * wy
    };

    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            // Invert: undo translation, then zoom, then rotation.
            let dx = (x as f64 - cx - tx) * inv_zoom;
            let dy = (y as f64 - cy - ty) * inv_zoom;
            let sx = cos * dx + sin * dy + cx;
            let sy = -sin * dx + cos * dy + cy;
            out.push(sample(sy, sx).clamp(0.0, 1.0) as f32);
        }
    }
    out
}

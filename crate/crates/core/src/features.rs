//! 128-dimensional facial feature vectors and the extractor interface.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::fingerprint;
use crate::error::{Error, Result};
use crate::image::RgbImage;

pub const FEATURE_DIM: usize = 128;

/// Facial identity signature: exactly 128 components, each in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct FeatureVector(Vec<f32>);

impl TryFrom<Vec<f32>> for FeatureVector {
    type Error = Error;

    fn try_from(values: Vec<f32>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<FeatureVector> for Vec<f32> {
    fn from(fv: FeatureVector) -> Self {
        fv.0
    }
}

impl FeatureVector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.len() != FEATURE_DIM {
            return Err(Error::InvalidFeatures(format!(
                "expected {FEATURE_DIM} components, got {}",
                values.len()
            )));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::InvalidFeatures(format!("component {i} = {v} is outside [0, 1]")));
        }
        Ok(Self(values))
    }

    /// Per-vector min-max normalisation of an unbounded embedding.
    pub fn from_raw_minmax(raw: &[f64]) -> Result<Self> {
        if raw.len() != FEATURE_DIM {
            return Err(Error::InvalidFeatures(format!(
                "expected {FEATURE_DIM} components, got {}",
                raw.len()
            )));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidFeatures("non-finite embedding".into()));
        }
        let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi <= lo {
            return Err(Error::InvalidFeatures("constant embedding cannot be min-max normalised".into()));
        }
        Self::new(raw.iter().map(|v| ((v - lo) / (hi - lo)) as f32).collect())
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn l2_distance(&self, other: &FeatureVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| ((a - b) as f64).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn fingerprint(&self) -> String {
        let bytes: Vec<u8> = self.0.iter().flat_map(|v| v.to_le_bytes()).collect();
        fingerprint([bytes.as_slice()])
    }
}

/// Maps a face image to a [`FeatureVector`]. Implementations must be deterministic.
pub trait FeatureExtractor: Send + Sync {
    /// Identifier recorded in checkpoints so verification uses the same extractor.
    fn id(&self) -> &str;

    fn extract(&self, img: &RgbImage) -> Result<FeatureVector>;
}

/// Run an extractor and re-check the feature-vector contract on its output.
pub fn extract_features(img: &RgbImage, extractor: &dyn FeatureExtractor) -> Result<FeatureVector> {
    let fv = extractor.extract(img)?;
    FeatureVector::new(fv.0)
}

pub const STUB_EXTRACTOR_ID: &str = "stub-blockavg/1";
pub const STUB_MIN_SIZE: u32 = 64;
/// Images whose unit-range luma variance falls below this carry no face.
pub const STUB_VARIANCE_GATE: f64 = 1e-4;
const STUB_GRID: usize = 16;

/// Fixed bijection on `0..256` used to scatter neighbouring blocks.
fn stub_permutation(i: usize) -> usize {
    (i * 97 + 31) % (STUB_GRID * STUB_GRID)
}

/// Deterministic block-average extractor: luma, centre square crop, 16x16
/// block means, fixed permutation, scale to `[0, 1]`, then adjacent pairs averaged
/// down to 128 components.
#[derive(Clone, Copy, Debug, Default)]
pub struct StubExtractor;

impl FeatureExtractor for StubExtractor {
    fn id(&self) -> &str {
        STUB_EXTRACTOR_ID
    }

    fn extract(&self, img: &RgbImage) -> Result<FeatureVector> {
        stub_extract(img)
    }
}

pub fn stub_extract(img: &RgbImage) -> Result<FeatureVector> {
    let (w, h) = (img.width(), img.height());
    if w < STUB_MIN_SIZE || h < STUB_MIN_SIZE {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            min: STUB_MIN_SIZE,
        });
    }
    let luma: Vec<f64> = img
        .data()
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .collect();
    let n = luma.len() as f64;
    let mean = luma.iter().sum::<f64>() / n / 255.0;
    let var = luma.iter().map(|v| (v / 255.0 - mean).powi(2)).sum::<f64>() / n;
    if var < STUB_VARIANCE_GATE {
        return Err(Error::NoFaceFound(format!(
            "luma variance {var:.2e} is below {STUB_VARIANCE_GATE:.0e}"
        )));
    }
    let side = w.min(h) as usize;
    let (x0, y0) = (((w as usize) - side) / 2, ((h as usize) - side) / 2);
    let mut blocks = [0.0f64; STUB_GRID * STUB_GRID];
    for by in 0..STUB_GRID {
        let (ya, yb) = (by * side / STUB_GRID, (by + 1) * side / STUB_GRID);
        for bx in 0..STUB_GRID {
            let (xa, xb) = (bx * side / STUB_GRID, (bx + 1) * side / STUB_GRID);
            let mut s = 0.0;
            for y in ya..yb {
                let row = (y0 + y) * w as usize + x0;
                s += luma[row + xa..row + xb].iter().sum::<f64>();
            }
            blocks[by * STUB_GRID + bx] = s / ((yb - ya) * (xb - xa)) as f64;
        }
    }
    let scaled: Vec<f64> = (0..blocks.len())
        .map(|i| (blocks[stub_permutation(i)] / 255.0).clamp(0.0, 1.0))
        .collect();
    let values = scaled
        .chunks_exact(2)
        .map(|p| ((p[0] + p[1]) / 2.0) as f32)
        .collect();
    FeatureVector::new(values)
}

/// Parse the feature text format: one vector per line, 128 whitespace-separated
/// decimals; blank lines and `#` comments are skipped.
pub fn parse_feature_text(text: &str, source_name: &str) -> Result<Vec<FeatureVector>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != FEATURE_DIM {
            return Err(Error::Parse {
                source_name: source_name.to_string(),
                line,
                reason: format!("expected {FEATURE_DIM} values, found {}", fields.len()),
            });
        }
        let mut values = Vec::with_capacity(FEATURE_DIM);
        for (component, f) in fields.iter().enumerate() {
            let v: f64 = f.parse().map_err(|_| Error::Parse {
                source_name: source_name.to_string(),
                line,
                reason: format!("component {component}: {f:?} is not a number"),
            })?;
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Range {
                    source_name: source_name.to_string(),
                    line,
                    component,
                    value: v,
                });
            }
            values.push(v as f32);
        }
        out.push(FeatureVector::new(values)?);
    }
    Ok(out)
}

pub fn load_feature_file(path: impl AsRef<Path>) -> Result<Vec<FeatureVector>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_feature_text(&text, &path.display().to_string())
}

pub fn format_feature_text(vectors: &[FeatureVector]) -> String {
    let mut s = String::new();
    for v in vectors {
        for (i, x) in v.values().iter().enumerate() {
            if i > 0 {
                s.push(' ');
            }
            let _ = write!(s, "{x}");
        }
        s.push('\n');
    }
    s
}

pub fn write_feature_file(path: impl AsRef<Path>, vectors: &[FeatureVector]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_feature_text(vectors)).map_err(|e| Error::io(path, e))
}

//! Image-similarity metrics (MSE, PSNR, SSIM) and detection metrics.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::image::{GrayImage, RgbImage};

/// Read access to 8-bit interleaved samples.
pub trait Raster {
    fn width(&self) -> u32;
    fn height(&self) -> u32;
    fn channels(&self) -> usize;
    fn samples(&self) -> &[u8];
}

impl Raster for GrayImage {
    fn width(&self) -> u32 {
        GrayImage::width(self)
    }
    fn height(&self) -> u32 {
        GrayImage::height(self)
    }
    fn channels(&self) -> usize {
        1
    }
    fn samples(&self) -> &[u8] {
        self.data()
    }
}

impl Raster for RgbImage {
    fn width(&self) -> u32 {
        RgbImage::width(self)
    }
    fn height(&self) -> u32 {
        RgbImage::height(self)
    }
    fn channels(&self) -> usize {
        3
    }
    fn samples(&self) -> &[u8] {
        self.data()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// Intensities divided by 255.
    Unit,
    /// Raw 0-255 intensities.
    Byte,
}

fn same_shape(a: &impl Raster, b: &impl Raster) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() || a.channels() != b.channels() {
        return Err(Error::ShapeMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    Ok(())
}

/// Mean over all samples of the squared difference.
pub fn mse<R: Raster>(a: &R, b: &R, scale: Scale) -> Result<f64> {
    same_shape(a, b)?;
    let sum: u64 = a
        .samples()
        .iter()
        .zip(b.samples())
        .map(|(&x, &y)| {
            let d = x as i64 - y as i64;
            (d * d) as u64
        })
        .sum();
    let byte = sum as f64 / a.samples().len() as f64;
    Ok(match scale {
        Scale::Byte => byte,
        Scale::Unit => byte / (255.0 * 255.0),
    })
}

/// Peak signal-to-noise ratio in dB; identical inputs give `f64::INFINITY`.
pub fn psnr<R: Raster>(a: &R, b: &R) -> Result<f64> {
    let m = mse(a, b, Scale::Byte)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0f64 * 255.0 / m).log10())
}

pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const SSIM_RANGE: f64 = 255.0;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let x = i as f64 - r;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable Gaussian filter keeping only fully-covered ("valid") positions.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], w: usize, h: usize) -> f64 {
    let k = gaussian_window();
    let c1 = (SSIM_K1 * SSIM_RANGE).powi(2);
    let c2 = (SSIM_K2 * SSIM_RANGE).powi(2);
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_a = filter_valid(a, w, h, &k);
    let mu_b = filter_valid(b, w, h, &k);
    let e_aa = filter_valid(&prod(a, a), w, h, &k);
    let e_bb = filter_valid(&prod(b, b), w, h, &k);
    let e_ab = filter_valid(&prod(a, b), w, h, &k);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total / n as f64
}

/// Mean structural similarity: 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, dynamic range 255, evaluated where the window fits entirely in
/// the image. Multi-channel images are averaged over channels.
pub fn ssim<R: Raster>(a: &R, b: &R) -> Result<f64> {
    same_shape(a, b)?;
    let (w, h, c) = (a.width() as usize, a.height() as usize, a.channels());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::InvalidImage(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"
        )));
    }
    let plane = |img: &R, ch: usize| -> Vec<f64> {
        img.samples().iter().skip(ch).step_by(c).map(|&v| v as f64).collect()
    };
    let total: f64 = (0..c).map(|ch| ssim_plane(&plane(a, ch), &plane(b, ch), w, h)).sum();
    Ok(total / c as f64)
}

/// Binary confusion counts with FAKE as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    /// Record one prediction.
    pub fn record(&mut self, predicted_positive: bool, actually_positive: bool) {
        match (predicted_positive, actually_positive) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Rates whose denominator is zero are `None` rather than NaN.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClassificationMetrics {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn classification_metrics(c: &ConfusionCounts) -> ClassificationMetrics {
    let accuracy = ratio(c.tp + c.tn, c.total());
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    ClassificationMetrics {
        accuracy,
        precision,
        recall,
        f1,
    }
}

/// One line of a metrics report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricRow {
    pub name: String,
    pub value: Option<f64>,
    pub scale: String,
}

impl MetricRow {
    pub fn new(name: impl Into<String>, value: Option<f64>, scale: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            value,
            scale: scale.into(),
        }
    }

    /// `name<TAB>value<TAB>scale`; undefined values print as `undefined`.
    pub fn to_line(&self) -> String {
        let v = match self.value {
            Some(v) if v.is_infinite() => "inf".to_string(),
            Some(v) => format!("{v:.6}"),
            None => "undefined".to_string(),
        };
        format!("{}\t{}\t{}", self.name, v, self.scale)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(w: u32, h: u32, f: impl Fn(u32, u32) -> u8) -> GrayImage {
        let data = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        GrayImage::new(w, h, data).unwrap()
    }

    #[test]
    fn mse_basics() {
        let a = gray(4, 4, |x, y| (x * 40 + y * 10) as u8);
        assert_eq!(mse(&a, &a, Scale::Byte).unwrap(), 0.0);
        let black = gray(3, 3, |_, _| 0);
        let white = gray(3, 3, |_, _| 255);
        assert_eq!(mse(&black, &white, Scale::Byte).unwrap(), 65025.0);
        assert_eq!(mse(&black, &white, Scale::Unit).unwrap(), 1.0);
    }

    #[test]
    fn mse_matches_expanded_sum_oracle() {
        // sum (a-b)^2 = sum a^2 - 2 sum ab + sum b^2, accumulated independently.
        let a = gray(4, 4, |x, y| ((x * 73 + y * 151) % 256) as u8);
        let b = gray(4, 4, |x, y| ((x * 29 + y * 197 + 11) % 256) as u8);
        let (mut saa, mut sab, mut sbb) = (0.0f64, 0.0f64, 0.0f64);
        for (p, q) in a.data().iter().zip(b.data()) {
            saa += (*p as f64).powi(2);
            sab += *p as f64 * *q as f64;
            sbb += (*q as f64).powi(2);
        }
        let want = (saa - 2.0 * sab + sbb) / 16.0;
        assert!((mse(&a, &b, Scale::Byte).unwrap() - want).abs() <= 1e-9 * want);
    }

    #[test]
    fn psnr_values() {
        let a = gray(2, 2, |_, _| 0);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let white = gray(2, 2, |_, _| 255);
        assert!(psnr(&a, &white).unwrap().abs() < 1e-12);
        let one = gray(2, 2, |x, y| if x == 0 && y == 0 { 255 } else { 0 });
        assert!((psnr(&a, &one).unwrap() - 10.0 * 4f64.log10()).abs() < 1e-9);
        assert!((psnr(&a, &one).unwrap() - 6.0206).abs() < 1e-4);
    }

    #[test]
    fn ssim_identical_and_constant_images() {
        let a = gray(16, 16, |x, y| ((x * 37 + y * 11) % 256) as u8);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        // Constant images: only the luminance term survives.
        let p = gray(12, 12, |_, _| 100);
        let q = gray(12, 12, |_, _| 180);
        let c1 = (0.01f64 * 255.0).powi(2);
        let want = (2.0 * 100.0 * 180.0 + c1) / (100.0f64.powi(2) + 180.0f64.powi(2) + c1);
        assert!((ssim(&p, &q).unwrap() - want).abs() < 1e-9 * want);
    }

    #[test]
    fn ssim_matches_reference_implementation() {
        // Frozen from scikit-image `structural_similarity(gaussian_weights=True,
        // sigma=1.5, use_sample_covariance=False, data_range=255)`.
        let a = gray(16, 16, |x, y| ((x * 37 + y * 11) % 256) as u8);
        let inv = gray(16, 16, |x, y| 255 - ((x * 37 + y * 11) % 256) as u8);
        let noisy = gray(16, 16, |x, y| {
            (((x * 37 + y * 11) % 256) as i32 + ((x * 7 + y * 13) % 21) as i32 - 10).clamp(0, 255) as u8
        });
        let s_inv = ssim(&a, &inv).unwrap();
        assert!(s_inv < 0.5);
        assert!((s_inv - -0.9316480387111908).abs() < 1e-6 * 0.93);
        assert!((ssim(&a, &noisy).unwrap() - 0.9958646202438537).abs() < 1e-6);

        let rgb = |f: &dyn Fn(u32, u32, u32) -> u8| {
            let data = (0..12u32)
                .flat_map(|y| (0..14u32).flat_map(move |x| (0..3u32).map(move |c| (x, y, c))))
                .map(|(x, y, c)| f(x, y, c))
                .collect();
            RgbImage::new(14, 12, data).unwrap()
        };
        let r = rgb(&|x, y, c| ((x * 13 + y * 7 + c * 50) % 256) as u8);
        let s = rgb(&|x, y, c| ((x * 5 + y * 17 + c * 30) % 256) as u8);
        assert!((ssim(&r, &s).unwrap() - 0.49153499468732115).abs() < 1e-6 * 0.5);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = gray(10, 20, |_, _| 1);
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = gray(4, 4, |_, _| 1);
        let b = gray(4, 5, |_, _| 1);
        assert!(mse(&a, &b, Scale::Byte).is_err());
        assert!(psnr(&a, &b).is_err());
    }

    #[test]
    fn classification_examples() {
        let all = classification_metrics(&ConfusionCounts { tp: 1, fp: 0, tn: 1, fn_: 0 });
        assert_eq!(all.accuracy, Some(1.0));
        assert_eq!(all.precision, Some(1.0));
        assert_eq!(all.recall, Some(1.0));
        assert_eq!(all.f1, Some(1.0));

        let none = classification_metrics(&ConfusionCounts { tp: 0, fp: 0, tn: 5, fn_: 2 });
        assert_eq!(none.precision, None);
        assert_eq!(none.f1, None);

        let m = classification_metrics(&ConfusionCounts { tp: 90, fp: 10, tn: 85, fn_: 15 });
        assert!((m.accuracy.unwrap() - 0.875).abs() < 1e-12);
        assert!((m.precision.unwrap() - 0.9).abs() < 1e-12);
        assert!((m.recall.unwrap() - 90.0 / 105.0).abs() < 1e-12);
        assert!((m.recall.unwrap() - 0.8571).abs() < 1e-4);
        assert!((m.f1.unwrap() - 0.8780).abs() < 1e-4);
    }
}

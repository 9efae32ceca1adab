//! 8-bit image containers with a unit-range numeric view.

use std::io::Cursor;
use std::path::Path;

use faceprotect_nn::Tensor;
use image::ImageFormat;

use crate::error::{Error, Result};

/// Canonical watermark resolution used for hiding and for cosine comparison.
pub const CANONICAL_SIZE: u32 = 256;

/// Intensity (0-255) to the unit range.
pub fn to_unit(v: u8) -> f32 {
    v as f32 / 255.0
}

/// Unit range back to 8-bit, rounding to nearest and saturating.
pub fn from_unit(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Single-channel image, row-major.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct GrayImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

/// Three-channel image, row-major with interleaved RGB samples.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct RgbImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

fn check_dims(width: u32, height: u32, len: usize, channels: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidImage(format!("zero-area image {width}x{height}")));
    }
    let want = width as usize * height as usize * channels;
    if len != want {
        return Err(Error::InvalidImage(format!(
            "{width}x{height}x{channels} needs {want} samples, got {len}"
        )));
    }
    Ok(())
}

impl GrayImage {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        check_dims(width, height, data.len(), 1)?;
        Ok(Self { width, height, data })
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width as usize * height as usize])
    }

    /// Build from unit-range values, quantising to 8 bits.
    pub fn from_unit(width: u32, height: u32, values: &[f32]) -> Result<Self> {
        Self::new(width, height, values.iter().map(|&v| from_unit(v)).collect())
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.data[(y * self.width + x) as usize]
    }

    pub fn to_unit(&self) -> Vec<f32> {
        self.data.iter().map(|&v| to_unit(v)).collect()
    }

    /// `[1, 1, h, w]` tensor in the unit range.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[1, 1, self.height as usize, self.width as usize], self.to_unit())
    }

    pub fn resize_nearest(&self, width: u32, height: u32) -> Result<Self> {
        let data = resize_nearest(&self.data, self.width, self.height, 1, width, height)?;
        Self::new(width, height, data)
    }

    /// Crop `[x, x + w) x [y, y + h)`.
    pub fn crop(&self, x: u32, y: u32, w: u32, h: u32) -> Result<Self> {
        let data = crop(&self.data, self.width, self.height, 1, x, y, w, h)?;
        Self::new(w, h, data)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let img = open(path.as_ref())?;
        let g = img.to_luma8();
        Self::new(g.width(), g.height(), g.into_raw())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = self.encode_png()?;
        std::fs::write(path.as_ref(), bytes).map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let buf = image::GrayImage::from_raw(self.width, self.height, self.data.clone())
            .expect("dimensions validated at construction");
        let mut out = Cursor::new(Vec::new());
        buf.write_to(&mut out, ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let g = image::load_from_memory(bytes)?.to_luma8();
        Self::new(g.width(), g.height(), g.into_raw())
    }
}

impl RgbImage {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        check_dims(width, height, data.len(), 3)?;
        Ok(Self { width, height, data })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self> {
        let n = width as usize * height as usize;
        Self::new(width, height, rgb.iter().copied().cycle().take(n * 3).collect())
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let i = ((y * self.width + x) * 3) as usize;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn to_unit(&self) -> Vec<f32> {
        self.data.iter().map(|&v| to_unit(v)).collect()
    }

    /// Planar `[1, 3, h, w]` tensor in the unit range.
    pub fn to_tensor(&self) -> Tensor {
        let (w, h) = (self.width as usize, self.height as usize);
        let mut planar = vec![0.0f32; 3 * w * h];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                planar[c * w * h + i] = to_unit(px[c]);
            }
        }
        Tensor::new(&[1, 3, h, w], planar)
    }

    /// Inverse of [`RgbImage::to_tensor`] for a single planar sample, quantising to 8 bits.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let s = t.shape();
        if s.len() != 4 || s[0] != 1 || s[1] != 3 {
            return Err(Error::ShapeMismatch(format!("expected [1, 3, h, w], got {s:?}")));
        }
        let (h, w) = (s[2], s[3]);
        let mut data = vec![0u8; 3 * w * h];
        for i in 0..w * h {
            for c in 0..3 {
                data[i * 3 + c] = from_unit(t.data()[c * w * h + i]);
            }
        }
        Self::new(w as u32, h as u32, data)
    }

    /// ITU-R BT.601 luma, unrounded, on the 0-255 scale.
    pub fn luma(&self) -> Vec<f32> {
        self.data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32)
            .collect()
    }

    pub fn resize_nearest(&self, width: u32, height: u32) -> Result<Self> {
        let data = resize_nearest(&self.data, self.width, self.height, 3, width, height)?;
        Self::new(width, height, data)
    }

    pub fn crop(&self, x: u32, y: u32, w: u32, h: u32) -> Result<Self> {
        let data = crop(&self.data, self.width, self.height, 3, x, y, w, h)?;
        Self::new(w, h, data)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let img = open(path.as_ref())?;
        let rgb = img.to_rgb8();
        Self::new(rgb.width(), rgb.height(), rgb.into_raw())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = self.encode_png()?;
        std::fs::write(path.as_ref(), bytes).map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let buf = image::RgbImage::from_raw(self.width, self.height, self.data.clone())
            .expect("dimensions validated at construction");
        let mut out = Cursor::new(Vec::new());
        buf.write_to(&mut out, ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let rgb = image::load_from_memory(bytes)?.to_rgb8();
        Self::new(rgb.width(), rgb.height(), rgb.into_raw())
    }
}

fn open(path: &Path) -> Result<image::DynamicImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(image::load_from_memory(&bytes)?)
}

fn resize_nearest(
    src: &[u8],
    sw: u32,
    sh: u32,
    channels: usize,
    dw: u32,
    dh: u32,
) -> Result<Vec<u8>> {
    if dw == 0 || dh == 0 {
        return Err(Error::InvalidImage(format!("zero-area target {dw}x{dh}")));
    }
    let mut out = Vec::with_capacity(dw as usize * dh as usize * channels);
    for y in 0..dh as u64 {
        let sy = (y * sh as u64 / dh as u64) as usize;
        for x in 0..dw as u64 {
            let sx = (x * sw as u64 / dw as u64) as usize;
            let i = (sy * sw as usize + sx) * channels;
            out.extend_from_slice(&src[i..i + channels]);
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn crop(
    src: &[u8],
    sw: u32,
    sh: u32,
    channels: usize,
    x: u32,
    y: u32,
    w: u32,
    h: u32,
) -> Result<Vec<u8>> {
    if w == 0 || h == 0 || x + w > sw || y + h > sh {
        return Err(Error::InvalidImage(format!(
            "crop {w}x{h}+{x}+{y} outside {sw}x{sh}"
        )));
    }
    let mut out = Vec::with_capacity(w as usize * h as usize * channels);
    for row in y..y + h {
        let start = (row as usize * sw as usize + x as usize) * channels;
        out.extend_from_slice(&src[start..start + w as usize * channels]);
    }
    Ok(out)
}

/// Nearest-neighbour resize to `canonical_size`², unit range, row-major.
pub fn flatten_watermark(w: &GrayImage, canonical_size: u32) -> Result<Vec<f64>> {
    let resized = if w.width() == canonical_size && w.height() == canonical_size {
        w.clone()
    } else {
        w.resize_nearest(canonical_size, canonical_size)?
    };
    Ok(resized.data().iter().map(|&v| v as f64 / 255.0).collect())
}

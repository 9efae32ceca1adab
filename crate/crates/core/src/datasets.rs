//! Training and evaluation data: procedural face carriers and handwriting-style
//! digits, plus loaders for IDX files and PNG directories.

use std::f32::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::fingerprint;
use crate::error::{Error, Result};
use crate::image::{GrayImage, RgbImage, CANONICAL_SIZE};

pub const DIGIT_SIZE: u32 = 28;

fn subject_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Smooth noise from a coarse random lattice, bilinearly interpolated.
struct ValueNoise {
    cells: usize,
    grid: Vec<f32>,
}

impl ValueNoise {
    fn new(cells: usize, rng: &mut ChaCha8Rng) -> Self {
        let grid = (0..(cells + 1) * (cells + 1)).map(|_| rng.random_range(-1.0..1.0)).collect();
        Self { cells, grid }
    }

    /// `u`, `v` in [0, 1].
    fn at(&self, u: f32, v: f32) -> f32 {
        let n = self.cells;
        let (fx, fy) = (u * n as f32, v * n as f32);
        let (x0, y0) = ((fx as usize).min(n - 1), (fy as usize).min(n - 1));
        let (tx, ty) = (fx - x0 as f32, fy - y0 as f32);
        let g = |x: usize, y: usize| self.grid[y * (n + 1) + x];
        let top = g(x0, y0) * (1.0 - tx) + g(x0 + 1, y0) * tx;
        let bottom = g(x0, y0 + 1) * (1.0 - tx) + g(x0 + 1, y0 + 1) * tx;
        top * (1.0 - ty) + bottom * ty
    }
}

fn smoothstep(edge0: f32, edge1: f32, x: f32) -> f32 {
    let t = ((x - edge0) / (edge1 - edge0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn mix(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

fn jitter(rng: &mut ChaCha8Rng, base: [f32; 3], spread: f32) -> [f32; 3] {
    base.map(|c| (c + rng.random_range(-spread..spread)).clamp(0.0, 255.0))
}

/// Normalised ellipse distance: < 1 inside.
fn ellipse(x: f32, y: f32, cx: f32, cy: f32, rx: f32, ry: f32) -> f32 {
    (((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2)).sqrt()
}

/// One synthetic 256x256 frontal "face": background, hair, skin oval, eyes,
/// brows, nose shading and mouth, with subject-specific geometry and colours
/// plus smooth skin texture and fine sensor noise.
pub fn synthetic_face(seed: u64, subject: u64) -> RgbImage {
    let mut rng = subject_rng(seed, subject);
    let size = CANONICAL_SIZE as usize;
    let s = size as f32;

    let bg_a = jitter(&mut rng, [120.0, 140.0, 160.0], 90.0);
    let bg_b = jitter(&mut rng, [90.0, 100.0, 110.0], 80.0);
    let skin_tones = [[236.0, 200.0, 170.0], [205.0, 160.0, 125.0], [160.0, 115.0, 85.0], [110.0, 75.0, 55.0]];
    let tone = skin_tones[rng.random_range(0..skin_tones.len())];
    let skin = jitter(&mut rng, tone, 18.0);
    let hair_tones = [[30.0, 25.0, 20.0], [90.0, 60.0, 35.0], [170.0, 130.0, 70.0], [120.0, 120.0, 120.0]];
    let tone = hair_tones[rng.random_range(0..hair_tones.len())];
    let hair = jitter(&mut rng, tone, 20.0);
    let iris = jitter(&mut rng, [70.0, 90.0, 100.0], 60.0);
    let lips = jitter(&mut rng, [180.0, 90.0, 90.0], 30.0);

    let cx = s * (0.5 + rng.random_range(-0.06..0.06));
    let cy = s * (0.54 + rng.random_range(-0.05..0.05));
    let fw = s * rng.random_range(0.25..0.34);
    let fh = s * rng.random_range(0.33..0.42);
    let hair_top = cy - fh * rng.random_range(1.05..1.25);
    let hair_width = fw * rng.random_range(1.05..1.3);
    let hair_len = rng.random_range(0.0..0.9);
    let eye_dx = fw * rng.random_range(0.33..0.45);
    let eye_y = cy - fh * rng.random_range(0.12..0.28);
    let eye_r = fw * rng.random_range(0.1..0.16);
    let brow_gap = eye_r * rng.random_range(1.3..2.0);
    let nose_len = fh * rng.random_range(0.25..0.4);
    let mouth_y = cy + fh * rng.random_range(0.4..0.58);
    let mouth_w = fw * rng.random_range(0.3..0.55);
    let mouth_h = fh * rng.random_range(0.04..0.1);
    let light = rng.random_range(-0.35..0.35);

    let skin_tex = ValueNoise::new(24, &mut rng);
    let bg_tex = ValueNoise::new(8, &mut rng);
    let tex_amp = rng.random_range(6.0..12.0);

    let mut data = Vec::with_capacity(size * size * 3);
    for yi in 0..size {
        for xi in 0..size {
            let (x, y) = (xi as f32 + 0.5, yi as f32 + 0.5);
            let (u, v) = (x / s, y / s);
            let mut c = mix(bg_a, bg_b, (v + 0.3 * bg_tex.at(u, v)).clamp(0.0, 1.0));

            // Hair mass behind the head, optionally falling to the shoulders.
            let hd = ellipse(x, y, cx, (hair_top + cy) * 0.5, hair_width, (cy - hair_top) * 0.6 + fh * 0.45);
            let below = y > cy + fh * (hair_len - 0.3);
            if hd < 1.0 && !below {
                c = mix(c, hair, smoothstep(1.0, 0.95, hd));
            }

            let fd = ellipse(x, y, cx, cy, fw, fh);
            if fd < 1.02 {
                let shade = 1.0 + light * (x - cx) / fw * 0.25 - 0.15 * fd * fd;
                let sk = skin.map(|k| k * shade + tex_amp * skin_tex.at(u, v));
                c = mix(c, sk, smoothstep(1.02, 0.98, fd));

                // Fringe over the forehead.
                if y < hair_top + (cy - hair_top) * 0.55 && hd < 1.0 {
                    c = mix(c, hair, 0.85);
                }
                for side in [-1.0f32, 1.0] {
                    let ex = cx + side * eye_dx;
                    let ed = ellipse(x, y, ex, eye_y, eye_r * 1.5, eye_r);
                    if ed < 1.0 {
                        c = mix(c, [240.0, 240.0, 235.0], smoothstep(1.0, 0.85, ed));
                        let pd = ellipse(x, y, ex, eye_y, eye_r * 0.65, eye_r * 0.65);
                        c = mix(c, iris, smoothstep(1.0, 0.8, pd));
                        let dd = ellipse(x, y, ex, eye_y, eye_r * 0.3, eye_r * 0.3);
                        c = mix(c, [15.0, 15.0, 15.0], smoothstep(1.0, 0.7, dd));
                    }
                    let bd = ellipse(x, y, ex, eye_y - brow_gap, eye_r * 1.7, eye_r * 0.3);
                    c = mix(c, hair, 0.9 * smoothstep(1.0, 0.7, bd));
                }
                let nx = (x - cx - light * 4.0).abs();
                if y > eye_y && y < eye_y + nose_len && nx < fw * 0.08 {
                    c = c.map(|k| k * (0.9 + 0.1 * nx / (fw * 0.08)));
                }
                let md = ellipse(x, y, cx, mouth_y, mouth_w, mouth_h);
                c = mix(c, lips, smoothstep(1.0, 0.8, md));
            }
            for k in c {
                let noise: f32 = rng.random_range(-4.0..4.0);
                data.push((k + noise).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    RgbImage::new(CANONICAL_SIZE, CANONICAL_SIZE, data).expect("face buffer has canonical size")
}

/// `n` distinct synthetic subjects; subject `i` is reproducible from `(seed, i)`.
pub fn synthetic_faces(n: usize, seed: u64) -> Vec<RgbImage> {
    (0..n as u64).map(|i| synthetic_face(seed, i)).collect()
}

type Stroke = Vec<(f32, f32)>;

fn ellipse_stroke(cx: f32, cy: f32, rx: f32, ry: f32) -> Stroke {
    (0..=24)
        .map(|i| {
            let t = i as f32 / 24.0 * 2.0 * PI;
            (cx + rx * t.cos(), cy + ry * t.sin())
        })
        .collect()
}

/// Skeleton strokes for each digit in a unit box (x right, y down).
fn digit_strokes(class: u8) -> Vec<Stroke> {
    match class {
        0 => vec![ellipse_stroke(0.5, 0.5, 0.3, 0.42)],
        1 => vec![vec![(0.36, 0.25), (0.52, 0.1), (0.52, 0.9)]],
        2 => vec![vec![
            (0.22, 0.3), (0.3, 0.15), (0.5, 0.1), (0.7, 0.15), (0.76, 0.32),
            (0.65, 0.5), (0.22, 0.9), (0.8, 0.9),
        ]],
        3 => vec![vec![
            (0.22, 0.15), (0.5, 0.08), (0.75, 0.2), (0.72, 0.38), (0.45, 0.48),
            (0.75, 0.6), (0.78, 0.78), (0.55, 0.92), (0.22, 0.85),
        ]],
        4 => vec![vec![(0.65, 0.9), (0.65, 0.1), (0.18, 0.65), (0.82, 0.65)]],
        5 => vec![vec![
            (0.75, 0.1), (0.3, 0.1), (0.26, 0.45), (0.55, 0.4), (0.75, 0.55),
            (0.75, 0.78), (0.55, 0.92), (0.22, 0.85),
        ]],
        6 => vec![vec![
            (0.7, 0.12), (0.45, 0.2), (0.28, 0.5), (0.3, 0.8), (0.5, 0.92),
            (0.72, 0.8), (0.72, 0.6), (0.5, 0.5), (0.3, 0.62),
        ]],
        7 => vec![vec![(0.2, 0.1), (0.8, 0.1), (0.45, 0.9)]],
        8 => vec![ellipse_stroke(0.5, 0.3, 0.22, 0.2), ellipse_stroke(0.5, 0.7, 0.26, 0.22)],
        _ => vec![ellipse_stroke(0.5, 0.32, 0.22, 0.2), vec![(0.72, 0.32), (0.6, 0.9)]],
    }
}

fn segment_distance(p: (f32, f32), a: (f32, f32), b: (f32, f32)) -> f32 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ((p.0 - a.0 - t * dx).powi(2) + (p.1 - a.1 - t * dy).powi(2)).sqrt()
}

/// Render one handwriting-style 28x28 digit: white strokes on black, with a
/// random affine pose, per-point wobble and stroke width.
pub fn synthetic_digit(class: u8, rng: &mut impl Rng) -> GrayImage {
    let n = DIGIT_SIZE as f32;
    let scale = n * rng.random_range(0.62..0.78);
    let angle: f32 = rng.random_range(-0.25..0.25);
    let shear: f32 = rng.random_range(-0.25..0.25);
    let (tx, ty) = (rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
    let radius: f32 = rng.random_range(0.9..1.7);
    let (sin, cos) = angle.sin_cos();
    let strokes: Vec<Stroke> = digit_strokes(class % 10)
        .into_iter()
        .map(|stroke| {
            stroke
                .into_iter()
                .map(|(x, y)| {
                    let (x, y) = (
                        x - 0.5 + rng.random_range(-0.03..0.03),
                        y - 0.5 + rng.random_range(-0.03..0.03),
                    );
                    let x = x + shear * y;
                    let (x, y) = (x * cos - y * sin, x * sin + y * cos);
                    (n / 2.0 + tx + x * scale, n / 2.0 + ty + y * scale)
                })
                .collect()
        })
        .collect();
    let mut data = Vec::with_capacity((DIGIT_SIZE * DIGIT_SIZE) as usize);
    for yi in 0..DIGIT_SIZE {
        for xi in 0..DIGIT_SIZE {
            let p = (xi as f32 + 0.5, yi as f32 + 0.5);
            let d = strokes
                .iter()
                .flat_map(|s| s.windows(2).map(move |w| segment_distance(p, w[0], w[1])))
                .fold(f32::INFINITY, f32::min);
            data.push(((radius + 0.5 - d).clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    GrayImage::new(DIGIT_SIZE, DIGIT_SIZE, data).expect("digit buffer has fixed size")
}

/// `n` digits cycling through the ten classes.
pub fn synthetic_digits(n: usize, seed: u64) -> Vec<GrayImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| synthetic_digit((i % 10) as u8, &mut rng)).collect()
}

/// Parse an uncompressed IDX3 unsigned-byte image file (the MNIST layout).
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<Vec<GrayImage>> {
    let err = |reason: String| Error::Data {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 16 {
        return Err(err("truncated IDX header".into()));
    }
    let word = |i: usize| u32::from_be_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]);
    if word(0) != 0x0000_0803 {
        return Err(err(format!("bad IDX magic {:#010x}, expected 0x00000803", word(0))));
    }
    let (count, rows, cols) = (word(4) as usize, word(8), word(12));
    let per = rows as usize * cols as usize;
    if per == 0 {
        return Err(err("zero-area images".into()));
    }
    if bytes.len() != 16 + count * per {
        return Err(err(format!(
            "expected {} bytes for {count} images of {rows}x{cols}, found {}",
            16 + count * per,
            bytes.len()
        )));
    }
    bytes[16..]
        .chunks_exact(per)
        .map(|c| GrayImage::new(cols, rows, c.to_vec()))
        .collect()
}

pub fn load_idx_images(path: impl AsRef<Path>) -> Result<Vec<GrayImage>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx_images(&bytes, path)
}

/// PNG files in `dir`, sorted by file name.
pub fn png_files(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::Data {
        path: dir.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Data {
            path: dir.to_path_buf(),
            reason: "no PNG files".into(),
        });
    }
    Ok(files)
}

/// Centre square crop followed by a nearest-neighbour resize to 256x256.
pub fn prepare_carrier(img: &RgbImage) -> Result<RgbImage> {
    let side = img.width().min(img.height());
    let square = img.crop((img.width() - side) / 2, (img.height() - side) / 2, side, side)?;
    if side == CANONICAL_SIZE {
        return Ok(square);
    }
    square.resize_nearest(CANONICAL_SIZE, CANONICAL_SIZE)
}

pub fn load_carrier_dir(dir: impl AsRef<Path>, limit: Option<usize>) -> Result<Vec<RgbImage>> {
    let files = png_files(dir)?;
    let take = limit.unwrap_or(files.len());
    files.iter().take(take).map(|p| RgbImage::load(p).and_then(|i| prepare_carrier(&i))).collect()
}

/// Grayscale PNGs resized (nearest) to `size`x`size`.
pub fn load_gray_dir(dir: impl AsRef<Path>, size: u32, limit: Option<usize>) -> Result<Vec<GrayImage>> {
    let files = png_files(dir)?;
    let take = limit.unwrap_or(files.len());
    files
        .iter()
        .take(take)
        .map(|p| {
            let img = GrayImage::load(p)?;
            if img.width() == size && img.height() == size {
                Ok(img)
            } else {
                img.resize_nearest(size, size)
            }
        })
        .collect()
}

pub fn gray_fingerprint(images: &[GrayImage]) -> String {
    fingerprint(images.iter().map(|i| i.data()))
}

pub fn rgb_fingerprint(images: &[RgbImage]) -> String {
    fingerprint(images.iter().map(|i| i.data()))
}

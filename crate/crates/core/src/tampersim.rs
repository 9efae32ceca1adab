//! Simulated forgeries of protected images.
//!
//! Real face-swap and attribute-editing models are out of reach here, so each
//! mode reproduces what such a model does to the embedded signal: an identity
//! swap keeps the hidden residual on top of somebody else's face, an attribute
//! edit distorts the face region, and a strip regenerates the image without
//! any watermark.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::RgbImage;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TamperMode {
    IdentitySwap,
    AttributeEdit,
    Strip,
    Noop,
}

impl TamperMode {
    pub const ALL: [TamperMode; 4] = [
        TamperMode::IdentitySwap,
        TamperMode::AttributeEdit,
        TamperMode::Strip,
        TamperMode::Noop,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TamperMode::IdentitySwap => "identity_swap",
            TamperMode::AttributeEdit => "attribute_edit",
            TamperMode::Strip => "strip",
            TamperMode::Noop => "noop",
        }
    }

    /// Whether the output should be judged a forgery.
    pub fn is_forgery(self) -> bool {
        self != TamperMode::Noop
    }
}

impl fmt::Display for TamperMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TamperMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TamperMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown tamper mode {s:?}")))
    }
}

/// A mixed image together with the carrier it was made from.
#[derive(Clone, Debug)]
pub struct Protected {
    pub mixed: RgbImage,
    pub carrier: Option<RgbImage>,
}

#[derive(Clone, Debug)]
pub struct Tampered {
    pub image: RgbImage,
    pub warning: Option<String>,
}

/// Strength of the attribute edit: peak displacement in pixels and peak
/// brightness offset in intensity levels.
pub const EDIT_WARP_PX: f64 = 6.0;
pub const EDIT_BRIGHTNESS: f64 = 56.0;

pub fn simulate_tamper(
    protected: &Protected,
    donor: Option<&RgbImage>,
    mode: TamperMode,
    seed: u64,
) -> Result<Tampered> {
    let mixed = &protected.mixed;
    let carrier = || {
        protected
            .carrier
            .as_ref()
            .ok_or_else(|| Error::Dataset(format!("{mode} needs the original carrier")))
    };
    let (image, warning) = match mode {
        TamperMode::Noop => (mixed.clone(), None),
        TamperMode::Strip => (carrier()?.clone(), None),
        TamperMode::AttributeEdit => (attribute_edit(mixed, seed), None),
        TamperMode::IdentitySwap => {
            let carrier = carrier()?;
            let donor = donor.ok_or_else(|| Error::Dataset("identity_swap needs a donor image".into()))?;
            let (w, h) = (mixed.width(), mixed.height());
            if carrier.width() != w || carrier.height() != h {
                return Err(Error::ShapeMismatch("carrier and mixed image differ in size".into()));
            }
            let donor = if donor.width() != w || donor.height() != h {
                donor.resize_nearest(w, h)?
            } else {
                donor.clone()
            };
            let warning = (donor.data() == carrier.data()).then(|| "donor is the original carrier".to_string());
            let data = donor
                .data()
                .iter()
                .zip(mixed.data().iter().zip(carrier.data()))
                .map(|(&d, (&m, &c))| (d as i16 + m as i16 - c as i16).clamp(0, 255) as u8)
                .collect();
            (RgbImage::new(w, h, data)?, warning)
        }
    };
    Ok(Tampered { image, warning })
}

/// Smooth seeded warp plus an uneven brightness shift over the central 70% of the image.
/// The blend weight is flat inside the face block and ramps to zero at its edge.
pub fn attribute_edit(img: &RgbImage, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (img.width() as usize, img.height() as usize);
    let phase: [f64; 6] = std::array::from_fn(|_| rng.random_range(0.0..std::f64::consts::TAU));
    let period = rng.random_range(0.35..0.6) * w.min(h) as f64;
    let light_period = rng.random_range(0.4..0.6) * w.min(h) as f64;
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let brightness = sign * EDIT_BRIGHTNESS * rng.random_range(0.9..1.0);

    let weight = |t: f64| -> f64 {
        // t is the normalised position in [0, 1]; block spans [0.15, 0.85]
        // with a 0.05 ramp on each side.
        let d = (t - 0.5).abs();
        if d <= 0.3 {
            1.0
        } else if d >= 0.35 {
            0.0
        } else {
            0.5 + 0.5 * ((d - 0.3) / 0.05 * std::f64::consts::PI).cos()
        }
    };
    let src = img.data();
    let mut out = src.to_vec();
    let k = std::f64::consts::TAU / period;
    let kl = std::f64::consts::TAU / light_period;
    for y in 0..h {
        let wy = weight((y as f64 + 0.5) / h as f64);
        if wy == 0.0 {
            continue;
        }
        for x in 0..w {
            let a = wy * weight((x as f64 + 0.5) / w as f64);
            if a == 0.0 {
                continue;
            }
            let dx = EDIT_WARP_PX * a * (k * y as f64 + phase[0]).sin() * (k * x as f64 + phase[1]).cos();
            let dy = EDIT_WARP_PX * a * (k * x as f64 + phase[2]).sin() * (k * y as f64 + phase[3]).cos();
            let light = brightness * (1.0 + (kl * x as f64 + phase[4]).sin() * (kl * y as f64 + phase[5]).sin());
            let sample = bilinear(src, w, h, x as f64 + dx, y as f64 + dy);
            let o = (y * w + x) * 3;
            for c in 0..3 {
                out[o + c] = (sample[c] + a * light).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    RgbImage::new(w as u32, h as u32, out).expect("dimensions preserved")
}

fn bilinear(src: &[u8], w: usize, h: usize, x: f64, y: f64) -> [f64; 3] {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let px = |xx: usize, yy: usize, c: usize| src[(yy * w + xx) * 3 + c] as f64;
    std::array::from_fn(|c| {
        let top = px(x0, y0, c) * (1.0 - fx) + px(x1, y0, c) * fx;
        let bottom = px(x0, y1, c) * (1.0 - fx) + px(x1, y1, c) * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroundTruth {
    #[serde(rename = "real")]
    Real,
    #[serde(rename = "fake")]
    Fake,
}

impl GroundTruth {
    pub fn as_str(self) -> &'static str {
        match self {
            GroundTruth::Real => "real",
            GroundTruth::Fake => "fake",
        }
    }
}

#[derive(Clone, Debug)]
pub struct EvalItem {
    pub image: RgbImage,
    pub label: GroundTruth,
    pub mode: TamperMode,
    /// Index into the protected list the item was derived from.
    pub source: usize,
    pub seed: u64,
}

/// Labelled evaluation set: `n_real` untouched protected images and
/// `n_fake_per_mode` forgeries for every requested forging mode. Sources are
/// drawn without replacement within each group, donors without replacement
/// per mode.
pub fn build_eval_set(
    protected: &[Protected],
    donors: &[RgbImage],
    modes: &[TamperMode],
    n_real: usize,
    n_fake_per_mode: usize,
    seed: u64,
) -> Result<Vec<EvalItem>> {
    let fake_modes: Vec<TamperMode> = modes.iter().copied().filter(|m| m.is_forgery()).collect();
    if n_real > protected.len() || (!fake_modes.is_empty() && n_fake_per_mode > protected.len()) {
        return Err(Error::Dataset(format!(
            "eval set needs {} sources per group, only {} protected images",
            n_real.max(n_fake_per_mode),
            protected.len()
        )));
    }
    if fake_modes.contains(&TamperMode::IdentitySwap) && n_fake_per_mode > donors.len() {
        return Err(Error::Dataset(format!(
            "identity_swap needs {n_fake_per_mode} donors, only {} given",
            donors.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::with_capacity(n_real + n_fake_per_mode * fake_modes.len());
    for source in sample(&mut rng, protected.len(), n_real) {
        let item_seed = rng.random();
        items.push(EvalItem {
            image: protected[source].mixed.clone(),
            label: GroundTruth::Real,
            mode: TamperMode::Noop,
            source,
            seed: item_seed,
        });
    }
    for mode in fake_modes {
        let sources = sample(&mut rng, protected.len(), n_fake_per_mode).into_vec();
        let donor_idx = if mode == TamperMode::IdentitySwap {
            sample(&mut rng, donors.len(), n_fake_per_mode).into_vec()
        } else {
            Vec::new()
        };
        for (k, source) in sources.into_iter().enumerate() {
            let item_seed = rng.random();
            let donor = donor_idx.get(k).map(|&d| &donors[d]);
            let t = simulate_tamper(&protected[source], donor, mode, item_seed)?;
            items.push(EvalItem {
                image: t.image,
                label: GroundTruth::Fake,
                mode,
                source,
                seed: item_seed,
            });
        }
    }
    Ok(items)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRow {
    pub path: String,
    pub label: GroundTruth,
    pub mode: TamperMode,
    pub seed: u64,
}

pub const MANIFEST_HEADER: &str = "path,label,mode,seed";

/// Save every item as PNG under `dir` and write `dir/manifest.csv`.
pub fn write_eval_set(dir: impl AsRef<Path>, items: &[EvalItem]) -> Result<Vec<ManifestRow>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rows = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let name = format!("{i:05}_{}.png", item.mode);
        item.image.save(dir.join(&name))?;
        rows.push(ManifestRow {
            path: name,
            label: item.label,
            mode: item.mode,
            seed: item.seed,
        });
    }
    let path = dir.join("manifest.csv");
    std::fs::write(&path, format_manifest(&rows)).map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}

pub fn format_manifest(rows: &[ManifestRow]) -> String {
    let mut s = String::from(MANIFEST_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!("{},{},{},{}\n", r.path, r.label.as_str(), r.mode, r.seed));
    }
    s
}

pub fn parse_manifest(text: &str, source_name: &str) -> Result<Vec<ManifestRow>> {
    let err = |line: usize, reason: String| Error::Parse {
        source_name: source_name.to_string(),
        line,
        reason,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == MANIFEST_HEADER => {}
        _ => return Err(err(1, format!("expected header {MANIFEST_HEADER:?}"))),
    }
    lines
        .map(|(i, line)| {
            let f: Vec<&str> = line.trim().split(',').collect();
            if f.len() != 4 {
                return Err(err(i + 1, format!("expected 4 fields, found {}", f.len())));
            }
            let label = match f[1] {
                "real" => GroundTruth::Real,
                "fake" => GroundTruth::Fake,
                other => return Err(err(i + 1, format!("unknown label {other:?}"))),
            };
            let mode = f[2].parse().map_err(|_| err(i + 1, format!("unknown mode {:?}", f[2])))?;
            let seed = f[3].parse().map_err(|_| err(i + 1, format!("bad seed {:?}", f[3])))?;
            Ok(ManifestRow {
                path: f[0].to_string(),
                label,
                mode,
                seed,
            })
        })
        .collect()
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRow>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::synthetic_face;
    use crate::features::stub_extract;

    fn fake_protected(seed: u64) -> Protected {
        let carrier = synthetic_face(seed, 0);
        let mut data = carrier.data().to_vec();
        for (i, v) in data.iter_mut().enumerate() {
            *v = v.saturating_add((i % 3) as u8);
        }
        Protected {
            mixed: RgbImage::new(256, 256, data).unwrap(),
            carrier: Some(carrier),
        }
    }

    #[test]
    fn noop_and_strip() {
        let p = fake_protected(1);
        let noop = simulate_tamper(&p, None, TamperMode::Noop, 0).unwrap();
        assert_eq!(noop.image, p.mixed);
        let strip = simulate_tamper(&p, None, TamperMode::Strip, 0).unwrap();
        assert_eq!(&strip.image, p.carrier.as_ref().unwrap());
        let bare = Protected { mixed: p.mixed.clone(), carrier: None };
        assert!(simulate_tamper(&bare, None, TamperMode::Strip, 0).is_err());
    }

    #[test]
    fn identity_swap_reapplies_residual() {
        let p = fake_protected(2);
        let donor = synthetic_face(3, 7);
        let t = simulate_tamper(&p, Some(&donor), TamperMode::IdentitySwap, 0).unwrap();
        assert!(t.warning.is_none());
        let carrier = p.carrier.as_ref().unwrap();
        for i in 0..t.image.data().len() {
            let want = (donor.data()[i] as i16 + p.mixed.data()[i] as i16 - carrier.data()[i] as i16).clamp(0, 255);
            assert_eq!(t.image.data()[i] as i16, want);
        }
        let same = simulate_tamper(&p, Some(carrier), TamperMode::IdentitySwap, 0).unwrap();
        assert!(same.warning.is_some());
        assert!(simulate_tamper(&p, None, TamperMode::IdentitySwap, 0).is_err());
    }

    #[test]
    fn attribute_edit_is_local_seeded_and_shifts_features() {
        for seed in 0..100 {
            let img = synthetic_face(4, seed);
            let a = attribute_edit(&img, seed);
            assert_eq!(a, attribute_edit(&img, seed));
            // Border rows and columns outside the face block are untouched.
            for y in 0..256 {
                for x in (0..38).chain(218..256) {
                    assert_eq!(a.get(x, y), img.get(x, y));
                    assert_eq!(a.get(y, x), img.get(y, x));
                }
            }
            let shift = stub_extract(&a).unwrap().l2_distance(&stub_extract(&img).unwrap());
            assert!(shift >= 0.5, "seed {seed}: feature shift {shift}");
        }
    }

    #[test]
    fn eval_set_bookkeeping() {
        let protected: Vec<Protected> = (0..12).map(fake_protected).collect();
        let donors: Vec<RgbImage> = (0..10).map(|i| synthetic_face(99, i)).collect();
        let items = build_eval_set(&protected, &donors, &[TamperMode::IdentitySwap], 10, 10, 5).unwrap();
        assert_eq!(items.len(), 20);
        assert_eq!(items.iter().filter(|i| i.label == GroundTruth::Real).count(), 10);
        assert_eq!(items.iter().filter(|i| i.label == GroundTruth::Fake).count(), 10);
        for label in [GroundTruth::Real, GroundTruth::Fake] {
            let mut src: Vec<usize> = items.iter().filter(|i| i.label == label).map(|i| i.source).collect();
            src.sort_unstable();
            src.dedup();
            assert_eq!(src.len(), 10);
        }
        let again = build_eval_set(&protected, &donors, &[TamperMode::IdentitySwap], 10, 10, 5).unwrap();
        assert!(items.iter().zip(&again).all(|(a, b)| a.image == b.image && a.seed == b.seed));
        assert!(build_eval_set(&protected, &donors, &[TamperMode::Strip], 13, 1, 5).is_err());
        assert!(build_eval_set(&protected, &donors[..3], &[TamperMode::IdentitySwap], 1, 5, 5).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let rows = vec![
            ManifestRow { path: "a.png".into(), label: GroundTruth::Real, mode: TamperMode::Noop, seed: 1 },
            ManifestRow { path: "b.png".into(), label: GroundTruth::Fake, mode: TamperMode::AttributeEdit, seed: 42 },
        ];
        assert_eq!(parse_manifest(&format_manifest(&rows), "m").unwrap(), rows);
        assert!(parse_manifest("path,label\nx", "m").is_err());
        assert!(parse_manifest("path,label,mode,seed\na.png,real,melt,1\n", "m").is_err());
    }
}

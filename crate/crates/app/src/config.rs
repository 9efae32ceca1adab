//! The `faceprotect-config/1` TOML file shared by every command.

use std::path::{Path, PathBuf};

use faceprotect::datasets::{load_carrier_dir, load_gray_dir, load_idx_images, synthetic_digits, synthetic_faces};
use faceprotect::godwgm::{GodwgmTrainConfig, WATERMARK_SIDE};
use faceprotect::image::{GrayImage, RgbImage};
use faceprotect::tampersim::TamperMode;
use faceprotect::verify::DEFAULT_TAU;
use faceprotect::wvs::WvsTrainConfig;
use serde::Deserialize;

use crate::error::{CliError, EXIT_CONFIG, EXIT_DATA};

pub const CONFIG_SCHEMA: &str = "faceprotect-config/1";

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema: String,
    /// Seeds every training run, synthetic dataset and eval-set draw.
    #[serde(default)]
    pub seed: u64,
    pub godwgm: Option<GodwgmSection>,
    pub wvs: Option<WvsSection>,
    pub bench: Option<BenchSection>,
    pub serve: Option<ServeSection>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GodwgmSection {
    /// Precomputed feature file; takes precedence over `faces`.
    pub features: Option<PathBuf>,
    /// Face images whose features drive the generator.
    pub faces: Option<Source>,
    /// 28x28 handwriting targets for the critic: an IDX file, a PNG directory
    /// or `synthetic:N`.
    pub digits: Source,
    pub output: PathBuf,
    #[serde(default)]
    pub train: GodwgmTrainConfig,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WvsSection {
    pub carriers: Source,
    /// Trained generator that maps carrier features to watermarks.
    pub godwgm: PathBuf,
    pub output: PathBuf,
    #[serde(default)]
    pub train: WvsTrainConfig,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    pub godwgm: PathBuf,
    pub wvs: PathBuf,
    pub carriers: Source,
    pub donors: Source,
    pub unprotected: Option<Source>,
    #[serde(default = "default_modes")]
    pub modes: Vec<TamperMode>,
    #[serde(default = "default_count")]
    pub n_real: usize,
    #[serde(default = "default_count")]
    pub n_fake_per_mode: usize,
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Where to write the eval set, its manifest and the JSON report.
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServeSection {
    pub godwgm: PathBuf,
    pub wvs: PathBuf,
    #[serde(default = "default_bind")]
    pub bind: String,
    #[serde(default = "default_tau")]
    pub tau: f64,
    pub request_log: Option<PathBuf>,
}

fn default_modes() -> Vec<TamperMode> {
    vec![TamperMode::IdentitySwap, TamperMode::AttributeEdit, TamperMode::Strip]
}

fn default_count() -> usize {
    100
}

fn default_tau() -> f64 {
    DEFAULT_TAU
}

fn default_bind() -> String {
    "127.0.0.1:8080".to_string()
}

/// Where images come from: `synthetic:N` or a filesystem path.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(try_from = "String")]
pub enum Source {
    Synthetic(usize),
    Path(PathBuf),
}

impl TryFrom<String> for Source {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        match s.strip_prefix("synthetic:") {
            Some(n) => n
                .parse()
                .map(Source::Synthetic)
                .map_err(|_| format!("bad synthetic count in {s:?}")),
            None if s.is_empty() => Err("empty data source".into()),
            None => Ok(Source::Path(PathBuf::from(s))),
        }
    }
}

// Salts so each synthetic role draws different images from the same seed.
const SALT_FACES: u64 = 0x11;
const SALT_DIGITS: u64 = 0x22;
const SALT_CARRIERS: u64 = 0x33;
const SALT_BENCH_CARRIERS: u64 = 0x44;
const SALT_DONORS: u64 = 0x55;
const SALT_UNPROTECTED: u64 = 0x66;

fn salted(seed: u64, salt: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ salt
}

impl Source {
    fn resolve(&self, base: &Path) -> Source {
        match self {
            Source::Path(p) if p.is_relative() => Source::Path(base.join(p)),
            other => other.clone(),
        }
    }

    pub fn load_faces(&self, seed: u64) -> Result<Vec<RgbImage>, CliError> {
        match self {
            Source::Synthetic(n) => Ok(synthetic_faces(*n, seed)),
            Source::Path(p) => {
                require_exists(p)?;
                load_carrier_dir(p, None).map_err(CliError::data)
            }
        }
    }

    pub fn load_digits(&self, seed: u64) -> Result<Vec<GrayImage>, CliError> {
        let side = WATERMARK_SIDE as u32;
        match self {
            Source::Synthetic(n) => Ok(synthetic_digits(*n, seed)),
            Source::Path(p) => {
                require_exists(p)?;
                if p.is_dir() {
                    load_gray_dir(p, side, None).map_err(CliError::data)
                } else {
                    load_idx_images(p).map_err(CliError::data)
                }
            }
        }
    }
}

fn require_exists(p: &Path) -> Result<(), CliError> {
    if p.exists() {
        Ok(())
    } else {
        Err(CliError::new(EXIT_DATA, format!("dataset path {} does not exist", p.display())))
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Config =
            toml::from_str(text).map_err(|e| CliError::new(EXIT_CONFIG, format!("invalid config: {e}")))?;
        if cfg.schema != CONFIG_SCHEMA {
            return Err(CliError::new(
                EXIT_CONFIG,
                format!("config schema {:?} is not {CONFIG_SCHEMA:?}", cfg.schema),
            ));
        }
        Ok(cfg)
    }

    /// Read a config file; relative paths inside it are taken relative to the file.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::new(EXIT_CONFIG, format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(g) = &mut self.godwgm {
            if let Some(f) = &mut g.features {
                fix(f);
            }
            g.faces = g.faces.as_ref().map(|s| s.resolve(base));
            g.digits = g.digits.resolve(base);
            fix(&mut g.output);
        }
        if let Some(w) = &mut self.wvs {
            w.carriers = w.carriers.resolve(base);
            fix(&mut w.godwgm);
            fix(&mut w.output);
        }
        if let Some(b) = &mut self.bench {
            fix(&mut b.godwgm);
            fix(&mut b.wvs);
            b.carriers = b.carriers.resolve(base);
            b.donors = b.donors.resolve(base);
            b.unprotected = b.unprotected.as_ref().map(|s| s.resolve(base));
            if let Some(o) = &mut b.output {
                fix(o);
            }
        }
        if let Some(s) = &mut self.serve {
            fix(&mut s.godwgm);
            fix(&mut s.wvs);
            if let Some(l) = &mut s.request_log {
                fix(l);
            }
        }
    }

    pub fn section<'a, T>(&self, section: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
        section
            .as_ref()
            .ok_or_else(|| CliError::new(EXIT_CONFIG, format!("config has no [{name}] section")))
    }

    pub fn faces_seed(&self) -> u64 {
        salted(self.seed, SALT_FACES)
    }
    pub fn digits_seed(&self) -> u64 {
        salted(self.seed, SALT_DIGITS)
    }
    pub fn carriers_seed(&self) -> u64 {
        salted(self.seed, SALT_CARRIERS)
    }
    pub fn bench_carriers_seed(&self) -> u64 {
        salted(self.seed, SALT_BENCH_CARRIERS)
    }
    pub fn donors_seed(&self) -> u64 {
        salted(self.seed, SALT_DONORS)
    }
    pub fn unprotected_seed(&self) -> u64 {
        salted(self.seed, SALT_UNPROTECTED)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_and_resolves_paths() {
        let text = r#"
            schema = "faceprotect-config/1"
            seed = 3
            [godwgm]
            faces = "synthetic:10"
            digits = "mnist/train-images-idx3-ubyte"
            output = "out/godwgm"
            [godwgm.train]
            epochs = 2
        "#;
        let mut cfg = Config::parse(text).unwrap();
        cfg.resolve_paths(Path::new("/base"));
        let g = cfg.godwgm.as_ref().unwrap();
        assert_eq!(g.faces, Some(Source::Synthetic(10)));
        assert_eq!(g.digits, Source::Path("/base/mnist/train-images-idx3-ubyte".into()));
        assert_eq!(g.output, PathBuf::from("/base/out/godwgm"));
        assert_eq!(g.train.epochs, 2);
        assert_eq!(g.train.batch_size, 64);
    }

    #[test]
    fn shipped_desk_config_is_valid() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml");
        let cfg = Config::load(&path).unwrap();
        let g = cfg.godwgm.as_ref().unwrap();
        g.train.validate().unwrap();
        assert_eq!(g.train.generator_width, 64);
        let w = cfg.wvs.as_ref().unwrap();
        w.train.validate().unwrap();
        assert_eq!(w.train.lambda_hiding, 30.0);
        assert_eq!(w.godwgm, g.output);
        assert_eq!(cfg.bench.as_ref().unwrap().tau, DEFAULT_TAU);
    }

    #[test]
    fn rejects_wrong_schema_and_unknown_keys() {
        assert_eq!(Config::parse("schema = \"other/1\"").unwrap_err().code, EXIT_CONFIG);
        let e = Config::parse("schema = \"faceprotect-config/1\"\nsurprise = 1").unwrap_err();
        assert_eq!(e.code, EXIT_CONFIG);
        let e = Config::parse(
            "schema = \"faceprotect-config/1\"\n[wvs]\ncarriers = \"synthetic:x\"\ngodwgm = \"g\"\noutput = \"o\"",
        )
        .unwrap_err();
        assert_eq!(e.code, EXIT_CONFIG);
    }

    #[test]
    fn bench_defaults() {
        let cfg = Config::parse(
            "schema = \"faceprotect-config/1\"\n[bench]\ngodwgm = \"g\"\nwvs = \"w\"\ncarriers = \"synthetic:5\"\ndonors = \"synthetic:5\"",
        )
        .unwrap();
        let b = cfg.bench.unwrap();
        assert_eq!(b.modes.len(), 3);
        assert_eq!((b.n_real, b.n_fake_per_mode, b.tau), (100, 100, 0.8));
    }

    #[test]
    fn missing_path_is_a_data_error() {
        let e = Source::Path("/definitely/not/here".into()).load_faces(0).unwrap_err();
        assert_eq!(e.code, EXIT_DATA);
        assert!(e.message.contains("/definitely/not/here"));
    }
}

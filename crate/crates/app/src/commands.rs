//! One function per CLI subcommand. Each returns its result or a [`CliError`]
//! carrying the exit code.

use std::path::{Path, PathBuf};

use faceprotect::bench::{run_bench, BenchInputs, BenchReport};
use faceprotect::checkpoint::Checkpoint;
use faceprotect::features::{extract_features, load_feature_file, FeatureVector, StubExtractor};
use faceprotect::godwgm::{self, train_godwgm_with, Generator};
use faceprotect::image::RgbImage;
use faceprotect::pipeline::{canonical, watermarks_for, EmbedRecord, Models};
use faceprotect::tampersim::write_eval_set;
use faceprotect::verify::{detect, DetectionReport};
use faceprotect::wvs::{self, train_wvs_with};
use faceprotect::Error;

use crate::config::Config;
use crate::error::{CliError, EXIT_CONFIG, EXIT_DATA, EXIT_FAKE, EXIT_REAL};

pub const LOG_FILE: &str = "train_log.ndjson";

/// Feature vectors for the faces that pass the extractor's face check.
fn usable_features(images: &[RgbImage], what: &str) -> Result<Vec<FeatureVector>, CliError> {
    let mut out = Vec::with_capacity(images.len());
    let mut skipped = 0;
    for img in images {
        match extract_features(&canonical(img)?, &StubExtractor) {
            Ok(fv) => out.push(fv),
            Err(Error::NoFaceFound(_)) => skipped += 1,
            Err(e) => return Err(e.into()),
        }
    }
    if skipped > 0 {
        tracing::warn!("skipped {skipped} {what} without a usable face");
    }
    if out.is_empty() {
        return Err(CliError::new(EXIT_DATA, format!("no usable faces among {} {what}", images.len())));
    }
    Ok(out)
}

pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub checkpoint_id: String,
}

pub fn train_godwgm(cfg: &Config) -> Result<TrainSummary, CliError> {
    let sec = cfg.section(&cfg.godwgm, "godwgm")?;
    let mut train = sec.train.clone();
    train.seed = cfg.seed;
    train.validate()?;

    let features = match (&sec.features, &sec.faces) {
        (Some(path), _) => {
            if !path.exists() {
                return Err(CliError::new(EXIT_DATA, format!("feature file {} does not exist", path.display())));
            }
            load_feature_file(path)?
        }
        (None, Some(faces)) => usable_features(&faces.load_faces(cfg.faces_seed())?, "face images")?,
        (None, None) => return Err(CliError::new(EXIT_CONFIG, "[godwgm] needs `features` or `faces`")),
    };
    let digits = sec.digits.load_digits(cfg.digits_seed())?;
    tracing::info!(features = features.len(), digits = digits.len(), epochs = train.epochs, "training generator");

    let mut last_epoch = 0;
    let trained = train_godwgm_with(&features, &digits, &train, &mut |r| {
        if r.epoch != last_epoch {
            last_epoch = r.epoch;
            tracing::debug!(epoch = r.epoch, step = r.step, critic_loss = r.critic_loss, gp = r.gp_term);
        }
    })?;
    let ckpt = trained.to_checkpoint(faceprotect::features::STUB_EXTRACTOR_ID);
    ckpt.save(&sec.output)?;
    let log = sec.output.join(LOG_FILE);
    godwgm::write_log(&log, &trained.log)?;
    tracing::info!(checkpoint = %sec.output.display(), id = ckpt.id(), "generator saved");
    Ok(TrainSummary {
        checkpoint: sec.output.clone(),
        log,
        checkpoint_id: ckpt.id().to_string(),
    })
}

pub fn train_wvs(cfg: &Config) -> Result<TrainSummary, CliError> {
    let sec = cfg.section(&cfg.wvs, "wvs")?;
    let mut train = sec.train.clone();
    train.seed = cfg.seed;
    train.validate()?;

    let gen_ckpt = Checkpoint::load(&sec.godwgm).map_err(CliError::checkpoint)?;
    if gen_ckpt.meta.extractor_id != faceprotect::features::STUB_EXTRACTOR_ID {
        return Err(CliError::new(
            EXIT_CONFIG,
            format!("generator was trained with extractor {:?}", gen_ckpt.meta.extractor_id),
        ));
    }
    let generator = Generator::from_checkpoint(&gen_ckpt).map_err(CliError::checkpoint)?;
    let carriers: Vec<RgbImage> = sec
        .carriers
        .load_faces(cfg.carriers_seed())?
        .iter()
        .map(canonical)
        .collect::<Result<_, _>>()?;
    let watermarks = watermarks_for(&generator, &usable_features(&carriers, "carriers")?)?;
    tracing::info!(carriers = carriers.len(), epochs = train.epochs, "training codec");

    let trained = train_wvs_with(&carriers, &watermarks, &train, &mut |r| {
        tracing::info!(epoch = r.epoch, hiding = r.hiding_loss, recovery = r.recovery_loss, "epoch done");
    })?;
    let ckpt = trained.to_checkpoint(&gen_ckpt.meta.extractor_id);
    ckpt.save(&sec.output)?;
    let log = sec.output.join(LOG_FILE);
    wvs::write_log(&log, &trained.log)?;
    tracing::info!(checkpoint = %sec.output.display(), id = ckpt.id(), "codec saved");
    Ok(TrainSummary {
        checkpoint: sec.output.clone(),
        log,
        checkpoint_id: ckpt.id().to_string(),
    })
}

pub fn load_models(godwgm: &Path, wvs: &Path) -> Result<Models, CliError> {
    Models::load(godwgm, wvs).map_err(CliError::checkpoint)
}

fn load_image(path: &Path) -> Result<RgbImage, CliError> {
    if !path.exists() {
        return Err(CliError::new(EXIT_DATA, format!("image {} does not exist", path.display())));
    }
    Ok(RgbImage::load(path)?)
}

/// `foo.png` -> `foo.embed.json`.
pub fn sidecar_path(out: &Path) -> PathBuf {
    out.with_extension("embed.json")
}

pub fn embed(image: &Path, godwgm: &Path, wvs: &Path, out: &Path) -> Result<EmbedRecord, CliError> {
    let models = load_models(godwgm, wvs)?;
    let img = load_image(image)?;
    let e = models.embed(&img, &StubExtractor)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|err| CliError::new(EXIT_DATA, format!("{}: {err}", dir.display())))?;
    }
    e.mixed.save(out)?;
    let side = sidecar_path(out);
    let json = serde_json::to_string_pretty(&e.record).expect("record serialises");
    std::fs::write(&side, json).map_err(|err| CliError::new(EXIT_DATA, format!("{}: {err}", side.display())))?;
    Ok(e.record)
}

pub fn detect_file(image: &Path, godwgm: &Path, wvs: &Path, tau: f64) -> Result<DetectionReport, CliError> {
    let models = load_models(godwgm, wvs)?;
    let img = load_image(image)?;
    Ok(detect(&img, &models, &StubExtractor, tau)?)
}

pub fn verdict_exit_code(report: &DetectionReport) -> u8 {
    if report.verdict.is_real() {
        EXIT_REAL
    } else {
        EXIT_FAKE
    }
}

pub fn bench(cfg: &Config) -> Result<BenchReport, CliError> {
    let sec = cfg.section(&cfg.bench, "bench")?;
    let models = load_models(&sec.godwgm, &sec.wvs)?;
    let carriers = sec.carriers.load_faces(cfg.bench_carriers_seed())?;
    let donors = sec.donors.load_faces(cfg.donors_seed())?;
    let unprotected = match &sec.unprotected {
        Some(s) => s.load_faces(cfg.unprotected_seed())?,
        None => Vec::new(),
    };
    tracing::info!(
        carriers = carriers.len(),
        donors = donors.len(),
        unprotected = unprotected.len(),
        "running benchmark"
    );
    let inputs = BenchInputs {
        carriers: &carriers,
        donors: &donors,
        unprotected: &unprotected,
        modes: &sec.modes,
        n_real: sec.n_real,
        n_fake_per_mode: sec.n_fake_per_mode,
        tau: sec.tau,
        seed: cfg.seed,
    };
    let (report, eval) = run_bench(&models, &StubExtractor, &inputs)?;
    if let Some(dir) = &sec.output {
        write_eval_set(dir.join("eval_set"), &eval)?;
        let path = dir.join("bench_report.json");
        let json = serde_json::to_string_pretty(&report).expect("report serialises");
        std::fs::write(&path, json).map_err(|e| CliError::new(EXIT_DATA, format!("{}: {e}", path.display())))?;
    }
    Ok(report)
}

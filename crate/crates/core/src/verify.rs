//! Watermark comparison, verdicts, detection and threshold calibration.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint::fingerprint;
use crate::error::{Error, Result};
use crate::features::{extract_features, FeatureExtractor, FeatureVector};
use crate::image::{flatten_watermark, GrayImage, RgbImage, CANONICAL_SIZE};
use crate::pipeline::{canonical, Models};

pub const DEFAULT_TAU: f64 = 0.8;

/// Plain (uncentred) cosine similarity, clamped to [-1, 1].
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("vector lengths {} and {}", a.len(), b.len())));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "REAL")]
    Real,
    #[serde(rename = "FAKE_OR_UNPROTECTED")]
    FakeOrUnprotected,
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Label::Real => "REAL",
            Label::FakeOrUnprotected => "FAKE_OR_UNPROTECTED",
        })
    }
}

/// Detection outcome. `score` is `None` when the similarity is undefined
/// (a blank watermark), which always means [`Label::FakeOrUnprotected`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub label: Label,
    pub score: Option<f64>,
    pub threshold: f64,
}

impl Verdict {
    pub fn decide(score: Option<f64>, threshold: f64) -> Self {
        let label = match score {
            Some(s) if s > threshold => Label::Real,
            _ => Label::FakeOrUnprotected,
        };
        Self { label, score, threshold }
    }

    /// Score two flattened watermarks and decide.
    pub fn compare(recovered: &[f64], mapped: &[f64], threshold: f64) -> Result<Self> {
        match cosine_similarity(recovered, mapped) {
            Ok(s) => Ok(Self::decide(Some(s), threshold)),
            Err(Error::ZeroVector) => Ok(Self::decide(None, threshold)),
            Err(e) => Err(e),
        }
    }

    pub fn is_real(&self) -> bool {
        self.label == Label::Real
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    /// Fakes flagged as fake.
    pub tpr: f64,
    /// Reals flagged as fake.
    pub fpr: f64,
    pub balanced_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub tau: f64,
    pub balanced_accuracy: f64,
    /// Set when no threshold separates the two score sets better than chance.
    pub degenerate: bool,
    pub roc: Vec<RocPoint>,
}

/// Balanced accuracy of the rule "REAL iff score > tau".
pub fn balanced_accuracy(real_scores: &[f64], fake_scores: &[f64], tau: f64) -> f64 {
    let real_ok = real_scores.iter().filter(|&&s| s > tau).count() as f64 / real_scores.len() as f64;
    let fake_ok = fake_scores.iter().filter(|&&s| s <= tau).count() as f64 / fake_scores.len() as f64;
    (real_ok + fake_ok) / 2.0
}

/// Choose the threshold maximising balanced accuracy. Decisions only change at
/// observed scores, so the candidates are the intervals between consecutive
/// distinct scores (ends clamped to [-1, 1]); adjacent optimal intervals are
/// merged, the lowest optimal run wins, and its midpoint is returned.
pub fn calibrate_threshold(real_scores: &[f64], fake_scores: &[f64]) -> Result<Calibration> {
    if real_scores.is_empty() || fake_scores.is_empty() {
        return Err(Error::Empty("calibration needs both real and fake scores".into()));
    }
    if real_scores.iter().chain(fake_scores).any(|s| !s.is_finite()) {
        return Err(Error::InvalidFeatures("non-finite score in calibration input".into()));
    }
    let mut cuts: Vec<f64> = real_scores.iter().chain(fake_scores).map(|s| s.clamp(-1.0, 1.0)).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let mut intervals = Vec::with_capacity(cuts.len() + 1);
    if cuts[0] > -1.0 {
        intervals.push((-1.0, cuts[0]));
    }
    for w in cuts.windows(2) {
        intervals.push((w[0], w[1]));
    }
    intervals.push((*cuts.last().unwrap(), 1.0));

    let n_real = real_scores.len() as f64;
    let n_fake = fake_scores.len() as f64;
    let mut roc = Vec::with_capacity(intervals.len());
    for &(lo, _) in &intervals {
        let flagged_fakes = fake_scores.iter().filter(|&&s| s <= lo).count() as f64;
        let flagged_reals = real_scores.iter().filter(|&&s| s <= lo).count() as f64;
        let tpr = flagged_fakes / n_fake;
        let fpr = flagged_reals / n_real;
        roc.push(RocPoint {
            threshold: lo,
            tpr,
            fpr,
            balanced_accuracy: (tpr + 1.0 - fpr) / 2.0,
        });
    }
    let best = roc.iter().map(|p| p.balanced_accuracy).fold(f64::NEG_INFINITY, f64::max);
    let first = roc.iter().position(|p| p.balanced_accuracy == best).unwrap();
    let mut last = first;
    while last + 1 < roc.len() && roc[last + 1].balanced_accuracy == best {
        last += 1;
    }
    let tau = (intervals[first].0 + intervals[last].1) / 2.0;
    Ok(Calibration {
        tau,
        balanced_accuracy: best,
        degenerate: best <= 0.5,
        roc,
    })
}

pub const REPORT_SCHEMA: &str = "faceprotect-report/1";

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub recover_ms: f64,
    pub extract_ms: f64,
    pub generate_ms: f64,
    pub compare_ms: f64,
    pub total_ms: f64,
}

/// Everything the verdict was computed from. Images are not serialised; their
/// hashes are.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DetectionReport {
    pub schema: String,
    pub verdict: Verdict,
    /// Why no score could be computed, when that happens.
    pub reason: Option<String>,
    #[serde(skip)]
    pub recovered: Option<GrayImage>,
    #[serde(skip)]
    pub mapped: Option<GrayImage>,
    pub feature_vector: Option<FeatureVector>,
    pub recovered_hash: String,
    pub mapped_hash: Option<String>,
    pub godwgm_id: String,
    pub wvs_id: String,
    pub extractor_id: String,
    pub timings: StageTimings,
}

impl DetectionReport {
    /// The report without timings, for comparing reruns.
    pub fn without_timings(&self) -> Self {
        Self {
            timings: StageTimings::default(),
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

/// Recover the hidden watermark, map the image's own features to a fresh
/// watermark and compare the two. A missing face yields a FAKE_OR_UNPROTECTED
/// verdict with a reason; mismatched checkpoints or extractor are errors.
pub fn detect(img: &RgbImage, models: &Models, extractor: &dyn FeatureExtractor, tau: f64) -> Result<DetectionReport> {
    if !tau.is_finite() {
        return Err(Error::Config(format!("threshold must be finite, got {tau}")));
    }
    models.check_extractor(extractor)?;
    let start = Instant::now();
    let img = canonical(img)?;
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let recovered = models.wvs.recover(&img)?;
    timings.recover_ms = ms(t);

    let t = Instant::now();
    let features = match extract_features(&img, extractor) {
        Ok(f) => Some(f),
        Err(Error::NoFaceFound(reason)) => {
            timings.extract_ms = ms(t);
            timings.total_ms = ms(start);
            return Ok(DetectionReport {
                schema: REPORT_SCHEMA.to_string(),
                verdict: Verdict::decide(None, tau),
                reason: Some(format!("no face found: {reason}")),
                recovered_hash: fingerprint([recovered.data()]),
                recovered: Some(recovered),
                mapped: None,
                feature_vector: None,
                mapped_hash: None,
                godwgm_id: models.godwgm_id.clone(),
                wvs_id: models.wvs_id.clone(),
                extractor_id: models.extractor_id.clone(),
                timings,
            });
        }
        Err(e) => return Err(e),
    };
    timings.extract_ms = ms(t);
    let features = features.expect("handled above");

    let t = Instant::now();
    let mapped = models.mapped_watermark(&features)?;
    timings.generate_ms = ms(t);

    let t = Instant::now();
    let verdict = Verdict::compare(
        &flatten_watermark(&recovered, CANONICAL_SIZE)?,
        &flatten_watermark(&mapped, CANONICAL_SIZE)?,
        tau,
    )?;
    timings.compare_ms = ms(t);
    timings.total_ms = ms(start);
    let reason = verdict.score.is_none().then(|| "recovered watermark is blank".to_string());
    Ok(DetectionReport {
        schema: REPORT_SCHEMA.to_string(),
        verdict,
        reason,
        recovered_hash: fingerprint([recovered.data()]),
        mapped_hash: Some(fingerprint([mapped.data()])),
        recovered: Some(recovered),
        mapped: Some(mapped),
        feature_vector: Some(features),
        godwgm_id: models.godwgm_id.clone(),
        wvs_id: models.wvs_id.clone(),
        extractor_id: models.extractor_id.clone(),
        timings,
    })
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

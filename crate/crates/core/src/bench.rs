//! Detection benchmark over simulated forgeries.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::image::RgbImage;
use crate::metrics::{classification_metrics, psnr, ssim, ClassificationMetrics, ConfusionCounts, MetricRow};
use crate::pipeline::Models;
use crate::tampersim::{build_eval_set, EvalItem, GroundTruth, Protected, TamperMode};
use crate::verify::{detect, Label};

/// Inputs for one benchmark run.
pub struct BenchInputs<'a> {
    /// Pristine carriers; each is protected before the eval set is drawn.
    pub carriers: &'a [RgbImage],
    pub donors: &'a [RgbImage],
    /// Images that never went through the embedder.
    pub unprotected: &'a [RgbImage],
    pub modes: &'a [TamperMode],
    pub n_real: usize,
    pub n_fake_per_mode: usize,
    pub tau: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScoredItem {
    /// Tamper mode, or `unprotected`.
    pub group: String,
    pub truth: GroundTruth,
    pub score: Option<f64>,
    pub label: Label,
}

/// Reals plus one group of fakes. `fake_detection_rate` is the share of the
/// group's fakes labelled FAKE_OR_UNPROTECTED.
#[derive(Clone, Debug, Serialize)]
pub struct GroupRow {
    pub group: String,
    pub n_real: usize,
    pub n_fake: usize,
    pub counts: ConfusionCounts,
    pub metrics: ClassificationMetrics,
    pub mean_real_score: Option<f64>,
    pub mean_fake_score: Option<f64>,
    pub fake_detection_rate: f64,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct VisualQuality {
    pub n: usize,
    pub psnr_mean: f64,
    pub psnr_min: f64,
    pub ssim_mean: f64,
    pub ssim_min: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub tau: f64,
    pub rows: Vec<GroupRow>,
    pub visual: VisualQuality,
    pub items: Vec<ScoredItem>,
}

impl BenchReport {
    pub fn row(&self, group: &str) -> Option<&GroupRow> {
        self.rows.iter().find(|r| r.group == group)
    }

    pub fn metric_rows(&self) -> Vec<MetricRow> {
        let mut out = Vec::new();
        for r in &self.rows {
            let g = &r.group;
            out.push(MetricRow::new(format!("{g}.acc"), r.metrics.accuracy, "ratio"));
            out.push(MetricRow::new(format!("{g}.prec"), r.metrics.precision, "ratio"));
            out.push(MetricRow::new(format!("{g}.recall"), r.metrics.recall, "ratio"));
            out.push(MetricRow::new(format!("{g}.f1"), r.metrics.f1, "ratio"));
            out.push(MetricRow::new(format!("{g}.mean_fake_score"), r.mean_fake_score, "cosine"));
        }
        if let Some(r) = self.rows.first() {
            out.push(MetricRow::new("real.mean_score", r.mean_real_score, "cosine"));
        }
        let v = &self.visual;
        out.push(MetricRow::new("visual.psnr_mean", Some(v.psnr_mean), "dB"));
        out.push(MetricRow::new("visual.psnr_min", Some(v.psnr_min), "dB"));
        out.push(MetricRow::new("visual.ssim_mean", Some(v.ssim_mean), "ratio"));
        out.push(MetricRow::new("visual.ssim_min", Some(v.ssim_min), "ratio"));
        out
    }

    /// Human-readable table: one row per group, then the visual-quality block.
    pub fn to_table(&self) -> String {
        let f = |v: Option<f64>| v.map_or("undefined".to_string(), |v| format!("{v:.4}"));
        let mut s = format!(
            "{:<16} {:>6} {:>6} {:>8} {:>8} {:>8} {:>8} {:>10} {:>10}\n",
            "group", "real", "fake", "ACC", "PREC", "Recall", "F1", "real_cos", "fake_cos"
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{:<16} {:>6} {:>6} {:>8} {:>8} {:>8} {:>8} {:>10} {:>10}\n",
                r.group,
                r.n_real,
                r.n_fake,
                f(r.metrics.accuracy),
                f(r.metrics.precision),
                f(r.metrics.recall),
                f(r.metrics.f1),
                f(r.mean_real_score),
                f(r.mean_fake_score),
            ));
        }
        let v = &self.visual;
        s.push_str(&format!(
            "visual quality over {} protected images: PSNR mean {:.2} dB (min {:.2}), SSIM mean {:.4} (min {:.4})\n",
            v.n, v.psnr_mean, v.psnr_min, v.ssim_mean, v.ssim_min
        ));
        s
    }
}

/// Protect every carrier, build the labelled eval set, run detection on each
/// item and summarise per tamper mode. The eval set is returned alongside.
pub fn run_bench(
    models: &Models,
    extractor: &dyn FeatureExtractor,
    inputs: &BenchInputs,
) -> Result<(BenchReport, Vec<EvalItem>)> {
    if inputs.carriers.is_empty() || (inputs.n_real == 0 && inputs.n_fake_per_mode == 0) {
        return Err(Error::Empty("benchmark eval set would be empty".into()));
    }
    let mut protected = Vec::with_capacity(inputs.carriers.len());
    let (mut psnrs, mut ssims) = (Vec::new(), Vec::new());
    for carrier in inputs.carriers {
        let e = models.embed(carrier, extractor)?;
        psnrs.push(psnr(&e.mixed, &e.carrier)?);
        ssims.push(ssim(&e.mixed, &e.carrier)?);
        protected.push(Protected {
            mixed: e.mixed,
            carrier: Some(e.carrier),
        });
    }
    let eval = build_eval_set(
        &protected,
        inputs.donors,
        inputs.modes,
        inputs.n_real,
        inputs.n_fake_per_mode,
        inputs.seed,
    )?;

    let mut items = Vec::with_capacity(eval.len() + inputs.unprotected.len());
    for item in &eval {
        let r = detect(&item.image, models, extractor, inputs.tau)?;
        items.push(ScoredItem {
            group: item.mode.to_string(),
            truth: item.label,
            score: r.verdict.score,
            label: r.verdict.label,
        });
    }
    for img in inputs.unprotected {
        let r = detect(img, models, extractor, inputs.tau)?;
        items.push(ScoredItem {
            group: "unprotected".to_string(),
            truth: GroundTruth::Fake,
            score: r.verdict.score,
            label: r.verdict.label,
        });
    }

    let reals: Vec<&ScoredItem> = items.iter().filter(|i| i.truth == GroundTruth::Real).collect();
    let mut groups: Vec<String> = Vec::new();
    for i in items.iter().filter(|i| i.truth == GroundTruth::Fake) {
        if !groups.contains(&i.group) {
            groups.push(i.group.clone());
        }
    }
    let mean = |v: &[&ScoredItem]| -> Option<f64> {
        let s: Vec<f64> = v.iter().filter_map(|i| i.score).collect();
        (!s.is_empty()).then(|| s.iter().sum::<f64>() / s.len() as f64)
    };
    let rows = groups
        .into_iter()
        .map(|group| {
            let fakes: Vec<&ScoredItem> = items
                .iter()
                .filter(|i| i.truth == GroundTruth::Fake && i.group == group)
                .collect();
            let mut counts = ConfusionCounts::default();
            for i in reals.iter().chain(&fakes) {
                counts.record(i.label == Label::FakeOrUnprotected, i.truth == GroundTruth::Fake);
            }
            let caught = fakes.iter().filter(|i| i.label == Label::FakeOrUnprotected).count();
            GroupRow {
                n_real: reals.len(),
                n_fake: fakes.len(),
                metrics: classification_metrics(&counts),
                counts,
                mean_real_score: mean(&reals),
                mean_fake_score: mean(&fakes),
                fake_detection_rate: caught as f64 / fakes.len() as f64,
                group,
            }
        })
        .collect();

    let n = psnrs.len() as f64;
    let visual = VisualQuality {
        n: psnrs.len(),
        psnr_mean: psnrs.iter().sum::<f64>() / n,
        psnr_min: psnrs.iter().copied().fold(f64::INFINITY, f64::min),
        ssim_mean: ssims.iter().sum::<f64>() / n,
        ssim_min: ssims.iter().copied().fold(f64::INFINITY, f64::min),
    };
    let report = BenchReport {
        tau: inputs.tau,
        rows,
        visual,
        items,
    };
    Ok((report, eval))
}

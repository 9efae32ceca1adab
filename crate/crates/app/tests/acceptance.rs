//! End-to-end acceptance run at desk scale. Trains both networks from scratch,
//! checks every criterion and prints one PASS/FAIL line per criterion.
//!
//! cargo test -p faceprotect-app --test acceptance

use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anyhow::Context;
use faceprotect::bench::{run_bench, BenchInputs};
use faceprotect::checkpoint::Checkpoint;
use faceprotect::datasets::{synthetic_digits, synthetic_faces};
use faceprotect::features::{stub_extract, FeatureVector, StubExtractor, STUB_EXTRACTOR_ID};
use faceprotect::godwgm::{
    critic_loss, train_godwgm, Critic, CriticGrads, Generator, GodwgmTrainConfig, MlpCritic, StepRecord, TrainedGodwgm,
};
use faceprotect::image::{flatten_watermark, GrayImage, RgbImage, CANONICAL_SIZE};
use faceprotect::metrics::{mse, psnr, ssim, Scale};
use faceprotect::pipeline::{watermarks_for, Models};
use faceprotect::seqcodec::{gray_to_seq, run_seq_vs_image_experiment, seq_to_gray, BitSequence};
use faceprotect::tampersim::TamperMode;
use faceprotect::verify::{cosine_similarity, DEFAULT_TAU};
use faceprotect::wvs::{train_wvs, TrainedWvs, WvsArch, WvsEpochRecord, WvsTrainConfig};
use faceprotect_app::service::{serve, AppState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 2024;
const GEN_SAMPLES: usize = 2000;
const GEN_EPOCHS: usize = 20;
const CARRIERS: usize = 200;
const WVS_EPOCHS: usize = 8;
const HELD_OUT: usize = 40;
const EVAL: usize = 100;

fn godwgm_config() -> GodwgmTrainConfig {
    GodwgmTrainConfig {
        epochs: GEN_EPOCHS,
        generator_width: 64,
        seed: SEED,
        ..Default::default()
    }
}

fn wvs_config(epochs: usize) -> WvsTrainConfig {
    WvsTrainConfig {
        epochs,
        batch_size: 8,
        lambda_hiding: 30.0,
        patch_size: Some(64),
        patches_per_pair: 4,
        quantization_noise: true,
        seed: SEED,
        arch: WvsArch {
            base_width: 16,
            se_reduction: 10,
            recovery_channels: [16, 32, 32, 16, 8],
        },
        ..Default::default()
    }
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> anyhow::Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn min(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn features(faces: &[RgbImage]) -> anyhow::Result<Vec<FeatureVector>> {
    Ok(faces.iter().map(stub_extract).collect::<Result<_, _>>()?)
}

fn train_generator() -> anyhow::Result<TrainedGodwgm> {
    let feats = features(&synthetic_faces(GEN_SAMPLES, SEED + 1))?;
    let digits = synthetic_digits(GEN_SAMPLES, SEED + 2);
    Ok(train_godwgm(&feats, &digits, &godwgm_config())?)
}

fn train_codec(generator: &Generator, cfg: &WvsTrainConfig, n: usize) -> anyhow::Result<TrainedWvs> {
    let carriers = synthetic_faces(n, SEED + 3);
    let marks = watermarks_for(generator, &features(&carriers)?)?;
    Ok(train_wvs(&carriers, &marks, cfg)?)
}

/// Everything trained once and shared by the criteria.
struct Desk {
    gen_ckpt: Checkpoint,
    wvs_ckpt: Checkpoint,
    gen_log: Vec<StepRecord>,
    critic: MlpCritic,
    models: Models,
    /// Faces never seen in training.
    held_out: Vec<RgbImage>,
}

fn train_desk() -> anyhow::Result<Desk> {
    let t0 = Instant::now();
    let gen = train_generator()?;
    eprintln!("generator trained in {:.0}s", t0.elapsed().as_secs_f64());
    let t0 = Instant::now();
    let codec = train_codec(&gen.generator, &wvs_config(WVS_EPOCHS), CARRIERS)?;
    eprintln!("codec trained in {:.0}s", t0.elapsed().as_secs_f64());
    let gen_ckpt = gen.to_checkpoint(STUB_EXTRACTOR_ID);
    let wvs_ckpt = codec.to_checkpoint(STUB_EXTRACTOR_ID);
    let models = Models::from_checkpoints(&gen_ckpt, &wvs_ckpt)?;
    Ok(Desk {
        gen_ckpt,
        wvs_ckpt,
        gen_log: gen.log,
        critic: gen.critic,
        models,
        held_out: synthetic_faces(HELD_OUT, SEED + 4),
    })
}

// Criterion 1 oracles: plain loops written independently of the library.

fn oracle_mse(a: &[u8], b: &[u8]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        let d = a[i] as f64 - b[i] as f64;
        s += d * d;
    }
    s / a.len() as f64
}

fn oracle_psnr(a: &[u8], b: &[u8]) -> f64 {
    20.0 * 255f64.log10() - 10.0 * oracle_mse(a, b).log10()
}

/// Direct 2-D Gaussian-weighted SSIM averaged over every full 11x11 window.
fn oracle_ssim(a: &[u8], b: &[u8], w: usize, h: usize) -> f64 {
    let mut g = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (i, row) in g.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(dx * dx + dy * dy) / 4.5).exp();
            total += *v;
        }
    }
    let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
    let mut acc = 0.0;
    let mut count = 0;
    for y0 in 0..=h - 11 {
        for x0 in 0..=w - 11 {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let k = g[i][j] / total;
                    let p = a[(y0 + i) * w + x0 + j] as f64;
                    let q = b[(y0 + i) * w + x0 + j] as f64;
                    ma += k * p;
                    mb += k * q;
                    saa += k * p * p;
                    sbb += k * q * q;
                    sab += k * p * q;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            acc += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    acc / count as f64
}

fn oracle_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn metric_oracles() -> anyhow::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (mut worst_mse, mut worst_other, mut cases) = (0.0f64, 0.0f64, 0);
    for _ in 0..60 {
        let w = rng.random_range(4..=16u32);
        let h = rng.random_range(4..=16u32);
        let da: Vec<u8> = (0..w * h).map(|_| rng.random()).collect();
        let db: Vec<u8> = da.iter().map(|&v| v.saturating_add(rng.random_range(0..40))).collect();
        let (a, b) = (GrayImage::new(w, h, da.clone())?, GrayImage::new(w, h, db.clone())?);
        worst_mse = worst_mse.max(rel_err(mse(&a, &b, Scale::Byte)?, oracle_mse(&da, &db)));
        if oracle_mse(&da, &db) > 0.0 {
            worst_other = worst_other.max(rel_err(psnr(&a, &b)?, oracle_psnr(&da, &db)));
        }
        if w >= 11 && h >= 11 {
            worst_other = worst_other.max(rel_err(ssim(&a, &b)?, oracle_ssim(&da, &db, w as usize, h as usize)));
        }
        let fa: Vec<f64> = da.iter().map(|&v| v as f64 - 100.0).collect();
        let fb: Vec<f64> = db.iter().map(|&v| v as f64).collect();
        worst_other = worst_other.max(rel_err(cosine_similarity(&fa, &fb)?, oracle_cosine(&fa, &fb)));
        cases += 1;
    }
    // Closed forms: a constant offset d gives mse d^2, identical images give SSIM 1.
    let a = GrayImage::filled(16, 16, 100)?;
    let b = GrayImage::filled(16, 16, 110)?;
    worst_mse = worst_mse.max(rel_err(mse(&a, &b, Scale::Byte)?, 100.0));
    worst_other = worst_other.max(rel_err(psnr(&a, &b)?, 10.0 * (255.0f64 * 255.0 / 100.0).log10()));
    worst_other = worst_other.max(rel_err(ssim(&a, &a)?, 1.0));
    outcome(
        worst_mse <= 1e-9 && worst_other <= 1e-6,
        format!("{cases} random cases; max rel err mse {worst_mse:.1e}, psnr/ssim/cosine {worst_other:.1e}"),
    )
}

fn param(c: &mut MlpCritic, layer: usize, i: usize) -> &mut f64 {
    match layer {
        0 => &mut c.w1[i],
        1 => &mut c.w2[i],
        _ => &mut c.w3[i],
    }
}

fn grad(g: &CriticGrads, layer: usize, i: usize) -> f64 {
    match layer {
        0 => g.w1[i],
        1 => g.w2[i],
        _ => g.w3[i],
    }
}

fn gradient_penalty(trained: Option<&MlpCritic>) -> anyhow::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 10);
    let fresh = MlpCritic::new(784, 64, 32, &mut rng);
    let h = 1e-5;
    let norm = |g: &[f64]| g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut input_err = 0.0f64;
    for critic in trained.into_iter().chain([&fresh]) {
        for _ in 0..3 {
            let x: Vec<f64> = (0..784).map(|_| rng.random::<f64>()).collect();
            let analytic = critic.input_gradients(&x);
            let fd: Vec<f64> = (0..784)
                .map(|i| {
                    let (mut p, mut m) = (x.clone(), x.clone());
                    p[i] += h;
                    m[i] -= h;
                    (critic.scores(&p)[0] - critic.scores(&m)[0]) / (2.0 * h)
                })
                .collect();
            input_err = input_err.max(rel_err(norm(&analytic), norm(&fd)));
        }
    }

    // Parameter gradients of the penalised objective, which differentiate through |grad D|.
    let n = 4;
    let mut batch = || (0..n * 784).map(|_| rng.random::<f64>()).collect::<Vec<_>>();
    let (real, fake, interp) = (batch(), batch(), batch());
    let (_, grads) = fresh.loss_and_grads(&real, &fake, &interp, 10.0)?;
    let loss = |c: &MlpCritic| critic_loss(c, &real, &fake, &interp, 10.0).map(|l| l.total);
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 11);
    let (mut analytic, mut fd) = (Vec::new(), Vec::new());
    for layer in 0..3 {
        let len = [fresh.w1.len(), fresh.w2.len(), fresh.w3.len()][layer];
        for _ in 0..20 {
            let i = rng.random_range(0..len);
            let (mut plus, mut minus) = (fresh.clone(), fresh.clone());
            *param(&mut plus, layer, i) += h;
            *param(&mut minus, layer, i) -= h;
            fd.push((loss(&plus)? - loss(&minus)?) / (2.0 * h));
            analytic.push(grad(&grads, layer, i));
        }
    }
    let diff: Vec<f64> = analytic.iter().zip(&fd).map(|(a, b)| a - b).collect();
    let param_err = norm(&diff) / norm(&fd);
    outcome(
        input_err <= 1e-4 && param_err <= 1e-4,
        format!(
            "gradient-norm rel err {input_err:.2e} over {} inputs; penalised-loss parameter gradient rel err {param_err:.2e}",
            if trained.is_some() { 6 } else { 3 }
        ),
    )
}

fn anti_collapse(desk: &Desk) -> anyhow::Result<Outcome> {
    let feats = features(&synthetic_faces(120, SEED + 20))?;
    let mut distinct: Vec<&FeatureVector> = Vec::new();
    for f in &feats {
        if !distinct.iter().any(|d| d.values() == f.values()) {
            distinct.push(f);
        }
    }
    let g = &desk.models.generator;
    let flat: Vec<Vec<f64>> = distinct
        .iter()
        .map(|f| flatten_watermark(&g.generate(f), CANONICAL_SIZE))
        .collect::<Result<_, _>>()?;
    let mut sims = Vec::new();
    for i in 0..flat.len() {
        for j in i + 1..flat.len() {
            sims.push(cosine_similarity(&flat[i], &flat[j])?);
        }
    }
    let (m, sd) = (mean(&sims), std_dev(&sims));
    let reloaded = Generator::from_checkpoint(&roundtrip(&desk.gen_ckpt)?)?;
    let deterministic = distinct.iter().all(|f| {
        let a = g.generate(f);
        a == g.generate(f) && a == reloaded.generate(f)
    });
    outcome(
        distinct.len() >= 100 && m < 0.9 && sd > 0.01 && deterministic,
        format!(
            "{} distinct inputs; pairwise cosine mean {m:.4} std {sd:.4}; bitwise deterministic {deterministic}",
            distinct.len()
        ),
    )
}

fn roundtrip(ckpt: &Checkpoint) -> anyhow::Result<Checkpoint> {
    let dir = tempfile::tempdir()?;
    ckpt.save(dir.path())?;
    Ok(Checkpoint::load(dir.path())?)
}

struct HeldOut {
    psnr: Vec<f64>,
    ssim: Vec<f64>,
    cosine: Vec<f64>,
}

/// Protect each held-out face, store it as PNG, reload it and measure.
fn held_out_quality(desk: &Desk) -> anyhow::Result<HeldOut> {
    let mut q = HeldOut {
        psnr: Vec::new(),
        ssim: Vec::new(),
        cosine: Vec::new(),
    };
    for face in &desk.held_out {
        let e = desk.models.embed(face, &StubExtractor)?;
        let stored = RgbImage::decode(&e.mixed.encode_png()?)?;
        q.psnr.push(psnr(&stored, &e.carrier)?);
        q.ssim.push(ssim(&stored, &e.carrier)?);
        let recovered = desk.models.wvs.recover(&stored)?;
        q.cosine.push(
            cosine_similarity(
                &flatten_watermark(&recovered, CANONICAL_SIZE)?,
                &flatten_watermark(&e.watermark, CANONICAL_SIZE)?,
            )
            .unwrap_or(0.0),
        );
    }
    Ok(q)
}

fn visual_quality(q: &HeldOut) -> anyhow::Result<Outcome> {
    let (p, s) = (mean(&q.psnr), mean(&q.ssim));
    outcome(
        p >= 30.0 && s >= 0.90,
        format!(
            "{} held-out faces; PSNR mean {p:.2} dB (min {:.2}), SSIM mean {s:.4} (min {:.4})",
            q.psnr.len(),
            min(&q.psnr),
            min(&q.ssim)
        ),
    )
}

fn recovery_fidelity(q: &HeldOut) -> anyhow::Result<Outcome> {
    let c = mean(&q.cosine);
    outcome(
        c >= 0.9,
        format!("{} held-out faces; cosine(recovered, embedded) mean {c:.4} (min {:.4})", q.cosine.len(), min(&q.cosine)),
    )
}

fn bench_criteria(desk: &Desk) -> anyhow::Result<(Outcome, Outcome)> {
    let carriers = synthetic_faces(EVAL, SEED + 30);
    let donors = synthetic_faces(EVAL, SEED + 31);
    let unprotected = synthetic_faces(EVAL, SEED + 32);
    let modes = [TamperMode::IdentitySwap, TamperMode::AttributeEdit, TamperMode::Strip];
    let inputs = BenchInputs {
        carriers: &carriers,
        donors: &donors,
        unprotected: &unprotected,
        modes: &modes,
        n_real: EVAL,
        n_fake_per_mode: EVAL,
        tau: DEFAULT_TAU,
        seed: SEED,
    };
    let (report, _) = run_bench(&desk.models, &StubExtractor, &inputs)?;
    eprint!("{}", report.to_table());

    let row = |g: &str| report.row(g).with_context(|| format!("bench has no {g} row"));
    let swap = row("identity_swap")?;
    let real_mean = swap.mean_real_score.unwrap_or(0.0);
    let swap_mean = swap.mean_fake_score.unwrap_or(0.0);
    let mut accs = Vec::new();
    let mut acc_ok = true;
    for m in modes {
        let acc = row(m.as_str())?.metrics.accuracy.unwrap_or(0.0);
        acc_ok &= acc >= 0.85;
        accs.push(format!("{m} {acc:.3}"));
    }
    let separation = outcome(
        real_mean >= swap_mean + 0.15 && acc_ok,
        format!(
            "mean score protected {real_mean:.4} vs identity_swap {swap_mean:.4}; ACC at tau {DEFAULT_TAU}: {}",
            accs.join(", ")
        ),
    )?;
    let strip = row("strip")?.fake_detection_rate;
    let unprot = row("unprotected")?.fake_detection_rate;
    let blank = outcome(
        strip >= 0.95 && unprot >= 0.95,
        format!("FAKE_OR_UNPROTECTED rate: strip {strip:.3}, unprotected {unprot:.3}"),
    )?;
    Ok((separation, blank))
}

fn seq_vs_image(desk: &Desk) -> anyhow::Result<Outcome> {
    let marks: Vec<GrayImage> = features(&desk.held_out)?
        .iter()
        .map(|f| desk.models.generator.generate(f))
        .collect();
    let r = run_seq_vs_image_experiment(&desk.wvs_ckpt, &desk.held_out, &marks, desk.held_out.len(), SEED + 40)?;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 41);
    let exact = (0..1000).all(|_| {
        let s = BitSequence::random(&mut rng);
        gray_to_seq(&seq_to_gray(&s)).is_ok_and(|back| back == s)
    });
    outcome(
        r.image.cosine > r.sequence.cosine && exact,
        format!(
            "recovery cosine image {:.4} vs sequence {:.4} (bit accuracy {:.4}); 1000 codec roundtrips exact {exact}",
            r.image.cosine, r.sequence.cosine, r.sequence_bit_accuracy
        ),
    )
}

fn max_step_diff(a: &[StepRecord], b: &[StepRecord]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let g = match (x.gen_loss, y.gen_loss) {
                (Some(p), Some(q)) => (p - q).abs(),
                (None, None) => 0.0,
                _ => f64::INFINITY,
            };
            (x.critic_loss - y.critic_loss).abs().max((x.gp_term - y.gp_term).abs()).max(g)
        })
        .fold(0.0, f64::max)
}

fn max_epoch_diff(a: &[WvsEpochRecord], b: &[WvsEpochRecord]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| (x.hiding_loss - y.hiding_loss).abs().max((x.recovery_loss - y.recovery_loss).abs()))
        .fold(0.0, f64::max)
}

/// Retrains the desk generator, trains a short codec twice (once on each
/// generator) and compares logs and protected PNG bytes.
fn determinism(desk: &Desk) -> anyhow::Result<Outcome> {
    let gen = train_generator()?;
    let gen_diff = max_step_diff(&desk.gen_log, &gen.log);
    let original = Generator::from_checkpoint(&desk.gen_ckpt)?;
    let short = wvs_config(1);
    let a = train_codec(&original, &short, 24)?;
    let b = train_codec(&gen.generator, &short, 24)?;
    let codec_diff = max_epoch_diff(&a.log, &b.log);
    let ma = Models::from_checkpoints(&desk.gen_ckpt, &roundtrip(&a.to_checkpoint(STUB_EXTRACTOR_ID))?)?;
    let mb = Models::from_checkpoints(&gen.to_checkpoint(STUB_EXTRACTOR_ID), &b.to_checkpoint(STUB_EXTRACTOR_ID))?;
    let mut identical = true;
    for face in desk.held_out.iter().take(5) {
        identical &= ma.embed(face, &StubExtractor)?.mixed.encode_png()? == mb.embed(face, &StubExtractor)?.mixed.encode_png()?;
    }
    outcome(
        gen_diff <= 1e-6 && codec_diff <= 1e-6 && identical,
        format!(
            "generator log max diff {gen_diff:.1e} over {} steps; codec log max diff {codec_diff:.1e}; embed PNG bytes identical {identical}",
            gen.log.len()
        ),
    )
}

fn service(desk: &Desk) -> anyhow::Result<Outcome> {
    let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
    rt.block_on(async {
        let state = AppState::new(Ok(desk.models.clone()), DEFAULT_TAU, None)?;
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
        let base = format!("http://{}", listener.local_addr()?);
        let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
        let server = tokio::spawn(serve(listener, Arc::new(state), async {
            let _ = stopped.await;
        }));
        let client = reqwest::Client::new();
        let face = desk.held_out[0].encode_png()?;
        let resp = client.post(format!("{base}/embed")).body(face).send().await?;
        anyhow::ensure!(resp.status().is_success(), "/embed returned {}", resp.status());
        let protected = resp.bytes().await?.to_vec();

        let verify = |body: Vec<u8>| {
            let c = client.clone();
            let url = format!("{base}/verify");
            async move {
                let form = reqwest::multipart::Form::new()
                    .part("image", reqwest::multipart::Part::bytes(body).file_name("protected.png"));
                let r = c.post(url).multipart(form).send().await?;
                anyhow::ensure!(r.status().is_success(), "/verify returned {}", r.status());
                Ok::<_, anyhow::Error>(r.json::<serde_json::Value>().await?)
            }
        };
        let report = verify(protected.clone()).await?;
        let label = report["verdict"]["label"].as_str().unwrap_or("").to_string();
        let score = report["verdict"]["score"].as_f64().unwrap_or(f64::NAN);

        let calls: Vec<_> = (0..8).map(|_| tokio::spawn(verify(protected.clone()))).collect();
        let mut concurrent_ok = 0;
        for c in calls {
            if let Ok(Ok(r)) = c.await {
                if r["verdict"] == report["verdict"] {
                    concurrent_ok += 1;
                }
            }
        }
        let _ = stop.send(());
        server.await??;
        outcome(
            label == "REAL" && score > DEFAULT_TAU && concurrent_ok == 8,
            format!("round trip verdict {label} score {score:.4}; {concurrent_ok}/8 concurrent verifies succeeded with the same verdict"),
        )
    })
}

fn main() -> ExitCode {
    let started = Instant::now();
    let mut results: Vec<(u32, &str, anyhow::Result<Outcome>)> = Vec::new();
    let mut report = |n: u32, name: &'static str, r: anyhow::Result<Outcome>| {
        match &r {
            Ok(o) => println!("criterion {n:>2} {name}: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail),
            Err(e) => println!("criterion {n:>2} {name}: FAIL (error: {e:#})"),
        }
        results.push((n, name, r));
    };

    report(1, "metric oracles", metric_oracles());
    let desk = train_desk();
    match &desk {
        Ok(desk) => {
            report(2, "gradient penalty", gradient_penalty(Some(&desk.critic)));
            report(3, "generator anti-collapse", anti_collapse(desk));
            match held_out_quality(desk) {
                Ok(q) => {
                    report(4, "codec visual quality", visual_quality(&q));
                    report(5, "codec recovery fidelity", recovery_fidelity(&q));
                }
                Err(e) => {
                    let msg = format!("{e:#}");
                    report(4, "codec visual quality", Err(anyhow::anyhow!(msg.clone())));
                    report(5, "codec recovery fidelity", Err(anyhow::anyhow!(msg)));
                }
            }
            match bench_criteria(desk) {
                Ok((sep, blank)) => {
                    report(6, "end-to-end separation", Ok(sep));
                    report(7, "blank watermark", Ok(blank));
                }
                Err(e) => {
                    let msg = format!("{e:#}");
                    report(6, "end-to-end separation", Err(anyhow::anyhow!(msg.clone())));
                    report(7, "blank watermark", Err(anyhow::anyhow!(msg)));
                }
            }
            report(8, "sequence vs image", seq_vs_image(desk));
            report(9, "determinism", determinism(desk));
            report(10, "service contract", service(desk));
        }
        Err(e) => {
            report(2, "gradient penalty", gradient_penalty(None));
            for (n, name) in [
                (3, "generator anti-collapse"),
                (4, "codec visual quality"),
                (5, "codec recovery fidelity"),
                (6, "end-to-end separation"),
                (7, "blank watermark"),
                (8, "sequence vs image"),
                (9, "determinism"),
                (10, "service contract"),
            ] {
                report(n, name, Err(anyhow::anyhow!("desk training failed: {e:#}")));
            }
        }
    }
    let passed = results.iter().filter(|(_, _, r)| r.as_ref().is_ok_and(|o| o.pass)).count();
    println!("acceptance: {passed}/{} criteria passed in {:.0}s", results.len(), started.elapsed().as_secs_f64());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

//! Train the feature-to-watermark generator on synthetic faces and digits and
//! report training-curve and diversity statistics.
//!
//! cargo run --release --example train_generator -- [epochs] [samples] [width] [out_dir]

use std::time::Instant;

use faceprotect::datasets::{synthetic_digits, synthetic_face};
use faceprotect::features::{stub_extract, FeatureVector};
use faceprotect::godwgm::{mean_interpolate_grad_norm, train_godwgm_with, write_log, GodwgmTrainConfig};
use faceprotect::image::{flatten_watermark, CANONICAL_SIZE};
use faceprotect::verify::cosine_similarity;

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: usize| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let (epochs, samples, width) = (arg(0, 20), arg(1, 2000), arg(2, 64));
    let out = args.get(3).cloned().unwrap_or_else(|| "generator_run".into());
    std::fs::create_dir_all(&out)?;

    let t0 = Instant::now();
    let features: Vec<FeatureVector> =
        (0..samples as u64).map(|i| stub_extract(&synthetic_face(1, i))).collect::<Result<_, _>>()?;
    let digits = synthetic_digits(samples, 2);
    println!("data ready in {:.1}s", t0.elapsed().as_secs_f64());

    let cfg = GodwgmTrainConfig {
        epochs,
        generator_width: width,
        ..Default::default()
    };
    let t0 = Instant::now();
    let mut last_epoch = 0;
    let trained = train_godwgm_with(&features, &digits, &cfg, &mut |r| {
        if r.epoch != last_epoch {
            last_epoch = r.epoch;
            println!("epoch {:>3} step {:>5} critic {:>9.4} gp {:>8.4} ({:.0}s)", r.epoch, r.step, r.critic_loss, r.gp_term, t0.elapsed().as_secs_f64());
        }
    })?;
    println!("trained in {:.1}s", t0.elapsed().as_secs_f64());

    let mean_gp = |epoch: usize| {
        let v: Vec<f64> = trained.log.iter().filter(|r| r.epoch == epoch).map(|r| r.gp_term).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    println!("gp epoch 1 {:.4} -> epoch {epochs} {:.4}", mean_gp(1), mean_gp(epochs));

    let held_out: Vec<FeatureVector> =
        (0..120u64).map(|i| stub_extract(&synthetic_face(99, i))).collect::<Result<_, _>>()?;
    let marks: Vec<_> = held_out.iter().map(|f| trained.generator.generate(f)).collect();
    let flat: Vec<Vec<f64>> = marks.iter().map(|m| flatten_watermark(m, CANONICAL_SIZE)).collect::<Result<_, _>>()?;
    let mut sims = Vec::new();
    for i in 0..flat.len() {
        for j in i + 1..flat.len() {
            sims.push(cosine_similarity(&flat[i], &flat[j])?);
        }
    }
    let m = sims.iter().sum::<f64>() / sims.len() as f64;
    let sd = (sims.iter().map(|s| (s - m).powi(2)).sum::<f64>() / sims.len() as f64).sqrt();
    let above = sims.iter().filter(|&&s| s > 0.8).count() as f64 / sims.len() as f64;
    println!("pairwise cosine mean {m:.4} std {sd:.4} frac>0.8 {above:.4}");
    let norm = mean_interpolate_grad_norm(&trained.critic, &synthetic_digits(64, 77), &marks[..64], 5)?;
    println!("validation |grad D| {norm:.4}");

    let ckpt = trained.to_checkpoint(faceprotect::features::STUB_EXTRACTOR_ID);
    ckpt.save(format!("{out}/godwgm"))?;
    write_log(format!("{out}/godwgm/train_log.ndjson"), &trained.log)?;
    let (w, h) = (28 * 10, 28 * 4);
    let mut sheet = vec![0u8; w * h];
    for (i, d) in marks.iter().take(40).enumerate() {
        let (ox, oy) = ((i % 10) * 28, (i / 10) * 28);
        for y in 0..28 {
            sheet[(oy + y) * w + ox..(oy + y) * w + ox + 28].copy_from_slice(&d.data()[y * 28..(y + 1) * 28]);
        }
    }
    faceprotect::image::GrayImage::new(w as u32, h as u32, sheet)?
        .resize_nearest(w as u32 * 3, h as u32 * 3)?
        .save(format!("{out}/watermarks.png"))?;
    println!("checkpoint {} written to {out}/godwgm", ckpt.id());
    Ok(())
}

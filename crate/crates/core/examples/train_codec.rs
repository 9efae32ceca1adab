//! Train the hiding/recovery codec on synthetic carriers with watermarks from a
//! trained generator, then report held-out visual quality and recovery fidelity.
//!
//! cargo run --release --example train_codec -- <godwgm_ckpt> [key=value ...]
//!
//! Keys: carriers, epochs, width, patch, patches, batch, lambda_h, lr, rec (e.g. 16,32,32,16,8), out

use std::collections::HashMap;
use std::time::Instant;

use faceprotect::checkpoint::Checkpoint;
use faceprotect::datasets::synthetic_face;
use faceprotect::features::{stub_extract, STUB_EXTRACTOR_ID};
use faceprotect::godwgm::Generator;
use faceprotect::image::{flatten_watermark, CANONICAL_SIZE};
use faceprotect::metrics::{psnr, ssim};
use faceprotect::verify::cosine_similarity;
use faceprotect::wvs::{train_wvs_with, WvsArch, WvsTrainConfig};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let gen_path = args.next().ok_or_else(|| anyhow::anyhow!("usage: train_codec <godwgm_ckpt> [key=value ...]"))?;
    let kv: HashMap<String, String> = args
        .filter_map(|a| a.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
        .collect();
    let get = |k: &str, d: &str| kv.get(k).cloned().unwrap_or_else(|| d.to_string());
    let n: usize = get("carriers", "200").parse()?;
    let rec: Vec<usize> = get("rec", "16,32,32,16,8").split(',').map(str::parse).collect::<Result<_, _>>()?;
    let cfg = WvsTrainConfig {
        epochs: get("epochs", "10").parse()?,
        batch_size: get("batch", "8").parse()?,
        lr: get("lr", "0.001").parse()?,
        lambda_hiding: get("lambda_h", "1").parse()?,
        patch_size: Some(get("patch", "64").parse()?),
        patches_per_pair: get("patches", "1").parse()?,
        quantization_noise: true,
        arch: WvsArch {
            base_width: get("width", "16").parse()?,
            se_reduction: 10,
            recovery_channels: rec.try_into().map_err(|_| anyhow::anyhow!("rec needs 5 widths"))?,
        },
        ..Default::default()
    };
    let generator = Generator::from_checkpoint(&Checkpoint::load(&gen_path)?)?;
    let mark_for = |seed: u64, i: u64| -> anyhow::Result<_> {
        let fv = stub_extract(&synthetic_face(seed, i))?;
        Ok(generator.generate(&fv).resize_nearest(CANONICAL_SIZE, CANONICAL_SIZE)?)
    };
    let carriers: Vec<_> = (0..n as u64).map(|i| synthetic_face(10, i)).collect();
    let marks: Vec<_> = (0..n as u64).map(|i| mark_for(11, i)).collect::<Result<_, _>>()?;

    let t0 = Instant::now();
    let trained = train_wvs_with(&carriers, &marks, &cfg, &mut |r| {
        println!(
            "epoch {:>3} L_h {:.6} L_r {:.5} ({:.0}s)",
            r.epoch, r.hiding_loss, r.recovery_loss, t0.elapsed().as_secs_f64()
        );
    })?;
    println!("trained in {:.1}s, {} parameters", t0.elapsed().as_secs_f64(), trained.model.num_params());
    let out = get("out", "codec_run");
    trained.to_checkpoint(STUB_EXTRACTOR_ID).save(format!("{out}/wvs"))?;

    let t0 = Instant::now();
    let (mut ps, mut ss, mut cs, mut blank) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for i in 0..20u64 {
        let carrier = synthetic_face(12, i);
        let mark = mark_for(13, i)?;
        let mixed = trained.model.embed(&carrier, &mark)?;
        ps.push(psnr(&mixed, &carrier)?);
        ss.push(ssim(&mixed, &carrier)?);
        let w = flatten_watermark(&mark, CANONICAL_SIZE)?;
        let r = flatten_watermark(&trained.model.recover(&mixed)?, CANONICAL_SIZE)?;
        cs.push(cosine_similarity(&r, &w)?);
        let b = flatten_watermark(&trained.model.recover(&carrier)?, CANONICAL_SIZE)?;
        blank.push(cosine_similarity(&b, &w).unwrap_or(0.0));
        println!("  carrier {i:>2}: PSNR {:.2} SSIM {:.4} cos {:.4}", ps[ps.len() - 1], ss[ss.len() - 1], cs[cs.len() - 1]);
        if i == 0 {
            mixed.save(format!("{out}/mixed.png"))?;
            trained.model.recover(&mixed)?.save(format!("{out}/recovered.png"))?;
            mark.save(format!("{out}/embedded.png"))?;
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    println!("held-out PSNR mean {:.2} min {:.2}", mean(&ps), min(&ps));
    println!("held-out SSIM mean {:.4} min {:.4}", mean(&ss), min(&ss));
    println!("recovery cosine mean {:.4} min {:.4}", mean(&cs), min(&cs));
    println!("blank cosine mean {:.4} max {:.4}", mean(&blank), -min(&blank.iter().map(|v| -v).collect::<Vec<_>>()));
    println!("evaluated in {:.1}s", t0.elapsed().as_secs_f64());
    Ok(())
}

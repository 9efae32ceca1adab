//! Protect one face, then run detection on the protected copy and on each kind
//! of simulated forgery.
//!
//! cargo run --release --example protect_and_detect -- <godwgm_ckpt> <wvs_ckpt> [face.png] [out_dir]

use faceprotect::datasets::synthetic_face;
use faceprotect::features::StubExtractor;
use faceprotect::image::RgbImage;
use faceprotect::metrics::{psnr, ssim};
use faceprotect::pipeline::Models;
use faceprotect::tampersim::{simulate_tamper, Protected, TamperMode};
use faceprotect::verify::{detect, DEFAULT_TAU};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let [godwgm, wvs, rest @ ..] = args.as_slice() else {
        anyhow::bail!("usage: protect_and_detect <godwgm_ckpt> <wvs_ckpt> [face.png] [out_dir]");
    };
    let models = Models::load(godwgm, wvs)?;
    let face = match rest.first() {
        Some(p) => RgbImage::load(p)?,
        None => synthetic_face(500, 0),
    };
    let out = rest.get(1).cloned().unwrap_or_else(|| "protect_run".into());
    std::fs::create_dir_all(&out)?;

    let e = models.embed(&face, &StubExtractor)?;
    // Detection always sees what was written to disk.
    let path = format!("{out}/protected.png");
    e.mixed.save(&path)?;
    let stored = RgbImage::load(&path)?;
    println!("protected copy {path}: PSNR {:.2} dB, SSIM {:.4}", psnr(&stored, &e.carrier)?, ssim(&stored, &e.carrier)?);
    println!("{}", serde_json::to_string_pretty(&e.record)?);

    let protected = Protected {
        mixed: stored,
        carrier: Some(e.carrier.clone()),
    };
    let donor = synthetic_face(501, 7);
    for mode in TamperMode::ALL {
        let t = simulate_tamper(&protected, Some(&donor), mode, 42)?;
        t.image.save(format!("{out}/{mode}.png"))?;
        let r = detect(&t.image, &models, &StubExtractor, DEFAULT_TAU)?;
        let score = r.verdict.score.map_or("undefined".into(), |s| format!("{s:.4}"));
        println!("{:<16} score {score:>9}  {}", mode.as_str(), r.verdict.label);
        if let Some(w) = r.recovered {
            w.save(format!("{out}/{mode}_recovered.png"))?;
        }
    }
    Ok(())
}

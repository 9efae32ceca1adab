//! Score protected and forged faces, then pick the threshold with the best
//! balanced accuracy and compare it with the default.
//!
//! cargo run --release --example calibrate_threshold -- <godwgm_ckpt> <wvs_ckpt> [n]

use faceprotect::datasets::synthetic_faces;
use faceprotect::features::StubExtractor;
use faceprotect::pipeline::Models;
use faceprotect::tampersim::{build_eval_set, GroundTruth, Protected, TamperMode};
use faceprotect::verify::{balanced_accuracy, calibrate_threshold, detect, DEFAULT_TAU};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let [godwgm, wvs, rest @ ..] = args.as_slice() else {
        anyhow::bail!("usage: calibrate_threshold <godwgm_ckpt> <wvs_ckpt> [n]");
    };
    let n: usize = rest.first().map(|s| s.parse()).transpose()?.unwrap_or(40);
    let models = Models::load(godwgm, wvs)?;

    let protected: Vec<Protected> = synthetic_faces(n, 800)
        .iter()
        .map(|c| {
            let e = models.embed(c, &StubExtractor)?;
            Ok(Protected {
                mixed: e.mixed,
                carrier: Some(e.carrier),
            })
        })
        .collect::<anyhow::Result<_>>()?;
    let donors = synthetic_faces(n, 801);
    let modes = [TamperMode::IdentitySwap, TamperMode::AttributeEdit, TamperMode::Strip];
    let items = build_eval_set(&protected, &donors, &modes, n, n, 3)?;

    let (mut real, mut fake) = (Vec::new(), Vec::new());
    for item in &items {
        // Undefined scores (blank watermarks) count as the lowest possible score.
        let s = detect(&item.image, &models, &StubExtractor, DEFAULT_TAU)?.verdict.score.unwrap_or(-1.0);
        match item.label {
            GroundTruth::Real => real.push(s),
            GroundTruth::Fake => fake.push(s),
        }
    }
    let c = calibrate_threshold(&real, &fake)?;
    println!("{} real, {} fake scores", real.len(), fake.len());
    println!("default tau {DEFAULT_TAU}: balanced accuracy {:.4}", balanced_accuracy(&real, &fake, DEFAULT_TAU));
    println!("calibrated tau {:.4}: balanced accuracy {:.4}", c.tau, c.balanced_accuracy);
    if c.degenerate {
        println!("warning: no threshold separates the scores better than chance");
    }
    Ok(())
}

//! Detection metrics per tamper mode on synthetic faces, plus the visual
//! quality of the protected images.
//!
//! cargo run --release --example tamper_bench -- <godwgm_ckpt> <wvs_ckpt> [n] [tau]

use faceprotect::bench::{run_bench, BenchInputs};
use faceprotect::datasets::synthetic_faces;
use faceprotect::features::StubExtractor;
use faceprotect::pipeline::Models;
use faceprotect::tampersim::TamperMode;
use faceprotect::verify::DEFAULT_TAU;

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let [godwgm, wvs, rest @ ..] = args.as_slice() else {
        anyhow::bail!("usage: tamper_bench <godwgm_ckpt> <wvs_ckpt> [n] [tau]");
    };
    let n: usize = rest.first().map(|s| s.parse()).transpose()?.unwrap_or(50);
    let tau: f64 = rest.get(1).map(|s| s.parse()).transpose()?.unwrap_or(DEFAULT_TAU);
    let models = Models::load(godwgm, wvs)?;

    let carriers = synthetic_faces(n, 600);
    let donors = synthetic_faces(n, 601);
    let unprotected = synthetic_faces(n, 602);
    let modes = [TamperMode::IdentitySwap, TamperMode::AttributeEdit, TamperMode::Strip];
    let (report, _) = run_bench(
        &models,
        &StubExtractor,
        &BenchInputs {
            carriers: &carriers,
            donors: &donors,
            unprotected: &unprotected,
            modes: &modes,
            n_real: n,
            n_fake_per_mode: n,
            tau,
            seed: 0,
        },
    )?;
    print!("{}", report.to_table());
    for r in &report.rows {
        println!("{:<16} fakes caught {:.3}", r.group, r.fake_detection_rate);
    }
    Ok(())
}

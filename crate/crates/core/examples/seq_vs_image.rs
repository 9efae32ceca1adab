//! Hide random bit sequences and generated grayscale watermarks with the same
//! codec and compare how faithfully each comes back.
//!
//! cargo run --release --example seq_vs_image -- <godwgm_ckpt> <wvs_ckpt> [n]

use faceprotect::checkpoint::Checkpoint;
use faceprotect::datasets::synthetic_faces;
use faceprotect::features::stub_extract;
use faceprotect::godwgm::Generator;
use faceprotect::image::GrayImage;
use faceprotect::seqcodec::{run_seq_vs_image_experiment, ArmMetrics};

fn row(name: &str, m: &ArmMetrics) {
    println!("{name:<10} {:>8.4} {:>8.2} {:>8.4} {:>10.2}", m.cosine, m.psnr, m.ssim, m.mse);
}

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let [godwgm, wvs, rest @ ..] = args.as_slice() else {
        anyhow::bail!("usage: seq_vs_image <godwgm_ckpt> <wvs_ckpt> [n]");
    };
    let n: usize = rest.first().map(|s| s.parse()).transpose()?.unwrap_or(30);
    let generator = Generator::from_checkpoint(&Checkpoint::load(godwgm)?)?;
    let carriers = synthetic_faces(n, 700);
    let marks: Vec<GrayImage> = carriers
        .iter()
        .map(|c| Ok(generator.generate(&stub_extract(c)?)))
        .collect::<anyhow::Result<_>>()?;
    let r = run_seq_vs_image_experiment(&Checkpoint::load(wvs)?, &carriers, &marks, n, 7)?;
    println!("{:<10} {:>8} {:>8} {:>8} {:>10}", "arm", "cosine", "PSNR", "SSIM", "MSE");
    row("image", &r.image);
    row("sequence", &r.sequence);
    println!("sequence bit accuracy {:.4} over {n} carriers", r.sequence_bit_accuracy);
    Ok(())
}

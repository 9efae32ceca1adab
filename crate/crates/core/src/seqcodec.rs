//! 256-bit sequences carried as 16x16 grayscale watermarks.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::image::{flatten_watermark, GrayImage, RgbImage, CANONICAL_SIZE};
use crate::metrics::{mse, psnr, ssim, Scale};
use crate::verify::cosine_similarity;
use crate::wvs::WvsModel;

pub const SEQ_BITS: usize = 256;
pub const SEQ_SIDE: u32 = 16;
/// Intensities at or above this decode to bit 0.
pub const SEQ_THRESHOLD: u8 = 128;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BitSequence(Vec<bool>);

impl BitSequence {
    pub fn new(bits: Vec<bool>) -> Result<Self> {
        if bits.len() != SEQ_BITS {
            return Err(Error::ShapeMismatch(format!(
                "bit sequence needs {SEQ_BITS} bits, got {}",
                bits.len()
            )));
        }
        Ok(Self(bits))
    }

    pub fn random(rng: &mut impl rand::Rng) -> Self {
        Self((0..SEQ_BITS).map(|_| rng.random()).collect())
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn hamming(&self, other: &BitSequence) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }

    pub fn to_text(&self) -> String {
        self.0.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bits = text
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::InvalidImage(format!("invalid bit character {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(bits)
    }
}

/// Row-major placement; bit 0 is white (255), bit 1 is black (0).
pub fn seq_to_gray(s: &BitSequence) -> GrayImage {
    let data = s.0.iter().map(|&b| if b { 0 } else { 255 }).collect();
    GrayImage::new(SEQ_SIDE, SEQ_SIDE, data).expect("256 bits fill a 16x16 image")
}

pub fn gray_to_seq(img: &GrayImage) -> Result<BitSequence> {
    if img.width() != SEQ_SIDE || img.height() != SEQ_SIDE {
        return Err(Error::ShapeMismatch(format!(
            "sequence image must be {SEQ_SIDE}x{SEQ_SIDE}, got {}x{}",
            img.width(),
            img.height()
        )));
    }
    Ok(BitSequence(img.data().iter().map(|&v| v < SEQ_THRESHOLD).collect()))
}

/// Average each `k`x`k` block of a square image down to `side`x`side`, with
/// `k = width / side`. Used to read a recovered 256x256 plane back at 16x16.
pub fn block_mean_downsample(img: &GrayImage, side: u32) -> Result<GrayImage> {
    if img.width() != img.height() || img.width() % side != 0 {
        return Err(Error::ShapeMismatch(format!(
            "cannot block-average {}x{} down to {side}x{side}",
            img.width(),
            img.height()
        )));
    }
    let k = (img.width() / side) as usize;
    let w = img.width() as usize;
    let mut out = Vec::with_capacity((side * side) as usize);
    for by in 0..side as usize {
        for bx in 0..side as usize {
            let mut sum = 0u32;
            for y in by * k..(by + 1) * k {
                sum += img.data()[y * w + bx * k..y * w + (bx + 1) * k].iter().map(|&v| v as u32).sum::<u32>();
            }
            let n = (k * k) as u32;
            out.push(((sum + n / 2) / n) as u8);
        }
    }
    GrayImage::new(side, side, out)
}

/// Sequence file: one 256-character 0/1 string per line; blank lines skipped.
pub fn parse_sequence_text(text: &str, source_name: &str) -> Result<Vec<BitSequence>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            BitSequence::parse(l.trim()).map_err(|e| Error::Parse {
                source_name: source_name.to_string(),
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

pub fn load_sequence_file(path: impl AsRef<Path>) -> Result<Vec<BitSequence>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_sequence_text(&text, &path.display().to_string())
}

pub fn write_sequence_file(path: impl AsRef<Path>, seqs: &[BitSequence]) -> Result<()> {
    let path = path.as_ref();
    let text: String = seqs.iter().map(|s| s.to_text() + "\n").collect();
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Mean recovery quality of one arm, each metric comparing the recovered
/// 256x256 watermark against the one that was embedded.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmMetrics {
    pub psnr: f64,
    pub ssim: f64,
    pub mse: f64,
    pub cosine: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeqVsImageReport {
    pub n: usize,
    pub sequence: ArmMetrics,
    pub image: ArmMetrics,
    /// Fraction of bits recovered correctly in the sequence arm after
    /// block averaging and thresholding.
    pub sequence_bit_accuracy: f64,
}

/// Hide random 256-bit sequences (as upscaled 16x16 images) and the given
/// grayscale watermarks in the first `n` carriers with the same codec, then
/// compare how well each arm comes back.
pub fn run_seq_vs_image_experiment(
    wvs_ckpt: &Checkpoint,
    carriers: &[RgbImage],
    image_marks: &[GrayImage],
    n: usize,
    seed: u64,
) -> Result<SeqVsImageReport> {
    if n == 0 {
        return Err(Error::Empty("experiment needs at least one carrier".into()));
    }
    let epochs = wvs_ckpt.meta.training.get("epochs").and_then(toml::Value::as_integer).unwrap_or(0);
    if epochs < 1 {
        return Err(Error::Config("codec checkpoint has not been trained".into()));
    }
    if carriers.len() < n || image_marks.len() < n {
        return Err(Error::Dataset(format!(
            "need {n} carriers and watermarks, got {} and {}",
            carriers.len(),
            image_marks.len()
        )));
    }
    let model = WvsModel::from_checkpoint(wvs_ckpt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seq_rows = Vec::with_capacity(n);
    let mut img_rows = Vec::with_capacity(n);
    let mut correct = 0usize;
    for (carrier, mark) in carriers.iter().zip(image_marks).take(n) {
        let bits = BitSequence::random(&mut rng);
        let seq_mark = seq_to_gray(&bits).resize_nearest(CANONICAL_SIZE, CANONICAL_SIZE)?;
        let recovered = model.recover(&model.embed(carrier, &seq_mark)?)?;
        seq_rows.push(arm_row(&recovered, &seq_mark)?);
        let decoded = gray_to_seq(&block_mean_downsample(&recovered, SEQ_SIDE)?)?;
        correct += SEQ_BITS - decoded.hamming(&bits);

        let mark = mark.resize_nearest(CANONICAL_SIZE, CANONICAL_SIZE)?;
        let recovered = model.recover(&model.embed(carrier, &mark)?)?;
        img_rows.push(arm_row(&recovered, &mark)?);
    }
    Ok(SeqVsImageReport {
        n,
        sequence: mean_arm(&seq_rows),
        image: mean_arm(&img_rows),
        sequence_bit_accuracy: correct as f64 / (n * SEQ_BITS) as f64,
    })
}

fn arm_row(recovered: &GrayImage, embedded: &GrayImage) -> Result<ArmMetrics> {
    let cosine = match cosine_similarity(
        &flatten_watermark(recovered, CANONICAL_SIZE)?,
        &flatten_watermark(embedded, CANONICAL_SIZE)?,
    ) {
        Ok(c) => c,
        Err(Error::ZeroVector) => 0.0,
        Err(e) => return Err(e),
    };
    Ok(ArmMetrics {
        psnr: psnr(recovered, embedded)?,
        ssim: ssim(recovered, embedded)?,
        mse: mse(recovered, embedded, Scale::Byte)?,
        cosine,
    })
}

fn mean_arm(rows: &[ArmMetrics]) -> ArmMetrics {
    let n = rows.len() as f64;
    let avg = |f: fn(&ArmMetrics) -> f64| rows.iter().map(f).sum::<f64>() / n;
    ArmMetrics {
        psnr: avg(|r| r.psnr),
        ssim: avg(|r| r.ssim),
        mse: avg(|r| r.mse),
        cosine: avg(|r| r.cosine),
    }
}

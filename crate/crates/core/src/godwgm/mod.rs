//! Feature-conditioned watermark generation trained as a WGAN-GP: the
//! generator consumes facial feature vectors instead of noise and learns to
//! emit handwriting-style 28x28 watermarks.

mod critic;
mod generator;

use std::path::Path;

use faceprotect_nn::{Adam, Graph, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use critic::{critic_loss, generator_loss, interpolate, Critic, CriticAdam, CriticGrads, CriticLoss, MlpCritic};
pub use generator::{Generator, GENERATOR_ARCH, WATERMARK_SIDE};

use crate::checkpoint::{fingerprint, Blob, Checkpoint, CheckpointKind};
use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::image::GrayImage;
use crate::ndjson::{read_records, write_records};

pub const CRITIC_ARCH: &str = "mlp-leaky/1";
const PIXELS: usize = WATERMARK_SIDE * WATERMARK_SIDE;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GodwgmTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_critic: f64,
    pub lr_generator: f64,
    pub gp_lambda: f64,
    pub critic_steps_per_gen_step: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    /// Channels at the 7x7 stage of the generator.
    pub generator_width: usize,
    pub critic_hidden: [usize; 2],
}

impl Default for GodwgmTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            lr_critic: 0.004,
            lr_generator: 0.001,
            gp_lambda: 10.0,
            critic_steps_per_gen_step: 5,
            beta1: 0.5,
            beta2: 0.9,
            seed: 0,
            generator_width: 128,
            critic_hidden: [512, 256],
        }
    }
}

impl GodwgmTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr_critic > 0.0 && self.lr_generator > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.epochs == 0 || self.batch_size == 0 || self.critic_steps_per_gen_step == 0 {
            return bad("epochs, batch_size and critic_steps_per_gen_step must be at least 1");
        }
        if !(self.gp_lambda >= 0.0) {
            return bad("gp_lambda must be non-negative");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if self.critic_hidden.contains(&0) {
            return bad("critic hidden sizes must be positive");
        }
        Ok(())
    }
}

/// One line of the training log, written per critic step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub critic_loss: f64,
    /// Present on steps that were followed by a generator update.
    pub gen_loss: Option<f64>,
    /// The weighted gradient-penalty term of the critic loss.
    pub gp_term: f64,
}

pub fn write_log(path: impl AsRef<Path>, log: &[StepRecord]) -> Result<()> {
    write_records(path, log)
}

pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<StepRecord>> {
    read_records(path)
}

pub struct TrainedGodwgm {
    pub generator: Generator,
    pub critic: MlpCritic,
    pub log: Vec<StepRecord>,
    pub config: GodwgmTrainConfig,
    pub dataset_fingerprint: String,
}

fn to_rows(images: &[&GrayImage]) -> Vec<f64> {
    images.iter().flat_map(|i| i.data().iter().map(|&v| v as f64 / 255.0)).collect()
}

fn tensor_rows(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

fn sample_features<'a>(features: &'a [FeatureVector], n: usize, rng: &mut impl Rng) -> Vec<&'a FeatureVector> {
    (0..n).map(|_| &features[rng.random_range(0..features.len())]).collect()
}

/// One generator update against a fixed critic; returns `-mean D(fake)`.
pub(crate) fn generator_step(
    generator: &mut Generator,
    opt: &mut Adam,
    critic: &MlpCritic,
    features: &[&FeatureVector],
) -> Result<f64> {
    let n = features.len();
    let mut g = Graph::new();
    let fwd = generator.forward_train(&mut g, features);
    let fake = tensor_rows(g.value(fwd.output));
    let loss = generator_loss(critic, &fake)?;
    let dx = critic.input_gradients(&fake);
    let seed = Tensor::new(
        &[n, 1, WATERMARK_SIDE, WATERMARK_SIDE],
        dx.iter().map(|&v| (-v / n as f64) as f32).collect(),
    );
    let grads = g.backward_from(vec![(fwd.output, seed)]).params();
    if !loss.is_finite() || grads.iter().any(|(_, t)| !t.is_finite()) {
        return Err(Error::TrainingAborted(format!("non-finite generator loss or gradient (loss {loss})")));
    }
    opt.step(&mut generator.store, &grads);
    generator.update_running_stats(&fwd);
    Ok(loss)
}

pub fn train_godwgm(
    features: &[FeatureVector],
    targets: &[GrayImage],
    cfg: &GodwgmTrainConfig,
) -> Result<TrainedGodwgm> {
    train_godwgm_with(features, targets, cfg, &mut |_| {})
}

/// Train with a callback invoked after every critic step.
pub fn train_godwgm_with(
    features: &[FeatureVector],
    targets: &[GrayImage],
    cfg: &GodwgmTrainConfig,
    observer: &mut dyn FnMut(&StepRecord),
) -> Result<TrainedGodwgm> {
    cfg.validate()?;
    if features.is_empty() || targets.is_empty() {
        return Err(Error::Dataset("feature and target sets must both be non-empty".into()));
    }
    if let Some(t) = targets
        .iter()
        .find(|t| t.width() as usize != WATERMARK_SIDE || t.height() as usize != WATERMARK_SIDE)
    {
        return Err(Error::ShapeMismatch(format!(
            "target images must be {WATERMARK_SIDE}x{WATERMARK_SIDE}, found {}x{}",
            t.width(),
            t.height()
        )));
    }
    let feature_bytes: Vec<u8> = features.iter().flat_map(|f| f.values().iter().flat_map(|v| v.to_le_bytes())).collect();
    let dataset_fingerprint = fingerprint(
        std::iter::once(feature_bytes.as_slice()).chain(targets.iter().map(|t| t.data())),
    );

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut generator = Generator::new(cfg.generator_width, &mut rng)?;
    generator.fit_input_normalisation(features);
    let mut critic = MlpCritic::new(PIXELS, cfg.critic_hidden[0], cfg.critic_hidden[1], &mut rng);
    let mut gopt = Adam::new(&generator.store, cfg.lr_generator as f32, cfg.beta1 as f32, cfg.beta2 as f32);
    let mut copt = CriticAdam::new(&critic, cfg.lr_critic, cfg.beta1, cfg.beta2);

    let batch = cfg.batch_size.min(targets.len());
    let batches = targets.len() / batch;
    let mut order: Vec<usize> = (0..targets.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs * batches);
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks_exact(batch) {
            let at = step + 1;
            let context = move |e: Error| match e {
                Error::TrainingAborted(m) => Error::TrainingAborted(format!("epoch {epoch}, step {at}: {m}")),
                other => other,
            };
            let real = to_rows(&chunk.iter().map(|&i| &targets[i]).collect::<Vec<_>>());
            let feats = sample_features(features, batch, &mut rng);
            let mut g = Graph::new();
            let fwd = generator.forward_train(&mut g, &feats);
            let fake = tensor_rows(g.value(fwd.output));
            let eps: Vec<f64> = (0..batch).map(|_| rng.random()).collect();
            let interp = interpolate(&real, &fake, &eps);
            let (loss, grads) = critic.loss_and_grads(&real, &fake, &interp, cfg.gp_lambda).map_err(context)?;
            copt.step(&mut critic, &grads);
            step += 1;

            let gen_loss = if step % cfg.critic_steps_per_gen_step == 0 {
                let feats = sample_features(features, batch, &mut rng);
                Some(generator_step(&mut generator, &mut gopt, &critic, &feats).map_err(context)?)
            } else {
                None
            };
            let record = StepRecord {
                epoch,
                step,
                critic_loss: loss.total,
                gen_loss,
                gp_term: cfg.gp_lambda * loss.penalty,
            };
            observer(&record);
            log.push(record);
        }
    }
    Ok(TrainedGodwgm {
        generator,
        critic,
        log,
        config: cfg.clone(),
        dataset_fingerprint,
    })
}

fn critic_blobs(c: &MlpCritic) -> [(&'static str, Blob); 6] {
    let f = |shape: Vec<usize>, data: &[f64]| Blob::F64 {
        shape,
        data: data.to_vec(),
    };
    [
        ("critic.w1", f(vec![c.dim, c.h1], &c.w1)),
        ("critic.b1", f(vec![c.h1], &c.b1)),
        ("critic.w2", f(vec![c.h1, c.h2], &c.w2)),
        ("critic.b2", f(vec![c.h2], &c.b2)),
        ("critic.w3", f(vec![c.h2], &c.w3)),
        ("critic.b3", f(vec![1], &[c.b3])),
    ]
}

impl TrainedGodwgm {
    pub fn to_checkpoint(&self, extractor_id: &str) -> Checkpoint {
        let mut weights = std::collections::BTreeMap::new();
        self.generator.write_blobs(&mut weights);
        for (name, blob) in critic_blobs(&self.critic) {
            weights.insert(name.to_string(), blob);
        }
        let mut arch = toml::Table::new();
        arch.insert("generator".into(), GENERATOR_ARCH.into());
        arch.insert("generator_width".into(), (self.generator.width() as i64).into());
        arch.insert("feature_dim".into(), (crate::features::FEATURE_DIM as i64).into());
        arch.insert("watermark_side".into(), (WATERMARK_SIDE as i64).into());
        arch.insert("critic".into(), CRITIC_ARCH.into());
        arch.insert(
            "critic_hidden".into(),
            toml::Value::Array(vec![(self.critic.h1 as i64).into(), (self.critic.h2 as i64).into()]),
        );
        let training = toml::Table::try_from(&self.config).expect("config serialises to a table");
        Checkpoint::new(
            CheckpointKind::Godwgm,
            weights,
            arch,
            training,
            extractor_id,
            self.dataset_fingerprint.clone(),
        )
    }
}

fn arch_usize(ckpt: &Checkpoint, key: &str) -> Result<usize> {
    ckpt.meta
        .architecture
        .get(key)
        .and_then(toml::Value::as_integer)
        .filter(|v| *v > 0)
        .map(|v| v as usize)
        .ok_or_else(|| Error::SchemaMismatch(format!("architecture.{key} missing or invalid")))
}

fn expect_godwgm(ckpt: &Checkpoint) -> Result<()> {
    ckpt.expect_kind(CheckpointKind::Godwgm)?;
    match ckpt.meta.architecture.get("generator").and_then(toml::Value::as_str) {
        Some(GENERATOR_ARCH) => Ok(()),
        other => Err(Error::SchemaMismatch(format!("unsupported generator architecture {other:?}"))),
    }
}

impl Generator {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        expect_godwgm(ckpt)?;
        let width = arch_usize(ckpt, "generator_width")?;
        let g = Self::read_blobs(width, ckpt)?;
        let critic = critic_from_checkpoint(ckpt)?;
        let mut names = g.layer_names();
        names.extend(critic_blobs(&critic).iter().map(|(n, _)| n.to_string()));
        ckpt.expect_layer_names(names.iter().map(String::as_str))?;
        Ok(g)
    }
}

pub fn critic_from_checkpoint(ckpt: &Checkpoint) -> Result<MlpCritic> {
    expect_godwgm(ckpt)?;
    let hidden = ckpt
        .meta
        .architecture
        .get("critic_hidden")
        .and_then(toml::Value::as_array)
        .and_then(|a| {
            let v: Vec<usize> = a.iter().filter_map(|x| x.as_integer()).map(|x| x as usize).collect();
            (v.len() == 2).then_some(v)
        })
        .ok_or_else(|| Error::SchemaMismatch("architecture.critic_hidden missing or invalid".into()))?;
    let (h1, h2) = (hidden[0], hidden[1]);
    Ok(MlpCritic {
        dim: PIXELS,
        h1,
        h2,
        w1: ckpt.f64_buffer("critic.w1", &[PIXELS, h1])?,
        b1: ckpt.f64_buffer("critic.b1", &[h1])?,
        w2: ckpt.f64_buffer("critic.w2", &[h1, h2])?,
        b2: ckpt.f64_buffer("critic.b2", &[h2])?,
        w3: ckpt.f64_buffer("critic.w3", &[h2])?,
        b3: ckpt.f64_buffer("critic.b3", &[1])?[0],
    })
}

/// Map a feature vector to its 28x28 watermark.
pub fn generate_watermark(fv: &FeatureVector, generator: &Generator) -> GrayImage {
    generator.generate(fv)
}

/// Mean `|grad D(x_hat)|` over interpolates between the given real and fake sets.
pub fn mean_interpolate_grad_norm(critic: &MlpCritic, real: &[GrayImage], fake: &[GrayImage], seed: u64) -> Result<f64> {
    let n = real.len().min(fake.len());
    if n == 0 {
        return Err(Error::Empty("no samples for gradient-norm estimate".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = to_rows(&real[..n].iter().collect::<Vec<_>>());
    let f = to_rows(&fake[..n].iter().collect::<Vec<_>>());
    let eps: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let interp = interpolate(&r, &f, &eps);
    Ok(critic_loss(critic, &r, &f, &interp, 0.0)?.mean_grad_norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::synthetic_digits;

    fn features(n: usize, seed: u64) -> Vec<FeatureVector> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| FeatureVector::new((0..128).map(|_| rng.random::<f32>()).collect()).unwrap())
            .collect()
    }

    fn tiny_config() -> GodwgmTrainConfig {
        GodwgmTrainConfig {
            epochs: 1,
            batch_size: 2,
            generator_width: 8,
            critic_hidden: [16, 8],
            critic_steps_per_gen_step: 1,
            ..Default::default()
        }
    }

    #[test]
    fn step_bookkeeping() {
        let cfg = GodwgmTrainConfig {
            critic_steps_per_gen_step: 2,
            ..tiny_config()
        };
        let t = train_godwgm(&features(3, 1), &synthetic_digits(4, 1), &cfg).unwrap();
        assert_eq!(t.log.len(), 2);
        assert_eq!(t.log.iter().map(|r| r.step).collect::<Vec<_>>(), vec![1, 2]);
        assert!(t.log[0].gen_loss.is_none());
        assert!(t.log[1].gen_loss.is_some());
        assert!(t.log.iter().all(|r| r.epoch == 1));
    }

    #[test]
    fn seeded_training_is_bitwise_reproducible() {
        let cfg = GodwgmTrainConfig { epochs: 2, ..tiny_config() };
        let (f, d) = (features(6, 2), synthetic_digits(6, 2));
        let a = train_godwgm(&f, &d, &cfg).unwrap();
        let b = train_godwgm(&f, &d, &cfg).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.to_checkpoint("x").id(), b.to_checkpoint("x").id());
    }

    #[test]
    fn generator_step_raises_fake_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fs = features(8, 3);
        let mut gen = Generator::new(8, &mut rng).unwrap();
        gen.fit_input_normalisation(&fs);
        let critic = MlpCritic::new(PIXELS, 32, 16, &mut rng);
        let refs: Vec<&FeatureVector> = fs.iter().collect();
        let score = |gen: &Generator| {
            let mut g = Graph::new();
            let fwd = gen.forward_train(&mut g, &refs);
            -generator_loss(&critic, &tensor_rows(g.value(fwd.output))).unwrap()
        };
        let before = score(&gen);
        let mut opt = Adam::new(&gen.store, 1e-3, 0.5, 0.9);
        generator_step(&mut gen, &mut opt, &critic, &refs).unwrap();
        assert!(score(&gen) > before);
    }

    #[test]
    fn checkpoint_round_trip_preserves_outputs() {
        let t = train_godwgm(&features(4, 4), &synthetic_digits(4, 4), &tiny_config()).unwrap();
        let ckpt = t.to_checkpoint("stub-blockavg/1");
        let dir = tempfile::tempdir().unwrap();
        ckpt.save(dir.path()).unwrap();
        let loaded = Checkpoint::load(dir.path()).unwrap();
        let g = Generator::from_checkpoint(&loaded).unwrap();
        let fv = &features(1, 9)[0];
        assert_eq!(g.generate(fv), t.generator.generate(fv));
        assert_eq!(critic_from_checkpoint(&loaded).unwrap(), t.critic);
    }

    #[test]
    fn generation_is_deterministic_and_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = Generator::new(8, &mut rng).unwrap();
        let fv = &features(1, 5)[0];
        let a = generate_watermark(fv, &g);
        assert_eq!(a, generate_watermark(fv, &g));
        assert_eq!((a.width(), a.height()), (28, 28));
        // Inference is per-sample: batching does not change an output.
        let fs = features(3, 6);
        let batch = g.forward_eval(&[&fs[0], fv, &fs[1]]);
        let single = g.forward_eval(&[fv]);
        assert_eq!(&batch.data()[784..1568], single.data());
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = tiny_config();
        assert!(matches!(train_godwgm(&[], &synthetic_digits(2, 0), &cfg), Err(Error::Dataset(_))));
        let wrong = vec![GrayImage::filled(20, 20, 0).unwrap()];
        assert!(matches!(train_godwgm(&features(2, 0), &wrong, &cfg), Err(Error::ShapeMismatch(_))));
        let bad = GodwgmTrainConfig { lr_critic: 0.0, ..cfg };
        assert!(matches!(train_godwgm(&features(2, 0), &synthetic_digits(2, 0), &bad), Err(Error::Config(_))));
    }

    #[test]
    fn log_round_trip() {
        let log = vec![
            StepRecord { epoch: 1, step: 1, critic_loss: 1.5, gen_loss: None, gp_term: 0.25 },
            StepRecord { epoch: 1, step: 2, critic_loss: -0.5, gen_loss: Some(0.125), gp_term: 0.0 },
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.ndjson");
        write_log(&p, &log).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.lines().next().unwrap().contains("\"gen_loss\":null"));
        assert_eq!(read_log(&p).unwrap(), log);
    }
}

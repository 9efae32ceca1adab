//! Neural steganographic codec: a U-Net with squeeze-excitation gates hides a
//! 256x256 grayscale watermark in an RGB carrier as a clamped residual, and a
//! six-layer convolutional network recovers it. Both are trained jointly on
//! `lambda_hiding * L_h + lambda_recovery * L_r`.

use std::collections::BTreeMap;
use std::path::Path;

use faceprotect_nn::param::kaiming;
use faceprotect_nn::{Adam, Graph, ParamId, ParamStore, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{fingerprint, Blob, Checkpoint, CheckpointKind};
use crate::error::{Error, Result};
use crate::image::{GrayImage, RgbImage, CANONICAL_SIZE};
use crate::ndjson::{read_records, write_records};

pub const HIDING_ARCH: &str = "wvs-unet-se/1";
pub const RECOVERY_ARCH: &str = "wvs-recovery-conv/1";
/// Number of stride-2 stages in the hiding U-Net; inputs must be divisible by 2^depth.
pub const UNET_DEPTH: usize = 4;
const LEAK: f32 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WvsArch {
    /// Channels at full resolution; level `i` has `base_width * 2^min(i, 3)`.
    pub base_width: usize,
    pub se_reduction: usize,
    /// Hidden channels of the recovery network (five layers before the 1-channel output).
    pub recovery_channels: [usize; 5],
}

impl Default for WvsArch {
    fn default() -> Self {
        Self {
            base_width: 32,
            se_reduction: 10,
            recovery_channels: [32, 64, 64, 32, 16],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WvsTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lambda_hiding: f64,
    pub lambda_recovery: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    /// Train on aligned random square crops of this side instead of full frames.
    pub patch_size: Option<usize>,
    /// Crops drawn from each carrier/watermark pair per epoch.
    pub patches_per_pair: usize,
    /// Add uniform +-0.5/255 noise to the mixed image before recovery, matching 8-bit storage.
    pub quantization_noise: bool,
    pub arch: WvsArch,
}

impl Default for WvsTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            lr: 0.001,
            lambda_hiding: 1.0,
            lambda_recovery: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            seed: 0,
            patch_size: None,
            patches_per_pair: 1,
            quantization_noise: false,
            arch: WvsArch::default(),
        }
    }
}

impl WvsTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 || self.batch_size == 0 || self.patches_per_pair == 0 {
            return bad("epochs, batch_size and patches_per_pair must be at least 1".into());
        }
        if !(self.lr > 0.0) {
            return bad("learning rate must be positive".into());
        }
        if !(self.lambda_hiding >= 0.0 && self.lambda_recovery >= 0.0) {
            return bad("loss weights must be non-negative".into());
        }
        if self.lambda_hiding == 0.0 && self.lambda_recovery == 0.0 {
            return bad("loss weights must not both be zero".into());
        }
        if let Some(p) = self.patch_size {
            let m = 1 << UNET_DEPTH;
            if p == 0 || p % m != 0 || p > CANONICAL_SIZE as usize {
                return bad(format!("patch_size must be a multiple of {m} no larger than {CANONICAL_SIZE}"));
            }
        }
        if self.arch.base_width == 0 || self.arch.se_reduction == 0 || self.arch.recovery_channels.contains(&0) {
            return bad("architecture sizes must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Conv {
    w: ParamId,
    b: ParamId,
    stride: usize,
    pad: usize,
}

#[derive(Clone, Copy, Debug)]
struct Se {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Clone, Copy)]
enum Mode {
    Train,
    Eval,
}

fn load(g: &mut Graph, store: &ParamStore, id: ParamId, mode: Mode) -> Var {
    match mode {
        Mode::Train => g.param(store, id),
        Mode::Eval => g.frozen(store, id),
    }
}

fn add_conv(store: &mut ParamStore, name: &str, cin: usize, cout: usize, k: usize, stride: usize, slope: f32, rng: &mut impl Rng) -> Conv {
    Conv {
        w: store.add(format!("{name}.weight"), kaiming(&[cout, cin, k, k], cin * k * k, slope, rng)),
        b: store.add(format!("{name}.bias"), Tensor::zeros(&[cout])),
        stride,
        pad: k / 2,
    }
}

fn add_se(store: &mut ParamStore, name: &str, c: usize, reduction: usize, rng: &mut impl Rng) -> Se {
    let hidden = (c / reduction).max(1);
    Se {
        w1: store.add(format!("{name}.fc1.weight"), kaiming(&[hidden, c], c, 0.0, rng)),
        b1: store.add(format!("{name}.fc1.bias"), Tensor::zeros(&[hidden])),
        w2: store.add(format!("{name}.fc2.weight"), kaiming(&[c, hidden], hidden, 1.0, rng)),
        b2: store.add(format!("{name}.fc2.bias"), Tensor::zeros(&[c])),
    }
}

fn conv(g: &mut Graph, store: &ParamStore, x: Var, c: &Conv, mode: Mode) -> Var {
    let w = load(g, store, c.w, mode);
    let b = load(g, store, c.b, mode);
    g.conv2d(x, w, Some(b), c.stride, c.pad)
}

/// Squeeze (global average), excite (two dense layers, sigmoid), rescale channels.
fn squeeze_excite(g: &mut Graph, store: &ParamStore, x: Var, se: &Se, mode: Mode) -> Var {
    let s = g.global_avg_pool(x);
    let (w1, b1) = (load(g, store, se.w1, mode), load(g, store, se.b1, mode));
    let h = g.linear(s, w1, Some(b1));
    let h = g.relu(h);
    let (w2, b2) = (load(g, store, se.w2, mode), load(g, store, se.b2, mode));
    let h = g.linear(h, w2, Some(b2));
    let gate = g.sigmoid(h);
    g.mul_channels(x, gate)
}

#[derive(Clone, Debug)]
struct HidingNet {
    down: Vec<(Conv, Se)>,
    up: Vec<(Conv, Se)>,
    head: Conv,
}

#[derive(Clone, Debug)]
struct RecoveryNet {
    layers: Vec<Conv>,
}

/// Trained (or freshly initialised) hiding and recovery networks.
#[derive(Clone, Debug)]
pub struct WvsModel {
    arch: WvsArch,
    store: ParamStore,
    hiding: HidingNet,
    recovery: RecoveryNet,
}

fn level_width(base: usize, level: usize) -> usize {
    base << level.min(3)
}

impl WvsModel {
    pub fn new(arch: &WvsArch, rng: &mut impl Rng) -> Self {
        let mut store = ParamStore::new();
        let base = arch.base_width;
        let r = arch.se_reduction;
        let mut down = Vec::with_capacity(UNET_DEPTH + 1);
        let mut cin = 4;
        for level in 0..=UNET_DEPTH {
            let cout = level_width(base, level);
            let stride = if level == 0 { 1 } else { 2 };
            let name = format!("hide.down{level}");
            let c = add_conv(&mut store, &format!("{name}.conv"), cin, cout, 3, stride, LEAK, rng);
            let s = add_se(&mut store, &format!("{name}.se"), cout, r, rng);
            down.push((c, s));
            cin = cout;
        }
        let mut up = Vec::with_capacity(UNET_DEPTH);
        for level in (0..UNET_DEPTH).rev() {
            let skip = level_width(base, level);
            let cout = if level == 0 { base } else { level_width(base, level - 1) };
            let name = format!("hide.up{level}");
            let c = add_conv(&mut store, &format!("{name}.conv"), cin + skip, cout, 3, 1, LEAK, rng);
            let s = add_se(&mut store, &format!("{name}.se"), cout, r, rng);
            up.push((c, s));
            cin = cout;
        }
        let head = add_conv(&mut store, "hide.head", cin, 3, 3, 1, 1.0, rng);

        let mut layers = Vec::with_capacity(6);
        let mut cin = 3;
        for (i, &cout) in arch.recovery_channels.iter().chain(std::iter::once(&1)).enumerate() {
            let slope = if i == 5 { 1.0 } else { LEAK };
            layers.push(add_conv(&mut store, &format!("recover.conv{i}"), cin, cout, 3, 1, slope, rng));
            cin = cout;
        }
        Self {
            arch: arch.clone(),
            store,
            hiding: HidingNet { down, up, head },
            recovery: RecoveryNet { layers },
        }
    }

    pub fn arch(&self) -> &WvsArch {
        &self.arch
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }

    /// Unclamped `carrier + residual`.
    fn hide(&self, g: &mut Graph, carrier: Var, watermark: Var, mode: Mode) -> Var {
        let st = &self.store;
        let mut x = g.concat_channels(carrier, watermark);
        let mut skips = Vec::with_capacity(UNET_DEPTH);
        for (i, (c, se)) in self.hiding.down.iter().enumerate() {
            let h = conv(g, st, x, c, mode);
            let h = g.leaky_relu(h, LEAK);
            x = squeeze_excite(g, st, h, se, mode);
            if i < UNET_DEPTH {
                skips.push(x);
            }
        }
        for (c, se) in &self.hiding.up {
            let u = g.upsample2x(x);
            let skip = skips.pop().expect("one skip per level");
            let h = g.concat_channels(u, skip);
            let h = conv(g, st, h, c, mode);
            let h = g.leaky_relu(h, LEAK);
            x = squeeze_excite(g, st, h, se, mode);
        }
        let residual = conv(g, st, x, &self.hiding.head, mode);
        g.add(carrier, residual)
    }

    fn recover_graph(&self, g: &mut Graph, mixed: Var, mode: Mode) -> Var {
        let mut x = mixed;
        let last = self.recovery.layers.len() - 1;
        for (i, c) in self.recovery.layers.iter().enumerate() {
            x = conv(g, &self.store, x, c, mode);
            x = if i == last { g.sigmoid(x) } else { g.leaky_relu(x, LEAK) };
        }
        x
    }

    /// Mixed images `[n, 3, h, w]` for carriers `[n, 3, h, w]` and watermarks `[n, 1, h, w]`.
    pub fn embed_tensor(&self, carriers: &Tensor, watermarks: &Tensor) -> Result<Tensor> {
        check_pair_shapes(carriers, watermarks)?;
        let mut g = Graph::new();
        let c = g.constant(carriers.clone());
        let w = g.constant(watermarks.clone());
        let raw = self.hide(&mut g, c, w, Mode::Eval);
        let mixed = g.clamp(raw, 0.0, 1.0);
        Ok(g.value(mixed).clone())
    }

    /// Recovered watermarks `[n, 1, h, w]` for images `[n, 3, h, w]`.
    pub fn recover_tensor(&self, images: &Tensor) -> Result<Tensor> {
        let s = images.shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::ShapeMismatch(format!("expected [n, 3, h, w], got {s:?}")));
        }
        let mut g = Graph::new();
        let x = g.constant(images.clone());
        let out = self.recover_graph(&mut g, x, Mode::Eval);
        Ok(g.value(out).clone())
    }

    /// Hide a 256x256 watermark in a 256x256 carrier.
    pub fn embed(&self, carrier: &RgbImage, watermark: &GrayImage) -> Result<RgbImage> {
        check_canonical(carrier.width(), carrier.height(), "carrier")?;
        check_canonical(watermark.width(), watermark.height(), "watermark")?;
        let mixed = self.embed_tensor(&carrier.to_tensor(), &watermark.to_tensor())?;
        RgbImage::from_tensor(&mixed)
    }

    pub fn recover(&self, image: &RgbImage) -> Result<GrayImage> {
        check_canonical(image.width(), image.height(), "image")?;
        let out = self.recover_tensor(&image.to_tensor())?;
        GrayImage::from_unit(image.width(), image.height(), out.data())
    }

    /// `L_h` through the network path: MSE between clamped mixed images and carriers.
    pub fn hiding_loss(&self, carriers: &Tensor, watermarks: &Tensor) -> Result<f64> {
        let mixed = self.embed_tensor(carriers, watermarks)?;
        mse_loss(&mixed, carriers)
    }

    /// `L_r` through the network path: MSE between recovered and original watermarks.
    pub fn recovery_loss(&self, mixed: &Tensor, watermarks: &Tensor) -> Result<f64> {
        let rec = self.recover_tensor(mixed)?;
        mse_loss(&rec, watermarks)
    }

    pub fn to_checkpoint(&self, training: toml::Table, extractor_id: &str, dataset_fingerprint: &str) -> Checkpoint {
        let mut weights = BTreeMap::new();
        for (_, name, t) in self.store.iter() {
            weights.insert(name.to_string(), Blob::from(t));
        }
        let mut arch = toml::Table::try_from(&self.arch).expect("architecture serialises");
        arch.insert("hiding".into(), HIDING_ARCH.into());
        arch.insert("recovery".into(), RECOVERY_ARCH.into());
        arch.insert("unet_depth".into(), (UNET_DEPTH as i64).into());
        arch.insert("watermark_resolution".into(), (CANONICAL_SIZE as i64).into());
        Checkpoint::new(CheckpointKind::Wvs, weights, arch, training, extractor_id, dataset_fingerprint)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(CheckpointKind::Wvs)?;
        let a = &ckpt.meta.architecture;
        let tag = |k: &str| a.get(k).and_then(toml::Value::as_str);
        if tag("hiding") != Some(HIDING_ARCH) || tag("recovery") != Some(RECOVERY_ARCH) {
            return Err(Error::SchemaMismatch(format!(
                "unsupported codec architecture {:?}/{:?}",
                tag("hiding"),
                tag("recovery")
            )));
        }
        let mut table = a.clone();
        for k in ["hiding", "recovery", "unet_depth", "watermark_resolution"] {
            table.remove(k);
        }
        let arch: WvsArch = table
            .try_into()
            .map_err(|e| Error::SchemaMismatch(format!("architecture table: {e}")))?;
        let mut model = Self::new(&arch, &mut ChaCha8Rng::seed_from_u64(0));
        ckpt.expect_layer_names(model.store.iter().map(|(_, n, _)| n))?;
        let ids: Vec<(ParamId, String, Vec<usize>)> =
            model.store.iter().map(|(id, n, t)| (id, n.to_string(), t.shape().to_vec())).collect();
        for (id, name, shape) in ids {
            *model.store.get_mut(id) = ckpt.tensor(&name, &shape)?;
        }
        Ok(model)
    }
}

fn check_canonical(w: u32, h: u32, what: &str) -> Result<()> {
    if w != CANONICAL_SIZE || h != CANONICAL_SIZE {
        return Err(Error::ShapeMismatch(format!(
            "{what} must be {CANONICAL_SIZE}x{CANONICAL_SIZE}, got {w}x{h}"
        )));
    }
    Ok(())
}

fn check_pair_shapes(carriers: &Tensor, watermarks: &Tensor) -> Result<()> {
    let (c, w) = (carriers.shape(), watermarks.shape());
    let m = 1 << UNET_DEPTH;
    let ok = c.len() == 4
        && w.len() == 4
        && c[1] == 3
        && w[1] == 1
        && c[0] == w[0]
        && c[2..] == w[2..]
        && c[2] % m == 0
        && c[3] % m == 0
        && c[2] > 0
        && c[3] > 0;
    if !ok {
        return Err(Error::ShapeMismatch(format!(
            "carriers {c:?} and watermarks {w:?} must be [n,3,h,w] and [n,1,h,w] with h, w multiples of {m}"
        )));
    }
    Ok(())
}

/// Mean squared error over all elements, unit-range scale.
pub fn mse_loss(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let s: f64 = a.data().iter().zip(b.data()).map(|(&x, &y)| ((x - y) as f64).powi(2)).sum();
    Ok(s / a.numel() as f64)
}

pub fn total_loss(hiding: f64, recovery: f64, lambda_hiding: f64, lambda_recovery: f64) -> f64 {
    lambda_hiding * hiding + lambda_recovery * recovery
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WvsEpochRecord {
    pub epoch: usize,
    pub hiding_loss: f64,
    pub recovery_loss: f64,
    pub total_loss: f64,
}

pub fn write_log(path: impl AsRef<Path>, log: &[WvsEpochRecord]) -> Result<()> {
    write_records(path, log)
}

pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<WvsEpochRecord>> {
    read_records(path)
}

pub struct TrainedWvs {
    pub model: WvsModel,
    pub log: Vec<WvsEpochRecord>,
    pub config: WvsTrainConfig,
    pub dataset_fingerprint: String,
}

impl TrainedWvs {
    pub fn to_checkpoint(&self, extractor_id: &str) -> Checkpoint {
        let mut training = toml::Table::try_from(&self.config).expect("config serialises");
        training.remove("arch");
        self.model.to_checkpoint(training, extractor_id, &self.dataset_fingerprint)
    }
}

fn crop_rgb(img: &RgbImage, x0: usize, y0: usize, p: usize, out: &mut Vec<f32>) {
    let w = img.width() as usize;
    let d = img.data();
    for c in 0..3 {
        for y in y0..y0 + p {
            out.extend((x0..x0 + p).map(|x| d[(y * w + x) * 3 + c] as f32 / 255.0));
        }
    }
}

fn crop_gray(img: &GrayImage, x0: usize, y0: usize, p: usize, out: &mut Vec<f32>) {
    let w = img.width() as usize;
    let d = img.data();
    for y in y0..y0 + p {
        out.extend(d[y * w + x0..y * w + x0 + p].iter().map(|&v| v as f32 / 255.0));
    }
}

pub fn train_wvs(carriers: &[RgbImage], watermarks: &[GrayImage], cfg: &WvsTrainConfig) -> Result<TrainedWvs> {
    train_wvs_with(carriers, watermarks, cfg, &mut |_| {})
}

/// Joint training; `observer` is called after each epoch.
pub fn train_wvs_with(
    carriers: &[RgbImage],
    watermarks: &[GrayImage],
    cfg: &WvsTrainConfig,
    observer: &mut dyn FnMut(&WvsEpochRecord),
) -> Result<TrainedWvs> {
    cfg.validate()?;
    if carriers.is_empty() || watermarks.is_empty() {
        return Err(Error::Dataset("carrier and watermark sets must both be non-empty".into()));
    }
    for c in carriers {
        check_canonical(c.width(), c.height(), "carrier")?;
    }
    for w in watermarks {
        check_canonical(w.width(), w.height(), "watermark")?;
    }
    let dataset_fingerprint =
        fingerprint(carriers.iter().map(|c| c.data()).chain(watermarks.iter().map(|w| w.data())));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = WvsModel::new(&cfg.arch, &mut rng);
    let mut opt = Adam::new(&model.store, cfg.lr as f32, cfg.beta1 as f32, cfg.beta2 as f32);
    let side = CANONICAL_SIZE as usize;
    let p = cfg.patch_size.unwrap_or(side);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut wm_order: Vec<usize> = (0..watermarks.len()).collect();
    let mut samples: Vec<(usize, usize)> = Vec::new();

    for epoch in 1..=cfg.epochs {
        wm_order.shuffle(&mut rng);
        samples.clear();
        for i in 0..carriers.len() {
            for _ in 0..cfg.patches_per_pair {
                samples.push((i, wm_order[i % wm_order.len()]));
            }
        }
        samples.shuffle(&mut rng);
        let (mut sum_h, mut sum_r, mut sum_t, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for chunk in samples.chunks(cfg.batch_size) {
            let n = chunk.len();
            let mut cbuf = Vec::with_capacity(n * 3 * p * p);
            let mut wbuf = Vec::with_capacity(n * p * p);
            for &(ci, wi) in chunk {
                let (x0, y0) = if p < side {
                    (rng.random_range(0..=side - p), rng.random_range(0..=side - p))
                } else {
                    (0, 0)
                };
                crop_rgb(&carriers[ci], x0, y0, p, &mut cbuf);
                crop_gray(&watermarks[wi], x0, y0, p, &mut wbuf);
            }
            let mut g = Graph::new();
            let c = g.constant(Tensor::new(&[n, 3, p, p], cbuf));
            let w = g.constant(Tensor::new(&[n, 1, p, p], wbuf));
            let raw = model.hide(&mut g, c, w, Mode::Train);
            let mixed = g.clamp(raw, 0.0, 1.0);
            let lh = g.mse(mixed, c);
            let received = if cfg.quantization_noise {
                let noise: Vec<f32> = (0..n * 3 * p * p).map(|_| rng.random_range(-0.5..0.5) / 255.0).collect();
                let noise = g.constant(Tensor::new(&[n, 3, p, p], noise));
                g.add(mixed, noise)
            } else {
                mixed
            };
            let rec = model.recover_graph(&mut g, received, Mode::Train);
            let lr = g.mse(rec, w);
            let a = g.scale(lh, cfg.lambda_hiding as f32);
            let b = g.scale(lr, cfg.lambda_recovery as f32);
            let loss = g.add(a, b);
            let (vh, vr, vt) = (
                g.value(lh).item() as f64,
                g.value(lr).item() as f64,
                g.value(loss).item() as f64,
            );
            if !vt.is_finite() {
                return Err(Error::TrainingAborted(format!(
                    "epoch {epoch}, batch {}: non-finite loss (L_h {vh}, L_r {vr})",
                    batches + 1
                )));
            }
            let grads = g.backward(loss).params();
            if grads.iter().any(|(_, t)| !t.is_finite()) {
                return Err(Error::TrainingAborted(format!(
                    "epoch {epoch}, batch {}: non-finite gradient",
                    batches + 1
                )));
            }
            opt.step(&mut model.store, &grads);
            sum_h += vh;
            sum_r += vr;
            sum_t += vt;
            batches += 1;
        }
        let k = batches as f64;
        let record = WvsEpochRecord {
            epoch,
            hiding_loss: sum_h / k,
            recovery_loss: sum_r / k,
            total_loss: sum_t / k,
        };
        observer(&record);
        log.push(record);
    }
    Ok(TrainedWvs {
        model,
        log,
        config: cfg.clone(),
        dataset_fingerprint,
    })
}

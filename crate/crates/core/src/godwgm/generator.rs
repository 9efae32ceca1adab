//! Feature-to-watermark generator: dense projection to 7x7, two stride-2
//! transposed-convolution blocks with batch normalisation, sigmoid output.

use std::collections::BTreeMap;

use faceprotect_nn::param::kaiming;
use faceprotect_nn::{BatchStats, Graph, ParamId, ParamStore, Tensor, Var};
use rand::Rng;

use crate::checkpoint::{Blob, Checkpoint};
use crate::error::{Error, Result};
use crate::features::{FeatureVector, FEATURE_DIM};
use crate::image::{from_unit, GrayImage};

pub const WATERMARK_SIDE: usize = 28;
pub const GENERATOR_ARCH: &str = "godwgm-generator/1";
const BN_EPS: f32 = 1e-5;
const BN_MOMENTUM: f32 = 0.1;
/// Floor for per-component feature standard deviations.
const MIN_FEATURE_STD: f32 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
struct RunningNorm {
    mean: Vec<f32>,
    var: Vec<f32>,
}

impl RunningNorm {
    fn new(c: usize) -> Self {
        Self {
            mean: vec![0.0; c],
            var: vec![1.0; c],
        }
    }

    fn update(&mut self, stats: &BatchStats, count: usize) {
        let unbias = count as f32 / (count.max(2) - 1) as f32;
        for c in 0..self.mean.len() {
            self.mean[c] = (1.0 - BN_MOMENTUM) * self.mean[c] + BN_MOMENTUM * stats.mean[c];
            self.var[c] = (1.0 - BN_MOMENTUM) * self.var[c] + BN_MOMENTUM * stats.var[c] * unbias;
        }
    }
}

#[derive(Clone, Debug)]
pub struct Generator {
    width: usize,
    pub(crate) store: ParamStore,
    fc_w: ParamId,
    fc_b: ParamId,
    bn0: (ParamId, ParamId),
    up1_w: ParamId,
    up1_b: ParamId,
    bn1: (ParamId, ParamId),
    up2_w: ParamId,
    up2_b: ParamId,
    in_mean: Vec<f32>,
    in_std: Vec<f32>,
    running: [RunningNorm; 2],
}

/// Graph handles from a training-mode forward pass.
pub(crate) struct TrainForward {
    pub output: Var,
    stats: [BatchStats; 2],
    batch: usize,
}

impl Generator {
    /// `width` is the channel count of the 7x7 stage (halved at 14x14).
    pub fn new(width: usize, rng: &mut impl Rng) -> Result<Self> {
        if width < 2 || width % 2 != 0 {
            return Err(Error::Config(format!("generator width must be an even number >= 2, got {width}")));
        }
        let half = width / 2;
        let mut store = ParamStore::new();
        let proj = 7 * 7 * width;
        let fc_w = store.add("gen.fc.weight", kaiming(&[proj, FEATURE_DIM], FEATURE_DIM, 0.0, rng));
        let fc_b = store.add("gen.fc.bias", Tensor::zeros(&[proj]));
        let bn0 = (
            store.add("gen.bn0.gamma", Tensor::full(&[width], 1.0)),
            store.add("gen.bn0.beta", Tensor::zeros(&[width])),
        );
        let up1_w = store.add("gen.up1.weight", kaiming(&[width, half, 4, 4], width * 4, 0.0, rng));
        let up1_b = store.add("gen.up1.bias", Tensor::zeros(&[half]));
        let bn1 = (
            store.add("gen.bn1.gamma", Tensor::full(&[half], 1.0)),
            store.add("gen.bn1.beta", Tensor::zeros(&[half])),
        );
        let up2_w = store.add("gen.up2.weight", kaiming(&[half, 1, 4, 4], half * 4, 1.0, rng));
        let up2_b = store.add("gen.up2.bias", Tensor::zeros(&[1]));
        Ok(Self {
            width,
            store,
            fc_w,
            fc_b,
            bn0,
            up1_w,
            up1_b,
            bn1,
            up2_w,
            up2_b,
            in_mean: vec![0.5; FEATURE_DIM],
            in_std: vec![1.0; FEATURE_DIM],
            running: [RunningNorm::new(width), RunningNorm::new(half)],
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }

    /// Fit the input standardisation to a training set of feature vectors.
    pub fn fit_input_normalisation(&mut self, features: &[FeatureVector]) {
        let n = features.len().max(1) as f64;
        for k in 0..FEATURE_DIM {
            let mean = features.iter().map(|f| f.values()[k] as f64).sum::<f64>() / n;
            let var = features.iter().map(|f| (f.values()[k] as f64 - mean).powi(2)).sum::<f64>() / n;
            self.in_mean[k] = mean as f32;
            self.in_std[k] = (var.sqrt() as f32).max(MIN_FEATURE_STD);
        }
    }

    fn standardise(&self, features: &[&FeatureVector]) -> Tensor {
        let data = features
            .iter()
            .flat_map(|f| {
                f.values()
                    .iter()
                    .enumerate()
                    .map(|(k, v)| (v - self.in_mean[k]) / self.in_std[k])
            })
            .collect();
        Tensor::new(&[features.len(), FEATURE_DIM], data)
    }

    fn eval_norm(&self, g: &mut Graph, x: Var, bn: (ParamId, ParamId), running: &RunningNorm) -> Var {
        let gamma = self.store.get(bn.0).data();
        let beta = self.store.get(bn.1).data();
        let scale: Vec<f32> = gamma
            .iter()
            .zip(&running.var)
            .map(|(g, v)| g / (v + BN_EPS).sqrt())
            .collect();
        let shift: Vec<f32> = beta
            .iter()
            .zip(&running.mean)
            .zip(&scale)
            .map(|((b, m), s)| b - m * s)
            .collect();
        g.channel_affine(x, &scale, &shift)
    }

    /// Training-mode forward (batch statistics, parameters on the tape).
    pub(crate) fn forward_train(&self, g: &mut Graph, features: &[&FeatureVector]) -> TrainForward {
        let n = features.len();
        let p = |g: &mut Graph, id| g.param(&self.store, id);
        let z = g.constant(self.standardise(features));
        let (w, b) = (p(g, self.fc_w), p(g, self.fc_b));
        let h = g.linear(z, w, Some(b));
        let h = g.reshape(h, &[n, self.width, 7, 7]);
        let (gm, bt) = (p(g, self.bn0.0), p(g, self.bn0.1));
        let (h, s0) = g.batch_norm(h, gm, bt, BN_EPS);
        let h = g.relu(h);
        let (w, b) = (p(g, self.up1_w), p(g, self.up1_b));
        let h = g.conv_transpose2d(h, w, Some(b), 2, 1);
        let (gm, bt) = (p(g, self.bn1.0), p(g, self.bn1.1));
        let (h, s1) = g.batch_norm(h, gm, bt, BN_EPS);
        let h = g.relu(h);
        let (w, b) = (p(g, self.up2_w), p(g, self.up2_b));
        let h = g.conv_transpose2d(h, w, Some(b), 2, 1);
        TrainForward {
            output: g.sigmoid(h),
            stats: [s0, s1],
            batch: n,
        }
    }

    pub(crate) fn update_running_stats(&mut self, fwd: &TrainForward) {
        self.running[0].update(&fwd.stats[0], fwd.batch * 49);
        self.running[1].update(&fwd.stats[1], fwd.batch * 196);
    }

    /// Inference: `[n, 1, 28, 28]` unit-range watermarks, one per input, each
    /// independent of the rest of the batch.
    pub fn forward_eval(&self, features: &[&FeatureVector]) -> Tensor {
        let n = features.len();
        let mut g = Graph::new();
        let c = |g: &mut Graph, id| g.frozen(&self.store, id);
        let z = g.constant(self.standardise(features));
        let (w, b) = (c(&mut g, self.fc_w), c(&mut g, self.fc_b));
        let h = g.linear(z, w, Some(b));
        let h = g.reshape(h, &[n, self.width, 7, 7]);
        let h = self.eval_norm(&mut g, h, self.bn0, &self.running[0]);
        let h = g.relu(h);
        let (w, b) = (c(&mut g, self.up1_w), c(&mut g, self.up1_b));
        let h = g.conv_transpose2d(h, w, Some(b), 2, 1);
        let h = self.eval_norm(&mut g, h, self.bn1, &self.running[1]);
        let h = g.relu(h);
        let (w, b) = (c(&mut g, self.up2_w), c(&mut g, self.up2_b));
        let h = g.conv_transpose2d(h, w, Some(b), 2, 1);
        let out = g.sigmoid(h);
        g.value(out).clone()
    }

    /// The 28x28 watermark for one feature vector.
    pub fn generate(&self, fv: &FeatureVector) -> GrayImage {
        let t = self.forward_eval(&[fv]);
        let data = t.data().iter().map(|&v| from_unit(v)).collect();
        GrayImage::new(WATERMARK_SIDE as u32, WATERMARK_SIDE as u32, data).expect("generator emits 28x28")
    }

    pub(crate) fn layer_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.store.iter().map(|(_, n, _)| n.to_string()).collect();
        for extra in [
            "gen.bn0.running_mean",
            "gen.bn0.running_var",
            "gen.bn1.running_mean",
            "gen.bn1.running_var",
            "gen.input.mean",
            "gen.input.std",
        ] {
            names.push(extra.to_string());
        }
        names
    }

    pub(crate) fn write_blobs(&self, out: &mut BTreeMap<String, Blob>) {
        for (_, name, t) in self.store.iter() {
            out.insert(name.to_string(), Blob::from(t));
        }
        let vecs = [
            ("gen.bn0.running_mean", &self.running[0].mean),
            ("gen.bn0.running_var", &self.running[0].var),
            ("gen.bn1.running_mean", &self.running[1].mean),
            ("gen.bn1.running_var", &self.running[1].var),
            ("gen.input.mean", &self.in_mean),
            ("gen.input.std", &self.in_std),
        ];
        for (name, v) in vecs {
            out.insert(
                name.to_string(),
                Blob::F32 {
                    shape: vec![v.len()],
                    data: v.clone(),
                },
            );
        }
    }

    pub(crate) fn read_blobs(width: usize, ckpt: &Checkpoint) -> Result<Self> {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut g = Self::new(width, &mut rng)?;
        let ids: Vec<(ParamId, String, Vec<usize>)> = g
            .store
            .iter()
            .map(|(id, n, t)| (id, n.to_string(), t.shape().to_vec()))
            .collect();
        for (id, name, shape) in ids {
            *g.store.get_mut(id) = ckpt.tensor(&name, &shape)?;
        }
        let half = width / 2;
        let load = |name: &str, len: usize| ckpt.tensor(name, &[len]).map(Tensor::into_data);
        g.running[0].mean = load("gen.bn0.running_mean", width)?;
        g.running[0].var = load("gen.bn0.running_var", width)?;
        g.running[1].mean = load("gen.bn1.running_mean", half)?;
        g.running[1].var = load("gen.bn1.running_var", half)?;
        g.in_mean = load("gen.input.mean", FEATURE_DIM)?;
        g.in_std = load("gen.input.std", FEATURE_DIM)?;
        Ok(g)
    }
}

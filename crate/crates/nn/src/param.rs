use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named trainable tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }
}

/// Adam optimiser with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f32, beta1: f32, beta2: f32) -> Self {
        let (m, v): (Vec<_>, Vec<_>) = store
            .values
            .iter()
            .map(|t| (vec![0.0; t.numel()], vec![0.0; t.numel()]))
            .unzip();
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            step: 0,
            m,
            v,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Tensor)]) {
        self.step += 1;
        for (id, g) in grads {
            let (bc1, bc2) = self.bias_corrections();
            update(
                store.values[id.0].data_mut(),
                g.data(),
                &mut self.m[id.0],
                &mut self.v[id.0],
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                bc1,
                bc2,
            );
        }
    }

    fn bias_corrections(&self) -> (f64, f64) {
        let t = self.step as i32;
        (
            1.0 - (self.beta1 as f64).powi(t),
            1.0 - (self.beta2 as f64).powi(t),
        )
    }
}

#[allow(clippy::too_many_arguments)]
fn update(
    p: &mut [f32],
    g: &[f32],
    m: &mut [f32],
    v: &mut [f32],
    lr: f32,
    b1: f32,
    b2: f32,
    eps: f32,
    bc1: f64,
    bc2: f64,
) {
    assert_eq!(p.len(), g.len(), "gradient length mismatch");
    let step = lr as f64 / bc1;
    let bc2_sqrt = bc2.sqrt();
    for i in 0..p.len() {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        let denom = (v[i] as f64).sqrt() / bc2_sqrt + eps as f64;
        p[i] -= (step * m[i] as f64 / denom) as f32;
    }
}

/// Uniform initialisation in `[-bound, bound]`.
pub fn uniform(shape: &[usize], bound: f32, rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    let dist = Uniform::new_inclusive(-bound, bound).expect("valid bound");
    Tensor::new(shape, (0..n).map(|_| dist.sample(rng)).collect())
}

/// Zero-mean normal initialisation.
pub fn normal(shape: &[usize], std: f32, rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    let dist = Normal::new(0.0, std).expect("valid std");
    Tensor::new(shape, (0..n).map(|_| dist.sample(rng)).collect())
}

/// He-normal initialisation for a layer followed by a leaky ReLU of the given slope.
pub fn kaiming(shape: &[usize], fan_in: usize, slope: f32, rng: &mut impl Rng) -> Tensor {
    let gain = (2.0 / (1.0 + slope * slope)).sqrt();
    normal(shape, gain / (fan_in as f32).sqrt(), rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimises_a_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::new(&[2], vec![3.0, -2.0]));
        let mut opt = Adam::new(&store, 0.1, 0.9, 0.999);
        for _ in 0..500 {
            let g = store.get(id).scale(2.0);
            opt.step(&mut store, &[(id, g)]);
        }
        assert!(store.get(id).data().iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::new(&[1], vec![1.0]));
        let mut opt = Adam::new(&store, 0.01, 0.5, 0.9);
        opt.step(&mut store, &[(id, Tensor::new(&[1], vec![123.0]))]);
        assert!((store.get(id).item() - 0.99).abs() < 1e-6);
    }
}

//! Critics and the WGAN-GP objective.
//!
//! The trainable critic is a leaky-ReLU MLP in `f64`. Because it is piecewise
//! linear, its input gradient is `g = ((s2 * w3) W2^T * s1) W1^T` with the
//! activation slopes `s1`, `s2` locally constant, so the gradient of the
//! penalty with respect to the weights has a closed form and no second-order
//! autodiff is needed.

use faceprotect_nn::gemm::dgemm;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Anything that scores flattened images.
pub trait Critic {
    fn input_dim(&self) -> usize;

    /// One score per row of a row-major batch.
    fn scores(&self, batch: &[f64]) -> Vec<f64>;

    /// `dD/dx` for each row, same layout as the batch.
    fn input_gradients(&self, batch: &[f64]) -> Vec<f64>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CriticLoss {
    /// Wasserstein estimate plus the weighted penalty.
    pub total: f64,
    /// `mean D(fake) - mean D(real)`.
    pub wasserstein: f64,
    /// Unweighted `mean (|grad D(x_hat)| - 1)^2`.
    pub penalty: f64,
    pub mean_grad_norm: f64,
}

fn check_batch(name: &str, batch: &[f64], dim: usize) -> Result<usize> {
    if dim == 0 || batch.len() % dim != 0 || batch.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{name} batch of {} values is not a whole number of {dim}-rows",
            batch.len()
        )));
    }
    Ok(batch.len() / dim)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn row_norms(g: &[f64], dim: usize) -> Vec<f64> {
    g.chunks_exact(dim).map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt()).collect()
}

/// Critic objective: `E[D(fake)] - E[D(real)] + lambda * E[(|grad D(interp)| - 1)^2]`.
pub fn critic_loss(
    critic: &dyn Critic,
    real: &[f64],
    fake: &[f64],
    interp: &[f64],
    gp_lambda: f64,
) -> Result<CriticLoss> {
    let d = critic.input_dim();
    let n = check_batch("real", real, d)?;
    if check_batch("fake", fake, d)? != n || check_batch("interpolated", interp, d)? != n {
        return Err(Error::ShapeMismatch("critic batches differ in size".into()));
    }
    let wasserstein = mean(&critic.scores(fake)) - mean(&critic.scores(real));
    let norms = row_norms(&critic.input_gradients(interp), d);
    let penalty = mean(&norms.iter().map(|g| (g - 1.0).powi(2)).collect::<Vec<_>>());
    let total = wasserstein + gp_lambda * penalty;
    if !total.is_finite() {
        return Err(Error::TrainingAborted(format!(
            "non-finite critic loss (wasserstein {wasserstein}, penalty {penalty})"
        )));
    }
    Ok(CriticLoss {
        total,
        wasserstein,
        penalty,
        mean_grad_norm: mean(&norms),
    })
}

/// Generator objective `-E[D(fake)]`.
pub fn generator_loss(critic: &dyn Critic, fake: &[f64]) -> Result<f64> {
    check_batch("fake", fake, critic.input_dim())?;
    Ok(-mean(&critic.scores(fake)))
}

/// `eps * real + (1 - eps) * fake`, one `eps` per row.
pub fn interpolate(real: &[f64], fake: &[f64], eps: &[f64]) -> Vec<f64> {
    let dim = real.len() / eps.len();
    real.chunks_exact(dim)
        .zip(fake.chunks_exact(dim))
        .zip(eps)
        .flat_map(|((r, f), &e)| r.iter().zip(f).map(move |(a, b)| e * a + (1.0 - e) * b))
        .collect()
}

pub const CRITIC_SLOPE: f64 = 0.2;

/// Three-layer leaky-ReLU critic: `dim -> h1 -> h2 -> 1`. Weights are stored
/// `[in, out]` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpCritic {
    pub dim: usize,
    pub h1: usize,
    pub h2: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: f64,
}

/// Forward activations kept for backpropagation.
struct Forward {
    n: usize,
    a1: Vec<f64>,
    s1: Vec<f64>,
    a2: Vec<f64>,
    s2: Vec<f64>,
    out: Vec<f64>,
}

fn leaky(z: &mut [f64]) -> Vec<f64> {
    z.iter_mut()
        .map(|v| {
            if *v > 0.0 {
                1.0
            } else {
                *v *= CRITIC_SLOPE;
                CRITIC_SLOPE
            }
        })
        .collect()
}

fn add_bias(z: &mut [f64], b: &[f64]) {
    for row in z.chunks_exact_mut(b.len()) {
        row.iter_mut().zip(b).for_each(|(v, bb)| *v += bb);
    }
}

fn column_sums(m: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for row in m.chunks_exact(cols) {
        out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
    }
    out
}

/// Parameter gradients of an [`MlpCritic`], in the same layout.
#[derive(Clone, Debug)]
pub struct CriticGrads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: f64,
}

impl CriticGrads {
    fn all_finite(&self) -> bool {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.w3]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
            && self.b3.is_finite()
    }
}

impl MlpCritic {
    pub fn new(dim: usize, h1: usize, h2: usize, rng: &mut impl Rng) -> Self {
        let gain = (2.0 / (1.0 + CRITIC_SLOPE * CRITIC_SLOPE)).sqrt();
        let mut init = |fan_in: usize, len: usize, gain: f64| -> Vec<f64> {
            let dist = Normal::new(0.0, gain / (fan_in as f64).sqrt()).expect("positive std");
            (0..len).map(|_| dist.sample(rng)).collect()
        };
        Self {
            dim,
            h1,
            h2,
            w1: init(dim, dim * h1, gain),
            b1: vec![0.0; h1],
            w2: init(h1, h1 * h2, gain),
            b2: vec![0.0; h2],
            w3: init(h2, h2, 1.0),
            b3: 0.0,
        }
    }

    fn forward(&self, x: &[f64]) -> Forward {
        let n = x.len() / self.dim;
        let mut a1 = vec![0.0; n * self.h1];
        dgemm(n, self.dim, self.h1, 1.0, x, false, &self.w1, false, 0.0, &mut a1);
        add_bias(&mut a1, &self.b1);
        let s1 = leaky(&mut a1);
        let mut a2 = vec![0.0; n * self.h2];
        dgemm(n, self.h1, self.h2, 1.0, &a1, false, &self.w2, false, 0.0, &mut a2);
        add_bias(&mut a2, &self.b2);
        let s2 = leaky(&mut a2);
        let out = a2
            .chunks_exact(self.h2)
            .map(|r| r.iter().zip(&self.w3).map(|(a, w)| a * w).sum::<f64>() + self.b3)
            .collect();
        Forward { n, a1, s1, a2, s2, out }
    }

    /// Backward chain of the input gradient: returns `(a1, c1, a2)` with
    /// `a2 = s2 * w3`, `c1 = a2 W2^T`, `a1 = s1 * c1`; the gradient is `a1 W1^T`.
    fn gradient_chain(&self, f: &Forward) -> (Vec<f64>, Vec<f64>) {
        let n = f.n;
        let a2: Vec<f64> = f
            .s2
            .chunks_exact(self.h2)
            .flat_map(|s| s.iter().zip(&self.w3).map(|(s, w)| s * w))
            .collect();
        let mut c1 = vec![0.0; n * self.h1];
        dgemm(n, self.h2, self.h1, 1.0, &a2, false, &self.w2, true, 0.0, &mut c1);
        let a1: Vec<f64> = c1.iter().zip(&f.s1).map(|(c, s)| c * s).collect();
        (a1, a2)
    }

    /// Loss and parameter gradients of the full critic objective.
    pub fn loss_and_grads(
        &self,
        real: &[f64],
        fake: &[f64],
        interp: &[f64],
        gp_lambda: f64,
    ) -> Result<(CriticLoss, CriticGrads)> {
        let d = self.dim;
        let n = check_batch("real", real, d)?;
        if check_batch("fake", fake, d)? != n || check_batch("interpolated", interp, d)? != n {
            return Err(Error::ShapeMismatch("critic batches differ in size".into()));
        }
        let (h1, h2) = (self.h1, self.h2);
        let mut g = CriticGrads {
            w1: vec![0.0; d * h1],
            b1: vec![0.0; h1],
            w2: vec![0.0; h1 * h2],
            b2: vec![0.0; h2],
            w3: vec![0.0; h2],
            b3: 0.0,
        };

        // Wasserstein part: ordinary backprop over [real; fake] with seeds -1/n, +1/n.
        let x: Vec<f64> = real.iter().chain(fake).copied().collect();
        let f = self.forward(&x);
        let seed: Vec<f64> = (0..2 * n).map(|i| if i < n { -1.0 } else { 1.0 } / n as f64).collect();
        let wasserstein = mean(&f.out[n..]) - mean(&f.out[..n]);
        for (row, &s) in f.a2.chunks_exact(h2).zip(&seed) {
            g.w3.iter_mut().zip(row).for_each(|(gw, a)| *gw += s * a);
        }
        g.b3 = seed.iter().sum();
        let dz2: Vec<f64> = f
            .s2
            .chunks_exact(h2)
            .zip(&seed)
            .flat_map(|(s, &sd)| s.iter().zip(&self.w3).map(move |(s, w)| sd * w * s))
            .collect();
        dgemm(h1, 2 * n, h2, 1.0, &f.a1, true, &dz2, false, 1.0, &mut g.w2);
        g.b2 = column_sums(&dz2, h2);
        let mut dz1 = vec![0.0; 2 * n * h1];
        dgemm(2 * n, h2, h1, 1.0, &dz2, false, &self.w2, true, 0.0, &mut dz1);
        dz1.iter_mut().zip(&f.s1).for_each(|(v, s)| *v *= s);
        dgemm(d, 2 * n, h1, 1.0, &x, true, &dz1, false, 1.0, &mut g.w1);
        g.b1 = column_sums(&dz1, h1);

        // Penalty part, differentiated through the closed-form input gradient.
        let fi = self.forward(interp);
        let (a1, a2) = self.gradient_chain(&fi);
        let mut grad = vec![0.0; n * d];
        dgemm(n, h1, d, 1.0, &a1, false, &self.w1, true, 0.0, &mut grad);
        let norms = row_norms(&grad, d);
        let penalty = mean(&norms.iter().map(|v| (v - 1.0).powi(2)).collect::<Vec<_>>());
        let mut r = grad;
        for (row, &nrm) in r.chunks_exact_mut(d).zip(&norms) {
            let k = if nrm > 0.0 { gp_lambda * 2.0 * (nrm - 1.0) / (n as f64 * nrm) } else { 0.0 };
            row.iter_mut().for_each(|v| *v *= k);
        }
        dgemm(d, n, h1, 1.0, &r, true, &a1, false, 1.0, &mut g.w1);
        let mut da1 = vec![0.0; n * h1];
        dgemm(n, d, h1, 1.0, &r, false, &self.w1, false, 0.0, &mut da1);
        let dc1: Vec<f64> = da1.iter().zip(&fi.s1).map(|(v, s)| v * s).collect();
        dgemm(h1, n, h2, 1.0, &dc1, true, &a2, false, 1.0, &mut g.w2);
        let mut da2 = vec![0.0; n * h2];
        dgemm(n, h1, h2, 1.0, &dc1, false, &self.w2, false, 0.0, &mut da2);
        for (drow, srow) in da2.chunks_exact(h2).zip(fi.s2.chunks_exact(h2)) {
            for ((gw, dv), s) in g.w3.iter_mut().zip(drow).zip(srow) {
                *gw += dv * s;
            }
        }

        let total = wasserstein + gp_lambda * penalty;
        if !total.is_finite() || !g.all_finite() {
            return Err(Error::TrainingAborted(format!(
                "non-finite critic loss or gradient (wasserstein {wasserstein}, penalty {penalty})"
            )));
        }
        let loss = CriticLoss {
            total,
            wasserstein,
            penalty,
            mean_grad_norm: mean(&norms),
        };
        Ok((loss, g))
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len() + self.w3.len() + 1
    }

    fn params_mut(&mut self) -> [&mut [f64]; 6] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            std::slice::from_mut(&mut self.b3),
        ]
    }
}

impl Critic for MlpCritic {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn scores(&self, batch: &[f64]) -> Vec<f64> {
        self.forward(batch).out
    }

    fn input_gradients(&self, batch: &[f64]) -> Vec<f64> {
        let f = self.forward(batch);
        let (a1, _) = self.gradient_chain(&f);
        let mut g = vec![0.0; f.n * self.dim];
        dgemm(f.n, self.h1, self.dim, 1.0, &a1, false, &self.w1, true, 0.0, &mut g);
        g
    }
}

/// Adam over the six parameter groups of an [`MlpCritic`].
#[derive(Clone, Debug)]
pub struct CriticAdam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl CriticAdam {
    pub fn new(critic: &MlpCritic, lr: f64, beta1: f64, beta2: f64) -> Self {
        let sizes = [
            critic.w1.len(),
            critic.b1.len(),
            critic.w2.len(),
            critic.b2.len(),
            critic.w3.len(),
            1,
        ];
        Self {
            lr,
            beta1,
            beta2,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&mut self, critic: &mut MlpCritic, g: &CriticGrads) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        let grads: [&[f64]; 6] = [&g.w1, &g.b1, &g.w2, &g.b2, &g.w3, std::slice::from_ref(&g.b3)];
        for (k, p) in critic.params_mut().into_iter().enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                let gi = grads[k][i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                p[i] -= self.lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + 1e-8);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Constant(f64, usize);

    impl Critic for Constant {
        fn input_dim(&self) -> usize {
            self.1
        }
        fn scores(&self, batch: &[f64]) -> Vec<f64> {
            vec![self.0; batch.len() / self.1]
        }
        fn input_gradients(&self, batch: &[f64]) -> Vec<f64> {
            vec![0.0; batch.len()]
        }
    }

    struct Linear(Vec<f64>);

    impl Critic for Linear {
        fn input_dim(&self) -> usize {
            self.0.len()
        }
        fn scores(&self, batch: &[f64]) -> Vec<f64> {
            batch.chunks_exact(self.0.len()).map(|r| r.iter().zip(&self.0).map(|(a, b)| a * b).sum()).collect()
        }
        fn input_gradients(&self, batch: &[f64]) -> Vec<f64> {
            batch.chunks_exact(self.0.len()).flat_map(|_| self.0.clone()).collect()
        }
    }

    fn random_batch(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<f64> {
        (0..n * d).map(|_| rng.random()).collect()
    }

    #[test]
    fn constant_critic_loss_is_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = Constant(3.5, 16);
        let (r, f) = (random_batch(&mut rng, 4, 16), random_batch(&mut rng, 4, 16));
        let i = interpolate(&r, &f, &[0.1, 0.5, 0.9, 0.3]);
        let l = critic_loss(&c, &r, &f, &i, 10.0).unwrap();
        assert_eq!(l.total, 10.0);
        assert_eq!(generator_loss(&Constant(0.0, 16), &f).unwrap(), 0.0);
        assert_eq!(generator_loss(&Constant(5.0, 16), &f).unwrap(), -5.0);
    }

    #[test]
    fn unit_norm_linear_critic_has_no_penalty() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut u: Vec<f64> = (0..784).map(|_| rng.random::<f64>() - 0.5).collect();
        let n = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        u.iter_mut().for_each(|v| *v /= n);
        let (r, f) = (random_batch(&mut rng, 3, 784), random_batch(&mut rng, 3, 784));
        let i = interpolate(&r, &f, &[0.2, 0.7, 0.4]);
        let l = critic_loss(&Linear(u), &r, &f, &i, 10.0).unwrap();
        assert!(l.penalty < 1e-24);
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = MlpCritic::new(784, 64, 32, &mut rng);
        let x = random_batch(&mut rng, 1, 784);
        let g = c.input_gradients(&x);
        let h = 1e-6;
        let mut fd = vec![0.0; 784];
        for i in 0..784 {
            let (mut p, mut m) = (x.clone(), x.clone());
            p[i] += h;
            m[i] -= h;
            fd[i] = (c.scores(&p)[0] - c.scores(&m)[0]) / (2.0 * h);
        }
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let diff: Vec<f64> = g.iter().zip(&fd).map(|(a, b)| a - b).collect();
        assert!(norm(&diff) / norm(&fd) < 1e-6);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = MlpCritic::new(12, 9, 7, &mut rng);
        let (r, f) = (random_batch(&mut rng, 3, 12), random_batch(&mut rng, 3, 12));
        let i = interpolate(&r, &f, &[0.25, 0.5, 0.75]);
        let (l, g) = c.loss_and_grads(&r, &f, &i, 10.0).unwrap();
        let reference = critic_loss(&c, &r, &f, &i, 10.0).unwrap();
        assert!((l.total - reference.total).abs() < 1e-12);

        let eval = |c: &MlpCritic| critic_loss(c, &r, &f, &i, 10.0).unwrap().total;
        let h = 1e-6;
        let check = |analytic: &[f64], get: &dyn Fn(&mut MlpCritic) -> &mut [f64]| {
            for k in 0..analytic.len() {
                let (mut p, mut m) = (c.clone(), c.clone());
                get(&mut p)[k] += h;
                get(&mut m)[k] -= h;
                let fd = (eval(&p) - eval(&m)) / (2.0 * h);
                assert!(
                    (fd - analytic[k]).abs() <= 1e-5 * (1.0 + fd.abs()),
                    "param {k}: fd {fd} analytic {}",
                    analytic[k]
                );
            }
        };
        check(&g.w1, &|c| &mut c.w1);
        check(&g.b1, &|c| &mut c.b1);
        check(&g.w2, &|c| &mut c.w2);
        check(&g.b2, &|c| &mut c.b2);
        check(&g.w3, &|c| &mut c.w3);
        check(&[g.b3], &|c| std::slice::from_mut(&mut c.b3));
    }

    #[test]
    fn adam_steps_reduce_the_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut c = MlpCritic::new(20, 16, 8, &mut rng);
        let r: Vec<f64> = (0..8 * 20).map(|i| if i % 3 == 0 { 1.0 } else { 0.0 }).collect();
        let f = random_batch(&mut rng, 8, 20);
        let i = interpolate(&r, &f, &[0.5; 8]);
        let mut opt = CriticAdam::new(&c, 1e-3, 0.5, 0.9);
        let before = critic_loss(&c, &r, &f, &i, 10.0).unwrap().total;
        for _ in 0..50 {
            let (_, g) = c.loss_and_grads(&r, &f, &i, 10.0).unwrap();
            opt.step(&mut c, &g);
        }
        assert!(critic_loss(&c, &r, &f, &i, 10.0).unwrap().total < before);
    }
}

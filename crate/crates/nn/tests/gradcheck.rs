//! Central finite-difference checks for every differentiable op on the tape.

use faceprotect_nn::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Builds `mse(f(inputs), target)` and compares analytic gradients of every
/// input against central differences.
fn check(inputs: Vec<Tensor>, f: impl Fn(&mut Graph, &[Var]) -> Var) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let loss_of = |inputs: &[Tensor], target: Option<&Tensor>| -> (f64, Graph, Vec<Var>, Var, Tensor) {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
        let out = f(&mut g, &vars);
        let target = target.cloned().unwrap_or_else(|| Tensor::zeros(g.value(out).shape()));
        let t = g.constant(target.clone());
        let loss = g.mse(out, t);
        (g.value(loss).item() as f64, g, vars, loss, target)
    };
    // Random target so the upstream gradient is not trivially structured.
    let probe = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
        let out = f(&mut g, &vars);
        random(g.value(out).shape(), &mut rng)
    };
    let (_, g, vars, loss, target) = loss_of(&inputs, Some(&probe));
    let grads = g.backward(loss);
    let h = 1e-2f32;
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("gradient reaches every input");
        for i in 0..inputs[k].numel() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= h;
            let lp = loss_of(&plus, Some(&target)).0;
            let lm = loss_of(&minus, Some(&target)).0;
            let numeric = (lp - lm) / (2.0 * h as f64);
            let a = analytic.data()[i] as f64;
            let tol = 2e-3 + 2e-2 * numeric.abs().max(a.abs());
            assert!(
                (a - numeric).abs() <= tol,
                "input {k} element {i}: analytic {a} vs numeric {numeric}"
            );
        }
    }
}

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(7)
}

#[test]
fn conv2d_stride1_padded() {
    let mut r = rng();
    check(
        vec![random(&[2, 3, 5, 5], &mut r), random(&[4, 3, 3, 3], &mut r), random(&[4], &mut r)],
        |g, v| g.conv2d(v[0], v[1], Some(v[2]), 1, 1),
    );
}

#[test]
fn conv2d_stride2() {
    let mut r = rng();
    check(
        vec![random(&[2, 2, 6, 6], &mut r), random(&[3, 2, 3, 3], &mut r)],
        |g, v| g.conv2d(v[0], v[1], None, 2, 1),
    );
}

#[test]
fn conv_transpose2d_doubles_resolution() {
    let mut r = rng();
    let x = random(&[2, 3, 3, 3], &mut r);
    let w = random(&[3, 2, 4, 4], &mut r);
    let b = random(&[2], &mut r);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let wv = g.constant(w.clone());
    let y = g.conv_transpose2d(xv, wv, None, 2, 1);
    assert_eq!(g.value(y).shape(), &[2, 2, 6, 6]);
    check(vec![x, w, b], |g, v| g.conv_transpose2d(v[0], v[1], Some(v[2]), 2, 1));
}

#[test]
fn conv_transpose_is_adjoint_of_conv() {
    // <conv(x, w), y> == <x, conv_transpose(y, w)> when geometry matches.
    let mut r = rng();
    let x = random(&[1, 2, 6, 6], &mut r);
    let w = random(&[3, 2, 4, 4], &mut r);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let wv = g.constant(w.clone());
    let y = g.conv2d(xv, wv, None, 2, 1);
    let yshape = g.value(y).shape().to_vec();
    let probe = random(&yshape, &mut r);
    let lhs: f64 = g.value(y).data().iter().zip(probe.data()).map(|(a, b)| (a * b) as f64).sum();
    let pv = g.constant(probe);
    let back = g.conv_transpose2d(pv, wv, None, 2, 1);
    assert_eq!(g.value(back).shape(), x.shape());
    let rhs: f64 = g.value(back).data().iter().zip(x.data()).map(|(a, b)| (a * b) as f64).sum();
    assert!((lhs - rhs).abs() < 1e-4, "{lhs} vs {rhs}");
}

#[test]
fn linear_layer() {
    let mut r = rng();
    check(
        vec![random(&[3, 5], &mut r), random(&[4, 5], &mut r), random(&[4], &mut r)],
        |g, v| g.linear(v[0], v[1], Some(v[2])),
    );
}

#[test]
fn batch_norm_training_mode() {
    let mut r = rng();
    check(
        vec![random(&[3, 2, 2, 2], &mut r), random(&[2], &mut r), random(&[2], &mut r)],
        |g, v| g.batch_norm(v[0], v[1], v[2], 1e-5).0,
    );
}

#[test]
fn squeeze_excitation_pieces() {
    let mut r = rng();
    check(vec![random(&[2, 3, 4, 4], &mut r), random(&[2, 3], &mut r)], |g, v| {
        let pooled = g.global_avg_pool(v[0]);
        let gate = g.sigmoid(pooled);
        let gated = g.mul_channels(v[0], gate);
        let scaled = g.mul_channels(gated, v[1]);
        g.tanh(scaled)
    });
}

#[test]
fn concat_upsample_activations() {
    let mut r = rng();
    check(vec![random(&[1, 2, 2, 3], &mut r), random(&[1, 1, 2, 3], &mut r)], |g, v| {
        let c = g.concat_channels(v[0], v[1]);
        let u = g.upsample2x(c);
        let a = g.leaky_relu(u, 0.2);
        let s = g.scale(a, 1.5);
        let flat = g.reshape(s, &[1, 3 * 4 * 6]);
        g.relu(flat)
    });
}

#[test]
fn elementwise_and_reductions() {
    let mut r = rng();
    check(vec![random(&[2, 3], &mut r), random(&[2, 3], &mut r)], |g, v| {
        let s = g.sub(v[0], v[1]);
        let a = g.add(s, v[0]);
        let half = g.scale(a, 0.3);
        let c = g.clamp(half, -0.9, 0.9);
        let m = g.mse(c, v[1]);
        let mean = g.mean(v[0]);
        g.add(m, mean)
    });
}

#[test]
fn channel_affine_constants() {
    let mut r = rng();
    check(vec![random(&[2, 2, 3, 1], &mut r)], |g, v| g.channel_affine(v[0], &[0.5, -2.0], &[1.0, 0.25]));
}

#[test]
fn parameter_gradients_are_summed_per_parameter() {
    use faceprotect_nn::ParamStore;
    let mut store = ParamStore::new();
    let id = store.add("w", Tensor::new(&[1, 1], vec![2.0]));
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(&[1, 1], vec![3.0]));
    let w1 = g.param(&store, id);
    let w2 = g.param(&store, id);
    let y1 = g.linear(x, w1, None);
    let y2 = g.linear(y1, w2, None);
    let loss = g.mean(y2);
    let grads = g.backward(loss).params();
    // y = w * w * x => dy/dw = 2 w x = 12
    assert_eq!(grads.len(), 1);
    assert!((grads[0].1.item() - 12.0).abs() < 1e-5);
}

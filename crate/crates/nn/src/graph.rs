//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied during one forward pass. Values
//! are kept on the tape so [`Graph::backward`] can walk it in reverse order.
//! A graph is built fresh for every training step and dropped afterwards.

use crate::conv::{batch_to_channel_major, channel_major_to_batch, col2im, im2col, ConvGeom};
use crate::gemm::sgemm;
use crate::param::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf {
        param: Option<ParamId>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f32),
    MulChannels {
        x: Var,
        s: Var,
    },
    ConcatChannels(Var, Var),
    Relu(Var),
    LeakyRelu(Var, f32),
    Sigmoid(Var),
    Tanh(Var),
    GlobalAvgPool(Var),
    Upsample2x(Var),
    Reshape(Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f32>,
        inv_std: Vec<f32>,
    },
    ChannelAffine {
        x: Var,
        scale: Vec<f32>,
    },
    Clamp {
        x: Var,
        lo: f32,
        hi: f32,
    },
    Mse(Var, Var),
    Mean(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Batch statistics produced by [`Graph::batch_norm`], used to update running averages.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// `(n, c, l)` view of a tensor shaped `[n, c, ...]`.
fn ncl(t: &Tensor) -> (usize, usize, usize) {
    let s = t.shape();
    assert!(s.len() >= 2, "expected at least [N, C], got {s:?}");
    (s[0], s[1], s[2..].iter().product())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf { param: None }, false)
    }

    /// A free leaf that receives a gradient (not tied to a parameter store).
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf { param: None }, true)
    }

    /// Load a parameter onto the tape. Its gradient is reported by [`Gradients::params`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Leaf { param: Some(id) }, true)
    }

    /// Load a parameter as a constant (inference, or a frozen network).
    pub fn frozen(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.constant(store.get(id).clone())
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        let (n, c, h, wd) = xv.dims4();
        let (o, wc, k, k2) = wv.dims4();
        assert_eq!(wc, c, "conv2d: weight expects {wc} input channels, got {c}");
        assert_eq!(k, k2, "conv2d: square kernels only");
        let g = ConvGeom {
            channels: c,
            height: h,
            width: wd,
            kernel: k,
            stride,
            pad,
        };
        let l = g.out_len();
        let cols = im2col(xv.data(), n, &g);
        let mut out_cm = vec![0.0f32; o * n * l];
        sgemm(o, g.col_rows(), n * l, 1.0, wv.data(), false, &cols, false, 0.0, &mut out_cm);
        let mut out = channel_major_to_batch(&out_cm, n, o, l);
        if let Some(b) = b {
            let bv = self.value(b).data();
            assert_eq!(bv.len(), o, "conv2d: bias length");
            for (i, chunk) in out.chunks_mut(l).enumerate() {
                let bias = bv[i % o];
                chunk.iter_mut().for_each(|v| *v += bias);
            }
        }
        let value = Tensor::new(&[n, o, g.out_height(), g.out_width()], out);
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(
            value,
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            },
            rg,
        )
    }

    /// Transposed convolution; weight layout `[in_channels, out_channels, k, k]`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        let (n, c, h, wd) = xv.dims4();
        let (wc, o, k, k2) = wv.dims4();
        assert_eq!(wc, c, "conv_transpose2d: weight expects {wc} input channels, got {c}");
        assert_eq!(k, k2, "conv_transpose2d: square kernels only");
        let out_h = (h - 1) * stride + k - 2 * pad;
        let out_w = (wd - 1) * stride + k - 2 * pad;
        let g = ConvGeom {
            channels: o,
            height: out_h,
            width: out_w,
            kernel: k,
            stride,
            pad,
        };
        debug_assert_eq!(g.out_height(), h);
        let hw = h * wd;
        let x_cm = batch_to_channel_major(xv.data(), n, c, hw);
        let mut cols = vec![0.0f32; g.col_rows() * n * hw];
        sgemm(g.col_rows(), c, n * hw, 1.0, wv.data(), true, &x_cm, false, 0.0, &mut cols);
        let mut out = col2im(&cols, n, &g);
        if let Some(b) = b {
            let bv = self.value(b).data();
            assert_eq!(bv.len(), o, "conv_transpose2d: bias length");
            for (i, chunk) in out.chunks_mut(out_h * out_w).enumerate() {
                let bias = bv[i % o];
                chunk.iter_mut().for_each(|v| *v += bias);
            }
        }
        let value = Tensor::new(&[n, o, out_h, out_w], out);
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(
            value,
            Op::ConvTranspose2d {
                x,
                w,
                b,
                stride,
                pad,
            },
            rg,
        )
    }

    /// `y = x W^T + b` with `x: [n, in]`, `W: [out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        let (n, fin) = xv.dims2();
        let (fout, win) = wv.dims2();
        assert_eq!(fin, win, "linear: input features {fin} vs weight {win}");
        let mut out = vec![0.0f32; n * fout];
        sgemm(n, fin, fout, 1.0, xv.data(), false, wv.data(), true, 0.0, &mut out);
        if let Some(b) = b {
            let bv = self.value(b).data();
            assert_eq!(bv.len(), fout, "linear: bias length");
            for row in out.chunks_mut(fout) {
                row.iter_mut().zip(bv).for_each(|(v, b)| *v += b);
            }
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(Tensor::new(&[n, fout], out), Op::Linear { x, w, b }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Sub(a, b), rg)
    }

    pub fn scale(&mut self, x: Var, s: f32) -> Var {
        let v = self.value(x).scale(s);
        let rg = self.rg(x);
        self.push(v, Op::Scale(x, s), rg)
    }

    /// Multiply every `[n, c]` plane of `x` by `s[n, c]`.
    pub fn mul_channels(&mut self, x: Var, s: Var) -> Var {
        let xv = self.value(x);
        let sv = self.value(s);
        let (n, c, l) = ncl(xv);
        assert_eq!(sv.shape(), &[n, c], "mul_channels: gate shape");
        let mut out = xv.data().to_vec();
        for (i, chunk) in out.chunks_mut(l).enumerate() {
            let g = sv.data()[i];
            chunk.iter_mut().for_each(|v| *v *= g);
        }
        let value = Tensor::new(xv.shape(), out);
        let rg = self.rg(x) || self.rg(s);
        self.push(value, Op::MulChannels { x, s }, rg)
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        let (n, ca, l) = ncl(av);
        let (nb, cb, lb) = ncl(bv);
        assert!(n == nb && l == lb && av.shape()[2..] == bv.shape()[2..], "concat shape mismatch");
        let mut out = Vec::with_capacity(av.numel() + bv.numel());
        for i in 0..n {
            out.extend_from_slice(&av.data()[i * ca * l..(i + 1) * ca * l]);
            out.extend_from_slice(&bv.data()[i * cb * l..(i + 1) * cb * l]);
        }
        let mut shape = av.shape().to_vec();
        shape[1] = ca + cb;
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(&shape, out), Op::ConcatChannels(a, b), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|v| v.max(0.0));
        let rg = self.rg(x);
        self.push(v, Op::Relu(x), rg)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f32) -> Var {
        let v = self.value(x).map(|v| if v > 0.0 { v } else { v * slope });
        let rg = self.rg(x);
        self.push(v, Op::LeakyRelu(x, slope), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|v| 1.0 / (1.0 + (-v).exp()));
        let rg = self.rg(x);
        self.push(v, Op::Sigmoid(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f32::tanh);
        let rg = self.rg(x);
        self.push(v, Op::Tanh(x), rg)
    }

    /// `[n, c, h, w]` -> `[n, c]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (n, c, l) = ncl(xv);
        let out: Vec<f32> = xv
            .data()
            .chunks(l)
            .map(|ch| (ch.iter().map(|&v| v as f64).sum::<f64>() / l as f64) as f32)
            .collect();
        let rg = self.rg(x);
        self.push(Tensor::new(&[n, c], out), Op::GlobalAvgPool(x), rg)
    }

    /// Nearest-neighbour 2x upsampling of an NCHW tensor.
    pub fn upsample2x(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (n, c, h, w) = xv.dims4();
        let mut out = vec![0.0f32; n * c * 4 * h * w];
        for (p, plane) in xv.data().chunks(h * w).enumerate() {
            let dst = &mut out[p * 4 * h * w..(p + 1) * 4 * h * w];
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    dst[y * 2 * w + xx] = plane[(y / 2) * w + xx / 2];
                }
            }
        }
        let rg = self.rg(x);
        self.push(Tensor::new(&[n, c, 2 * h, 2 * w], out), Op::Upsample2x(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let v = self.value(x).clone().reshape(shape);
        let rg = self.rg(x);
        self.push(v, Op::Reshape(x), rg)
    }

    /// Training-mode batch normalisation over every axis except the channel axis (1).
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f32) -> (Var, BatchStats) {
        let xv = self.value(x);
        let (n, c, l) = ncl(xv);
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        assert_eq!(gv.len(), c, "batch_norm: gamma length");
        let m = (n * l) as f64;
        let mut mean = vec![0.0f32; c];
        let mut var = vec![0.0f32; c];
        for ch in 0..c {
            let mut s = 0.0f64;
            for b in 0..n {
                s += xv.data()[(b * c + ch) * l..(b * c + ch + 1) * l]
                    .iter()
                    .map(|&v| v as f64)
                    .sum::<f64>();
            }
            let mu = s / m;
            let mut ss = 0.0f64;
            for b in 0..n {
                ss += xv.data()[(b * c + ch) * l..(b * c + ch + 1) * l]
                    .iter()
                    .map(|&v| (v as f64 - mu).powi(2))
                    .sum::<f64>();
            }
            mean[ch] = mu as f32;
            var[ch] = (ss / m) as f32;
        }
        let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0f32; xv.numel()];
        let mut out = vec![0.0f32; xv.numel()];
        for (i, chunk) in xv.data().chunks(l).enumerate() {
            let ch = i % c;
            for (j, &v) in chunk.iter().enumerate() {
                let h = (v - mean[ch]) * inv_std[ch];
                xhat[i * l + j] = h;
                out[i * l + j] = gv[ch] * h + bv[ch];
            }
        }
        let value = Tensor::new(xv.shape(), out);
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let var_out = self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        );
        (var_out, BatchStats { mean, var })
    }

    /// Per-channel `y = scale[c] * x + shift[c]` with constant coefficients.
    pub fn channel_affine(&mut self, x: Var, scale: &[f32], shift: &[f32]) -> Var {
        let xv = self.value(x);
        let (_, c, l) = ncl(xv);
        assert!(scale.len() == c && shift.len() == c, "channel_affine: coefficient length");
        let mut out = xv.data().to_vec();
        for (i, chunk) in out.chunks_mut(l).enumerate() {
            let ch = i % c;
            chunk.iter_mut().for_each(|v| *v = *v * scale[ch] + shift[ch]);
        }
        let value = Tensor::new(xv.shape(), out);
        let rg = self.rg(x);
        self.push(
            value,
            Op::ChannelAffine {
                x,
                scale: scale.to_vec(),
            },
            rg,
        )
    }

    /// Clamp into `[lo, hi]`; the gradient passes only where the input was inside the range.
    pub fn clamp(&mut self, x: Var, lo: f32, hi: f32) -> Var {
        let v = self.value(x).map(|v| v.clamp(lo, hi));
        let rg = self.rg(x);
        self.push(v, Op::Clamp { x, lo, hi }, rg)
    }

    /// Mean squared error between two same-shaped tensors, as a scalar.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.shape(), bv.shape(), "mse: shape mismatch");
        let s: f64 = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| ((x - y) as f64).powi(2))
            .sum();
        let value = Tensor::scalar((s / av.numel() as f64) as f32);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Mse(a, b), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).mean() as f32);
        let rg = self.rg(x);
        self.push(value, Op::Mean(x), rg)
    }

    /// Backpropagate from a scalar output.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).numel(), 1, "backward() needs a scalar");
        self.backward_from(vec![(loss, Tensor::new(self.value(loss).shape(), vec![1.0]))])
    }

    /// Backpropagate from arbitrary seed gradients (vector-Jacobian product).
    pub fn backward_from(&self, seeds: Vec<(Var, Tensor)>) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut last = 0;
        for (v, g) in seeds {
            assert_eq!(g.shape(), self.value(v).shape(), "seed gradient shape");
            last = last.max(v.0);
            accumulate(&self.nodes, &mut grads, v, g);
        }
        for i in (0..=last).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf { .. } = node.op {
                continue;
            }
            let Some(grad) = grads[i].take() else {
                continue;
            };
            self.backward_node(node, &grad, &mut grads);
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Leaf { param: Some(id) } => Some((id, i)),
                _ => None,
            })
            .collect();
        Gradients { grads, params }
    }

    fn backward_node(&self, node: &Node, dy: &Tensor, grads: &mut [Option<Tensor>]) {
        let nodes = &self.nodes;
        let val = |v: Var| &nodes[v.0].value;
        let acc = |grads: &mut [Option<Tensor>], v: Var, g: Tensor| accumulate(nodes, grads, v, g);
        match &node.op {
            Op::Leaf { .. } => {}
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            } => {
                let xv = val(*x);
                let wv = val(*w);
                let (n, c, h, wd) = xv.dims4();
                let (o, _, k, _) = wv.dims4();
                let g = ConvGeom {
                    channels: c,
                    height: h,
                    width: wd,
                    kernel: k,
                    stride: *stride,
                    pad: *pad,
                };
                let l = g.out_len();
                let dy_cm = batch_to_channel_major(dy.data(), n, o, l);
                if let Some(b) = b {
                    if nodes[b.0].requires_grad {
                        let db: Vec<f32> = dy_cm
                            .chunks(n * l)
                            .map(|r| r.iter().map(|&v| v as f64).sum::<f64>() as f32)
                            .collect();
                        acc(grads, *b, Tensor::new(&[o], db));
                    }
                }
                if nodes[w.0].requires_grad {
                    let cols = im2col(xv.data(), n, &g);
                    let mut dw = vec![0.0f32; o * g.col_rows()];
                    sgemm(o, n * l, g.col_rows(), 1.0, &dy_cm, false, &cols, true, 0.0, &mut dw);
                    acc(grads, *w, Tensor::new(wv.shape(), dw));
                }
                if nodes[x.0].requires_grad {
                    let mut dcols = vec![0.0f32; g.col_rows() * n * l];
                    sgemm(g.col_rows(), o, n * l, 1.0, wv.data(), true, &dy_cm, false, 0.0, &mut dcols);
                    let dx = col2im(&dcols, n, &g);
                    acc(grads, *x, Tensor::new(xv.shape(), dx));
                }
            }
            Op::ConvTranspose2d {
                x,
                w,
                b,
                stride,
                pad,
            } => {
                let xv = val(*x);
                let wv = val(*w);
                let (n, c, h, wd) = xv.dims4();
                let (_, o, k, _) = wv.dims4();
                let (_, _, out_h, out_w) = dy.dims4();
                let g = ConvGeom {
                    channels: o,
                    height: out_h,
                    width: out_w,
                    kernel: k,
                    stride: *stride,
                    pad: *pad,
                };
                let hw = h * wd;
                if let Some(b) = b {
                    if nodes[b.0].requires_grad {
                        let mut db = vec![0.0f64; o];
                        for (i, chunk) in dy.data().chunks(out_h * out_w).enumerate() {
                            db[i % o] += chunk.iter().map(|&v| v as f64).sum::<f64>();
                        }
                        acc(grads, *b, Tensor::new(&[o], db.iter().map(|&v| v as f32).collect()));
                    }
                }
                let dcols = im2col(dy.data(), n, &g);
                if nodes[w.0].requires_grad {
                    let x_cm = batch_to_channel_major(xv.data(), n, c, hw);
                    let mut dw = vec![0.0f32; c * g.col_rows()];
                    sgemm(c, n * hw, g.col_rows(), 1.0, &x_cm, false, &dcols, true, 0.0, &mut dw);
                    acc(grads, *w, Tensor::new(wv.shape(), dw));
                }
                if nodes[x.0].requires_grad {
                    let mut dx_cm = vec![0.0f32; c * n * hw];
                    sgemm(c, g.col_rows(), n * hw, 1.0, wv.data(), false, &dcols, false, 0.0, &mut dx_cm);
                    let dx = channel_major_to_batch(&dx_cm, n, c, hw);
                    acc(grads, *x, Tensor::new(xv.shape(), dx));
                }
            }
            Op::Linear { x, w, b } => {
                let xv = val(*x);
                let wv = val(*w);
                let (n, fin) = xv.dims2();
                let (fout, _) = wv.dims2();
                if let Some(b) = b {
                    if nodes[b.0].requires_grad {
                        let mut db = vec![0.0f32; fout];
                        for row in dy.data().chunks(fout) {
                            db.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                        }
                        acc(grads, *b, Tensor::new(&[fout], db));
                    }
                }
                if nodes[w.0].requires_grad {
                    let mut dw = vec![0.0f32; fout * fin];
                    sgemm(fout, n, fin, 1.0, dy.data(), true, xv.data(), false, 0.0, &mut dw);
                    acc(grads, *w, Tensor::new(&[fout, fin], dw));
                }
                if nodes[x.0].requires_grad {
                    let mut dx = vec![0.0f32; n * fin];
                    sgemm(n, fout, fin, 1.0, dy.data(), false, wv.data(), false, 0.0, &mut dx);
                    acc(grads, *x, Tensor::new(&[n, fin], dx));
                }
            }
            Op::Add(a, b) => {
                acc(grads, *a, dy.clone());
                acc(grads, *b, dy.clone());
            }
            Op::Sub(a, b) => {
                acc(grads, *a, dy.clone());
                acc(grads, *b, dy.scale(-1.0));
            }
            Op::Scale(x, s) => acc(grads, *x, dy.scale(*s)),
            Op::MulChannels { x, s } => {
                let xv = val(*x);
                let sv = val(*s);
                let (_, _, l) = ncl(xv);
                if nodes[x.0].requires_grad {
                    let mut dx = dy.data().to_vec();
                    for (i, chunk) in dx.chunks_mut(l).enumerate() {
                        let g = sv.data()[i];
                        chunk.iter_mut().for_each(|v| *v *= g);
                    }
                    acc(grads, *x, Tensor::new(xv.shape(), dx));
                }
                if nodes[s.0].requires_grad {
                    let ds: Vec<f32> = dy
                        .data()
                        .chunks(l)
                        .zip(xv.data().chunks(l))
                        .map(|(g, x)| g.iter().zip(x).map(|(&a, &b)| (a * b) as f64).sum::<f64>() as f32)
                        .collect();
                    acc(grads, *s, Tensor::new(sv.shape(), ds));
                }
            }
            Op::ConcatChannels(a, b) => {
                let av = val(*a);
                let bv = val(*b);
                let (n, ca, l) = ncl(av);
                let (_, cb, _) = ncl(bv);
                let mut da = Vec::with_capacity(av.numel());
                let mut db = Vec::with_capacity(bv.numel());
                for i in 0..n {
                    let base = i * (ca + cb) * l;
                    da.extend_from_slice(&dy.data()[base..base + ca * l]);
                    db.extend_from_slice(&dy.data()[base + ca * l..base + (ca + cb) * l]);
                }
                acc(grads, *a, Tensor::new(av.shape(), da));
                acc(grads, *b, Tensor::new(bv.shape(), db));
            }
            Op::Relu(x) => {
                let g = dy.zip_map(val(*x), |g, v| if v > 0.0 { g } else { 0.0 });
                acc(grads, *x, g);
            }
            Op::LeakyRelu(x, slope) => {
                let g = dy.zip_map(val(*x), |g, v| if v > 0.0 { g } else { g * slope });
                acc(grads, *x, g);
            }
            Op::Sigmoid(x) => {
                let g = dy.zip_map(&node.value, |g, y| g * y * (1.0 - y));
                acc(grads, *x, g);
            }
            Op::Tanh(x) => {
                let g = dy.zip_map(&node.value, |g, y| g * (1.0 - y * y));
                acc(grads, *x, g);
            }
            Op::GlobalAvgPool(x) => {
                let xv = val(*x);
                let (_, _, l) = ncl(xv);
                let mut dx = vec![0.0f32; xv.numel()];
                for (i, chunk) in dx.chunks_mut(l).enumerate() {
                    let g = dy.data()[i] / l as f32;
                    chunk.iter_mut().for_each(|v| *v = g);
                }
                acc(grads, *x, Tensor::new(xv.shape(), dx));
            }
            Op::Upsample2x(x) => {
                let xv = val(*x);
                let (_, _, h, w) = xv.dims4();
                let mut dx = vec![0.0f32; xv.numel()];
                for (p, plane) in dy.data().chunks(4 * h * w).enumerate() {
                    let dst = &mut dx[p * h * w..(p + 1) * h * w];
                    for y in 0..2 * h {
                        for xx in 0..2 * w {
                            dst[(y / 2) * w + xx / 2] += plane[y * 2 * w + xx];
                        }
                    }
                }
                acc(grads, *x, Tensor::new(xv.shape(), dx));
            }
            Op::Reshape(x) => acc(grads, *x, dy.clone().reshape(val(*x).shape())),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let xv = val(*x);
                let (n, c, l) = ncl(xv);
                let gv = val(*gamma).data();
                let m = (n * l) as f64;
                let mut dgamma = vec![0.0f64; c];
                let mut dbeta = vec![0.0f64; c];
                for (i, chunk) in dy.data().chunks(l).enumerate() {
                    let ch = i % c;
                    for (j, &g) in chunk.iter().enumerate() {
                        dgamma[ch] += (g * xhat[i * l + j]) as f64;
                        dbeta[ch] += g as f64;
                    }
                }
                if nodes[x.0].requires_grad {
                    // dx = inv_std / m * (m * dxhat - sum(dxhat) - xhat * sum(dxhat * xhat))
                    let mut dx = vec![0.0f32; xv.numel()];
                    for (i, chunk) in dy.data().chunks(l).enumerate() {
                        let ch = i % c;
                        let sum_dxhat = dbeta[ch] * gv[ch] as f64;
                        let sum_dxhat_xhat = dgamma[ch] * gv[ch] as f64;
                        for (j, &g) in chunk.iter().enumerate() {
                            let dxhat = (g * gv[ch]) as f64;
                            let h = xhat[i * l + j] as f64;
                            dx[i * l + j] = (inv_std[ch] as f64 / m
                                * (m * dxhat - sum_dxhat - h * sum_dxhat_xhat))
                                as f32;
                        }
                    }
                    acc(grads, *x, Tensor::new(xv.shape(), dx));
                }
                acc(grads, *gamma, Tensor::new(&[c], dgamma.iter().map(|&v| v as f32).collect()));
                acc(grads, *beta, Tensor::new(&[c], dbeta.iter().map(|&v| v as f32).collect()));
            }
            Op::ChannelAffine { x, scale } => {
                let xv = val(*x);
                let (_, c, l) = ncl(xv);
                let mut dx = dy.data().to_vec();
                for (i, chunk) in dx.chunks_mut(l).enumerate() {
                    let s = scale[i % c];
                    chunk.iter_mut().for_each(|v| *v *= s);
                }
                acc(grads, *x, Tensor::new(xv.shape(), dx));
            }
            Op::Clamp { x, lo, hi } => {
                let g = dy.zip_map(val(*x), |g, v| if v >= *lo && v <= *hi { g } else { 0.0 });
                acc(grads, *x, g);
            }
            Op::Mse(a, b) => {
                let av = val(*a);
                let bv = val(*b);
                let k = 2.0 * dy.item() / av.numel() as f32;
                let d = av.zip_map(bv, |x, y| k * (x - y));
                if nodes[b.0].requires_grad {
                    acc(grads, *b, d.scale(-1.0));
                }
                acc(grads, *a, d);
            }
            Op::Mean(x) => {
                let xv = val(*x);
                let g = dy.item() / xv.numel() as f32;
                acc(grads, *x, Tensor::full(xv.shape(), g));
            }
        }
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    if !nodes[v.0].requires_grad {
        return;
    }
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Result of a backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    /// Gradient with respect to a leaf, if any flowed into it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradients of every parameter loaded with [`Graph::param`], summed per parameter.
    pub fn params(&self) -> Vec<(ParamId, Tensor)> {
        let mut out: Vec<(ParamId, Tensor)> = Vec::new();
        for &(id, node) in &self.params {
            let Some(g) = &self.grads[node] else { continue };
            match out.iter_mut().find(|(p, _)| *p == id) {
                Some((_, acc)) => acc.add_assign(g),
                None => out.push((id, g.clone())),
            }
        }
        out
    }
}

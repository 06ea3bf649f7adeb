//! Reverse-mode gradient tape over tensor operations.
//!
//! The tape records the fixed computation graph of one forward pass and
//! replays it backwards to accumulate gradients of a scalar output with
//! respect to registered parameter leaves. The op set is exactly what the
//! model needs; this is not a general-purpose autodiff engine.

use super::matmul::matmul;
use super::scalar::{gelu, gelu_deriv, sigmoid, softplus};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddScalar(Var),
    MulScalar(Var, f64),
    /// tensor * rank-0 variable
    ScaleByVar(Var, Var),
    /// [.., C] + [C]
    AddBias(Var, Var),
    /// [B, N, C] + [B, C]
    AddBroadcastRows(Var, Var),
    /// [B, N, C] * [B, C]
    MulBroadcastRows(Var, Var),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Bmm { a: Var, b: Var, ta: bool, tb: bool },
    Sigmoid(Var),
    Gelu(Var),
    Relu(Var),
    Ln(Var),
    Clamp { a: Var, lo: f64, hi: f64 },
    SoftmaxLast(Var),
    SumAll(Var),
    SumLast(Var),
    /// a[.., C] / b[..] with b broadcast over the last axis
    DivBroadcastLast(Var, Var),
    EmbedGather { table: Var, ids: Vec<usize> },
    Im2Col { x: Var, kernel: usize, stride: usize, pad: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, eps: f64 },
    /// forward takes the stored (hard) value, backward passes straight through
    StraightThrough { soft: Var },
    BceWithLogits { logit: Var, target: f64 },
    /// [T, H*dh] -> [H, T, dh]
    SplitHeads { x: Var, heads: usize },
    /// [H, T, dh] -> [T, H*dh]
    MergeHeads { x: Var },
    /// zero the diagonal of each [S, S] slice of [B, S, S]
    ZeroDiag(Var),
    /// (a + a^T)/2 per [S, S] slice; output is exactly symmetric
    Symmetrize(Var),
}

/// Gradient tape for one forward pass.
pub struct Tape {
    ops: Vec<Op>,
    vals: Vec<Tensor>,
    needs_grad: Vec<bool>,
}

/// Per-leaf gradients produced by [`Tape::backward`].
pub struct Gradients {
    g: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.g.get(v.0).and_then(|o| o.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.g.get_mut(v.0).and_then(|o| o.take())
    }

    /// Gradient for `v`, or zeros of the given shape if nothing flowed there.
    pub fn wrt_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        match self.wrt(v) {
            Some(t) => t.clone(),
            None => Tensor::zeros(shape),
        }
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            ops: Vec::new(),
            vals: Vec::new(),
            needs_grad: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.vals[v.0]
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.vals[v.0].scalar_value()
    }

    /// Register a differentiable leaf (a parameter).
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, true)
    }

    /// Register a non-differentiable leaf (input data, masks, noise).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, false)
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> Var {
        debug_assert!(value.all_finite() || matches!(op, Op::Leaf), "non-finite op output");
        self.ops.push(op);
        self.vals.push(value);
        self.needs_grad.push(needs_grad);
        Var(self.ops.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.needs_grad[v.0])
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (&self.vals[a.0], &self.vals[b.0]);
        assert_eq!(x.shape(), y.shape(), "add shape mismatch");
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let t = Tensor::new(x.shape().to_vec(), data).unwrap();
        let ng = self.needs(&[a, b]);
        self.push(Op::Add(a, b), t, ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (&self.vals[a.0], &self.vals[b.0]);
        assert_eq!(x.shape(), y.shape(), "sub shape mismatch");
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p - q).collect();
        let t = Tensor::new(x.shape().to_vec(), data).unwrap();
        let ng = self.needs(&[a, b]);
        self.push(Op::Sub(a, b), t, ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (&self.vals[a.0], &self.vals[b.0]);
        assert_eq!(x.shape(), y.shape(), "mul shape mismatch");
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let t = Tensor::new(x.shape().to_vec(), data).unwrap();
        let ng = self.needs(&[a, b]);
        self.push(Op::Mul(a, b), t, ng)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let t = self.vals[a.0].map(|v| v + c);
        let ng = self.needs(&[a]);
        self.push(Op::AddScalar(a), t, ng)
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Var {
        let t = self.vals[a.0].map(|v| v * c);
        let ng = self.needs(&[a]);
        self.push(Op::MulScalar(a, c), t, ng)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.mul_scalar(a, -1.0)
    }

    /// 1 - a, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let n = self.neg(a);
        self.add_scalar(n, 1.0)
    }

    /// Multiply a tensor by a rank-0 variable.
    pub fn scale_by_var(&mut self, a: Var, c: Var) -> Var {
        assert!(self.vals[c.0].ndim() == 0, "scale_by_var expects rank-0 scale");
        let cv = self.vals[c.0].scalar_value();
        let t = self.vals[a.0].map(|v| v * cv);
        let ng = self.needs(&[a, c]);
        self.push(Op::ScaleByVar(a, c), t, ng)
    }

    /// [.., C] + [C]: bias addition over trailing rows.
    pub fn add_bias(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (&self.vals[a.0], &self.vals[b.0]);
        let c = *x.shape().last().expect("add_bias on rank-0");
        assert_eq!(y.shape(), &[c], "add_bias bias shape");
        let mut data = x.data().to_vec();
        for row in data.chunks_mut(c) {
            for (o, &bv) in row.iter_mut().zip(y.data()) {
                *o += bv;
            }
        }
        let t = Tensor::new(x.shape().to_vec(), data).unwrap();
        let ng = self.needs(&[a, b]);
        self.push(Op::AddBias(a, b), t, ng)
    }

    /// [B, N, C] + [B, C] broadcast over the middle axis.
    pub fn add_broadcast_rows(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (&self.vals[a.0], &self.vals[b.0]);
        let (bs, n, c) = dims3(x.shape());
        assert_eq!(y.shape(), &[bs, c], "add_broadcast_rows shape");
        let mut data = x.data().to_vec();
        for bi in 0..bs {
            let brow = &y.data()[bi * c..(bi + 1) * c];
            for ni in 0..n {
                let row = &mut data[(bi * n + ni) * c..(bi * n + ni + 1) * c];
                for (o, &bv) in row.iter_mut().zip(brow) {
                    *o += bv;
                }
            }
        }
        let t = Tensor::new(x.shape().to_vec(), data).unwrap();
        let ng = self.needs(&[a, b]);
        self.push(Op::AddBroadcastRows(a, b), t, ng)
    }

    /// [B, N, C] * [B, C] broadcast over the middle axis.
    pub fn mul_broadcast_rows(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (&self.vals[a.0], &self.vals[b.0]);
        let (bs, n, c) = dims3(x.shape());
        assert_eq!(y.shape(), &[bs, c], "mul_broadcast_rows shape");
        let mut data = x.data().to_vec();
        for bi in 0..bs {
            let brow = &y.data()[bi * c..(bi + 1) * c];
            for ni in 0..n {
                let row = &mut data[(bi * n + ni) * c..(bi * n + ni + 1) * c];
                for (o, &bv) in row.iter_mut().zip(brow) {
                    *o *= bv;
                }
            }
        }
        let t = Tensor::new(x.shape().to_vec(), data).unwrap();
        let ng = self.needs(&[a, b]);
        self.push(Op::MulBroadcastRows(a, b), t, ng)
    }

    // ---- linear algebra ----

    /// 2-D matrix product with optional logical transposes.
    pub fn matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let (x, y) = (&self.vals[a.0], &self.vals[b.0]);
        assert_eq!(x.ndim(), 2, "matmul lhs rank");
        assert_eq!(y.ndim(), 2, "matmul rhs rank");
        let (m, k) = if ta {
            (x.shape()[1], x.shape()[0])
        } else {
            (x.shape()[0], x.shape()[1])
        };
        let (kb, n) = if tb {
            (y.shape()[1], y.shape()[0])
        } else {
            (y.shape()[0], y.shape()[1])
        };
        assert_eq!(k, kb, "matmul inner dimension");
        let data = matmul(x.data(), y.data(), m, k, n, ta, tb);
        let t = Tensor::new(vec![m, n], data).unwrap();
        let ng = self.needs(&[a, b]);
        self.push(Op::MatMul { a, b, ta, tb }, t, ng)
    }

    /// Batched matrix product over matching leading batch axes.
    pub fn bmm(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let (x, y) = (&self.vals[a.0], &self.vals[b.0]);
        let (bs, xr, xc) = dims3(x.shape());
        let (bs2, yr, yc) = dims3(y.shape());
        assert_eq!(bs, bs2, "bmm batch dimension");
        let (m, k) = if ta { (xc, xr) } else { (xr, xc) };
        let (kb, n) = if tb { (yc, yr) } else { (yr, yc) };
        assert_eq!(k, kb, "bmm inner dimension");
        let mut data = vec![0.0; bs * m * n];
        for bi in 0..bs {
            let xa = &x.data()[bi * xr * xc..(bi + 1) * xr * xc];
            let yb = &y.data()[bi * yr * yc..(bi + 1) * yr * yc];
            let out = &mut data[bi * m * n..(bi + 1) * m * n];
            super::matmul::matmul_acc(xa, yb, m, k, n, ta, tb, out);
        }
        let t = Tensor::new(vec![bs, m, n], data).unwrap();
        let ng = self.needs(&[a, b]);
        self.push(Op::Bmm { a, b, ta, tb }, t, ng)
    }

    // ---- nonlinearities ----

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.vals[a.0].map(sigmoid);
        let ng = self.needs(&[a]);
        self.push(Op::Sigmoid(a), t, ng)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let t = self.vals[a.0].map(gelu);
        let ng = self.needs(&[a]);
        self.push(Op::Gelu(a), t, ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.vals[a.0].map(|v| v.max(0.0));
        let ng = self.needs(&[a]);
        self.push(Op::Relu(a), t, ng)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let t = self.vals[a.0].map(f64::ln);
        let ng = self.needs(&[a]);
        self.push(Op::Ln(a), t, ng)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let t = self.vals[a.0].map(|v| v.clamp(lo, hi));
        let ng = self.needs(&[a]);
        self.push(Op::Clamp { a, lo, hi }, t, ng)
    }

    /// Softmax over the last axis.
    pub fn softmax_last(&mut self, a: Var) -> Var {
        let x = &self.vals[a.0];
        let c = *x.shape().last().expect("softmax_last on rank-0");
        let mut data = x.data().to_vec();
        for row in data.chunks_mut(c) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let t = Tensor::new(x.shape().to_vec(), data).unwrap();
        let ng = self.needs(&[a]);
        self.push(Op::SoftmaxLast(a), t, ng)
    }

    // ---- reductions and broadcasts ----

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.vals[a.0].data().iter().sum();
        let ng = self.needs(&[a]);
        self.push(Op::SumAll(a), Tensor::scalar(s), ng)
    }

    /// Sum over the last axis: [.., C] -> [..].
    pub fn sum_last(&mut self, a: Var) -> Var {
        let x = &self.vals[a.0];
        let c = *x.shape().last().expect("sum_last on rank-0");
        let lead: Vec<usize> = x.shape()[..x.ndim() - 1].to_vec();
        let data: Vec<f64> = x.data().chunks(c).map(|row| row.iter().sum()).collect();
        let t = Tensor::new(lead, data).unwrap();
        let ng = self.needs(&[a]);
        self.push(Op::SumLast(a), t, ng)
    }

    /// a[.., C] / b[..] with the divisor broadcast along the last axis.
    pub fn div_broadcast_last(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (&self.vals[a.0], &self.vals[b.0]);
        let c = *x.shape().last().expect("div_broadcast_last on rank-0");
        assert_eq!(&x.shape()[..x.ndim() - 1], y.shape(), "div_broadcast_last shapes");
        let mut data = x.data().to_vec();
        for (row, &d) in data.chunks_mut(c).zip(y.data()) {
            for v in row.iter_mut() {
                *v /= d;
            }
        }
        let t = Tensor::new(x.shape().to_vec(), data).unwrap();
        let ng = self.needs(&[a, b]);
        self.push(Op::DivBroadcastLast(a, b), t, ng)
    }

    // ---- structured ops ----

    /// Row lookup: table [V, C] indexed by `ids` -> [len(ids), C].
    pub fn embed_gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let tb = &self.vals[table.0];
        assert_eq!(tb.ndim(), 2, "embed_gather table rank");
        let (v, c) = (tb.shape()[0], tb.shape()[1]);
        let mut data = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            assert!(id < v, "embed_gather id out of range");
            data.extend_from_slice(&tb.data()[id * c..(id + 1) * c]);
        }
        let t = Tensor::new(vec![ids.len(), c], data).unwrap();
        let ng = self.needs(&[table]);
        self.push(
            Op::EmbedGather {
                table,
                ids: ids.to_vec(),
            },
            t,
            ng,
        )
    }

    /// Unfold [L, C] into convolution frames [frames, kernel*C] with zero
    /// padding of `pad` rows on each side; frames = (L + 2*pad - kernel)/stride + 1.
    pub fn im2col(&mut self, x: Var, kernel: usize, stride: usize, pad: usize) -> Var {
        let xv = &self.vals[x.0];
        assert_eq!(xv.ndim(), 2, "im2col input rank");
        let (l, c) = (xv.shape()[0], xv.shape()[1]);
        assert!(l + 2 * pad >= kernel, "im2col kernel larger than padded input");
        let frames = (l + 2 * pad - kernel) / stride + 1;
        let mut data = vec![0.0; frames * kernel * c];
        for f in 0..frames {
            for j in 0..kernel {
                let src = (f * stride + j) as isize - pad as isize;
                if src >= 0 && (src as usize) < l {
                    let src = src as usize;
                    let dst = (f * kernel + j) * c;
                    data[dst..dst + c].copy_from_slice(&xv.data()[src * c..(src + 1) * c]);
                }
            }
        }
        let t = Tensor::new(vec![frames, kernel * c], data).unwrap();
        let ng = self.needs(&[x]);
        self.push(Op::Im2Col { x, kernel, stride, pad }, t, ng)
    }

    /// Layer normalization over the last axis with learnable gain and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let (xv, gv, bv) = (&self.vals[x.0], &self.vals[gamma.0], &self.vals[beta.0]);
        let c = *xv.shape().last().expect("layer_norm on rank-0");
        assert_eq!(gv.shape(), &[c], "layer_norm gamma shape");
        assert_eq!(bv.shape(), &[c], "layer_norm beta shape");
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for (v, (&g, &b)) in row.iter_mut().zip(gv.data().iter().zip(bv.data())) {
                *v = (*v - mean) * inv * g + b;
            }
        }
        let t = Tensor::new(xv.shape().to_vec(), data).unwrap();
        let ng = self.needs(&[x, gamma, beta]);
        self.push(Op::LayerNorm { x, gamma, beta, eps }, t, ng)
    }

    /// Forward takes `hard`; backward routes the gradient to `soft` unchanged.
    pub fn straight_through(&mut self, soft: Var, hard: Tensor) -> Var {
        assert_eq!(self.vals[soft.0].shape(), hard.shape(), "straight_through shapes");
        let ng = self.needs(&[soft]);
        self.push(Op::StraightThrough { soft }, hard, ng)
    }

    /// Binary cross-entropy on a logit, computed in the stable softplus form.
    pub fn bce_with_logits(&mut self, logit: Var, target: f64) -> Var {
        let x = self.vals[logit.0].scalar_value();
        let loss = target * softplus(-x) + (1.0 - target) * softplus(x);
        let ng = self.needs(&[logit]);
        self.push(Op::BceWithLogits { logit, target }, Tensor::scalar(loss), ng)
    }

    /// [T, H*dh] -> [H, T, dh]
    pub fn split_heads(&mut self, x: Var, heads: usize) -> Var {
        let xv = &self.vals[x.0];
        assert_eq!(xv.ndim(), 2, "split_heads input rank");
        let (t, d) = (xv.shape()[0], xv.shape()[1]);
        assert_eq!(d % heads, 0, "split_heads divisibility");
        let dh = d / heads;
        let mut data = vec![0.0; t * d];
        for ti in 0..t {
            for h in 0..heads {
                let src = ti * d + h * dh;
                let dst = (h * t + ti) * dh;
                data[dst..dst + dh].copy_from_slice(&xv.data()[src..src + dh]);
            }
        }
        let out = Tensor::new(vec![heads, t, dh], data).unwrap();
        let ng = self.needs(&[x]);
        self.push(Op::SplitHeads { x, heads }, out, ng)
    }

    /// [H, T, dh] -> [T, H*dh]
    pub fn merge_heads(&mut self, x: Var) -> Var {
        let xv = &self.vals[x.0];
        let (h, t, dh) = dims3(xv.shape());
        let mut data = vec![0.0; h * t * dh];
        for hi in 0..h {
            for ti in 0..t {
                let src = (hi * t + ti) * dh;
                let dst = ti * (h * dh) + hi * dh;
                data[dst..dst + dh].copy_from_slice(&xv.data()[src..src + dh]);
            }
        }
        let out = Tensor::new(vec![t, h * dh], data).unwrap();
        let ng = self.needs(&[x]);
        self.push(Op::MergeHeads { x }, out, ng)
    }

    /// Zero the diagonal of each [S, S] slice.
    pub fn zero_diag(&mut self, a: Var) -> Var {
        let x = &self.vals[a.0];
        let (b, s, s2) = dims3(x.shape());
        assert_eq!(s, s2, "zero_diag expects square slices");
        let mut data = x.data().to_vec();
        for bi in 0..b {
            for i in 0..s {
                data[(bi * s + i) * s + i] = 0.0;
            }
        }
        let t = Tensor::new(x.shape().to_vec(), data).unwrap();
        let ng = self.needs(&[a]);
        self.push(Op::ZeroDiag(a), t, ng)
    }

    /// (a + a^T)/2 per slice; the result is symmetric to the bit.
    pub fn symmetrize(&mut self, a: Var) -> Var {
        let x = &self.vals[a.0];
        let (b, s, s2) = dims3(x.shape());
        assert_eq!(s, s2, "symmetrize expects square slices");
        let mut data = vec![0.0; b * s * s];
        for bi in 0..b {
            let base = bi * s * s;
            for i in 0..s {
                for j in 0..s {
                    data[base + i * s + j] =
                        0.5 * (x.data()[base + i * s + j] + x.data()[base + j * s + i]);
                }
            }
        }
        let t = Tensor::new(x.shape().to_vec(), data).unwrap();
        let ng = self.needs(&[a]);
        self.push(Op::Symmetrize(a), t, ng)
    }

    // ---- backward ----

    /// Gradients of a scalar output with respect to every leaf that the
    /// output depends on. Leaves without a path to `out` are absent from
    /// the result (query with [`Gradients::wrt_or_zeros`]).
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        if self.vals[out.0].ndim() != 0 {
            return Err(Error::InvalidArgument(
                "backward requires a rank-0 output".into(),
            ));
        }
        if !self.vals[out.0].scalar_value().is_finite() {
            return Err(Error::NonFinite("backward output".into()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.ops.len()).map(|_| None).collect();
        grads[out.0] = Some(Tensor::scalar(1.0));
        for id in (0..=out.0).rev() {
            if !self.needs_grad[id] {
                grads[id] = None;
                continue;
            }
            if matches!(self.ops[id], Op::Leaf) {
                continue; // keep the accumulated gradient for the caller
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
        }
        Ok(Gradients { g: grads })
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
        if !self.needs_grad[v.0] {
            return;
        }
        match &mut grads[v.0] {
            Some(t) => {
                debug_assert_eq!(t.shape(), delta.shape());
                for (o, d) in t.data_mut().iter_mut().zip(delta.data()) {
                    *o += d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match &self.ops[id] {
            Op::Leaf => unreachable!("leaves are handled in backward"),
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (x, y) = (&self.vals[a.0], &self.vals[b.0]);
                self.acc(grads, *a, zip_mul(g, y));
                self.acc(grads, *b, zip_mul(g, x));
            }
            Op::AddScalar(a) => self.acc(grads, *a, g.clone()),
            Op::MulScalar(a, c) => self.acc(grads, *a, g.map(|v| v * c)),
            Op::ScaleByVar(a, c) => {
                let cv = self.vals[c.0].scalar_value();
                self.acc(grads, *a, g.map(|v| v * cv));
                let dot: f64 = g
                    .data()
                    .iter()
                    .zip(self.vals[a.0].data())
                    .map(|(p, q)| p * q)
                    .sum();
                self.acc(grads, *c, Tensor::scalar(dot));
            }
            Op::AddBias(a, b) => {
                self.acc(grads, *a, g.clone());
                let c = *g.shape().last().unwrap();
                let mut gb = vec![0.0; c];
                for row in g.data().chunks(c) {
                    for (o, &v) in gb.iter_mut().zip(row) {
                        *o += v;
                    }
                }
                self.acc(grads, *b, Tensor::new(vec![c], gb).unwrap());
            }
            Op::AddBroadcastRows(a, b) => {
                self.acc(grads, *a, g.clone());
                let (bs, n, c) = dims3(g.shape());
                let mut gb = vec![0.0; bs * c];
                for bi in 0..bs {
                    for ni in 0..n {
                        let row = &g.data()[(bi * n + ni) * c..(bi * n + ni + 1) * c];
                        let acc = &mut gb[bi * c..(bi + 1) * c];
                        for (o, &v) in acc.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                }
                self.acc(grads, *b, Tensor::new(vec![bs, c], gb).unwrap());
            }
            Op::MulBroadcastRows(a, b) => {
                let (x, w) = (&self.vals[a.0], &self.vals[b.0]);
                let (bs, n, c) = dims3(x.shape());
                let mut ga = vec![0.0; bs * n * c];
                let mut gw = vec![0.0; bs * c];
                for bi in 0..bs {
                    let wrow = &w.data()[bi * c..(bi + 1) * c];
                    for ni in 0..n {
                        let off = (bi * n + ni) * c;
                        let grow = &g.data()[off..off + c];
                        let xrow = &x.data()[off..off + c];
                        let garow = &mut ga[off..off + c];
                        for i in 0..c {
                            garow[i] = grow[i] * wrow[i];
                            gw[bi * c + i] += grow[i] * xrow[i];
                        }
                    }
                }
                self.acc(grads, *a, Tensor::new(x.shape().to_vec(), ga).unwrap());
                self.acc(grads, *b, Tensor::new(vec![bs, c], gw).unwrap());
            }
            Op::MatMul { a, b, ta, tb } => {
                let (x, y) = (&self.vals[a.0], &self.vals[b.0]);
                let (m, k) = if *ta {
                    (x.shape()[1], x.shape()[0])
                } else {
                    (x.shape()[0], x.shape()[1])
                };
                let n = g.shape()[1];
                if self.needs_grad[a.0] {
                    let ga = if !*ta {
                        matmul(g.data(), y.data(), m, n, k, false, !*tb)
                    } else {
                        matmul(y.data(), g.data(), k, n, m, *tb, true)
                    };
                    self.acc(grads, *a, Tensor::new(x.shape().to_vec(), ga).unwrap());
                }
                if self.needs_grad[b.0] {
                    let gb = if !*tb {
                        matmul(x.data(), g.data(), k, m, n, !*ta, false)
                    } else {
                        matmul(g.data(), x.data(), n, m, k, true, *ta)
                    };
                    self.acc(grads, *b, Tensor::new(y.shape().to_vec(), gb).unwrap());
                }
            }
            Op::Bmm { a, b, ta, tb } => {
                let (x, y) = (&self.vals[a.0], &self.vals[b.0]);
                let (bs, xr, xc) = dims3(x.shape());
                let (_, yr, yc) = dims3(y.shape());
                let (m, k) = if *ta { (xc, xr) } else { (xr, xc) };
                let n = g.shape()[2];
                if self.needs_grad[a.0] {
                    let mut ga = vec![0.0; bs * xr * xc];
                    for bi in 0..bs {
                        let gs = &g.data()[bi * m * n..(bi + 1) * m * n];
                        let ys = &y.data()[bi * yr * yc..(bi + 1) * yr * yc];
                        let out = &mut ga[bi * xr * xc..(bi + 1) * xr * xc];
                        if !*ta {
                            super::matmul::matmul_acc(gs, ys, m, n, k, false, !*tb, out);
                        } else {
                            super::matmul::matmul_acc(ys, gs, k, n, m, *tb, true, out);
                        }
                    }
                    self.acc(grads, *a, Tensor::new(x.shape().to_vec(), ga).unwrap());
                }
                if self.needs_grad[b.0] {
                    let mut gb = vec![0.0; bs * yr * yc];
                    for bi in 0..bs {
                        let gs = &g.data()[bi * m * n..(bi + 1) * m * n];
                        let xs = &x.data()[bi * xr * xc..(bi + 1) * xr * xc];
                        let out = &mut gb[bi * yr * yc..(bi + 1) * yr * yc];
                        if !*tb {
                            super::matmul::matmul_acc(xs, gs, k, m, n, !*ta, false, out);
                        } else {
                            super::matmul::matmul_acc(gs, xs, n, m, k, true, *ta, out);
                        }
                    }
                    self.acc(grads, *b, Tensor::new(y.shape().to_vec(), gb).unwrap());
                }
            }
            Op::Sigmoid(a) => {
                let y = &self.vals[id];
                let delta = Tensor::new(
                    g.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(y.data())
                        .map(|(gv, yv)| gv * yv * (1.0 - yv))
                        .collect(),
                )
                .unwrap();
                self.acc(grads, *a, delta);
            }
            Op::Gelu(a) => {
                let x = &self.vals[a.0];
                let delta = Tensor::new(
                    g.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(x.data())
                        .map(|(gv, xv)| gv * gelu_deriv(*xv))
                        .collect(),
                )
                .unwrap();
                self.acc(grads, *a, delta);
            }
            Op::Relu(a) => {
                let x = &self.vals[a.0];
                let delta = Tensor::new(
                    g.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(x.data())
                        .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                        .collect(),
                )
                .unwrap();
                self.acc(grads, *a, delta);
            }
            Op::Ln(a) => {
                let x = &self.vals[a.0];
                let delta = Tensor::new(
                    g.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(x.data())
                        .map(|(gv, xv)| gv / xv)
                        .collect(),
                )
                .unwrap();
                self.acc(grads, *a, delta);
            }
            Op::Clamp { a, lo, hi } => {
                let x = &self.vals[a.0];
                let delta = Tensor::new(
                    g.shape().to_vec(),
                    g.data()
                        .iter()
                        .zip(x.data())
                        .map(|(gv, xv)| if *xv >= *lo && *xv <= *hi { *gv } else { 0.0 })
                        .collect(),
                )
                .unwrap();
                self.acc(grads, *a, delta);
            }
            Op::SoftmaxLast(a) => {
                let y = &self.vals[id];
                let c = *y.shape().last().unwrap();
                let mut ga = vec![0.0; y.len()];
                for ((grow, yrow), garow) in g
                    .data()
                    .chunks(c)
                    .zip(y.data().chunks(c))
                    .zip(ga.chunks_mut(c))
                {
                    let dot: f64 = grow.iter().zip(yrow).map(|(p, q)| p * q).sum();
                    for i in 0..c {
                        garow[i] = yrow[i] * (grow[i] - dot);
                    }
                }
                self.acc(grads, *a, Tensor::new(y.shape().to_vec(), ga).unwrap());
            }
            Op::SumAll(a) => {
                let gv = g.scalar_value();
                let shape = self.vals[a.0].shape().to_vec();
                self.acc(grads, *a, Tensor::full(&shape, gv));
            }
            Op::SumLast(a) => {
                let x = &self.vals[a.0];
                let c = *x.shape().last().unwrap();
                let mut ga = Vec::with_capacity(x.len());
                for &gv in g.data() {
                    ga.extend(std::iter::repeat(gv).take(c));
                }
                self.acc(grads, *a, Tensor::new(x.shape().to_vec(), ga).unwrap());
            }
            Op::DivBroadcastLast(a, b) => {
                let (x, y) = (&self.vals[a.0], &self.vals[b.0]);
                let c = *x.shape().last().unwrap();
                let mut ga = vec![0.0; x.len()];
                let mut gb = vec![0.0; y.len()];
                for (ri, ((grow, xrow), garow)) in g
                    .data()
                    .chunks(c)
                    .zip(x.data().chunks(c))
                    .zip(ga.chunks_mut(c))
                    .enumerate()
                {
                    let d = y.data()[ri];
                    let mut dot = 0.0;
                    for i in 0..c {
                        garow[i] = grow[i] / d;
                        dot += grow[i] * xrow[i];
                    }
                    gb[ri] = -dot / (d * d);
                }
                self.acc(grads, *a, Tensor::new(x.shape().to_vec(), ga).unwrap());
                self.acc(grads, *b, Tensor::new(y.shape().to_vec(), gb).unwrap());
            }
            Op::EmbedGather { table, ids } => {
                let tb = &self.vals[table.0];
                let c = tb.shape()[1];
                let mut gt = vec![0.0; tb.len()];
                for (i, &id) in ids.iter().enumerate() {
                    let grow = &g.data()[i * c..(i + 1) * c];
                    let dst = &mut gt[id * c..(id + 1) * c];
                    for (o, &v) in dst.iter_mut().zip(grow) {
                        *o += v;
                    }
                }
                self.acc(grads, *table, Tensor::new(tb.shape().to_vec(), gt).unwrap());
            }
            Op::Im2Col { x, kernel, stride, pad } => {
                let xv = &self.vals[x.0];
                let (l, c) = (xv.shape()[0], xv.shape()[1]);
                let frames = g.shape()[0];
                let mut gx = vec![0.0; l * c];
                for f in 0..frames {
                    for j in 0..*kernel {
                        let src = (f * stride + j) as isize - *pad as isize;
                        if src >= 0 && (src as usize) < l {
                            let src = src as usize;
                            let grow = &g.data()[(f * kernel + j) * c..(f * kernel + j + 1) * c];
                            let dst = &mut gx[src * c..(src + 1) * c];
                            for (o, &v) in dst.iter_mut().zip(grow) {
                                *o += v;
                            }
                        }
                    }
                }
                self.acc(grads, *x, Tensor::new(vec![l, c], gx).unwrap());
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                let (xv, gv) = (&self.vals[x.0], &self.vals[gamma.0]);
                let c = *xv.shape().last().unwrap();
                let rows = xv.len() / c;
                let mut gx = vec![0.0; xv.len()];
                let mut ggamma = vec![0.0; c];
                let mut gbeta = vec![0.0; c];
                for r in 0..rows {
                    let xrow = &xv.data()[r * c..(r + 1) * c];
                    let grow = &g.data()[r * c..(r + 1) * c];
                    let mean = xrow.iter().sum::<f64>() / c as f64;
                    let var = xrow.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                    let inv = 1.0 / (var + eps).sqrt();
                    // gy = g .* gamma; dx = inv*(gy - mean(gy) - xhat*mean(gy .* xhat))
                    let mut mean_gy = 0.0;
                    let mut mean_gy_xhat = 0.0;
                    for i in 0..c {
                        let xhat = (xrow[i] - mean) * inv;
                        let gy = grow[i] * gv.data()[i];
                        mean_gy += gy;
                        mean_gy_xhat += gy * xhat;
                        ggamma[i] += grow[i] * xhat;
                        gbeta[i] += grow[i];
                    }
                    mean_gy /= c as f64;
                    mean_gy_xhat /= c as f64;
                    let dst = &mut gx[r * c..(r + 1) * c];
                    for i in 0..c {
                        let xhat = (xrow[i] - mean) * inv;
                        let gy = grow[i] * gv.data()[i];
                        dst[i] = inv * (gy - mean_gy - xhat * mean_gy_xhat);
                    }
                }
                self.acc(grads, *x, Tensor::new(xv.shape().to_vec(), gx).unwrap());
                self.acc(grads, *gamma, Tensor::new(vec![c], ggamma).unwrap());
                self.acc(grads, *beta, Tensor::new(vec![c], gbeta).unwrap());
            }
            Op::StraightThrough { soft } => {
                self.acc(grads, *soft, g.clone());
            }
            Op::BceWithLogits { logit, target } => {
                let x = self.vals[logit.0].scalar_value();
                let d = (sigmoid(x) - target) * g.scalar_value();
                self.acc(grads, *logit, Tensor::scalar(d));
            }
            Op::SplitHeads { x, heads } => {
                let xv = &self.vals[x.0];
                let (t, d) = (xv.shape()[0], xv.shape()[1]);
                let dh = d / heads;
                let mut gx = vec![0.0; t * d];
                for ti in 0..t {
                    for h in 0..*heads {
                        let src = (h * t + ti) * dh;
                        let dst = ti * d + h * dh;
                        gx[dst..dst + dh].copy_from_slice(&g.data()[src..src + dh]);
                    }
                }
                self.acc(grads, *x, Tensor::new(vec![t, d], gx).unwrap());
            }
            Op::MergeHeads { x } => {
                let xv = &self.vals[x.0];
                let (h, t, dh) = dims3(xv.shape());
                let mut gx = vec![0.0; h * t * dh];
                for hi in 0..h {
                    for ti in 0..t {
                        let src = ti * (h * dh) + hi * dh;
                        let dst = (hi * t + ti) * dh;
                        gx[dst..dst + dh].copy_from_slice(&g.data()[src..src + dh]);
                    }
                }
                self.acc(grads, *x, Tensor::new(vec![h, t, dh], gx).unwrap());
            }
            Op::ZeroDiag(a) => {
                let (b, s, _) = dims3(g.shape());
                let mut ga = g.data().to_vec();
                for bi in 0..b {
                    for i in 0..s {
                        ga[(bi * s + i) * s + i] = 0.0;
                    }
                }
                self.acc(grads, *a, Tensor::new(g.shape().to_vec(), ga).unwrap());
            }
            Op::Symmetrize(a) => {
                let (b, s, _) = dims3(g.shape());
                let mut ga = vec![0.0; g.len()];
                for bi in 0..b {
                    let base = bi * s * s;
                    for i in 0..s {
                        for j in 0..s {
                            ga[base + i * s + j] =
                                0.5 * (g.data()[base + i * s + j] + g.data()[base + j * s + i]);
                        }
                    }
                }
                self.acc(grads, *a, Tensor::new(g.shape().to_vec(), ga).unwrap());
            }
        }
    }
}

fn dims3(shape: &[usize]) -> (usize, usize, usize) {
    assert_eq!(shape.len(), 3, "expected rank-3 tensor, got {shape:?}");
    (shape[0], shape[1], shape[2])
}

fn zip_mul(a: &Tensor, b: &Tensor) -> Tensor {
    debug_assert_eq!(a.shape(), b.shape());
    Tensor::new(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(p, q)| p * q).collect(),
    )
    .unwrap()
}

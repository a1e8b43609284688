//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] is rebuilt for every forward pass: ops append nodes that own
//! their output tensors, and [`Graph::backward`] walks the tape in reverse,
//! accumulating gradients per node and finally per [`VarId`]. Values are kept
//! for the backward pass; im2col buffers are recomputed instead of cached so
//! memory stays proportional to activations.
//!
//! Batch-norm layers running in training mode normalize with batch statistics
//! and record pending running-stat updates on the graph; the caller applies
//! them explicitly after the optimizer step, which keeps forward passes pure
//! (finite-difference probes do not perturb state).

pub mod kernels;
mod store;

pub use store::{VarId, VarKind, VarStore};

use crate::tensor::{s, Scalar, Tensor};
use kernels::{col2im, gemm_nn, gemm_nt, gemm_tn, im2col, ConvGeom};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Pending batch-norm running-stat update produced by a training-mode pass.
pub struct StatUpdate<T: Scalar> {
    pub mean_id: VarId,
    pub var_id: VarId,
    pub batch_mean: Vec<T>,
    /// Unbiased (n / (n - 1)) batch variance, the convention for running stats.
    pub batch_var: Vec<T>,
    pub momentum: T,
}

impl<T: Scalar> StatUpdate<T> {
    /// Folds this batch's statistics into the store's running values:
    /// running = (1 - momentum) * running + momentum * batch.
    pub fn apply(&self, store: &mut VarStore<T>) {
        let keep = T::ONE - self.momentum;
        let mean = store.value_mut(self.mean_id).data_mut();
        for (r, &b) in mean.iter_mut().zip(&self.batch_mean) {
            *r = keep * *r + self.momentum * b;
        }
        let var = store.value_mut(self.var_id).data_mut();
        for (r, &b) in var.iter_mut().zip(&self.batch_var) {
            *r = keep * *r + self.momentum * b;
        }
    }
}

enum Op<T: Scalar> {
    Leaf { origin: Option<VarId> },
    Conv3d { x: Var, w: Var, b: Option<Var>, stride: [usize; 3], pad: [usize; 3] },
    ConvT3d { x: Var, w: Var, b: Option<Var>, stride: [usize; 3], pad: [usize; 3] },
    Linear { x: Var, w: Var, b: Option<Var> },
    /// Batch statistics normalization; saves per-channel mean/invstd.
    BnTrain { x: Var, gamma: Var, beta: Var, mean: Vec<T>, invstd: Vec<T> },
    /// Running statistics normalization; rmean/rinvstd captured as constants.
    BnEval { x: Var, gamma: Var, beta: Var, rmean: Vec<T>, rinvstd: Vec<T> },
    LeakyRelu { x: Var, slope: T },
    Relu { x: Var },
    Tanh { x: Var },
    Sigmoid { x: Var },
    /// Softmax along axis 1.
    Softmax { x: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    /// mask (N,1,...) broadcast-multiplied over the channels of x (N,C,...).
    MulBc { mask: Var, x: Var },
    OneMinus { x: Var },
    Scale { x: Var, k: T },
    Clamp { x: Var, lo: T, hi: T },
    Ln { x: Var },
    MeanAll { x: Var },
    /// Concatenation along axis 1.
    ConcatC { a: Var, b: Var },
    /// Repeats a depth-1 tensor (N,C,1,H,W) to depth `times`.
    RepeatD { x: Var, times: usize },
    Reshape { x: Var },
    /// Slice [from, to) along axis 1.
    SliceC { x: Var, from: usize, to: usize },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    /// True when this node or any ancestor is a gradient-requiring leaf.
    rg: bool,
}

/// Gradients keyed by [`VarId`], the product of [`Graph::backward`].
pub struct Grads<T: Scalar> {
    by_var: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, id: VarId) -> Option<&Tensor<T>> {
        self.by_var.get(id.index()).and_then(|g| g.as_ref())
    }
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    training: bool,
    stat_updates: Vec<StatUpdate<T>>,
}

impl<T: Scalar> Graph<T> {
    pub fn new(training: bool) -> Self {
        Graph { nodes: Vec::new(), training, stat_updates: Vec::new() }
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Removes and returns the batch-norm stat updates recorded so far.
    pub fn take_stat_updates(&mut self) -> Vec<StatUpdate<T>> {
        std::mem::take(&mut self.stat_updates)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, rg: bool) -> Var {
        self.nodes.push(Node { value, op, rg });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].rg
    }

    /// Adds a constant (non-differentiated) input.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf { origin: None }, false)
    }

    /// Adds a leaf that participates in differentiation but has no VarId.
    pub fn input_with_grad(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf { origin: None }, true)
    }

    /// Copies a store tensor in as a leaf; it receives a gradient slot iff the
    /// store currently marks it trainable.
    pub fn param(&mut self, store: &VarStore<T>, id: VarId) -> Var {
        let rg = store.trainable(id);
        self.push(store.value(id).clone(), Op::Leaf { origin: Some(id) }, rg)
    }

    pub fn conv3d(&mut self, x: Var, w: Var, b: Option<Var>, stride: [usize; 3], pad: [usize; 3]) -> Var {
        let y = kernels::conv3d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), stride, pad);
        let rg = self.rg(x) || self.rg(w) || b.map_or(false, |b| self.rg(b));
        self.push(y, Op::Conv3d { x, w, b, stride, pad }, rg)
    }

    pub fn conv_transpose3d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: [usize; 3],
        pad: [usize; 3],
    ) -> Var {
        let y =
            kernels::conv_transpose3d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), stride, pad);
        let rg = self.rg(x) || self.rg(w) || b.map_or(false, |b| self.rg(b));
        self.push(y, Op::ConvT3d { x, w, b, stride, pad }, rg)
    }

    /// x (B, F) * w (F, O) + b (O).
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        let mut y = xv.matmul(wv);
        if let Some(b) = b {
            let bv = self.value(b);
            let o = bv.numel();
            assert_eq!(y.shape()[1], o);
            for row in y.data_mut().chunks_mut(o) {
                for (v, &bb) in row.iter_mut().zip(bv.data()) {
                    *v += bb;
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || b.map_or(false, |b| self.rg(b));
        self.push(y, Op::Linear { x, w, b }, rg)
    }

    /// Training-mode batch norm over (N, *spatial) per channel (axis 1).
    /// When `stat_target` is set, a running-stat update is recorded.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: T,
        stat_target: Option<(VarId, VarId, T)>,
    ) -> Var {
        let xv = self.value(x);
        let c = xv.shape()[1];
        let (mean, var_biased, count) = channel_moments(xv);
        let invstd: Vec<T> = var_biased.iter().map(|&v| T::ONE / (v + eps).sqrt()).collect();
        let gv = self.value(gamma).data().to_vec();
        let bv = self.value(beta).data().to_vec();
        assert_eq!(gv.len(), c);
        let y = normalize_per_channel(xv, &mean, &invstd, &gv, &bv);
        if let Some((mean_id, var_id, momentum)) = stat_target {
            let unbias = if count > 1 { s::<T>(count as f64 / (count as f64 - 1.0)) } else { T::ONE };
            self.stat_updates.push(StatUpdate {
                mean_id,
                var_id,
                batch_mean: mean.clone(),
                batch_var: var_biased.iter().map(|&v| v * unbias).collect(),
                momentum,
            });
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(y, Op::BnTrain { x, gamma, beta, mean, invstd }, rg)
    }

    /// Inference-mode batch norm using frozen running statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        rmean: &Tensor<T>,
        rvar: &Tensor<T>,
        eps: T,
    ) -> Var {
        let xv = self.value(x);
        let rm = rmean.data().to_vec();
        let rinvstd: Vec<T> = rvar.data().iter().map(|&v| T::ONE / (v + eps).sqrt()).collect();
        let gv = self.value(gamma).data().to_vec();
        let bv = self.value(beta).data().to_vec();
        let y = normalize_per_channel(xv, &rm, &rinvstd, &gv, &bv);
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(y, Op::BnEval { x, gamma, beta, rmean: rm, rinvstd }, rg)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let y = self.value(x).map(|v| if v > T::ZERO { v } else { v * slope });
        let rg = self.rg(x);
        self.push(y, Op::LeakyRelu { x, slope }, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| if v > T::ZERO { v } else { T::ZERO });
        let rg = self.rg(x);
        self.push(y, Op::Relu { x }, rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.tanh());
        let rg = self.rg(x);
        self.push(y, Op::Tanh { x }, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| T::ONE / (T::ONE + (-v).exp()));
        let rg = self.rg(x);
        self.push(y, Op::Sigmoid { x }, rg)
    }

    /// Numerically stable softmax along axis 1.
    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (n, c, rest) = split_axis1(xv.shape());
        let mut y = Tensor::zeros(xv.shape());
        let xd = xv.data();
        let yd = y.data_mut();
        for i in 0..n {
            for r in 0..rest {
                let mut mx = T::from_f64(f64::NEG_INFINITY);
                for ch in 0..c {
                    mx = mx.maxs(xd[(i * c + ch) * rest + r]);
                }
                let mut denom = T::ZERO;
                for ch in 0..c {
                    denom += (xd[(i * c + ch) * rest + r] - mx).exp();
                }
                for ch in 0..c {
                    yd[(i * c + ch) * rest + r] = (xd[(i * c + ch) * rest + r] - mx).exp() / denom;
                }
            }
        }
        let rg = self.rg(x);
        self.push(y, Op::Softmax { x }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a).zip(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(y, Op::Add { a, b }, rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a).zip(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        self.push(y, Op::Sub { a, b }, rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a).zip(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(y, Op::Mul { a, b }, rg)
    }

    /// mask (N,1,rest) * x (N,C,rest) with the mask broadcast over channels.
    pub fn mul_broadcast(&mut self, mask: Var, x: Var) -> Var {
        let mv = self.value(mask);
        let xv = self.value(x);
        let (n, c, rest) = split_axis1(xv.shape());
        let (mn, mc, mrest) = split_axis1(mv.shape());
        assert_eq!((mn, mc, mrest), (n, 1, rest), "broadcast mask must be (N,1,spatial)");
        let mut y = Tensor::zeros(xv.shape());
        let (md, xd, yd) = (mv.data(), xv.data(), y.data_mut());
        for i in 0..n {
            for ch in 0..c {
                let xb = (i * c + ch) * rest;
                let mb = i * rest;
                for r in 0..rest {
                    yd[xb + r] = xd[xb + r] * md[mb + r];
                }
            }
        }
        let rg = self.rg(mask) || self.rg(x);
        self.push(y, Op::MulBc { mask, x }, rg)
    }

    pub fn one_minus(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| T::ONE - v);
        let rg = self.rg(x);
        self.push(y, Op::OneMinus { x }, rg)
    }

    pub fn scale(&mut self, x: Var, k: T) -> Var {
        let y = self.value(x).map(|v| v * k);
        let rg = self.rg(x);
        self.push(y, Op::Scale { x, k }, rg)
    }

    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        let y = self.value(x).map(|v| v.maxs(lo).mins(hi));
        let rg = self.rg(x);
        self.push(y, Op::Clamp { x, lo, hi }, rg)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.ln());
        let rg = self.rg(x);
        self.push(y, Op::Ln { x }, rg)
    }

    /// Mean over every element; output shape [1].
    pub fn mean_all(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let m = s::<T>(xv.sum_f64() / xv.numel() as f64);
        let rg = self.rg(x);
        self.push(Tensor::scalar(m), Op::MeanAll { x }, rg)
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        let (n, ca, rest) = split_axis1(av.shape());
        let (nb, cb, restb) = split_axis1(bv.shape());
        assert_eq!((n, rest), (nb, restb), "concat operands disagree outside axis 1");
        let mut shape = av.shape().to_vec();
        shape[1] = ca + cb;
        let mut y = Tensor::zeros(&shape);
        let yd = y.data_mut();
        for i in 0..n {
            let dst = i * (ca + cb) * rest;
            yd[dst..dst + ca * rest].copy_from_slice(&av.data()[i * ca * rest..(i + 1) * ca * rest]);
            yd[dst + ca * rest..dst + (ca + cb) * rest]
                .copy_from_slice(&bv.data()[i * cb * rest..(i + 1) * cb * rest]);
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(y, Op::ConcatC { a, b }, rg)
    }

    /// (N,C,1,H,W) -> (N,C,times,H,W) by repetition along depth.
    pub fn repeat_depth(&mut self, x: Var, times: usize) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.shape().len(), 5);
        assert_eq!(xv.shape()[2], 1, "repeat_depth expects depth 1");
        let (n, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[3], xv.shape()[4]);
        let plane = h * w;
        let mut y = Tensor::zeros(&[n, c, times, h, w]);
        let yd = y.data_mut();
        for i in 0..n * c {
            let src = &xv.data()[i * plane..(i + 1) * plane];
            for d in 0..times {
                yd[(i * times + d) * plane..(i * times + d + 1) * plane].copy_from_slice(src);
            }
        }
        let rg = self.rg(x);
        self.push(y, Op::RepeatD { x, times }, rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let y = self.value(x).reshape(shape);
        let rg = self.rg(x);
        self.push(y, Op::Reshape { x }, rg)
    }

    /// Slice channels [from, to) along axis 1.
    pub fn slice_channels(&mut self, x: Var, from: usize, to: usize) -> Var {
        let xv = self.value(x);
        let (n, c, rest) = split_axis1(xv.shape());
        assert!(from < to && to <= c, "slice [{from},{to}) out of {c} channels");
        let mut shape = xv.shape().to_vec();
        shape[1] = to - from;
        let mut y = Tensor::zeros(&shape);
        let yd = y.data_mut();
        let span = (to - from) * rest;
        for i in 0..n {
            let src = (i * c + from) * rest;
            yd[i * span..(i + 1) * span].copy_from_slice(&xv.data()[src..src + span]);
        }
        let rg = self.rg(x);
        self.push(y, Op::SliceC { x, from, to }, rg)
    }

    /// Reverse pass from a scalar loss node. Returns per-VarId gradients.
    pub fn backward(&mut self, loss: Var) -> Grads<T> {
        assert_eq!(self.value(loss).numel(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::ONE));
        let mut max_var = 0usize;
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].rg {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if let Op::Leaf { origin: Some(id) } = self.nodes[i].op {
                max_var = max_var.max(id.index() + 1);
                grads[i] = Some(g);
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
        }
        let mut by_var: Vec<Option<Tensor<T>>> = (0..max_var).map(|_| None).collect();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { origin: Some(id) } = node.op {
                if let Some(g) = grads[i].take() {
                    match &mut by_var[id.index()] {
                        Some(acc) => {
                            let sum = acc.zip(&g, |a, b| a + b);
                            *acc = sum;
                        }
                        slot @ None => *slot = Some(g),
                    }
                }
            }
        }
        Grads { by_var }
    }

    fn backprop_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        match &self.nodes[i].op {
            Op::Leaf { .. } => {}
            Op::Conv3d { x, w, b, stride, pad } => {
                self.conv3d_backward(*x, *w, *b, *stride, *pad, g, grads);
            }
            Op::ConvT3d { x, w, b, stride, pad } => {
                self.conv_t3d_backward(*x, *w, *b, *stride, *pad, g, grads);
            }
            Op::Linear { x, w, b } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (bsz, f) = (xv.shape()[0], xv.shape()[1]);
                let o = wv.shape()[1];
                if self.rg(*x) {
                    let mut dx = Tensor::zeros(&[bsz, f]);
                    gemm_nt(bsz, o, f, T::ONE, g.data(), wv.data(), T::ZERO, dx.data_mut());
                    accum(grads, x.0, dx);
                }
                if self.rg(*w) {
                    let mut dw = Tensor::zeros(&[f, o]);
                    gemm_tn(f, bsz, o, T::ONE, xv.data(), g.data(), T::ZERO, dw.data_mut());
                    accum(grads, w.0, dw);
                }
                if let Some(b) = b {
                    if self.rg(*b) {
                        let mut db = Tensor::zeros(&[o]);
                        for row in g.data().chunks(o) {
                            for (dst, &v) in db.data_mut().iter_mut().zip(row) {
                                *dst += v;
                            }
                        }
                        accum(grads, b.0, db);
                    }
                }
            }
            Op::BnTrain { x, gamma, beta, mean, invstd } => {
                self.bn_train_backward(*x, *gamma, *beta, mean, invstd, g, grads);
            }
            Op::BnEval { x, gamma, beta, rmean, rinvstd } => {
                let xv = self.value(*x);
                let (n, c, rest) = split_axis1(xv.shape());
                let gv = self.value(*gamma);
                if self.rg(*x) {
                    let mut dx = Tensor::zeros(xv.shape());
                    for i in 0..n {
                        for ch in 0..c {
                            let k = gv.data()[ch] * rinvstd[ch];
                            let base = (i * c + ch) * rest;
                            for r in 0..rest {
                                dx.data_mut()[base + r] = g.data()[base + r] * k;
                            }
                        }
                    }
                    accum(grads, x.0, dx);
                }
                if self.rg(*gamma) || self.rg(*beta) {
                    let mut dgamma = vec![T::ZERO; c];
                    let mut dbeta = vec![T::ZERO; c];
                    for i in 0..n {
                        for ch in 0..c {
                            let base = (i * c + ch) * rest;
                            for r in 0..rest {
                                let xhat = (xv.data()[base + r] - rmean[ch]) * rinvstd[ch];
                                dgamma[ch] += g.data()[base + r] * xhat;
                                dbeta[ch] += g.data()[base + r];
                            }
                        }
                    }
                    if self.rg(*gamma) {
                        accum(grads, gamma.0, Tensor::from_vec(&[c], dgamma));
                    }
                    if self.rg(*beta) {
                        accum(grads, beta.0, Tensor::from_vec(&[c], dbeta));
                    }
                }
            }
            Op::LeakyRelu { x, slope } => {
                let xv = self.value(*x);
                let dx = Tensor::from_vec(
                    xv.shape(),
                    xv.data()
                        .iter()
                        .zip(g.data())
                        .map(|(&v, &gg)| if v > T::ZERO { gg } else { gg * *slope })
                        .collect(),
                );
                accum(grads, x.0, dx);
            }
            Op::Relu { x } => {
                let xv = self.value(*x);
                let dx = Tensor::from_vec(
                    xv.shape(),
                    xv.data()
                        .iter()
                        .zip(g.data())
                        .map(|(&v, &gg)| if v > T::ZERO { gg } else { T::ZERO })
                        .collect(),
                );
                accum(grads, x.0, dx);
            }
            Op::Tanh { x } => {
                let yv = &self.nodes[i].value;
                let dx = yv.zip(g, |y, gg| gg * (T::ONE - y * y));
                accum(grads, x.0, dx);
            }
            Op::Sigmoid { x } => {
                let yv = &self.nodes[i].value;
                let dx = yv.zip(g, |y, gg| gg * y * (T::ONE - y));
                accum(grads, x.0, dx);
            }
            Op::Softmax { x } => {
                let yv = &self.nodes[i].value;
                let (n, c, rest) = split_axis1(yv.shape());
                let mut dx = Tensor::zeros(yv.shape());
                for b in 0..n {
                    for r in 0..rest {
                        let mut dot = T::ZERO;
                        for ch in 0..c {
                            let idx = (b * c + ch) * rest + r;
                            dot += g.data()[idx] * yv.data()[idx];
                        }
                        for ch in 0..c {
                            let idx = (b * c + ch) * rest + r;
                            dx.data_mut()[idx] = yv.data()[idx] * (g.data()[idx] - dot);
                        }
                    }
                }
                accum(grads, x.0, dx);
            }
            Op::Add { a, b } => {
                if self.rg(*a) {
                    accum(grads, a.0, g.clone());
                }
                if self.rg(*b) {
                    accum(grads, b.0, g.clone());
                }
            }
            Op::Sub { a, b } => {
                if self.rg(*a) {
                    accum(grads, a.0, g.clone());
                }
                if self.rg(*b) {
                    accum(grads, b.0, g.map(|v| -v));
                }
            }
            Op::Mul { a, b } => {
                if self.rg(*a) {
                    accum(grads, a.0, g.zip(self.value(*b), |gg, bv| gg * bv));
                }
                if self.rg(*b) {
                    accum(grads, b.0, g.zip(self.value(*a), |gg, av| gg * av));
                }
            }
            Op::MulBc { mask, x } => {
                let mv = self.value(*mask);
                let xv = self.value(*x);
                let (n, c, rest) = split_axis1(xv.shape());
                if self.rg(*mask) {
                    let mut dm = Tensor::zeros(mv.shape());
                    for i in 0..n {
                        for ch in 0..c {
                            let base = (i * c + ch) * rest;
                            for r in 0..rest {
                                dm.data_mut()[i * rest + r] += g.data()[base + r] * xv.data()[base + r];
                            }
                        }
                    }
                    accum(grads, mask.0, dm);
                }
                if self.rg(*x) {
                    let mut dx = Tensor::zeros(xv.shape());
                    for i in 0..n {
                        for ch in 0..c {
                            let base = (i * c + ch) * rest;
                            for r in 0..rest {
                                dx.data_mut()[base + r] = g.data()[base + r] * mv.data()[i * rest + r];
                            }
                        }
                    }
                    accum(grads, x.0, dx);
                }
            }
            Op::OneMinus { x } => {
                accum(grads, x.0, g.map(|v| -v));
            }
            Op::Scale { x, k } => {
                let k = *k;
                accum(grads, x.0, g.map(|v| v * k));
            }
            Op::Clamp { x, lo, hi } => {
                let xv = self.value(*x);
                let (lo, hi) = (*lo, *hi);
                let dx = xv.zip(g, |v, gg| if v > lo && v < hi { gg } else { T::ZERO });
                accum(grads, x.0, dx);
            }
            Op::Ln { x } => {
                let xv = self.value(*x);
                let dx = xv.zip(g, |v, gg| gg / v);
                accum(grads, x.0, dx);
            }
            Op::MeanAll { x } => {
                let xv = self.value(*x);
                let k = g.data()[0] / s::<T>(xv.numel() as f64);
                accum(grads, x.0, Tensor::full(xv.shape(), k));
            }
            Op::ConcatC { a, b } => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (n, ca, rest) = split_axis1(av.shape());
                let cb = bv.shape()[1];
                if self.rg(*a) {
                    let mut da = Tensor::zeros(av.shape());
                    for i in 0..n {
                        let src = i * (ca + cb) * rest;
                        da.data_mut()[i * ca * rest..(i + 1) * ca * rest]
                            .copy_from_slice(&g.data()[src..src + ca * rest]);
                    }
                    accum(grads, a.0, da);
                }
                if self.rg(*b) {
                    let mut db = Tensor::zeros(bv.shape());
                    for i in 0..n {
                        let src = i * (ca + cb) * rest + ca * rest;
                        db.data_mut()[i * cb * rest..(i + 1) * cb * rest]
                            .copy_from_slice(&g.data()[src..src + cb * rest]);
                    }
                    accum(grads, b.0, db);
                }
            }
            Op::RepeatD { x, times } => {
                let xv = self.value(*x);
                let (n, c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[3], xv.shape()[4]);
                let plane = h * w;
                let mut dx = Tensor::zeros(xv.shape());
                for i in 0..n * c {
                    for d in 0..*times {
                        let src = (i * times + d) * plane;
                        for r in 0..plane {
                            dx.data_mut()[i * plane + r] += g.data()[src + r];
                        }
                    }
                }
                accum(grads, x.0, dx);
            }
            Op::Reshape { x } => {
                let shape = self.value(*x).shape().to_vec();
                accum(grads, x.0, g.reshape(&shape));
            }
            Op::SliceC { x, from, to } => {
                let xv = self.value(*x);
                let (n, c, rest) = split_axis1(xv.shape());
                let span = (to - from) * rest;
                let mut dx = Tensor::zeros(xv.shape());
                for i in 0..n {
                    let dst = (i * c + from) * rest;
                    dx.data_mut()[dst..dst + span].copy_from_slice(&g.data()[i * span..(i + 1) * span]);
                }
                accum(grads, x.0, dx);
            }
        }
    }

    fn conv3d_backward(
        &self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: [usize; 3],
        pad: [usize; 3],
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let xv = self.value(x);
        let wv = self.value(w);
        let (n, cin) = (xv.shape()[0], xv.shape()[1]);
        let cout = wv.shape()[0];
        let kernel = [wv.shape()[2], wv.shape()[3], wv.shape()[4]];
        let geom = ConvGeom::for_conv(cin, [xv.shape()[2], xv.shape()[3], xv.shape()[4]], kernel, stride, pad);
        let (rows, cols) = (geom.rows(), geom.cols());
        let sample_in = geom.big_len();
        let sample_out = cout * cols;
        let need_x = self.rg(x);
        let need_w = self.rg(w);
        let mut dx = need_x.then(|| Tensor::zeros(xv.shape()));
        let mut dw = need_w.then(|| Tensor::zeros(wv.shape()));
        let mut colbuf = vec![T::ZERO; rows * cols];
        for i in 0..n {
            let gy = &g.data()[i * sample_out..(i + 1) * sample_out];
            if let Some(dx) = dx.as_mut() {
                // colg = w^T (rows x cout) * gy (cout x cols); scatter back.
                gemm_tn(rows, cout, cols, T::ONE, wv.data(), gy, T::ZERO, &mut colbuf);
                col2im(&geom, &colbuf, &mut dx.data_mut()[i * sample_in..(i + 1) * sample_in]);
            }
            if let Some(dw) = dw.as_mut() {
                im2col(&geom, &xv.data()[i * sample_in..(i + 1) * sample_in], &mut colbuf);
                // dw (cout x rows) += gy (cout x cols) * col^T (cols x rows)
                gemm_nt(cout, cols, rows, T::ONE, gy, &colbuf, T::ONE, dw.data_mut());
            }
        }
        if let Some(dx) = dx {
            accum(grads, x.0, dx);
        }
        if let Some(dw) = dw {
            accum(grads, w.0, dw);
        }
        if let Some(b) = b {
            if self.rg(b) {
                let mut db = Tensor::zeros(&[cout]);
                for i in 0..n {
                    for c in 0..cout {
                        let base = i * sample_out + c * cols;
                        let mut acc = T::ZERO;
                        for &v in &g.data()[base..base + cols] {
                            acc += v;
                        }
                        db.data_mut()[c] += acc;
                    }
                }
                accum(grads, b.0, db);
            }
        }
    }

    fn conv_t3d_backward(
        &self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: [usize; 3],
        pad: [usize; 3],
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let xv = self.value(x);
        let wv = self.value(w);
        let (n, cin) = (xv.shape()[0], xv.shape()[1]);
        let cout = wv.shape()[1];
        let kernel = [wv.shape()[2], wv.shape()[3], wv.shape()[4]];
        let geom =
            ConvGeom::for_conv_transpose(cout, [xv.shape()[2], xv.shape()[3], xv.shape()[4]], kernel, stride, pad);
        let (rows, cols) = (geom.rows(), geom.cols());
        let sample_in = cin * cols;
        let sample_out = geom.big_len();
        let need_x = self.rg(x);
        let need_w = self.rg(w);
        let mut dx = need_x.then(|| Tensor::zeros(xv.shape()));
        let mut dw = need_w.then(|| Tensor::zeros(wv.shape()));
        let mut colbuf = vec![T::ZERO; rows * cols];
        for i in 0..n {
            let gy = &g.data()[i * sample_out..(i + 1) * sample_out];
            im2col(&geom, gy, &mut colbuf);
            if let Some(dx) = dx.as_mut() {
                // dx (cin x cols) = w (cin x rows) * colg (rows x cols)
                gemm_nn(
                    cin,
                    rows,
                    cols,
                    T::ONE,
                    wv.data(),
                    &colbuf,
                    T::ZERO,
                    &mut dx.data_mut()[i * sample_in..(i + 1) * sample_in],
                );
            }
            if let Some(dw) = dw.as_mut() {
                // dw (cin x rows) += x_i (cin x cols) * colg^T (cols x rows)
                gemm_nt(
                    cin,
                    cols,
                    rows,
                    T::ONE,
                    &xv.data()[i * sample_in..(i + 1) * sample_in],
                    &colbuf,
                    T::ONE,
                    dw.data_mut(),
                );
            }
        }
        if let Some(dx) = dx {
            accum(grads, x.0, dx);
        }
        if let Some(dw) = dw {
            accum(grads, w.0, dw);
        }
        if let Some(b) = b {
            if self.rg(b) {
                let plane = geom.big[0] * geom.big[1] * geom.big[2];
                let mut db = Tensor::zeros(&[cout]);
                for i in 0..n {
                    for c in 0..cout {
                        let base = i * sample_out + c * plane;
                        let mut acc = T::ZERO;
                        for &v in &g.data()[base..base + plane] {
                            acc += v;
                        }
                        db.data_mut()[c] += acc;
                    }
                }
                accum(grads, b.0, db);
            }
        }
    }

    fn bn_train_backward(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        invstd: &[T],
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let xv = self.value(x);
        let gv = self.value(gamma);
        let (n, c, rest) = split_axis1(xv.shape());
        let m = (n * rest) as f64;
        let mut sum_g = vec![T::ZERO; c];
        let mut sum_gx = vec![T::ZERO; c];
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * rest;
                for r in 0..rest {
                    let xhat = (xv.data()[base + r] - mean[ch]) * invstd[ch];
                    sum_g[ch] += g.data()[base + r];
                    sum_gx[ch] += g.data()[base + r] * xhat;
                }
            }
        }
        if self.rg(x) {
            let minv = s::<T>(1.0 / m);
            let mt = s::<T>(m);
            let mut dx = Tensor::zeros(xv.shape());
            for i in 0..n {
                for ch in 0..c {
                    let k = gv.data()[ch] * invstd[ch] * minv;
                    let base = (i * c + ch) * rest;
                    for r in 0..rest {
                        let xhat = (xv.data()[base + r] - mean[ch]) * invstd[ch];
                        dx.data_mut()[base + r] =
                            k * (mt * g.data()[base + r] - sum_g[ch] - xhat * sum_gx[ch]);
                    }
                }
            }
            accum(grads, x.0, dx);
        }
        if self.rg(gamma) {
            accum(grads, gamma.0, Tensor::from_vec(&[c], sum_gx));
        }
        if self.rg(beta) {
            accum(grads, beta.0, Tensor::from_vec(&[c], sum_g));
        }
    }
}

/// Splits a shape into (axis0, axis1, product of the rest).
fn split_axis1(shape: &[usize]) -> (usize, usize, usize) {
    assert!(shape.len() >= 2, "need at least 2 axes, got {:?}", shape);
    (shape[0], shape[1], shape[2..].iter().product::<usize>().max(1))
}

/// Per-channel mean and biased variance over all non-channel axes.
fn channel_moments<T: Scalar>(x: &Tensor<T>) -> (Vec<T>, Vec<T>, usize) {
    let (n, c, rest) = split_axis1(x.shape());
    let count = n * rest;
    let mut mean = vec![0.0f64; c];
    let mut var = vec![0.0f64; c];
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * rest;
            for r in 0..rest {
                mean[ch] += x.data()[base + r].to_f64();
            }
        }
    }
    for m in &mut mean {
        *m /= count as f64;
    }
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * rest;
            for r in 0..rest {
                let d = x.data()[base + r].to_f64() - mean[ch];
                var[ch] += d * d;
            }
        }
    }
    for v in &mut var {
        *v /= count as f64;
    }
    (
        mean.iter().map(|&v| s::<T>(v)).collect(),
        var.iter().map(|&v| s::<T>(v)).collect(),
        count,
    )
}

fn normalize_per_channel<T: Scalar>(
    x: &Tensor<T>,
    mean: &[T],
    invstd: &[T],
    gamma: &[T],
    beta: &[T],
) -> Tensor<T> {
    let (n, c, rest) = split_axis1(x.shape());
    let mut y = Tensor::zeros(x.shape());
    let yd = y.data_mut();
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * rest;
            for r in 0..rest {
                yd[base + r] = gamma[ch] * (x.data()[base + r] - mean[ch]) * invstd[ch] + beta[ch];
            }
        }
    }
    y
}

fn accum<T: Scalar>(grads: &mut [Option<Tensor<T>>], idx: usize, delta: Tensor<T>) {
    match &mut grads[idx] {
        Some(acc) => {
            assert_eq!(acc.shape(), delta.shape());
            for (a, b) in acc.data_mut().iter_mut().zip(delta.data()) {
                *a += *b;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}

//! Parameterized layers: construction allocates named tensors in a
//! [`VarStore`], forwarding replays them onto a [`Graph`].
//!
//! Initialization follows DCGAN practice: convolution weights N(0, 0.02),
//! batch-norm scales N(1, 0.02), biases zero. Recurrent and linear weights
//! use U(-1/sqrt(fan), 1/sqrt(fan)). All draws happen in f64 and are cast,
//! so stores of different precisions built from the same seed agree.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::profile::{Act, ConvSpec, ResSpec};
use crate::autodiff::{Graph, Var, VarId, VarStore};
use crate::tensor::{s, Scalar, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const LEAKY_SLOPE: f64 = 0.2;

fn normal_tensor<T: Scalar>(shape: &[usize], mean: f64, std: f64, rng: &mut impl Rng) -> Tensor<T> {
    let dist = Normal::new(mean, std).expect("valid normal");
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| T::from_f64(dist.sample(rng))).collect())
}

fn uniform_tensor<T: Scalar>(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor<T> {
    let dist = Uniform::new_inclusive(-bound, bound);
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| T::from_f64(dist.sample(rng))).collect())
}

/// Per-channel batch normalization parameters plus running statistics.
pub struct BnParams {
    pub gamma: VarId,
    pub beta: VarId,
    pub running_mean: VarId,
    pub running_var: VarId,
}

impl BnParams {
    pub fn new<T: Scalar>(store: &mut VarStore<T>, prefix: &str, channels: usize, rng: &mut impl Rng) -> Self {
        BnParams {
            gamma: store.add_param(&format!("{prefix}/bn_gamma"), normal_tensor(&[channels], 1.0, 0.02, rng)),
            beta: store.add_param(&format!("{prefix}/bn_beta"), Tensor::zeros(&[channels])),
            running_mean: store.add_stat(&format!("{prefix}/bn_mean"), Tensor::zeros(&[channels])),
            running_var: store.add_stat(&format!("{prefix}/bn_var"), Tensor::full(&[channels], T::ONE)),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &VarStore<T>, x: Var) -> Var {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        if g.training() {
            g.batch_norm_train(
                x,
                gamma,
                beta,
                s::<T>(BN_EPS),
                Some((self.running_mean, self.running_var, s::<T>(BN_MOMENTUM))),
            )
        } else {
            let rm = store.value(self.running_mean).clone();
            let rv = store.value(self.running_var).clone();
            g.batch_norm_eval(x, gamma, beta, &rm, &rv, s::<T>(BN_EPS))
        }
    }
}

/// Convolution (plain or transposed) with optional norm and activation.
pub struct ConvLayer {
    pub spec: ConvSpec,
    pub w: VarId,
    pub b: VarId,
    pub bn: Option<BnParams>,
}

impl ConvLayer {
    pub fn new<T: Scalar>(store: &mut VarStore<T>, prefix: &str, spec: ConvSpec, rng: &mut impl Rng) -> Self {
        let [kd, kh, kw] = spec.kernel;
        let wshape = if spec.transpose {
            vec![spec.in_ch, spec.out_ch, kd, kh, kw]
        } else {
            vec![spec.out_ch, spec.in_ch, kd, kh, kw]
        };
        let w = store.add_param(&format!("{prefix}/w"), normal_tensor(&wshape, 0.0, 0.02, rng));
        let b = store.add_param(&format!("{prefix}/b"), Tensor::zeros(&[spec.out_ch]));
        let bn = spec.norm.then(|| BnParams::new(store, prefix, spec.out_ch, rng));
        ConvLayer { spec, w, b, bn }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &VarStore<T>, x: Var) -> Var {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let mut y = if self.spec.transpose {
            g.conv_transpose3d(x, w, Some(b), self.spec.stride, self.spec.pad)
        } else {
            g.conv3d(x, w, Some(b), self.spec.stride, self.spec.pad)
        };
        if let Some(bn) = &self.bn {
            y = bn.forward(g, store, y);
        }
        apply_act(g, y, self.spec.act)
    }
}

pub fn apply_act<T: Scalar>(g: &mut Graph<T>, x: Var, act: Act) -> Var {
    match act {
        Act::LeakyRelu => g.leaky_relu(x, s::<T>(LEAKY_SLOPE)),
        Act::Relu => g.relu(x),
        Act::Tanh => g.tanh(x),
        Act::Sigmoid => g.sigmoid(x),
        Act::Softmax => g.softmax(x),
        Act::None => x,
    }
}

/// conv-norm-relu-conv-norm with identity skip, then relu.
pub struct ResBlock {
    c1: ConvLayer,
    c2: ConvLayer,
}

impl ResBlock {
    pub fn new<T: Scalar>(store: &mut VarStore<T>, prefix: &str, channels: usize, norm: bool, rng: &mut impl Rng) -> Self {
        let inner = ConvSpec {
            transpose: false,
            in_ch: channels,
            out_ch: channels,
            kernel: [3, 3, 3],
            stride: [1, 1, 1],
            pad: [1, 1, 1],
            norm,
            act: Act::None,
        };
        // First conv carries the relu; second stays linear until after the add.
        let c1 = ConvLayer::new(store, &format!("{prefix}/c1"), ConvSpec { act: Act::Relu, ..inner }, rng);
        let c2 = ConvLayer::new(store, &format!("{prefix}/c2"), inner, rng);
        ResBlock { c1, c2 }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &VarStore<T>, x: Var) -> Var {
        let h = self.c1.forward(g, store, x);
        let h = self.c2.forward(g, store, h);
        let sum = g.add(x, h);
        g.relu(sum)
    }
}

/// A stack of residual blocks at constant width.
pub struct ResLayer {
    blocks: Vec<ResBlock>,
}

impl ResLayer {
    pub fn new<T: Scalar>(store: &mut VarStore<T>, prefix: &str, spec: ResSpec, rng: &mut impl Rng) -> Self {
        let blocks = (0..spec.blocks)
            .map(|i| ResBlock::new(store, &format!("{prefix}/b{i}"), spec.channels, spec.norm, rng))
            .collect();
        ResLayer { blocks }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &VarStore<T>, x: Var) -> Var {
        let mut h = x;
        for b in &self.blocks {
            h = b.forward(g, store, h);
        }
        h
    }
}

/// Single-layer LSTM; the motion encoder consumes trajectory steps and emits
/// the final hidden state. Gate packing order is (input, forget, cell, output).
pub struct LstmParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    w_ih: VarId,
    w_hh: VarId,
    bias: VarId,
}

impl LstmParams {
    pub fn new<T: Scalar>(
        store: &mut VarStore<T>,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / (hidden_dim as f64).sqrt();
        LstmParams {
            input_dim,
            hidden_dim,
            w_ih: store.add_param(&format!("{prefix}/w_ih"), uniform_tensor(&[input_dim, 4 * hidden_dim], bound, rng)),
            w_hh: store.add_param(&format!("{prefix}/w_hh"), uniform_tensor(&[hidden_dim, 4 * hidden_dim], bound, rng)),
            bias: store.add_param(&format!("{prefix}/bias"), Tensor::zeros(&[4 * hidden_dim])),
        }
    }

    /// Runs the cell over `steps` (each (B, input_dim)) and returns the final
    /// hidden state (B, hidden_dim).
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &VarStore<T>, steps: &[Var]) -> Var {
        assert!(!steps.is_empty(), "lstm needs at least one step");
        let batch = g.value(steps[0]).shape()[0];
        let hd = self.hidden_dim;
        let wi = g.param(store, self.w_ih);
        let wh = g.param(store, self.w_hh);
        let bias = g.param(store, self.bias);
        let mut h = g.constant(Tensor::zeros(&[batch, hd]));
        let mut c = g.constant(Tensor::zeros(&[batch, hd]));
        for &x in steps {
            let gi = g.linear(x, wi, Some(bias));
            let gh = g.linear(h, wh, None);
            let gates = g.add(gi, gh);
            let i = g.slice_channels(gates, 0, hd);
            let f = g.slice_channels(gates, hd, 2 * hd);
            let z = g.slice_channels(gates, 2 * hd, 3 * hd);
            let o = g.slice_channels(gates, 3 * hd, 4 * hd);
            let i = g.sigmoid(i);
            let f = g.sigmoid(f);
            let z = g.tanh(z);
            let o = g.sigmoid(o);
            let fc = g.mul(f, c);
            let iz = g.mul(i, z);
            c = g.add(fc, iz);
            let tc = g.tanh(c);
            h = g.mul(o, tc);
        }
        h
    }
}

/// Fully connected layer for classifier heads.
pub struct LinearLayer {
    pub w: VarId,
    pub b: VarId,
}

impl LinearLayer {
    pub fn new<T: Scalar>(store: &mut VarStore<T>, prefix: &str, in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        LinearLayer {
            w: store.add_param(&format!("{prefix}/w"), uniform_tensor(&[in_dim, out_dim], bound, rng)),
            b: store.add_param(&format!("{prefix}/b"), Tensor::zeros(&[out_dim])),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &VarStore<T>, x: Var) -> Var {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.linear(x, w, Some(b))
    }
}

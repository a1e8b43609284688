//! Adversarial training objectives.
//!
//! The discriminator minimizes real/fake classification error plus two
//! self-supervision terms on its auxiliary heads: a pixelwise negative
//! log-likelihood tying its segmentation to the generator's mask (generated
//! clips only, where that mask is known), and squared error tying its flow
//! head to dense optical flow computed on both real and generated clips. The
//! flow terms are weighted by a schedule that ramps alpha up once per epoch
//! after a warm-up. The generator minimizes the usual non-saturating
//! adversarial objective only.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::tensor::{s, Scalar, Tensor};

/// Probabilities are clamped to [EPS, 1 - EPS] before any logarithm.
pub const PROB_EPS: f64 = 1e-7;

/// Flow-term weight: constant `alpha0` until `start_epoch`, then increased by
/// `step` every epoch. Epochs are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaSchedule {
    pub alpha0: f64,
    pub step: f64,
    pub start_epoch: usize,
}

impl Default for AlphaSchedule {
    fn default() -> Self {
        AlphaSchedule { alpha0: 1.0, step: 0.2, start_epoch: 2 }
    }
}

impl AlphaSchedule {
    pub fn alpha_at(&self, epoch: usize) -> f64 {
        assert!(epoch >= 1, "epochs are 1-based");
        if epoch < self.start_epoch {
            self.alpha0
        } else {
            self.alpha0 + self.step * (epoch - self.start_epoch + 1) as f64
        }
    }
}

/// -E[ln p] with channel 0 of a (N,2,1,1,1) softmax holding p(real).
fn adv_term<T: Scalar>(g: &mut Graph<T>, probs: Var, complement: bool) -> Var {
    let p_real = g.slice_channels(probs, 0, 1);
    let p = if complement { g.one_minus(p_real) } else { p_real };
    let pc = g.clamp(p, s::<T>(PROB_EPS), s::<T>(1.0 - PROB_EPS));
    let lp = g.ln(pc);
    let m = g.mean_all(lp);
    g.scale(m, s::<T>(-1.0))
}

/// Discriminator's real-clip term: -E[ln D(x)].
pub fn adv_real_loss<T: Scalar>(g: &mut Graph<T>, probs: Var) -> Var {
    adv_term(g, probs, false)
}

/// Discriminator's generated-clip term: -E[ln (1 - D(G(z)))].
pub fn adv_fake_loss<T: Scalar>(g: &mut Graph<T>, probs: Var) -> Var {
    adv_term(g, probs, true)
}

/// Generator objective: -E[ln D(G(z))] (non-saturating form).
pub fn generator_loss<T: Scalar>(g: &mut Graph<T>, fake_probs: Var) -> Var {
    adv_term(g, fake_probs, false)
}

/// Pixelwise binary NLL between predicted probabilities and a {0,1} target.
pub fn seg_nll<T: Scalar>(g: &mut Graph<T>, seg_probs: Var, target: &Tensor<T>) -> Var {
    assert_eq!(g.value(seg_probs).shape(), target.shape(), "seg target shape mismatch");
    let y = g.constant(target.clone());
    let one_minus_y = g.one_minus(y);
    let p = g.clamp(seg_probs, s::<T>(PROB_EPS), s::<T>(1.0 - PROB_EPS));
    let lp = g.ln(p);
    let q = g.one_minus(seg_probs);
    let qc = g.clamp(q, s::<T>(PROB_EPS), s::<T>(1.0 - PROB_EPS));
    let lq = g.ln(qc);
    let pos = g.mul(y, lp);
    let neg = g.mul(one_minus_y, lq);
    let ll = g.add(pos, neg);
    let m = g.mean_all(ll);
    g.scale(m, s::<T>(-1.0))
}

/// Mean squared error between the flow head and a normalized flow target.
pub fn flow_l2<T: Scalar>(g: &mut Graph<T>, flow_pred: Var, target: &Tensor<T>) -> Var {
    assert_eq!(g.value(flow_pred).shape(), target.shape(), "flow target shape mismatch");
    let t = g.constant(target.clone());
    let d = g.sub(flow_pred, t);
    let sq = g.mul(d, d);
    g.mean_all(sq)
}

/// Binarizes a soft mask tensor at `threshold` into exact {0,1} values.
pub fn binarize_mask<T: Scalar>(soft: &Tensor<T>, threshold: f64) -> Tensor<T> {
    soft.map(|v| if v.to_f64() >= threshold { T::ONE } else { T::ZERO })
}

/// Scalar values of each discriminator loss component, for logging.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscLossParts {
    pub adv_real: f64,
    pub adv_fake: f64,
    pub seg: f64,
    pub flow_fake: f64,
    pub flow_real: f64,
    pub alpha: f64,
    pub total: f64,
}

/// Everything the discriminator step needs in one place.
pub struct DiscLossInputs<'a, T: Scalar> {
    pub real_probs: Var,
    pub fake_probs: Var,
    /// Segmentation head on generated clips.
    pub fake_seg: Var,
    /// Binarized generator mask, the segmentation target.
    pub fake_mask_target: &'a Tensor<T>,
    /// Flow head on generated / real clips.
    pub fake_flow: Var,
    pub real_flow: Var,
    /// Normalized optical-flow targets.
    pub fake_flow_target: &'a Tensor<T>,
    pub real_flow_target: &'a Tensor<T>,
    pub alpha: f64,
}

/// Assembles the full discriminator objective; returns the scalar node and
/// the individual component values.
pub fn discriminator_loss<T: Scalar>(g: &mut Graph<T>, inp: DiscLossInputs<'_, T>) -> (Var, DiscLossParts) {
    let l_real = adv_real_loss(g, inp.real_probs);
    let l_fake = adv_fake_loss(g, inp.fake_probs);
    let l_seg = seg_nll(g, inp.fake_seg, inp.fake_mask_target);
    let l_flow_fake = flow_l2(g, inp.fake_flow, inp.fake_flow_target);
    let l_flow_real = flow_l2(g, inp.real_flow, inp.real_flow_target);
    let adv = g.add(l_real, l_fake);
    let with_seg = g.add(adv, l_seg);
    let flows = g.add(l_flow_fake, l_flow_real);
    let weighted = g.scale(flows, s::<T>(inp.alpha));
    let total = g.add(with_seg, weighted);
    let parts = DiscLossParts {
        adv_real: g.value(l_real).data()[0].to_f64(),
        adv_fake: g.value(l_fake).data()[0].to_f64(),
        seg: g.value(l_seg).data()[0].to_f64(),
        flow_fake: g.value(l_flow_fake).data()[0].to_f64(),
        flow_real: g.value(l_flow_real).data()[0].to_f64(),
        alpha: inp.alpha,
        total: g.value(total).data()[0].to_f64(),
    };
    (total, parts)
}

/// Categorical cross-entropy between predicted probabilities (N, K) and
/// integer labels; used by the classifier heads.
pub fn cross_entropy<T: Scalar>(g: &mut Graph<T>, probs: Var, labels: &[usize]) -> Var {
    let shape = g.value(probs).shape().to_vec();
    assert_eq!(shape.len(), 2);
    assert_eq!(shape[0], labels.len());
    let k = shape[1];
    let mut onehot = Tensor::zeros(&shape);
    for (i, &l) in labels.iter().enumerate() {
        assert!(l < k, "label {l} out of {k} classes");
        onehot.data_mut()[i * k + l] = T::ONE;
    }
    let y = g.constant(onehot);
    let pc = g.clamp(probs, s::<T>(PROB_EPS), s::<T>(1.0 - PROB_EPS));
    let lp = g.ln(pc);
    let picked = g.mul(y, lp);
    let m = g.mean_all(picked);
    // mean_all averages over N*K cells; scale back to a per-sample mean.
    g.scale(m, s::<T>(-(k as f64)))
}

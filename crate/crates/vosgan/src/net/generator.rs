//! Two-stream video generator.
//!
//! The scene code drives a depth-1 background decoder; the motion trajectory
//! is folded by an LSTM into a single code that drives a 3D motion decoder.
//! Background features at quarter resolution are repeated in time,
//! concatenated with the motion features, fused by a 1x1x1 convolution and
//! refined by residual stacks; separate heads emit foreground appearance
//! (tanh) and a soft mask (sigmoid). The final video composites foreground
//! over the time-repeated background through the mask.

use rand::Rng;

use super::layers::{ConvLayer, LstmParams, ResLayer};
use super::profile::{GeneratorPlan, NetProfile};
use crate::autodiff::{Graph, Var, VarStore};
use crate::latent::{motion_step_to_tensor, scenes_to_tensor, LatentSample};
use crate::tensor::Scalar;

pub struct Generator {
    pub plan: GeneratorPlan,
    background: Vec<ConvLayer>,
    lstm: LstmParams,
    motion: Vec<ConvLayer>,
    fuse: ConvLayer,
    residual: Vec<ResLayer>,
    upsample: ConvLayer,
    raw_head: ConvLayer,
    mask_head: ConvLayer,
}

/// Graph handles for everything downstream code needs from one pass.
pub struct GeneratorOutput {
    /// Composited video (N, 3, T, S, S) in [-1, 1].
    pub video: Var,
    /// Foreground appearance before compositing (N, 3, T, S, S).
    pub foreground: Var,
    /// Soft mask (N, 1, T, S, S) in (0, 1).
    pub mask: Var,
    /// Depth-1 background (N, 3, 1, S, S).
    pub background: Var,
}

impl Generator {
    pub fn new<T: Scalar>(store: &mut VarStore<T>, profile: &NetProfile, rng: &mut impl Rng) -> Self {
        let plan = GeneratorPlan::build(profile);
        let background = plan
            .background
            .iter()
            .enumerate()
            .map(|(i, spec)| ConvLayer::new(store, &format!("gen/bkg/{i}"), *spec, rng))
            .collect();
        let lstm = LstmParams::new(store, "gen/lstm", profile.latent_dim, profile.latent_dim, rng);
        let motion = plan
            .motion
            .iter()
            .enumerate()
            .map(|(i, spec)| ConvLayer::new(store, &format!("gen/motion/{i}"), *spec, rng))
            .collect();
        let fuse = ConvLayer::new(store, "gen/fuse", plan.fuse, rng);
        let residual = plan
            .residual
            .iter()
            .enumerate()
            .map(|(i, spec)| ResLayer::new(store, &format!("gen/res/{i}"), *spec, rng))
            .collect();
        let upsample = ConvLayer::new(store, "gen/up", plan.upsample, rng);
        let raw_head = ConvLayer::new(store, "gen/raw", plan.raw_head, rng);
        let mask_head = ConvLayer::new(store, "gen/mask", plan.mask_head, rng);
        Generator { plan, background, lstm, motion, fuse, residual, upsample, raw_head, mask_head }
    }

    /// Builds the forward pass for a batch of latent draws.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &VarStore<T>,
        latents: &[LatentSample<T>],
    ) -> GeneratorOutput {
        assert!(!latents.is_empty());
        let steps = latents[0].motion.len();
        assert_eq!(steps, self.plan.profile.frames, "trajectory length must equal clip length");
        let d = self.plan.profile.latent_dim;
        let n = latents.len();

        // Background stream from the scene code.
        let scene = g.constant(scenes_to_tensor(latents));
        let mut h = g.reshape(scene, &[n, d, 1, 1, 1]);
        let mut tap = None;
        for (i, layer) in self.background.iter().enumerate() {
            h = layer.forward(g, store, h);
            if i == self.plan.tap_index {
                tap = Some(h);
            }
        }
        let background = h;
        let tap = tap.expect("tap index inside background stream");

        // Motion stream from the LSTM-encoded trajectory.
        let step_vars: Vec<Var> = (0..steps)
            .map(|t| g.constant(motion_step_to_tensor(latents, t)))
            .collect();
        let code = self.lstm.forward(g, store, &step_vars);
        let mut m = g.reshape(code, &[n, d, 1, 1, 1]);
        for layer in &self.motion {
            m = layer.forward(g, store, m);
        }

        // Fuse, refine, upsample, heads.
        let tap_rep = g.repeat_depth(tap, self.plan.tap_depth);
        let cat = g.concat_channels(tap_rep, m);
        let mut f = self.fuse.forward(g, store, cat);
        for layer in &self.residual {
            f = layer.forward(g, store, f);
        }
        let up = self.upsample.forward(g, store, f);
        let foreground = self.raw_head.forward(g, store, up);
        let mask = self.mask_head.forward(g, store, up);

        let bg_rep = g.repeat_depth(background, self.plan.profile.frames);
        let video = composite(g, mask, foreground, bg_rep);
        GeneratorOutput { video, foreground, mask, background }
    }
}

/// video = mask * fg + (1 - mask) * bg, with the mask broadcast over color
/// channels. `background` must already be repeated to the clip length.
pub fn composite<T: Scalar>(g: &mut Graph<T>, mask: Var, foreground: Var, background: Var) -> Var {
    let fg_part = g.mul_broadcast(mask, foreground);
    let inv_mask = g.one_minus(mask);
    let bg_part = g.mul_broadcast(inv_mask, background);
    g.add(fg_part, bg_part)
}

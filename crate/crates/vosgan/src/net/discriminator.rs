//! Three-headed discriminator and the task networks carved out of it.
//!
//! The shared encoder feeds (a) a motion decoder whose sigmoid output packs
//! per-pixel segmentation (channel 0) and normalized optical flow (channels
//! 1-2), and (b) a discrimination stream whose penultimate activation doubles
//! as a transfer feature map. The standalone segmenter reuses the encoder +
//! motion decoder under identical parameter names, so GAN checkpoints load
//! into it directly; the action classifier reuses the encoder + feature conv
//! and swaps the real/fake output for a class head.

use rand::Rng;

use super::layers::{ConvLayer, LinearLayer, ResLayer};
use super::profile::{Act, ConvSpec, DiscriminatorPlan, NetProfile, PlanItem};
use crate::autodiff::{Graph, Var, VarStore};
use crate::tensor::Scalar;

/// Convolution or residual stack, as laid out by the plan.
pub enum Item {
    Conv(ConvLayer),
    Res(ResLayer),
}

pub fn build_items<T: Scalar>(
    store: &mut VarStore<T>,
    items: &[PlanItem],
    prefix: &str,
    rng: &mut impl Rng,
) -> Vec<Item> {
    items
        .iter()
        .enumerate()
        .map(|(i, item)| match item {
            PlanItem::Conv(spec) => Item::Conv(ConvLayer::new(store, &format!("{prefix}/{i}"), *spec, rng)),
            PlanItem::Res(spec) => Item::Res(ResLayer::new(store, &format!("{prefix}/{i}"), *spec, rng)),
        })
        .collect()
}

pub fn forward_items<T: Scalar>(items: &[Item], g: &mut Graph<T>, store: &VarStore<T>, x: Var) -> Var {
    let mut h = x;
    for item in items {
        h = match item {
            Item::Conv(l) => l.forward(g, store, h),
            Item::Res(l) => l.forward(g, store, h),
        };
    }
    h
}

pub struct Discriminator {
    pub plan: DiscriminatorPlan,
    shared: Vec<Item>,
    motion: Vec<Item>,
    feat: ConvLayer,
    out: ConvLayer,
}

pub struct DiscriminatorOutput {
    /// Class probabilities (N, 2, 1, 1, 1); channel 0 is "real".
    pub probs: Var,
    /// Segmentation probabilities (N, 1, T, S, S).
    pub seg: Var,
    /// Normalized flow prediction (N, 2, T, S, S) in (0, 1).
    pub flow: Var,
    /// Transfer feature map from the first discrimination conv.
    pub features: Var,
}

impl Discriminator {
    pub fn new<T: Scalar>(store: &mut VarStore<T>, profile: &NetProfile, rng: &mut impl Rng) -> Self {
        let plan = DiscriminatorPlan::build(profile);
        let shared = build_items(store, &plan.shared, "disc/shared", rng);
        let motion = build_items(store, &plan.motion, "disc/motion", rng);
        let feat = ConvLayer::new(store, "disc/feat", plan.disc_feat, rng);
        let out = ConvLayer::new(store, "disc/out", plan.disc_out, rng);
        Discriminator { plan, shared, motion, feat, out }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &VarStore<T>, video: Var) -> DiscriminatorOutput {
        let enc = forward_items(&self.shared, g, store, video);
        let dec = forward_items(&self.motion, g, store, enc);
        let seg = g.slice_channels(dec, 0, 1);
        let flow = g.slice_channels(dec, 1, 3);
        let features = self.feat.forward(g, store, enc);
        let probs = self.out.forward(g, store, features);
        DiscriminatorOutput { probs, seg, flow, features }
    }

    /// Flattened transfer features (N, feature_len), inference mode.
    pub fn extract_features<T: Scalar>(&self, store: &VarStore<T>, video: crate::tensor::Tensor<T>) -> crate::tensor::Tensor<T> {
        let n = video.shape()[0];
        let mut g = Graph::new(false);
        let x = g.constant(video);
        let out = self.forward(&mut g, store, x);
        let f = g.value(out.features);
        let len = f.numel() / n;
        f.reshape(&[n, len])
    }
}

/// Encoder + motion decoder; the video object segmenter.
pub struct Segmenter {
    pub plan: DiscriminatorPlan,
    shared: Vec<Item>,
    motion: Vec<Item>,
}

pub struct SegmenterOutput {
    pub seg: Var,
    pub flow: Var,
}

impl Segmenter {
    pub fn new<T: Scalar>(store: &mut VarStore<T>, profile: &NetProfile, rng: &mut impl Rng) -> Self {
        let plan = DiscriminatorPlan::build(profile);
        let shared = build_items(store, &plan.shared, "disc/shared", rng);
        let motion = build_items(store, &plan.motion, "disc/motion", rng);
        Segmenter { plan, shared, motion }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &VarStore<T>, video: Var) -> SegmenterOutput {
        let enc = forward_items(&self.shared, g, store, video);
        let dec = forward_items(&self.motion, g, store, enc);
        SegmenterOutput { seg: g.slice_channels(dec, 0, 1), flow: g.slice_channels(dec, 1, 3) }
    }

    /// Freezes or unfreezes the shared encoder (used by fine-tuning regimes).
    pub fn set_encoder_trainable<T: Scalar>(store: &mut VarStore<T>, trainable: bool) {
        store.set_trainable_prefix("disc/shared", trainable);
    }
}

/// Encoder + discrimination stream with a fresh class head.
pub struct ActionClassifier {
    pub plan: DiscriminatorPlan,
    pub n_classes: usize,
    shared: Vec<Item>,
    feat: ConvLayer,
    head: ConvLayer,
}

impl ActionClassifier {
    pub fn new<T: Scalar>(store: &mut VarStore<T>, profile: &NetProfile, n_classes: usize, rng: &mut impl Rng) -> Self {
        let plan = DiscriminatorPlan::build(profile);
        let shared = build_items(store, &plan.shared, "disc/shared", rng);
        let feat = ConvLayer::new(store, "disc/feat", plan.disc_feat, rng);
        let head_spec = ConvSpec { out_ch: n_classes, act: Act::Softmax, ..plan.disc_out };
        let head = ConvLayer::new(store, "disc/class_head", head_spec, rng);
        ActionClassifier { plan, n_classes, shared, feat, head }
    }

    /// Class probabilities (N, n_classes).
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &VarStore<T>, video: Var) -> Var {
        let n = g.value(video).shape()[0];
        let enc = forward_items(&self.shared, g, store, video);
        let f = self.feat.forward(g, store, enc);
        let p = self.head.forward(g, store, f);
        g.reshape(p, &[n, self.n_classes])
    }
}

/// Softmax classifier on frozen feature vectors.
pub struct LinearProbe {
    pub classes: usize,
    layer: LinearLayer,
}

impl LinearProbe {
    pub fn new<T: Scalar>(store: &mut VarStore<T>, in_dim: usize, classes: usize, rng: &mut impl Rng) -> Self {
        LinearProbe { classes, layer: LinearLayer::new(store, "probe", in_dim, classes, rng) }
    }

    /// Class probabilities (N, classes) from features (N, in_dim).
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &VarStore<T>, features: Var) -> Var {
        let z = self.layer.forward(g, store, features);
        g.softmax(z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_profile() -> NetProfile {
        NetProfile { spatial: 16, frames: 8, width: 1.0 / 32.0, latent_dim: 8 }
    }

    fn random_video(n: usize, profile: &NetProfile, seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = [n, 3, profile.frames, profile.spatial, profile.spatial];
        let len: usize = shape.iter().product();
        Tensor::from_vec(
            &shape,
            (0..len).map(|_| rand::Rng::gen_range(&mut rng, -1.0f32..1.0)).collect(),
        )
    }

    #[test]
    fn forward_shapes_and_probability_ranges() {
        let profile = tiny_profile();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut vs: VarStore<f32> = VarStore::new();
        let disc = Discriminator::new(&mut vs, &profile, &mut rng);
        let video = random_video(2, &profile, 7);
        let mut g = Graph::new(true);
        let x = g.constant(video);
        let out = disc.forward(&mut g, &vs, x);
        assert_eq!(g.value(out.probs).shape(), &[2, 2, 1, 1, 1]);
        assert_eq!(g.value(out.seg).shape(), &[2, 1, 8, 16, 16]);
        assert_eq!(g.value(out.flow).shape(), &[2, 2, 8, 16, 16]);
        // Softmax rows sum to one.
        let p = g.value(out.probs);
        for i in 0..2 {
            let sum = p.data()[2 * i] + p.data()[2 * i + 1];
            assert!((sum - 1.0).abs() < 1e-5, "row {i} sums to {sum}");
        }
        for &v in g.value(out.seg).data() {
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn segmenter_shares_parameter_names_with_discriminator() {
        let profile = tiny_profile();
        let mut vs_d: VarStore<f32> = VarStore::new();
        let _ = Discriminator::new(&mut vs_d, &profile, &mut ChaCha8Rng::seed_from_u64(1));
        let mut vs_s: VarStore<f32> = VarStore::new();
        let _ = Segmenter::new(&mut vs_s, &profile, &mut ChaCha8Rng::seed_from_u64(2));
        for id in vs_s.ids() {
            let name = vs_s.name(id).to_string();
            assert!(
                vs_d.id_by_name(&name).is_some(),
                "segmenter var {name} missing from discriminator store"
            );
            assert_eq!(
                vs_s.value(id).shape(),
                vs_d.value(vs_d.id_by_name(&name).unwrap()).shape(),
                "shape mismatch at {name}"
            );
        }
    }

    #[test]
    fn feature_extraction_is_flat_and_deterministic() {
        let profile = tiny_profile();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut vs: VarStore<f32> = VarStore::new();
        let disc = Discriminator::new(&mut vs, &profile, &mut rng);
        let video = random_video(3, &profile, 9);
        let f1 = disc.extract_features(&vs, video.clone());
        let f2 = disc.extract_features(&vs, video);
        assert_eq!(f1.shape(), &[3, disc.plan.feature_len()]);
        assert_eq!(f1, f2);
    }

    #[test]
    fn action_classifier_emits_normalized_rows() {
        let profile = tiny_profile();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut vs: VarStore<f32> = VarStore::new();
        let clf = ActionClassifier::new(&mut vs, &profile, 3, &mut rng);
        let video = random_video(2, &profile, 13);
        let mut g = Graph::new(false);
        let x = g.constant(video);
        let p = clf.forward(&mut g, &vs, x);
        assert_eq!(g.value(p).shape(), &[2, 3]);
        for row in g.value(p).data().chunks(3) {
            let sum: f32 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-5);
        }
    }
}

//! Network sizing profiles and the layer plans derived from them.
//!
//! The full profile reproduces the reference architecture exactly: 64x64
//! frames, 32-frame clips, the published channel widths and the exact
//! kernel/stride/padding of every layer. The desk profile shrinks spatial
//! size, clip length and channel width so the whole adversarial loop runs on
//! a laptop CPU; its layers are generated from doubling rules that preserve
//! the structure (two generator streams, tap-and-concat fusion, residual
//! stacks, mirrored decoder).

use serde::{Deserialize, Serialize};

/// Global sizing knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetProfile {
    /// Frame height and width; 16, 32 or 64.
    pub spatial: usize,
    /// Frames per clip; 8, 16 or 32.
    pub frames: usize,
    /// Channel width multiplier in (0, 1]; 1.0 reproduces published widths.
    pub width: f64,
    /// Dimensionality of each latent space.
    pub latent_dim: usize,
}

impl NetProfile {
    pub fn full() -> Self {
        NetProfile { spatial: 64, frames: 32, width: 1.0, latent_dim: 100 }
    }

    /// CPU-friendly reduction used by the toy experiments.
    pub fn desk() -> Self {
        NetProfile { spatial: 32, frames: 8, width: 1.0 / 16.0, latent_dim: 100 }
    }

    pub fn is_full(&self) -> bool {
        self.spatial == 64 && self.frames == 32 && (self.width - 1.0).abs() < 1e-12 && self.latent_dim == 100
    }

    pub fn validate(&self) -> Result<(), String> {
        if ![16, 32, 64].contains(&self.spatial) {
            return Err(format!("spatial size {} not in {{16, 32, 64}}", self.spatial));
        }
        if ![8, 16, 32].contains(&self.frames) {
            return Err(format!("clip length {} not in {{8, 16, 32}}", self.frames));
        }
        if !(self.width > 0.0 && self.width <= 1.0) {
            return Err(format!("width multiplier {} outside (0, 1]", self.width));
        }
        if self.latent_dim == 0 {
            return Err("latent_dim must be positive".into());
        }
        Ok(())
    }

    /// Channel count after applying the width multiplier, floored at 4 so
    /// tiny profiles keep meaningful feature maps.
    pub fn ch(&self, base: usize) -> usize {
        ((base as f64 * self.width).round() as usize).max(4)
    }
}

/// Activation applied after a (possibly normalized) convolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Act {
    LeakyRelu,
    Relu,
    Tanh,
    Sigmoid,
    /// Softmax over channels.
    Softmax,
    None,
}

/// One convolution layer of a plan. Kernel/stride/pad triples are ordered
/// (depth, height, width).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub transpose: bool,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
    pub norm: bool,
    pub act: Act,
}

impl ConvSpec {
    /// Output dims (depth, h, w) from input dims.
    pub fn out_dims(&self, dims: [usize; 3]) -> [usize; 3] {
        let mut out = [0usize; 3];
        for i in 0..3 {
            out[i] = if self.transpose {
                (dims[i] - 1) * self.stride[i] + self.kernel[i] - 2 * self.pad[i]
            } else {
                (dims[i] + 2 * self.pad[i] - self.kernel[i]) / self.stride[i] + 1
            };
        }
        out
    }
}

/// A stack of residual blocks at constant width: each block is
/// conv-norm-relu-conv-norm plus the skip, then a final relu.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResSpec {
    pub channels: usize,
    pub blocks: usize,
    pub norm: bool,
}

/// Encoder/decoder item: plain convolution or residual stack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PlanItem {
    Conv(ConvSpec),
    Res(ResSpec),
}

fn conv(in_ch: usize, out_ch: usize, k: [usize; 3], s: [usize; 3], p: [usize; 3], norm: bool, act: Act) -> ConvSpec {
    ConvSpec { transpose: false, in_ch, out_ch, kernel: k, stride: s, pad: p, norm, act }
}

fn convt(in_ch: usize, out_ch: usize, k: [usize; 3], s: [usize; 3], p: [usize; 3], norm: bool, act: Act) -> ConvSpec {
    ConvSpec { transpose: true, in_ch, out_ch, kernel: k, stride: s, pad: p, norm, act }
}

/// Complete generator layer plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorPlan {
    pub profile: NetProfile,
    /// Background stream: depth-1 transposed convolutions from the scene code.
    pub background: Vec<ConvSpec>,
    /// Index of the background layer whose output feeds the foreground concat.
    pub tap_index: usize,
    /// Depth the tap is repeated to before concatenation.
    pub tap_depth: usize,
    /// Motion stream: 3D transposed convolutions from the LSTM code.
    pub motion: Vec<ConvSpec>,
    /// 1x1x1 fusion of concatenated tap + motion features (no norm, no act).
    pub fuse: ConvSpec,
    /// Residual stacks on fused features.
    pub residual: Vec<ResSpec>,
    /// Upsampling stage after the residual stacks.
    pub upsample: ConvSpec,
    /// Foreground appearance head (tanh).
    pub raw_head: ConvSpec,
    /// Foreground mask head (sigmoid).
    pub mask_head: ConvSpec,
}

impl GeneratorPlan {
    pub fn build(profile: &NetProfile) -> Self {
        profile.validate().expect("invalid profile");
        if profile.is_full() {
            Self::full_reference()
        } else {
            Self::generate(profile)
        }
    }

    /// The published layer list, verbatim.
    fn full_reference() -> Self {
        let p = NetProfile::full();
        let d = p.latent_dim;
        let background = vec![
            convt(d, 512, [1, 4, 4], [1, 1, 1], [0, 0, 0], true, Act::LeakyRelu),
            convt(512, 256, [1, 4, 4], [1, 2, 2], [0, 1, 1], true, Act::LeakyRelu),
            convt(256, 128, [1, 4, 4], [1, 2, 2], [0, 1, 1], true, Act::LeakyRelu),
            convt(128, 64, [1, 4, 4], [1, 2, 2], [0, 1, 1], true, Act::LeakyRelu),
            convt(64, 3, [1, 4, 4], [1, 2, 2], [0, 1, 1], false, Act::Tanh),
        ];
        let motion = vec![
            convt(d, 512, [2, 4, 4], [1, 1, 1], [0, 0, 0], true, Act::LeakyRelu),
            convt(512, 256, [3, 3, 3], [3, 3, 3], [1, 2, 2], true, Act::LeakyRelu),
            convt(256, 128, [4, 4, 4], [2, 2, 2], [1, 1, 1], true, Act::LeakyRelu),
        ];
        GeneratorPlan {
            profile: p,
            background,
            tap_index: 2,
            tap_depth: 8,
            motion,
            fuse: conv(256, 128, [1, 1, 1], [1, 1, 1], [0, 0, 0], false, Act::None),
            residual: vec![
                ResSpec { channels: 128, blocks: 3, norm: true },
                ResSpec { channels: 128, blocks: 3, norm: true },
                ResSpec { channels: 128, blocks: 3, norm: false },
            ],
            upsample: convt(128, 64, [4, 4, 4], [2, 2, 2], [1, 1, 1], true, Act::LeakyRelu),
            raw_head: convt(64, 3, [4, 4, 4], [2, 2, 2], [1, 1, 1], false, Act::Tanh),
            mask_head: convt(64, 1, [4, 4, 4], [2, 2, 2], [1, 1, 1], false, Act::Sigmoid),
        }
    }

    /// Doubling-rule construction for reduced profiles. Channel width at
    /// spatial size s is ch(64 * S / (2s)), matching the reference ladder
    /// when S = 64 and width = 1.
    fn generate(profile: &NetProfile) -> Self {
        let (sp, t, d) = (profile.spatial, profile.frames, profile.latent_dim);
        let ch_at = |s: usize| profile.ch(64 * sp / (2 * s));
        // Background: 4 -> 8 -> ... -> S/2 -> S (final tanh layer).
        let mut background = vec![convt(d, ch_at(4), [1, 4, 4], [1, 1, 1], [0, 0, 0], true, Act::LeakyRelu)];
        let mut s = 8;
        while s <= sp / 2 {
            background.push(convt(ch_at(s / 2), ch_at(s), [1, 4, 4], [1, 2, 2], [0, 1, 1], true, Act::LeakyRelu));
            s *= 2;
        }
        background.push(convt(ch_at(sp / 2), 3, [1, 4, 4], [1, 2, 2], [0, 1, 1], false, Act::Tanh));
        // Tap: the background layer at spatial size S/4.
        let tap_index = background.len() - 3;
        let tap_depth = t / 4;
        // Motion: 4 -> ... -> S/4 with depth(s) = max(1, T*s/S).
        let depth_at = |s: usize| (t * s / sp).max(1);
        let mut motion =
            vec![convt(d, ch_at(4), [depth_at(4), 4, 4], [1, 1, 1], [0, 0, 0], true, Act::LeakyRelu)];
        let mut s = 8;
        while s <= sp / 4 {
            let (kt, st, pt) = if depth_at(s) == depth_at(s / 2) { (1, 1, 0) } else { (4, 2, 1) };
            motion.push(convt(ch_at(s / 2), ch_at(s), [kt, 4, 4], [st, 2, 2], [pt, 1, 1], true, Act::LeakyRelu));
            s *= 2;
        }
        let cf = ch_at(sp / 4);
        GeneratorPlan {
            profile: *profile,
            background,
            tap_index,
            tap_depth,
            motion,
            fuse: conv(2 * cf, cf, [1, 1, 1], [1, 1, 1], [0, 0, 0], false, Act::None),
            residual: vec![
                ResSpec { channels: cf, blocks: 3, norm: true },
                ResSpec { channels: cf, blocks: 3, norm: true },
                ResSpec { channels: cf, blocks: 3, norm: false },
            ],
            upsample: convt(cf, ch_at(sp / 2), [4, 4, 4], [2, 2, 2], [1, 1, 1], true, Act::LeakyRelu),
            raw_head: convt(ch_at(sp / 2), 3, [4, 4, 4], [2, 2, 2], [1, 1, 1], false, Act::Tanh),
            mask_head: convt(ch_at(sp / 2), 1, [4, 4, 4], [2, 2, 2], [1, 1, 1], false, Act::Sigmoid),
        }
    }

    /// Background stream output dims per layer, starting from (1,1,1).
    pub fn background_dims(&self) -> Vec<[usize; 3]> {
        let mut dims = [1usize, 1, 1];
        self.background
            .iter()
            .map(|l| {
                dims = l.out_dims(dims);
                dims
            })
            .collect()
    }

    pub fn motion_dims(&self) -> Vec<[usize; 3]> {
        let mut dims = [1usize, 1, 1];
        self.motion
            .iter()
            .map(|l| {
                dims = l.out_dims(dims);
                dims
            })
            .collect()
    }
}

/// Complete discriminator layer plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorPlan {
    pub profile: NetProfile,
    /// Shared encoder: convolutions interleaved with residual stacks.
    pub shared: Vec<PlanItem>,
    /// Motion decoder mirroring the encoder; final layer outputs 3 channels
    /// (segmentation, flow u, flow v) under a sigmoid.
    pub motion: Vec<PlanItem>,
    /// First discrimination conv; its output is the transfer feature map.
    pub disc_feat: ConvSpec,
    /// Final real/fake conv collapsing to (2,1,1,1) under softmax.
    pub disc_out: ConvSpec,
}

impl DiscriminatorPlan {
    pub fn build(profile: &NetProfile) -> Self {
        profile.validate().expect("invalid profile");
        if profile.is_full() {
            Self::full_reference()
        } else {
            Self::generate(profile)
        }
    }

    fn full_reference() -> Self {
        let p = NetProfile::full();
        let shared = vec![
            PlanItem::Conv(conv(3, 64, [4, 4, 4], [2, 2, 2], [1, 1, 1], false, Act::LeakyRelu)),
            PlanItem::Conv(conv(64, 128, [4, 4, 4], [2, 2, 2], [1, 1, 1], true, Act::LeakyRelu)),
            PlanItem::Res(ResSpec { channels: 128, blocks: 3, norm: true }),
            PlanItem::Conv(conv(128, 256, [4, 4, 4], [2, 2, 2], [1, 1, 1], true, Act::LeakyRelu)),
            PlanItem::Res(ResSpec { channels: 256, blocks: 3, norm: true }),
            PlanItem::Conv(conv(256, 512, [2, 2, 2], [1, 1, 1], [1, 1, 1], true, Act::LeakyRelu)),
        ];
        let motion = vec![
            PlanItem::Conv(convt(512, 256, [2, 2, 2], [1, 1, 1], [1, 1, 1], true, Act::Relu)),
            PlanItem::Conv(convt(256, 128, [4, 4, 4], [2, 2, 2], [1, 1, 1], true, Act::Relu)),
            PlanItem::Res(ResSpec { channels: 128, blocks: 3, norm: true }),
            PlanItem::Conv(convt(128, 64, [4, 4, 4], [2, 2, 2], [1, 1, 1], true, Act::Relu)),
            PlanItem::Res(ResSpec { channels: 64, blocks: 3, norm: true }),
            PlanItem::Conv(convt(64, 3, [4, 4, 4], [2, 2, 2], [1, 1, 1], false, Act::Sigmoid)),
        ];
        DiscriminatorPlan {
            profile: p,
            shared,
            motion,
            disc_feat: conv(512, 1024, [4, 4, 4], [2, 2, 2], [1, 1, 1], true, Act::LeakyRelu),
            // Kernel covers the remaining (2,4,4) extent so the output is 2x1x1x1.
            disc_out: conv(1024, 2, [2, 4, 4], [1, 1, 1], [0, 0, 0], false, Act::Softmax),
        }
    }

    fn generate(profile: &NetProfile) -> Self {
        let t = profile.frames;
        let ch = |base: usize| profile.ch(base);
        // Depth halves at each strided conv but never below 1; k4 s2 p1 on a
        // depth-1 axis is invalid, so those axes switch to (k1 s1 p0).
        let mut depth = t;
        let mut dstep = |halve: bool| -> ([usize; 3], [usize; 3], [usize; 3]) {
            if halve && depth >= 2 {
                depth /= 2;
                ([4, 4, 4], [2, 2, 2], [1, 1, 1])
            } else {
                ([1, 4, 4], [1, 2, 2], [0, 1, 1])
            }
        };
        let (k1, s1, p1) = dstep(true);
        let (k2, s2, p2) = dstep(true);
        let (k3, s3, p3) = dstep(true);
        let shared = vec![
            PlanItem::Conv(conv(3, ch(64), k1, s1, p1, false, Act::LeakyRelu)),
            PlanItem::Conv(conv(ch(64), ch(128), k2, s2, p2, true, Act::LeakyRelu)),
            PlanItem::Res(ResSpec { channels: ch(128), blocks: 3, norm: true }),
            PlanItem::Conv(conv(ch(128), ch(256), k3, s3, p3, true, Act::LeakyRelu)),
            PlanItem::Res(ResSpec { channels: ch(256), blocks: 3, norm: true }),
            PlanItem::Conv(conv(ch(256), ch(512), [2, 2, 2], [1, 1, 1], [1, 1, 1], true, Act::LeakyRelu)),
        ];
        // Decoder mirrors the encoder strides in reverse.
        let motion = vec![
            PlanItem::Conv(convt(ch(512), ch(256), [2, 2, 2], [1, 1, 1], [1, 1, 1], true, Act::Relu)),
            PlanItem::Conv(convt(ch(256), ch(128), k3, s3, p3, true, Act::Relu)),
            PlanItem::Res(ResSpec { channels: ch(128), blocks: 3, norm: true }),
            PlanItem::Conv(convt(ch(128), ch(64), k2, s2, p2, true, Act::Relu)),
            PlanItem::Res(ResSpec { channels: ch(64), blocks: 3, norm: true }),
            PlanItem::Conv(convt(ch(64), 3, k1, s1, p1, false, Act::Sigmoid)),
        ];
        // Feature conv halves what remains; the final conv's kernel covers
        // the entire surviving extent.
        let feat_depth_in = depth + 1; // the k2 s1 p1 encoder layer adds one
        let (ft, fs, fp) = if feat_depth_in >= 4 { (4, 2, 1) } else { (2, 2, 0) };
        let sp_in = profile.spatial / 8 + 1;
        let feat_dims = [
            (feat_depth_in + 2 * fp - ft) / fs + 1,
            (sp_in + 2 - 4) / 2 + 1,
            (sp_in + 2 - 4) / 2 + 1,
        ];
        DiscriminatorPlan {
            profile: *profile,
            shared,
            motion,
            disc_feat: conv(ch(512), ch(1024), [ft, 4, 4], [fs, 2, 2], [fp, 1, 1], true, Act::LeakyRelu),
            disc_out: conv(ch(1024), 2, feat_dims, [1, 1, 1], [0, 0, 0], false, Act::Softmax),
        }
    }

    /// Dims flowing through the shared encoder from (T, S, S).
    pub fn shared_dims(&self) -> Vec<[usize; 3]> {
        let mut dims = [self.profile.frames, self.profile.spatial, self.profile.spatial];
        self.shared
            .iter()
            .map(|item| {
                if let PlanItem::Conv(c) = item {
                    dims = c.out_dims(dims);
                }
                dims
            })
            .collect()
    }

    /// Flattened length of the transfer feature map.
    pub fn feature_len(&self) -> usize {
        let enc = *self.shared_dims().last().unwrap();
        let d = self.disc_feat.out_dims(enc);
        self.disc_feat.out_ch * d[0] * d[1] * d[2]
    }
}

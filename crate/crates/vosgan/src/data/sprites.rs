//! Synthetic sprite clips with exact ground-truth masks and flow.
//!
//! Each clip is a static low-frequency background with 1..=3 bright sprites
//! (rectangles or discs) moving at constant integer velocities, reflecting
//! elastically off the borders. Integer velocities keep the ground-truth
//! flow exact: warping frame t's sprite support by its flow reproduces
//! frame t+1's support pixel for pixel.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clips::{FlowClip, MaskClip, VideoClip};
use crate::plane::Plane;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpriteSceneSpec {
    pub seed: u64,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    /// Inclusive sprite-count range, capped at 3.
    pub n_sprites: (usize, usize),
    /// Inclusive side/diameter range in pixels at 64-pixel scale; actual
    /// sizes scale with min(height, width)/64 and floor at 2.
    pub size_range: (usize, usize),
    /// Per-axis speed cap in pixels/frame; the zero vector is rerolled.
    pub max_speed: i32,
}

impl Default for SpriteSceneSpec {
    fn default() -> Self {
        SpriteSceneSpec {
            seed: 0,
            channels: 3,
            height: 64,
            width: 64,
            frames: 32,
            n_sprites: (1, 3),
            size_range: (4, 16),
            max_speed: 3,
        }
    }
}

impl SpriteSceneSpec {
    pub fn validate(&self) {
        assert!(self.channels == 1 || self.channels == 3);
        assert!(self.height >= 8 && self.width >= 8 && self.frames >= 1);
        assert!(self.n_sprites.0 >= 1 && self.n_sprites.1 <= 3 && self.n_sprites.0 <= self.n_sprites.1);
        assert!(self.size_range.0 >= 2 && self.size_range.0 <= self.size_range.1);
        assert!(self.max_speed >= 1);
    }

    fn scaled_sizes(&self) -> (usize, usize) {
        let s = self.height.min(self.width) as f64 / 64.0;
        let lo = ((self.size_range.0 as f64 * s).round() as usize).max(2);
        let hi = ((self.size_range.1 as f64 * s).round() as usize).max(lo);
        // Sprites must fit with room to move.
        let cap = self.height.min(self.width) / 2;
        (lo.min(cap), hi.min(cap).max(lo.min(cap)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Shape {
    Rect,
    Disc,
}

#[derive(Debug, Clone)]
struct Sprite {
    shape: Shape,
    w: usize,
    h: usize,
    color: [f32; 3],
    /// Top-left position per frame, one extra so every frame has a step.
    pos: Vec<(i32, i32)>,
}

impl Sprite {
    fn covers(&self, t: usize, y: usize, x: usize) -> bool {
        let (px, py) = self.pos[t];
        let (dx, dy) = (x as i32 - px, y as i32 - py);
        if dx < 0 || dy < 0 || dx >= self.w as i32 || dy >= self.h as i32 {
            return false;
        }
        match self.shape {
            Shape::Rect => true,
            Shape::Disc => {
                // Inclusive-radius disc rasterization on pixel centers.
                let cx = (self.w as f64 - 1.0) / 2.0;
                let cy = (self.h as f64 - 1.0) / 2.0;
                let r = self.w.min(self.h) as f64 / 2.0;
                let ddx = dx as f64 - cx;
                let ddy = dy as f64 - cy;
                ddx * ddx + ddy * ddy <= r * r
            }
        }
    }

    fn step(&self, t: usize) -> (i32, i32) {
        let (x0, y0) = self.pos[t];
        let (x1, y1) = self.pos[t + 1];
        (x1 - x0, y1 - y0)
    }
}

/// One elastic-reflection step along one axis; hi is the largest valid
/// coordinate for the sprite's near edge.
fn bounce(p: i32, v: i32, hi: i32) -> (i32, i32) {
    let mut np = p + v;
    let mut nv = v;
    if np < 0 {
        np = -np;
        nv = -nv;
    }
    if np > hi {
        np = 2 * hi - np;
        nv = -nv;
    }
    (np.clamp(0, hi), nv)
}

fn simulate(rng: &mut ChaCha8Rng, spec: &SpriteSceneSpec, forced_v: Option<(i32, i32)>) -> Vec<Sprite> {
    let (lo, hi) = spec.scaled_sizes();
    let n = rng.gen_range(spec.n_sprites.0..=spec.n_sprites.1);
    let mut sprites = Vec::with_capacity(n);
    for _ in 0..n {
        let shape = if rng.gen_bool(0.5) { Shape::Rect } else { Shape::Disc };
        let (w, h) = match shape {
            Shape::Rect => (rng.gen_range(lo..=hi), rng.gen_range(lo..=hi)),
            Shape::Disc => {
                let d = rng.gen_range(lo..=hi);
                (d, d)
            }
        };
        let color = [
            rng.gen_range(0.2..=1.0),
            rng.gen_range(0.2..=1.0),
            rng.gen_range(0.2..=1.0),
        ];
        let hi_x = (spec.width - w) as i32;
        let hi_y = (spec.height - h) as i32;
        let (mut px, mut py, mut vx, mut vy);
        match forced_v {
            Some((fx, fy)) => {
                vx = fx;
                vy = fy;
                // Spawn so the whole trajectory stays inside the frame; the
                // velocity then never flips and the clip's label stays clean.
                let travel_x = fx * spec.frames as i32;
                let travel_y = fy * spec.frames as i32;
                let (lo_x, hi_sx) = (0.max(-travel_x), hi_x.min(hi_x - travel_x));
                let (lo_y, hi_sy) = (0.max(-travel_y), hi_y.min(hi_y - travel_y));
                assert!(lo_x <= hi_sx && lo_y <= hi_sy, "directed sprite cannot fit: frame too small for |v|*frames");
                px = rng.gen_range(lo_x..=hi_sx);
                py = rng.gen_range(lo_y..=hi_sy);
            }
            None => {
                px = rng.gen_range(0..=hi_x);
                py = rng.gen_range(0..=hi_y);
                vx = 0;
                vy = 0;
                while vx == 0 && vy == 0 {
                    vx = rng.gen_range(-spec.max_speed..=spec.max_speed);
                    vy = rng.gen_range(-spec.max_speed..=spec.max_speed);
                }
            }
        }
        let mut pos = Vec::with_capacity(spec.frames + 1);
        pos.push((px, py));
        for _ in 0..spec.frames {
            let (nx, nvx) = bounce(px, vx, hi_x);
            let (ny, nvy) = bounce(py, vy, hi_y);
            px = nx;
            py = ny;
            vx = nvx;
            vy = nvy;
            pos.push((px, py));
        }
        sprites.push(Sprite { shape, w, h, color, pos });
    }
    sprites
}

fn background(rng: &mut ChaCha8Rng, spec: &SpriteSceneSpec) -> Vec<Plane> {
    let sigma = (spec.height.min(spec.width) as f32 / 8.0).max(1.0);
    (0..spec.channels)
        .map(|_| {
            let mut noise = Plane::zeros(spec.height, spec.width);
            for v in &mut noise.data {
                *v = rng.gen_range(0.0..1.0);
            }
            let b = noise.gaussian_blur(sigma);
            let lo = b.data.iter().cloned().fold(f32::INFINITY, f32::min);
            let hi = b.data.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let span = (hi - lo).max(1e-6);
            // Dim backgrounds keep sprites high-contrast.
            let mapped: Vec<f32> =
                b.data.iter().map(|&v| -1.0 + 0.9 * (v - lo) / span).collect();
            Plane::new(spec.height, spec.width, mapped)
        })
        .collect()
}

/// Deterministic clip synthesis: clip `index` of the scene family described
/// by `spec`. Returns (video, exact mask, exact flow). When sprites overlap
/// the later sprite wins both pixels and flow.
pub fn synth_clip(spec: &SpriteSceneSpec, index: u64) -> (VideoClip, MaskClip, FlowClip) {
    synth_with(spec, index, None)
}

/// Directed variant for motion-direction tasks: every sprite moves with
/// `velocity` for the whole clip, spawned so no wall bounce occurs.
pub fn synth_directed_clip(
    spec: &SpriteSceneSpec,
    index: u64,
    velocity: (i32, i32),
) -> (VideoClip, MaskClip, FlowClip) {
    assert!(velocity != (0, 0), "directed clips need a nonzero velocity");
    synth_with(spec, index, Some(velocity))
}

fn synth_with(spec: &SpriteSceneSpec, index: u64, forced_v: Option<(i32, i32)>) -> (VideoClip, MaskClip, FlowClip) {
    spec.validate();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index);
    let bg = background(&mut rng, spec);
    let sprites = simulate(&mut rng, spec, forced_v);

    let (c_n, t_n, h, w) = (spec.channels, spec.frames, spec.height, spec.width);
    let mut video = VideoClip::zeros(c_n, t_n, h, w);
    let mut mask = MaskClip::zeros(t_n, h, w);
    let mut flow = FlowClip::zeros(t_n, h, w);
    for t in 0..t_n {
        for y in 0..h {
            for x in 0..w {
                let mut top: Option<&Sprite> = None;
                for s in &sprites {
                    if s.covers(t, y, x) {
                        top = Some(s);
                    }
                }
                match top {
                    Some(s) => {
                        for c in 0..c_n {
                            video.set(c, t, y, x, s.color[c.min(2)]);
                        }
                        mask.set(t, y, x, 1);
                        let (dx, dy) = s.step(t);
                        flow.set(0, t, y, x, dx as f32);
                        flow.set(1, t, y, x, dy as f32);
                    }
                    None => {
                        for c in 0..c_n {
                            video.set(c, t, y, x, bg[c].get(y, x));
                        }
                    }
                }
            }
        }
    }
    (video, mask, flow)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(seed: u64) -> SpriteSceneSpec {
        SpriteSceneSpec {
            seed,
            height: 32,
            width: 32,
            frames: 8,
            ..SpriteSceneSpec::default()
        }
    }

    #[test]
    fn synthesis_is_deterministic_per_seed_and_index() {
        let spec = small_spec(5);
        let (v1, m1, f1) = synth_clip(&spec, 3);
        let (v2, m2, f2) = synth_clip(&spec, 3);
        assert_eq!(v1.data(), v2.data());
        assert_eq!(m1.data(), m2.data());
        assert_eq!(f1.data(), f2.data());
        let (v3, _, _) = synth_clip(&spec, 4);
        assert_ne!(v1.data(), v3.data());
    }

    #[test]
    fn sprites_stay_inside_the_frame() {
        for index in 0..20 {
            let spec = SpriteSceneSpec { frames: 64, ..small_spec(9) };
            let (_, mask, _) = synth_clip(&spec, index);
            // Every frame keeps some foreground (no sprite may leave).
            for t in 0..spec.frames {
                let area: usize = mask.frame(t).iter().map(|&v| v as usize).sum();
                assert!(area > 0, "clip {index} frame {t} lost its sprites");
            }
        }
    }

    #[test]
    fn warping_mask_by_flow_reproduces_next_frame() {
        // Single sprite so occlusion cannot break the warp identity.
        let spec = SpriteSceneSpec { n_sprites: (1, 1), ..small_spec(11) };
        for index in 0..10 {
            let (_, mask, flow) = synth_clip(&spec, index);
            for t in 0..spec.frames - 1 {
                let mut warped = vec![0u8; spec.height * spec.width];
                for y in 0..spec.height {
                    for x in 0..spec.width {
                        if mask.get(t, y, x) == 1 {
                            let nx = x as i32 + flow.get(0, t, y, x) as i32;
                            let ny = y as i32 + flow.get(1, t, y, x) as i32;
                            assert!(nx >= 0 && ny >= 0, "flow leaves frame");
                            warped[ny as usize * spec.width + nx as usize] = 1;
                        }
                    }
                }
                assert_eq!(&warped[..], mask.frame(t + 1), "clip {index} frame {t}");
            }
        }
    }

    #[test]
    fn flow_is_zero_off_sprites_and_bounded_on_them() {
        let spec = small_spec(13);
        let (_, mask, flow) = synth_clip(&spec, 0);
        for t in 0..spec.frames {
            for y in 0..spec.height {
                for x in 0..spec.width {
                    let u = flow.get(0, t, y, x);
                    let v = flow.get(1, t, y, x);
                    if mask.get(t, y, x) == 0 {
                        assert_eq!((u, v), (0.0, 0.0));
                    } else {
                        assert!(u.abs() <= spec.max_speed as f32);
                        assert!(v.abs() <= spec.max_speed as f32);
                        assert_eq!(u, u.round());
                        assert_eq!(v, v.round());
                    }
                }
            }
        }
    }

    #[test]
    fn video_values_land_in_range_with_bright_sprites() {
        let spec = small_spec(17);
        let (video, mask, _) = synth_clip(&spec, 1);
        for t in 0..spec.frames {
            for y in 0..spec.height {
                for x in 0..spec.width {
                    let v = video.get(0, t, y, x);
                    if mask.get(t, y, x) == 1 {
                        assert!(v >= 0.2);
                    } else {
                        assert!(v <= -0.1 + 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn directed_clips_move_every_sprite_with_the_requested_velocity() {
        let spec = small_spec(23);
        for (index, v) in [(0u64, (2, 0)), (1, (-2, 0)), (2, (1, 1))] {
            let (_, mask, flow) = synth_directed_clip(&spec, index, v);
            for t in 0..spec.frames {
                assert!(mask.frame(t).iter().any(|&m| m == 1));
                for y in 0..spec.height {
                    for x in 0..spec.width {
                        if mask.get(t, y, x) == 1 {
                            assert_eq!(flow.get(0, t, y, x), v.0 as f32, "clip {index} t {t}");
                            assert_eq!(flow.get(1, t, y, x), v.1 as f32, "clip {index} t {t}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn sizes_scale_with_frame_size() {
        let spec = SpriteSceneSpec { height: 32, width: 32, ..SpriteSceneSpec::default() };
        let (lo, hi) = spec.scaled_sizes();
        assert_eq!((lo, hi), (2, 8));
        let full = SpriteSceneSpec::default();
        assert_eq!(full.scaled_sizes(), (4, 16));
    }
}

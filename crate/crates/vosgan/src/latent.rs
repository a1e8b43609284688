//! Latent inputs for the generator: a static scene code and a motion
//! trajectory obtained by spherical interpolation between two endpoints.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::tensor::{Scalar, Tensor};

/// Dimensionality of both latent spaces.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
pub struct LatentConfig {
    pub dim: usize,
}

impl Default for LatentConfig {
    fn default() -> Self {
        LatentConfig { dim: 100 }
    }
}

/// Draws one standard-normal latent vector.
pub fn sample_gaussian<T: Scalar>(dim: usize, rng: &mut impl Rng) -> Vec<T> {
    (0..dim).map(|_| T::from_f64(rng.sample::<f64, _>(StandardNormal))).collect()
}

/// Spherical linear interpolation between arbitrary (not necessarily unit)
/// vectors. Falls back to straight-line interpolation when the angle between
/// the endpoints is numerically degenerate (sin below 1e-6), which covers
/// parallel, antiparallel and zero-length cases.
pub fn slerp<T: Scalar>(a: &[T], b: &[T], u: f64) -> Vec<T> {
    assert_eq!(a.len(), b.len(), "slerp endpoints must share dimension");
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x.to_f64() * y.to_f64()).sum();
    let na: f64 = a.iter().map(|x| x.to_f64() * x.to_f64()).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x.to_f64() * x.to_f64()).sum::<f64>().sqrt();
    let denom = na * nb;
    let cos = if denom > 0.0 { (dot / denom).clamp(-1.0, 1.0) } else { 1.0 };
    let omega = cos.acos();
    let sin = omega.sin();
    if sin.abs() < 1e-6 {
        return a
            .iter()
            .zip(b)
            .map(|(x, y)| T::from_f64((1.0 - u) * x.to_f64() + u * y.to_f64()))
            .collect();
    }
    let ka = ((1.0 - u) * omega).sin() / sin;
    let kb = (u * omega).sin() / sin;
    a.iter()
        .zip(b)
        .map(|(x, y)| T::from_f64(ka * x.to_f64() + kb * y.to_f64()))
        .collect()
}

/// Interpolates `steps` points from `a` to `b` inclusive, at parameters
/// i/(steps-1). A single step returns just `a`.
pub fn trajectory<T: Scalar>(a: &[T], b: &[T], steps: usize) -> Vec<Vec<T>> {
    assert!(steps >= 1, "trajectory needs at least one step");
    if steps == 1 {
        return vec![a.to_vec()];
    }
    (0..steps)
        .map(|i| slerp(a, b, i as f64 / (steps - 1) as f64))
        .collect()
}

/// One generator input draw: scene code plus a motion trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSample<T: Scalar> {
    pub scene: Vec<T>,
    /// steps x dim, endpoints included.
    pub motion: Vec<Vec<T>>,
}

/// Samples a scene vector and a slerp trajectory between two fresh endpoints.
pub fn sample_latents<T: Scalar>(cfg: &LatentConfig, steps: usize, rng: &mut impl Rng) -> LatentSample<T> {
    let scene = sample_gaussian(cfg.dim, rng);
    let a: Vec<T> = sample_gaussian(cfg.dim, rng);
    let b: Vec<T> = sample_gaussian(cfg.dim, rng);
    LatentSample { scene, motion: trajectory(&a, &b, steps) }
}

/// Batch of scene codes as a (N, dim) tensor.
pub fn scenes_to_tensor<T: Scalar>(samples: &[LatentSample<T>]) -> Tensor<T> {
    let n = samples.len();
    let d = samples[0].scene.len();
    let mut out = Tensor::zeros(&[n, d]);
    for (i, s) in samples.iter().enumerate() {
        assert_eq!(s.scene.len(), d);
        out.data_mut()[i * d..(i + 1) * d].copy_from_slice(&s.scene);
    }
    out
}

/// Motion step `t` across the batch as a (N, dim) tensor.
pub fn motion_step_to_tensor<T: Scalar>(samples: &[LatentSample<T>], t: usize) -> Tensor<T> {
    let n = samples.len();
    let d = samples[0].motion[t].len();
    let mut out = Tensor::zeros(&[n, d]);
    for (i, s) in samples.iter().enumerate() {
        out.data_mut()[i * d..(i + 1) * d].copy_from_slice(&s.motion[t]);
    }
    out
}

//! Mask-based measures: region similarity J, contour accuracy F, the
//! mean/recall/decay aggregates, flow endpoint error and map rescaling.

use thiserror::Error;

use crate::clips::{FlowClip, MaskClip};
use crate::plane::Plane;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("covariance not positive semidefinite: min eigenvalue {0}")]
    NonPsd(f64),
    #[error("bad probability vector: {0}")]
    BadProbs(String),
}

/// Intersection over union; 1 when both masks are empty.
pub fn region_similarity_j(pred: &[u8], gt: &[u8], h: usize, w: usize) -> Result<f64, MetricsError> {
    if pred.len() != h * w || gt.len() != h * w {
        return Err(MetricsError::ShapeMismatch(format!(
            "J: {} and {} vs {h}x{w}",
            pred.len(),
            gt.len()
        )));
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for i in 0..h * w {
        let p = pred[i] != 0;
        let g = gt[i] != 0;
        if p && g {
            inter += 1;
        }
        if p || g {
            union += 1;
        }
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Foreground pixels with a 4-neighbor outside the mask (image borders count
/// as outside).
pub fn boundary(mask: &[u8], h: usize, w: usize) -> Vec<bool> {
    let mut out = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            if mask[y * w + x] == 0 {
                continue;
            }
            let outside = (y == 0 || mask[(y - 1) * w + x] == 0)
                || (y + 1 == h || mask[(y + 1) * w + x] == 0)
                || (x == 0 || mask[y * w + x - 1] == 0)
                || (x + 1 == w || mask[y * w + x + 1] == 0);
            out[y * w + x] = outside;
        }
    }
    out
}

/// Squared Euclidean distance transform (distance to the nearest set pixel)
/// by the two-pass lower-envelope method; f64::INFINITY when the set is
/// empty.
pub fn edt_squared(set: &[bool], h: usize, w: usize) -> Vec<f64> {
    const INF: f64 = f64::INFINITY;
    // Lower envelope over the finite parabolas only; infinite sources can
    // never win and would break the intersection arithmetic.
    fn dt_1d(f: &[f64], d: &mut [f64]) {
        let n = f.len();
        let finite: Vec<usize> = (0..n).filter(|&i| f[i].is_finite()).collect();
        if finite.is_empty() {
            d.fill(INF);
            return;
        }
        let mut v = vec![0usize; finite.len()];
        let mut z = vec![0.0f64; finite.len() + 1];
        let mut k = 0usize;
        v[0] = finite[0];
        z[0] = -INF;
        z[1] = INF;
        for &q in &finite[1..] {
            let isect = |p: usize| {
                ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64))
                    / (2.0 * (q as f64 - p as f64))
            };
            let mut s = isect(v[k]);
            while s <= z[k] {
                k -= 1;
                s = isect(v[k]);
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = INF;
        }
        k = 0;
        for q in 0..n {
            while z[k + 1] < q as f64 {
                k += 1;
            }
            d[q] = (q as f64 - v[k] as f64).powi(2) + f[v[k]];
        }
    }

    let mut g = vec![INF; h * w];
    for i in 0..h * w {
        if set[i] {
            g[i] = 0.0;
        }
    }
    // Columns, then rows.
    let mut tmp = vec![INF; h * w];
    let mut col_in = vec![0.0f64; h];
    let mut col_out = vec![0.0f64; h];
    for x in 0..w {
        for y in 0..h {
            col_in[y] = g[y * w + x];
        }
        dt_1d(&col_in, &mut col_out);
        for y in 0..h {
            tmp[y * w + x] = col_out[y];
        }
    }
    let mut out = vec![INF; h * w];
    let mut row_out = vec![0.0f64; w];
    for y in 0..h {
        dt_1d(&tmp[y * w..(y + 1) * w], &mut row_out);
        out[y * w..(y + 1) * w].copy_from_slice(&row_out);
    }
    out
}

/// Default DAVIS-style contour tolerance: ceil of 0.8% of the diagonal.
pub fn default_f_tolerance(h: usize, w: usize) -> f64 {
    (0.008 * ((h * h + w * w) as f64).sqrt()).ceil()
}

/// Boundary F1: precision/recall of boundary pixels matched within
/// `tolerance_px` (Euclidean), combined as 2PR/(P+R).
pub fn contour_accuracy_f(
    pred: &[u8],
    gt: &[u8],
    h: usize,
    w: usize,
    tolerance_px: f64,
) -> Result<f64, MetricsError> {
    if pred.len() != h * w || gt.len() != h * w {
        return Err(MetricsError::ShapeMismatch(format!(
            "F: {} and {} vs {h}x{w}",
            pred.len(),
            gt.len()
        )));
    }
    let pb = boundary(pred, h, w);
    let gb = boundary(gt, h, w);
    let np = pb.iter().filter(|&&b| b).count();
    let ng = gb.iter().filter(|&&b| b).count();
    if np == 0 && ng == 0 {
        return Ok(1.0);
    }
    if np == 0 || ng == 0 {
        return Ok(0.0);
    }
    let dist_to_g = edt_squared(&gb, h, w);
    let dist_to_p = edt_squared(&pb, h, w);
    let tol_sq = tolerance_px * tolerance_px;
    let mut hit_p = 0usize;
    let mut hit_g = 0usize;
    for i in 0..h * w {
        if pb[i] && dist_to_g[i] <= tol_sq {
            hit_p += 1;
        }
        if gb[i] && dist_to_p[i] <= tol_sq {
            hit_g += 1;
        }
    }
    let precision = hit_p as f64 / np as f64;
    let recall = hit_g as f64 / ng as f64;
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Per-frame scores of one sequence under one measure.
#[derive(Debug, Clone)]
pub struct SequenceScores {
    pub id: String,
    pub frames: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Aggregate {
    /// Mean over sequences of the per-sequence mean.
    pub mean: f64,
    /// Fraction of sequences whose mean exceeds tau.
    pub recall: f64,
    /// Mean first-quartile minus fourth-quartile score; None when no
    /// sequence has at least 4 frames.
    pub decay: Option<f64>,
    /// Sequences excluded from decay for being shorter than 4 frames.
    pub decay_excluded: Vec<String>,
}

/// Contiguous 4-way partition sizes with remainder frames assigned to the
/// earlier quartiles.
fn quartile_sizes(n: usize) -> [usize; 4] {
    let q = n / 4;
    let r = n % 4;
    let mut out = [q; 4];
    for i in 0..r {
        out[i] += 1;
    }
    out
}

pub fn aggregate(scores: &[SequenceScores], tau: f64) -> Result<Aggregate, MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::Empty("aggregate over zero sequences".into()));
    }
    let mut means = Vec::with_capacity(scores.len());
    for s in scores {
        if s.frames.is_empty() {
            return Err(MetricsError::Empty(format!("sequence {} has no frames", s.id)));
        }
        means.push(s.frames.iter().sum::<f64>() / s.frames.len() as f64);
    }
    let mean = means.iter().sum::<f64>() / means.len() as f64;
    let recall = means.iter().filter(|&&m| m > tau).count() as f64 / means.len() as f64;
    let mut decays = Vec::new();
    let mut excluded = Vec::new();
    for s in scores {
        if s.frames.len() < 4 {
            excluded.push(s.id.clone());
            continue;
        }
        let sizes = quartile_sizes(s.frames.len());
        let q1 = &s.frames[0..sizes[0]];
        let start4 = s.frames.len() - sizes[3];
        let q4 = &s.frames[start4..];
        let m1 = q1.iter().sum::<f64>() / q1.len() as f64;
        let m4 = q4.iter().sum::<f64>() / q4.len() as f64;
        decays.push(m1 - m4);
    }
    let decay = if decays.is_empty() {
        None
    } else {
        Some(decays.iter().sum::<f64>() / decays.len() as f64)
    };
    Ok(Aggregate { mean, recall, decay, decay_excluded: excluded })
}

/// Mean endpoint error between two flow clips, optionally restricted to a
/// mask's foreground.
pub fn endpoint_error(
    pred: &FlowClip,
    gt: &FlowClip,
    region: Option<&MaskClip>,
) -> Result<f64, MetricsError> {
    if (pred.frames, pred.height, pred.width) != (gt.frames, gt.height, gt.width) {
        return Err(MetricsError::ShapeMismatch("flow clips differ".into()));
    }
    if let Some(m) = region {
        if (m.frames, m.height, m.width) != (gt.frames, gt.height, gt.width) {
            return Err(MetricsError::ShapeMismatch("mask vs flow".into()));
        }
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for t in 0..gt.frames {
        for y in 0..gt.height {
            for x in 0..gt.width {
                if let Some(m) = region {
                    if m.get(t, y, x) == 0 {
                        continue;
                    }
                }
                let du = pred.get(0, t, y, x) as f64 - gt.get(0, t, y, x) as f64;
                let dv = pred.get(1, t, y, x) as f64 - gt.get(1, t, y, x) as f64;
                sum += (du * du + dv * dv).sqrt();
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(MetricsError::Empty("no pixels selected for EPE".into()));
    }
    Ok(sum / count as f64)
}

/// Bilinear rescale of a probability/score map.
pub fn rescale_map(map: &Plane, target_h: usize, target_w: usize) -> Plane {
    if map.height == target_h && map.width == target_w {
        return map.clone();
    }
    map.resize(target_h, target_w)
}

/// Rescale then threshold at 0.5 into a binary map.
pub fn rescale_to_mask(map: &Plane, target_h: usize, target_w: usize) -> Vec<u8> {
    let p = rescale_map(map, target_h, target_w);
    p.data.iter().map(|&v| if v >= 0.5 { 1 } else { 0 }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Lcg(u64);

    impl Lcg {
        fn next_f64(&mut self) -> f64 {
            self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((self.0 >> 11) as f64) / ((1u64 << 53) as f64)
        }
        fn mask(&mut self, n: usize, p: f64) -> Vec<u8> {
            (0..n).map(|_| if self.next_f64() < p { 1 } else { 0 }).collect()
        }
    }

    #[test]
    fn j_handles_the_boundary_cases() {
        let ones = vec![1u8; 100];
        let zeros = vec![0u8; 100];
        assert_eq!(region_similarity_j(&ones, &ones, 10, 10).unwrap(), 1.0);
        assert_eq!(region_similarity_j(&zeros, &zeros, 10, 10).unwrap(), 1.0);
        let mut top = vec![0u8; 100];
        top[..50].fill(1);
        let mut bottom = vec![0u8; 100];
        bottom[50..].fill(1);
        assert_eq!(region_similarity_j(&top, &bottom, 10, 10).unwrap(), 0.0);
        // Top 5 rows vs all ones: 50/100.
        assert_eq!(region_similarity_j(&top, &ones, 10, 10).unwrap(), 0.5);
        assert!(region_similarity_j(&ones, &zeros[..50], 10, 10).is_err());
    }

    #[test]
    fn j_matches_counting_oracle_and_is_symmetric() {
        let mut rng = Lcg(1);
        for _ in 0..200 {
            let a = rng.mask(64, 0.4);
            let b = rng.mask(64, 0.4);
            let j1 = region_similarity_j(&a, &b, 8, 8).unwrap();
            let j2 = region_similarity_j(&b, &a, 8, 8).unwrap();
            assert_eq!(j1, j2);
            let inter = a.iter().zip(&b).filter(|(&x, &y)| x == 1 && y == 1).count();
            let uni = a.iter().zip(&b).filter(|(&x, &y)| x == 1 || y == 1).count();
            let oracle = if uni == 0 { 1.0 } else { inter as f64 / uni as f64 };
            assert_eq!(j1, oracle);
        }
    }

    /// Brute-force F: exhaustive pairwise distances between boundary sets.
    fn brute_f(pred: &[u8], gt: &[u8], h: usize, w: usize, tol: f64) -> f64 {
        let pb = boundary(pred, h, w);
        let gb = boundary(gt, h, w);
        let pts = |b: &[bool]| -> Vec<(f64, f64)> {
            let mut v = Vec::new();
            for y in 0..h {
                for x in 0..w {
                    if b[y * w + x] {
                        v.push((y as f64, x as f64));
                    }
                }
            }
            v
        };
        let pp = pts(&pb);
        let gp = pts(&gb);
        if pp.is_empty() && gp.is_empty() {
            return 1.0;
        }
        if pp.is_empty() || gp.is_empty() {
            return 0.0;
        }
        let near = |a: &[(f64, f64)], b: &[(f64, f64)]| -> f64 {
            let mut hits = 0usize;
            for &(ay, ax) in a {
                let mut best = f64::INFINITY;
                for &(by, bx) in b {
                    let d = ((ay - by).powi(2) + (ax - bx).powi(2)).sqrt();
                    best = best.min(d);
                }
                if best <= tol {
                    hits += 1;
                }
            }
            hits as f64 / a.len() as f64
        };
        let p = near(&pp, &gp);
        let r = near(&gp, &pp);
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    #[test]
    fn f_boundary_cases() {
        let mut sq = vec![0u8; 64];
        for y in 2..6 {
            for x in 2..6 {
                sq[y * 8 + x] = 1;
            }
        }
        let zeros = vec![0u8; 64];
        assert_eq!(contour_accuracy_f(&sq, &sq, 8, 8, 1.0).unwrap(), 1.0);
        assert_eq!(contour_accuracy_f(&zeros, &sq, 8, 8, 1.0).unwrap(), 0.0);
        assert_eq!(contour_accuracy_f(&zeros, &zeros, 8, 8, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn f_matches_brute_force_on_random_masks() {
        let mut rng = Lcg(7);
        let (h, w) = (16, 16);
        for case in 0..150 {
            let a = rng.mask(h * w, 0.35);
            let b = rng.mask(h * w, 0.35);
            for tol in [1.0, 2.0, default_f_tolerance(h, w)] {
                let fast = contour_accuracy_f(&a, &b, h, w, tol).unwrap();
                let slow = brute_f(&a, &b, h, w, tol);
                assert!(
                    (fast - slow).abs() < 1e-9,
                    "case {case} tol {tol}: {fast} vs {slow}"
                );
            }
        }
    }

    #[test]
    fn f_is_monotone_in_tolerance() {
        let mut rng = Lcg(13);
        let a = rng.mask(256, 0.3);
        let b = rng.mask(256, 0.3);
        let mut prev = 0.0;
        for tol in [0.0, 1.0, 2.0, 4.0, 8.0] {
            let f = contour_accuracy_f(&a, &b, 16, 16, tol).unwrap();
            assert!(f + 1e-12 >= prev, "tol {tol}");
            prev = f;
        }
    }

    #[test]
    fn aggregate_matches_hand_computed_values() {
        let constant = SequenceScores { id: "c".into(), frames: vec![0.8; 12] };
        let agg = aggregate(&[constant.clone()], 0.5).unwrap();
        assert!((agg.mean - 0.8).abs() < 1e-12);
        assert_eq!(agg.recall, 1.0);
        assert_eq!(agg.decay, Some(0.0));

        let a = SequenceScores { id: "a".into(), frames: vec![0.4; 8] };
        let b = SequenceScores { id: "b".into(), frames: vec![0.6; 8] };
        let agg = aggregate(&[a, b], 0.5).unwrap();
        assert!((agg.mean - 0.5).abs() < 1e-12);
        assert_eq!(agg.recall, 0.5);

        // Linear ramp 1 -> 0 over 16 frames.
        let ramp: Vec<f64> = (0..16).map(|i| 1.0 - i as f64 / 15.0).collect();
        let agg = aggregate(&[SequenceScores { id: "r".into(), frames: ramp.clone() }], 0.5).unwrap();
        let q1 = ramp[..4].iter().sum::<f64>() / 4.0;
        let q4 = ramp[12..].iter().sum::<f64>() / 4.0;
        assert!((agg.decay.unwrap() - (q1 - q4)).abs() < 1e-12);
        assert!((agg.decay.unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn quartiles_assign_remainder_to_earlier_blocks() {
        assert_eq!(quartile_sizes(16), [4, 4, 4, 4]);
        assert_eq!(quartile_sizes(10), [3, 3, 2, 2]);
        assert_eq!(quartile_sizes(7), [2, 2, 2, 1]);
        assert_eq!(quartile_sizes(4), [1, 1, 1, 1]);
    }

    #[test]
    fn short_sequences_are_excluded_from_decay_only() {
        let long = SequenceScores { id: "long".into(), frames: vec![0.9; 8] };
        let short = SequenceScores { id: "short".into(), frames: vec![0.1; 3] };
        let agg = aggregate(&[long, short], 0.5).unwrap();
        assert!((agg.mean - 0.5).abs() < 1e-12);
        assert_eq!(agg.decay_excluded, vec!["short".to_string()]);
        assert_eq!(agg.decay, Some(0.0));
        let only_short = SequenceScores { id: "s".into(), frames: vec![0.5; 2] };
        assert_eq!(aggregate(&[only_short], 0.5).unwrap().decay, None);
    }

    #[test]
    fn epe_matches_elementwise_oracle() {
        let mut rng = Lcg(21);
        let (t, h, w) = (2, 4, 4);
        let mk = |rng: &mut Lcg| -> FlowClip {
            let data: Vec<f32> =
                (0..2 * t * h * w).map(|_| (rng.next_f64() * 6.0 - 3.0) as f32).collect();
            FlowClip::new(t, h, w, data).unwrap()
        };
        let a = mk(&mut rng);
        let b = mk(&mut rng);
        assert_eq!(endpoint_error(&a, &a, None).unwrap(), 0.0);

        let mut off = FlowClip::zeros(t, h, w);
        for tt in 0..t {
            for y in 0..h {
                for x in 0..w {
                    off.set(0, tt, y, x, a.get(0, tt, y, x) + 3.0);
                    off.set(1, tt, y, x, a.get(1, tt, y, x) + 4.0);
                }
            }
        }
        assert!((endpoint_error(&off, &a, None).unwrap() - 5.0).abs() < 1e-6);

        let mut oracle = 0.0;
        for tt in 0..t {
            for y in 0..h {
                for x in 0..w {
                    let du = a.get(0, tt, y, x) as f64 - b.get(0, tt, y, x) as f64;
                    let dv = a.get(1, tt, y, x) as f64 - b.get(1, tt, y, x) as f64;
                    oracle += (du * du + dv * dv).sqrt();
                }
            }
        }
        oracle /= (t * h * w) as f64;
        assert!((endpoint_error(&a, &b, None).unwrap() - oracle).abs() < 1e-9);

        // Masked variant only sees foreground pixels.
        let mut m = MaskClip::zeros(t, h, w);
        m.set(0, 1, 1, 1);
        let du = a.get(0, 0, 1, 1) as f64 - b.get(0, 0, 1, 1) as f64;
        let dv = a.get(1, 0, 1, 1) as f64 - b.get(1, 0, 1, 1) as f64;
        let expect = (du * du + dv * dv).sqrt();
        assert!((endpoint_error(&a, &b, Some(&m)).unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn rescale_identity_and_constant_hold() {
        let p = Plane::new(3, 3, vec![0.2; 9]);
        assert_eq!(rescale_map(&p, 3, 3).data, p.data);
        let up = rescale_map(&p, 6, 6);
        for v in up.data {
            assert!((v - 0.2).abs() < 1e-6);
        }
    }

    #[test]
    fn rescale_checkerboard_matches_hand_computed_bilinear() {
        // 2x2 checkerboard upscaled to 4x4 with half-pixel centers: source
        // coordinates are -0.25, 0.25, 0.75, 1.25 clamped to [0,1].
        let p = Plane::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let up = rescale_map(&p, 4, 4);
        let xs = [0.0f32, 0.25, 0.75, 1.0];
        for (yi, &sy) in xs.iter().enumerate() {
            for (xi, &sx) in xs.iter().enumerate() {
                let expect = (1.0 - sy) * ((1.0 - sx) * 1.0 + sx * 0.0)
                    + sy * ((1.0 - sx) * 0.0 + sx * 1.0);
                assert!(
                    (up.get(yi, xi) - expect).abs() < 1e-6,
                    "({yi},{xi}): {} vs {expect}",
                    up.get(yi, xi)
                );
            }
        }
        // Thresholded variant is binary.
        let m = rescale_to_mask(&p, 4, 4);
        assert!(m.iter().all(|&v| v <= 1));
    }

    #[test]
    fn default_tolerance_follows_the_diagonal() {
        assert_eq!(default_f_tolerance(16, 16), 1.0);
        assert_eq!(default_f_tolerance(480, 854), 8.0);
    }
}

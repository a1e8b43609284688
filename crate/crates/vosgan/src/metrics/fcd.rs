//! Frame Content Distance: average feature-space L2 between foreground
//! crops of consecutive frames, where the crop is the bounding box of the
//! largest connected foreground component.

use super::masks::MetricsError;
use crate::clips::{MaskClip, VideoClip};
use crate::plane::Plane;

/// Pluggable feature seam. The metric resizes each crop bilinearly to
/// `input_size` before calling `features`; crop planes are in [0,1].
pub trait FeatureExtractor {
    fn input_size(&self) -> (usize, usize);
    fn feature_len(&self) -> usize;
    fn features(&self, crop: &[Plane; 3]) -> Vec<f64>;
    /// Optional per-frame class distribution (for the Inception Score).
    fn class_probs(&self, _frame: &[Plane; 3]) -> Option<Vec<f64>> {
        None
    }
}

/// Deterministic test extractor: crops are resized to 32x32, converted to
/// luma, average-pooled 4x4 into an 8x8 grid and flattened.
pub struct ToyFeatureExtractor;

impl FeatureExtractor for ToyFeatureExtractor {
    fn input_size(&self) -> (usize, usize) {
        (32, 32)
    }

    fn feature_len(&self) -> usize {
        64
    }

    fn features(&self, crop: &[Plane; 3]) -> Vec<f64> {
        let (h, w) = (crop[0].height, crop[0].width);
        let mut out = Vec::with_capacity(64);
        for cy in 0..8 {
            for cx in 0..8 {
                let mut acc = 0.0f64;
                let mut count = 0usize;
                for y in cy * h / 8..(cy + 1) * h / 8 {
                    for x in cx * w / 8..(cx + 1) * w / 8 {
                        let luma = 0.299 * crop[0].get(y, x) as f64
                            + 0.587 * crop[1].get(y, x) as f64
                            + 0.114 * crop[2].get(y, x) as f64;
                        acc += luma;
                        count += 1;
                    }
                }
                out.push(acc / count.max(1) as f64);
            }
        }
        out
    }
}

/// Bounding box (y0, x0, y1, x1), inclusive, of the largest 4-connected
/// foreground component; None for an empty frame.
pub fn largest_component_bbox(mask: &[u8], h: usize, w: usize) -> Option<(usize, usize, usize, usize)> {
    let mut seen = vec![false; h * w];
    let mut best: Option<(usize, (usize, usize, usize, usize))> = None;
    let mut queue = Vec::new();
    for start in 0..h * w {
        if mask[start] == 0 || seen[start] {
            continue;
        }
        queue.clear();
        queue.push(start);
        seen[start] = true;
        let (mut size, mut y0, mut x0, mut y1, mut x1) =
            (0usize, h - 1, w - 1, 0usize, 0usize);
        while let Some(i) = queue.pop() {
            size += 1;
            let (y, x) = (i / w, i % w);
            y0 = y0.min(y);
            x0 = x0.min(x);
            y1 = y1.max(y);
            x1 = x1.max(x);
            if y > 0 && mask[i - w] != 0 && !seen[i - w] {
                seen[i - w] = true;
                queue.push(i - w);
            }
            if y + 1 < h && mask[i + w] != 0 && !seen[i + w] {
                seen[i + w] = true;
                queue.push(i + w);
            }
            if x > 0 && mask[i - 1] != 0 && !seen[i - 1] {
                seen[i - 1] = true;
                queue.push(i - 1);
            }
            if x + 1 < w && mask[i + 1] != 0 && !seen[i + 1] {
                seen[i + 1] = true;
                queue.push(i + 1);
            }
        }
        if best.as_ref().map_or(true, |&(bs, _)| size > bs) {
            best = Some((size, (y0, x0, y1, x1)));
        }
    }
    best.map(|(_, bbox)| bbox)
}

/// Crop one frame to a bbox as RGB planes in [0,1] (video data is [-1,1]).
fn crop_frame(video: &VideoClip, t: usize, bbox: (usize, usize, usize, usize)) -> [Plane; 3] {
    let (y0, x0, y1, x1) = bbox;
    let (ch, cw) = (y1 - y0 + 1, x1 - x0 + 1);
    let mut planes = [Plane::zeros(ch, cw), Plane::zeros(ch, cw), Plane::zeros(ch, cw)];
    for c in 0..3 {
        let src = c.min(video.channels - 1);
        for y in 0..ch {
            for x in 0..cw {
                let v = (video.get(src, t, y0 + y, x0 + x) + 1.0) / 2.0;
                planes[c].set(y, x, v.clamp(0.0, 1.0));
            }
        }
    }
    planes
}

fn frame_features(
    video: &VideoClip,
    mask: &MaskClip,
    t: usize,
    ex: &dyn FeatureExtractor,
) -> Option<Vec<f64>> {
    let bbox = largest_component_bbox(mask.frame(t), mask.height, mask.width)?;
    let crop = crop_frame(video, t, bbox);
    let (ih, iw) = ex.input_size();
    let resized = [crop[0].resize(ih, iw), crop[1].resize(ih, iw), crop[2].resize(ih, iw)];
    let f = ex.features(&resized);
    debug_assert_eq!(f.len(), ex.feature_len());
    Some(f)
}

/// Mean over videos of the mean L2 feature distance between foreground
/// crops of consecutive frames. Pairs with an empty foreground in either
/// frame are skipped; videos with no usable pair are excluded; an error is
/// returned when nothing contributes.
pub fn fcd(
    videos: &[&VideoClip],
    masks: &[&MaskClip],
    extractor: &dyn FeatureExtractor,
) -> Result<f64, MetricsError> {
    if videos.len() != masks.len() || videos.is_empty() {
        return Err(MetricsError::ShapeMismatch(format!(
            "{} videos vs {} masks",
            videos.len(),
            masks.len()
        )));
    }
    let mut per_video = Vec::new();
    for (video, mask) in videos.iter().zip(masks) {
        if (mask.frames, mask.height, mask.width) != (video.frames, video.height, video.width) {
            return Err(MetricsError::ShapeMismatch("mask vs video".into()));
        }
        let feats: Vec<Option<Vec<f64>>> =
            (0..video.frames).map(|t| frame_features(video, mask, t, extractor)).collect();
        let mut sum = 0.0;
        let mut pairs = 0usize;
        for t in 0..video.frames.saturating_sub(1) {
            if let (Some(a), Some(b)) = (&feats[t], &feats[t + 1]) {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                sum += d2.sqrt();
                pairs += 1;
            }
        }
        if pairs > 0 {
            per_video.push(sum / pairs as f64);
        }
    }
    if per_video.is_empty() {
        return Err(MetricsError::Empty("no video has a usable foreground pair".into()));
    }
    Ok(per_video.iter().sum::<f64>() / per_video.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paint_square(video: &mut VideoClip, mask: &mut MaskClip, t: usize, y0: usize, x0: usize, side: usize, color: [f32; 3]) {
        for y in y0..y0 + side {
            for x in x0..x0 + side {
                for c in 0..3 {
                    video.set(c, t, y, x, color[c]);
                }
                mask.set(t, y, x, 1);
            }
        }
    }

    #[test]
    fn bbox_finds_the_largest_component() {
        let (h, w) = (8, 8);
        let mut m = vec![0u8; h * w];
        // 2x2 blob and a 3x1 blob; the larger one wins.
        m[1 * w + 1] = 1;
        m[1 * w + 2] = 1;
        m[2 * w + 1] = 1;
        m[2 * w + 2] = 1;
        m[5 * w + 4] = 1;
        m[5 * w + 5] = 1;
        m[5 * w + 6] = 1;
        let bbox = largest_component_bbox(&m, h, w).unwrap();
        assert_eq!(bbox, (1, 1, 2, 2));
        assert_eq!(largest_component_bbox(&vec![0u8; h * w], h, w), None);
    }

    #[test]
    fn identical_frames_and_masks_give_zero_fcd() {
        let (t, h, w) = (4, 16, 16);
        let mut video = VideoClip::zeros(3, t, h, w);
        let mut mask = MaskClip::zeros(t, h, w);
        for f in 0..t {
            paint_square(&mut video, &mut mask, f, 4, 4, 5, [0.8, 0.2, -0.5]);
        }
        let d = fcd(&[&video], &[&mask], &ToyFeatureExtractor).unwrap();
        assert!(d.abs() < 1e-9, "{d}");
    }

    #[test]
    fn translation_is_near_zero_but_color_change_is_not() {
        let (t, h, w) = (4, 16, 16);
        // Constant-color sprite translating on a flat background.
        let mut v1 = VideoClip::zeros(3, t, h, w);
        let mut m1 = MaskClip::zeros(t, h, w);
        for f in 0..t {
            paint_square(&mut v1, &mut m1, f, 4, 3 + f, 5, [0.9, 0.9, 0.9]);
        }
        let d_translate = fcd(&[&v1], &[&m1], &ToyFeatureExtractor).unwrap();
        assert!(d_translate < 1e-9, "{d_translate}");

        // Same motion but the sprite changes color every frame.
        let mut v2 = VideoClip::zeros(3, t, h, w);
        let mut m2 = MaskClip::zeros(t, h, w);
        for f in 0..t {
            let shade = 0.2 + 0.2 * f as f32;
            paint_square(&mut v2, &mut m2, f, 4, 3 + f, 5, [shade, shade, shade]);
        }
        let d_color = fcd(&[&v2], &[&m2], &ToyFeatureExtractor).unwrap();
        assert!(d_color > 0.05, "{d_color}");
    }

    #[test]
    fn empty_masks_are_an_error_and_empty_pairs_are_skipped() {
        let (t, h, w) = (3, 8, 8);
        let video = VideoClip::zeros(3, t, h, w);
        let empty = MaskClip::zeros(t, h, w);
        assert!(matches!(
            fcd(&[&video], &[&empty], &ToyFeatureExtractor),
            Err(MetricsError::Empty(_))
        ));

        // Middle frame empty: only no pair survives for t=3 frames
        // (pairs (0,1) and (1,2) both touch the empty frame), so the video
        // drops out; with a populated companion video the metric still works.
        let mut gappy = MaskClip::zeros(t, h, w);
        let mut gv = VideoClip::zeros(3, t, h, w);
        paint_square(&mut gv, &mut gappy, 0, 2, 2, 3, [0.5, 0.5, 0.5]);
        paint_square(&mut gv, &mut gappy, 2, 2, 2, 3, [0.5, 0.5, 0.5]);
        assert!(fcd(&[&gv], &[&gappy], &ToyFeatureExtractor).is_err());

        let mut full_v = VideoClip::zeros(3, t, h, w);
        let mut full_m = MaskClip::zeros(t, h, w);
        for f in 0..t {
            paint_square(&mut full_v, &mut full_m, f, 2, 2, 3, [0.5, 0.5, 0.5]);
        }
        let d = fcd(&[&gv, &full_v], &[&gappy, &full_m], &ToyFeatureExtractor).unwrap();
        assert!(d.abs() < 1e-9);
    }

    #[test]
    fn toy_extractor_is_deterministic_with_fixed_length() {
        let p = [
            Plane::new(32, 32, (0..1024).map(|i| (i % 7) as f32 / 7.0).collect()),
            Plane::new(32, 32, (0..1024).map(|i| (i % 5) as f32 / 5.0).collect()),
            Plane::new(32, 32, (0..1024).map(|i| (i % 3) as f32 / 3.0).collect()),
        ];
        let ex = ToyFeatureExtractor;
        let f1 = ex.features(&p);
        let f2 = ex.features(&p);
        assert_eq!(f1, f2);
        assert_eq!(f1.len(), ex.feature_len());
    }
}

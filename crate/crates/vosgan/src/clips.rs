//! In-memory video, mask and flow clips plus conversions to network tensors.
//!
//! Clip layout is channel-major with the width axis contiguous:
//! `data[((c*T + t)*H + y)*W + x]`. Video samples live in [-1, 1]; masks are
//! strictly {0, 1}; flow holds two channels (u = horizontal displacement in
//! pixels, positive rightward; v = vertical, positive downward) where entry
//! `t` maps frame `t` onto frame `t+1`.

use thiserror::Error;

use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Error)]
pub enum ClipError {
    #[error("clip dimensions must be positive, got c={c} t={t} h={h} w={w}")]
    EmptyDims { c: usize, t: usize, h: usize, w: usize },
    #[error("buffer holds {got} values but {c}x{t}x{h}x{w} needs {need}")]
    LengthMismatch { got: usize, need: usize, c: usize, t: usize, h: usize, w: usize },
    #[error("video sample {value} at index {index} outside [-1, 1]")]
    OutOfRange { value: f32, index: usize },
    #[error("mask value {value} at index {index} is neither 0 nor 1")]
    NonBinaryMask { value: u8, index: usize },
}

/// RGB video clip, values in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    pub channels: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    data: Vec<f32>,
}

impl VideoClip {
    pub fn new(channels: usize, frames: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self, ClipError> {
        if channels == 0 || frames == 0 || height == 0 || width == 0 {
            return Err(ClipError::EmptyDims { c: channels, t: frames, h: height, w: width });
        }
        let need = channels * frames * height * width;
        if data.len() != need {
            return Err(ClipError::LengthMismatch {
                got: data.len(),
                need,
                c: channels,
                t: frames,
                h: height,
                w: width,
            });
        }
        for (i, &v) in data.iter().enumerate() {
            if !(-1.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(ClipError::OutOfRange { value: v, index: i });
            }
        }
        Ok(VideoClip { channels, frames, height, width, data })
    }

    pub fn zeros(channels: usize, frames: usize, height: usize, width: usize) -> Self {
        VideoClip {
            channels,
            frames,
            height,
            width,
            data: vec![0.0; channels * frames * height * width],
        }
    }

    #[inline]
    pub fn idx(&self, c: usize, t: usize, y: usize, x: usize) -> usize {
        ((c * self.frames + t) * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, t: usize, y: usize, x: usize) -> f32 {
        self.data[self.idx(c, t, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, t: usize, y: usize, x: usize, v: f32) {
        let i = self.idx(c, t, y, x);
        self.data[i] = v;
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// Per-frame grayscale in [0, 1] via Rec.601 luma after mapping samples
    /// back to [0, 1]. Single-channel clips pass through unchanged.
    pub fn luma01(&self, t: usize) -> Vec<f32> {
        let plane = self.height * self.width;
        let mut out = vec![0.0f32; plane];
        if self.channels >= 3 {
            for i in 0..plane {
                let y = i / self.width;
                let x = i % self.width;
                let r = (self.get(0, t, y, x) + 1.0) * 0.5;
                let g = (self.get(1, t, y, x) + 1.0) * 0.5;
                let b = (self.get(2, t, y, x) + 1.0) * 0.5;
                out[i] = 0.299 * r + 0.587 * g + 0.114 * b;
            }
        } else {
            for i in 0..plane {
                let y = i / self.width;
                let x = i % self.width;
                out[i] = (self.get(0, t, y, x) + 1.0) * 0.5;
            }
        }
        out
    }
}

/// Binary segmentation masks for each frame of a clip.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskClip {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    data: Vec<u8>,
}

impl MaskClip {
    pub fn new(frames: usize, height: usize, width: usize, data: Vec<u8>) -> Result<Self, ClipError> {
        if frames == 0 || height == 0 || width == 0 {
            return Err(ClipError::EmptyDims { c: 1, t: frames, h: height, w: width });
        }
        let need = frames * height * width;
        if data.len() != need {
            return Err(ClipError::LengthMismatch { got: data.len(), need, c: 1, t: frames, h: height, w: width });
        }
        for (i, &v) in data.iter().enumerate() {
            if v > 1 {
                return Err(ClipError::NonBinaryMask { value: v, index: i });
            }
        }
        Ok(MaskClip { frames, height, width, data })
    }

    pub fn zeros(frames: usize, height: usize, width: usize) -> Self {
        MaskClip { frames, height, width, data: vec![0; frames * height * width] }
    }

    #[inline]
    pub fn idx(&self, t: usize, y: usize, x: usize) -> usize {
        (t * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, t: usize, y: usize, x: usize) -> u8 {
        self.data[self.idx(t, y, x)]
    }

    #[inline]
    pub fn set(&mut self, t: usize, y: usize, x: usize, v: u8) {
        debug_assert!(v <= 1);
        let i = self.idx(t, y, x);
        self.data[i] = v;
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    /// One frame as a borrowed H*W slice.
    pub fn frame(&self, t: usize) -> &[u8] {
        let plane = self.height * self.width;
        &self.data[t * plane..(t + 1) * plane]
    }
}

/// Dense optical flow for a clip; entry t displaces frame t onto frame t+1,
/// with the final entry duplicating its predecessor so every frame has one.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowClip {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Layout data[((c*T + t)*H + y)*W + x], c in {0: u, 1: v}.
    data: Vec<f32>,
}

impl FlowClip {
    pub fn new(frames: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self, ClipError> {
        if frames == 0 || height == 0 || width == 0 {
            return Err(ClipError::EmptyDims { c: 2, t: frames, h: height, w: width });
        }
        let need = 2 * frames * height * width;
        if data.len() != need {
            return Err(ClipError::LengthMismatch { got: data.len(), need, c: 2, t: frames, h: height, w: width });
        }
        Ok(FlowClip { frames, height, width, data })
    }

    pub fn zeros(frames: usize, height: usize, width: usize) -> Self {
        FlowClip { frames, height, width, data: vec![0.0; 2 * frames * height * width] }
    }

    #[inline]
    pub fn idx(&self, c: usize, t: usize, y: usize, x: usize) -> usize {
        ((c * self.frames + t) * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, t: usize, y: usize, x: usize) -> f32 {
        self.data[self.idx(c, t, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, t: usize, y: usize, x: usize, v: f32) {
        let i = self.idx(c, t, y, x);
        self.data[i] = v;
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
}

/// Stacks clips into a network tensor (N, C, T, H, W).
pub fn videos_to_tensor<T: Scalar>(clips: &[&VideoClip]) -> Tensor<T> {
    assert!(!clips.is_empty());
    let (c, t, h, w) = (clips[0].channels, clips[0].frames, clips[0].height, clips[0].width);
    let mut out = Tensor::zeros(&[clips.len(), c, t, h, w]);
    for (n, clip) in clips.iter().enumerate() {
        assert_eq!(
            (clip.channels, clip.frames, clip.height, clip.width),
            (c, t, h, w),
            "all clips in a batch must share dims"
        );
        let dst = &mut out.data_mut()[n * c * t * h * w..(n + 1) * c * t * h * w];
        for (d, &srcv) in dst.iter_mut().zip(clip.data()) {
            *d = T::from_f64(srcv as f64);
        }
    }
    out
}

/// One network sample (3, T, H, W) back into a clip, clamping to [-1, 1].
pub fn tensor_to_video<T: Scalar>(t: &Tensor<T>, n: usize) -> VideoClip {
    assert_eq!(t.shape().len(), 5);
    let (c, d, h, w) = (t.shape()[1], t.shape()[2], t.shape()[3], t.shape()[4]);
    let len = c * d * h * w;
    let data: Vec<f32> = t.data()[n * len..(n + 1) * len]
        .iter()
        .map(|v| (v.to_f64() as f32).clamp(-1.0, 1.0))
        .collect();
    VideoClip { channels: c, frames: d, height: h, width: w, data }
}

/// Masks as a (N, 1, T, H, W) tensor of 0/1 values.
pub fn masks_to_tensor<T: Scalar>(masks: &[&MaskClip]) -> Tensor<T> {
    assert!(!masks.is_empty());
    let (t, h, w) = (masks[0].frames, masks[0].height, masks[0].width);
    let mut out = Tensor::zeros(&[masks.len(), 1, t, h, w]);
    for (n, m) in masks.iter().enumerate() {
        assert_eq!((m.frames, m.height, m.width), (t, h, w));
        let dst = &mut out.data_mut()[n * t * h * w..(n + 1) * t * h * w];
        for (d, &v) in dst.iter_mut().zip(m.data()) {
            *d = if v > 0 { T::ONE } else { T::ZERO };
        }
    }
    out
}

/// One (1, T, H, W) network sample thresholded at 0.5 into a binary mask.
pub fn tensor_to_mask<T: Scalar>(t: &Tensor<T>, n: usize, threshold: f64) -> MaskClip {
    assert_eq!(t.shape().len(), 5);
    assert_eq!(t.shape()[1], 1, "mask tensors have one channel");
    let (d, h, w) = (t.shape()[2], t.shape()[3], t.shape()[4]);
    let len = d * h * w;
    let data: Vec<u8> = t.data()[n * len..(n + 1) * len]
        .iter()
        .map(|v| u8::from(v.to_f64() >= threshold))
        .collect();
    MaskClip { frames: d, height: h, width: w, data }
}

/// Flows as a (N, 2, T, H, W) tensor, optionally transformed per value.
pub fn flows_to_tensor<T: Scalar>(flows: &[&FlowClip], map: impl Fn(f32) -> f32) -> Tensor<T> {
    assert!(!flows.is_empty());
    let (t, h, w) = (flows[0].frames, flows[0].height, flows[0].width);
    let mut out = Tensor::zeros(&[flows.len(), 2, t, h, w]);
    let len = 2 * t * h * w;
    for (n, f) in flows.iter().enumerate() {
        assert_eq!((f.frames, f.height, f.width), (t, h, w));
        let dst = &mut out.data_mut()[n * len..(n + 1) * len];
        for (d, &v) in dst.iter_mut().zip(f.data()) {
            *d = T::from_f64(map(v) as f64);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn video_rejects_out_of_range_and_bad_length() {
        assert!(VideoClip::new(3, 2, 4, 4, vec![0.0; 3 * 2 * 4 * 4]).is_ok());
        assert!(matches!(
            VideoClip::new(3, 2, 4, 4, vec![0.0; 5]),
            Err(ClipError::LengthMismatch { .. })
        ));
        let mut bad = vec![0.0; 3 * 2 * 4 * 4];
        bad[7] = 1.5;
        assert!(matches!(VideoClip::new(3, 2, 4, 4, bad), Err(ClipError::OutOfRange { index: 7, .. })));
    }

    #[test]
    fn mask_rejects_non_binary() {
        let mut bad = vec![0u8; 2 * 3 * 3];
        bad[4] = 2;
        assert!(matches!(MaskClip::new(2, 3, 3, bad), Err(ClipError::NonBinaryMask { index: 4, .. })));
    }

    #[test]
    fn tensor_round_trip_preserves_layout() {
        let mut clip = VideoClip::zeros(3, 2, 3, 4);
        clip.set(1, 1, 2, 3, 0.5);
        clip.set(2, 0, 0, 0, -0.25);
        let t: Tensor<f32> = videos_to_tensor(&[&clip]);
        assert_eq!(t.shape(), &[1, 3, 2, 3, 4]);
        assert_eq!(t.at5(0, 1, 1, 2, 3), 0.5);
        assert_eq!(t.at5(0, 2, 0, 0, 0), -0.25);
        let back = tensor_to_video(&t, 0);
        assert_eq!(back, clip);
    }

    #[test]
    fn luma_weights_sum_to_gray() {
        let mut clip = VideoClip::zeros(3, 1, 1, 1);
        // Pure white in [-1,1] is 1.0 on every channel -> luma 1.0.
        clip.set(0, 0, 0, 0, 1.0);
        clip.set(1, 0, 0, 0, 1.0);
        clip.set(2, 0, 0, 0, 1.0);
        let l = clip.luma01(0);
        assert!((l[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn mask_threshold_is_inclusive_at_half() {
        let t = Tensor::from_vec(&[1, 1, 1, 1, 3], vec![0.49f32, 0.5, 0.51]);
        let m = tensor_to_mask(&t, 0, 0.5);
        assert_eq!(m.data(), &[0, 1, 1]);
    }
}

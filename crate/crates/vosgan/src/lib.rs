//! Adversarial video generation with self-supervised video object segmentation.
//!
//! The crate trains a two-stream video generator (static background, moving
//! foreground plus mask) against a three-headed discriminator whose auxiliary
//! heads predict per-pixel segmentation and dense optical flow. The
//! discriminator's motion head doubles as an unsupervised video object
//! segmenter once training ends.
//!
//! Everything runs on CPU. Networks are built on a small tape-based autodiff
//! engine ([`autodiff`]) over a dense row-major [`tensor::Tensor`], generic
//! over `f32`/`f64` so gradient checks can run in double precision while
//! training stays in single precision.

pub mod autodiff;
pub mod clips;
pub mod data;
pub mod latent;
pub mod metrics;
pub mod net;
pub mod objectives;
pub mod optflow;
pub mod plane;
pub mod tensor;
pub mod train;

//! `vosgan metrics {fcd,fid,is}`.
//!
//! FCD follows the foreground-crop definition; FID fits Gaussians to
//! whole-frame features of two datasets; IS needs an extractor exposing a
//! class distribution.

use std::path::PathBuf;

use clap::Subcommand;
use vosgan::clips::{MaskClip, VideoClip};
use vosgan::data::{ClipStore, Split};
use vosgan::metrics::{fcd, frechet_distance, inception_score, FeatureExtractor, GaussianStats};
use vosgan::plane::Plane;

use crate::cmd_seg::parse_split;
use crate::external::parse_extractor;
use crate::{emit, CliError, CliResult};

#[derive(Subcommand)]
pub enum MetricsCmd {
    /// Foreground content distance over one dataset split.
    Fcd {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "toy")]
        extractor: String,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Frechet distance between frame features of two datasets.
    Fid {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        fake: PathBuf,
        #[arg(long, default_value = "toy")]
        extractor: String,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Inception score of one dataset split.
    Is {
        #[arg(long)]
        data: PathBuf,
        /// Must expose class probabilities (external:PATH).
        #[arg(long)]
        extractor: String,
        #[arg(long, default_value = "test")]
        split: String,
    },
}

fn load_split(root: &PathBuf, split: Split) -> CliResult<(Vec<VideoClip>, Vec<MaskClip>)> {
    let store = ClipStore::open(root)?;
    let names = store.names(split);
    if names.is_empty() {
        return Err(CliError::Runtime(format!("split {split:?} of {} is empty", root.display())));
    }
    let mut videos = Vec::with_capacity(names.len());
    let mut masks = Vec::with_capacity(names.len());
    for name in &names {
        videos.push(store.load_video(name)?);
        masks.push(store.load_mask(name)?);
    }
    Ok((videos, masks))
}

/// A whole frame as [0,1] RGB planes at the extractor's input size.
fn frame_planes(video: &VideoClip, t: usize, size: (usize, usize)) -> [Plane; 3] {
    let (h, w) = (video.height, video.width);
    let mut planes = [Plane::zeros(h, w), Plane::zeros(h, w), Plane::zeros(h, w)];
    for (c, plane) in planes.iter_mut().enumerate() {
        let src = c.min(video.channels - 1);
        for y in 0..h {
            for x in 0..w {
                plane.set(y, x, ((video.get(src, t, y, x) + 1.0) / 2.0).clamp(0.0, 1.0));
            }
        }
    }
    [planes[0].resize(size.0, size.1), planes[1].resize(size.0, size.1), planes[2].resize(size.0, size.1)]
}

fn frame_features(root: &PathBuf, split: Split, ex: &dyn FeatureExtractor) -> CliResult<Vec<Vec<f64>>> {
    let store = ClipStore::open(root)?;
    let names = store.names(split);
    if names.is_empty() {
        return Err(CliError::Runtime(format!("split {split:?} of {} is empty", root.display())));
    }
    let mut feats = Vec::new();
    for name in &names {
        let video = store.load_video(name)?;
        for t in 0..video.frames {
            feats.push(ex.features(&frame_planes(&video, t, ex.input_size())));
        }
    }
    Ok(feats)
}

pub fn run(cmd: MetricsCmd) -> CliResult<()> {
    match cmd {
        MetricsCmd::Fcd { data, extractor, split } => {
            let ex = parse_extractor(&extractor)?;
            let sp = parse_split(&split)?;
            let (videos, masks) = load_split(&data, sp)?;
            let vrefs: Vec<&VideoClip> = videos.iter().collect();
            let mrefs: Vec<&MaskClip> = masks.iter().collect();
            let value = fcd(&vrefs, &mrefs, ex.as_ref())?;
            emit(&serde_json::json!({ "fcd": value, "clips": videos.len(), "split": split }));
            Ok(())
        }
        MetricsCmd::Fid { real, fake, extractor, split } => {
            let ex = parse_extractor(&extractor)?;
            let sp = parse_split(&split)?;
            let fr = frame_features(&real, sp, ex.as_ref())?;
            let ff = frame_features(&fake, sp, ex.as_ref())?;
            let value = frechet_distance(
                &GaussianStats::from_samples(&fr)?,
                &GaussianStats::from_samples(&ff)?,
            )?;
            emit(&serde_json::json!({
                "fid": value,
                "real_frames": fr.len(),
                "fake_frames": ff.len(),
            }));
            Ok(())
        }
        MetricsCmd::Is { data, extractor, split } => {
            let ex = parse_extractor(&extractor)?;
            let sp = parse_split(&split)?;
            let store = ClipStore::open(&data)?;
            let names = store.names(sp);
            if names.is_empty() {
                return Err(CliError::Runtime(format!("split {split:?} is empty")));
            }
            let mut probs = Vec::new();
            for name in &names {
                let video = store.load_video(name)?;
                for t in 0..video.frames {
                    match ex.class_probs(&frame_planes(&video, t, ex.input_size())) {
                        Some(p) => probs.push(p),
                        None => {
                            return Err(CliError::Config(format!(
                                "extractor {extractor:?} exposes no class distribution; IS needs external:PATH with classes"
                            )))
                        }
                    }
                }
            }
            let value = inception_score(&probs)?;
            emit(&serde_json::json!({ "is": value, "frames": probs.len() }));
            Ok(())
        }
    }
}

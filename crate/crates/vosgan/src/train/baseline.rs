//! Motion-magnitude thresholding: the classical unsupervised segmenter the
//! learned ones have to beat. A threshold is grid-searched on the training
//! split's masks and then applied, fixed, to the test split.

use serde::Serialize;

use super::config::ConfigError;
use super::TrainError;
use crate::clips::{FlowClip, MaskClip};
use crate::data::{ClipStore, Split};
use crate::metrics::{
    aggregate, contour_accuracy_f, default_f_tolerance, region_similarity_j, Aggregate,
    SequenceScores,
};
use crate::optflow::FarnebackParams;

#[derive(Debug, Clone, Serialize)]
pub enum FlowSource {
    /// Farneback flow computed from the video (cached by the store).
    Computed(FarnebackParams),
    /// The dataset's exact flow annotations.
    GroundTruth,
}

impl FlowSource {
    fn load(&self, data: &ClipStore, name: &str) -> Result<FlowClip, TrainError> {
        Ok(match self {
            FlowSource::Computed(p) => data.computed_flow(name, p)?,
            FlowSource::GroundTruth => data.load_flow_gt(name)?,
        })
    }
}

/// 1/8 px steps up to 8 px.
pub fn default_threshold_grid() -> Vec<f64> {
    (1..=64).map(|k| k as f64 / 8.0).collect()
}

/// Foreground wherever the flow magnitude strictly exceeds `threshold`.
pub fn predict_masks(flow: &FlowClip, threshold: f64) -> MaskClip {
    let (t_n, h, w) = (flow.frames, flow.height, flow.width);
    let mut mask = MaskClip::zeros(t_n, h, w);
    for t in 0..t_n {
        for y in 0..h {
            for x in 0..w {
                let u = flow.get(0, t, y, x) as f64;
                let v = flow.get(1, t, y, x) as f64;
                if u * u + v * v > threshold * threshold {
                    mask.set(t, y, x, 1);
                }
            }
        }
    }
    mask
}

#[derive(Debug, Clone, Serialize)]
pub struct BaselineReport {
    /// Grid argmax of mean J on the training split; first maximum wins.
    pub threshold: f64,
    pub train_mean_j: f64,
    pub test_j: Aggregate,
    pub test_f: Aggregate,
}

fn mean_frame_j(pred: &MaskClip, gt: &MaskClip) -> Result<f64, TrainError> {
    let mut sum = 0.0;
    for t in 0..gt.frames {
        sum += region_similarity_j(pred.frame(t), gt.frame(t), gt.height, gt.width)?;
    }
    Ok(sum / gt.frames as f64)
}

pub fn flow_threshold_baseline(
    data: &ClipStore,
    source: &FlowSource,
    grid: &[f64],
    tau: f64,
) -> Result<BaselineReport, TrainError> {
    if grid.is_empty() {
        return Err(ConfigError::Invalid("threshold grid is empty".into()).into());
    }
    let train = data.names(Split::Train);
    let test = data.names(Split::Test);
    for (split, names) in [(Split::Train, &train), (Split::Test, &test)] {
        if names.is_empty() {
            return Err(TrainError::Empty(format!("split {split:?} has no clips")));
        }
    }

    // Flows are loaded once; the grid sweep reuses them.
    let mut grid_scores = vec![0.0; grid.len()];
    for name in &train {
        let flow = source.load(data, name)?;
        let gt = data.load_mask(name)?;
        for (gi, &thr) in grid.iter().enumerate() {
            grid_scores[gi] += mean_frame_j(&predict_masks(&flow, thr), &gt)?;
        }
    }
    for s in &mut grid_scores {
        *s /= train.len() as f64;
    }
    let mut best = 0;
    for gi in 1..grid.len() {
        if grid_scores[gi] > grid_scores[best] {
            best = gi;
        }
    }
    let threshold = grid[best];

    let mut j_scores = Vec::with_capacity(test.len());
    let mut f_scores = Vec::with_capacity(test.len());
    for name in &test {
        let flow = source.load(data, name)?;
        let gt = data.load_mask(name)?;
        let pred = predict_masks(&flow, threshold);
        let tol = default_f_tolerance(gt.height, gt.width);
        let mut j = SequenceScores { id: name.clone(), frames: Vec::with_capacity(gt.frames) };
        let mut f = SequenceScores { id: name.clone(), frames: Vec::with_capacity(gt.frames) };
        for t in 0..gt.frames {
            j.frames.push(region_similarity_j(pred.frame(t), gt.frame(t), gt.height, gt.width)?);
            f.frames.push(contour_accuracy_f(pred.frame(t), gt.frame(t), gt.height, gt.width, tol)?);
        }
        j_scores.push(j);
        f_scores.push(f);
    }

    Ok(BaselineReport {
        threshold,
        train_mean_j: grid_scores[best],
        test_j: aggregate(&j_scores, tau)?,
        test_f: aggregate(&f_scores, tau)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_dataset, SpriteSceneSpec};

    fn tiny_dataset(dir: &std::path::Path, n: usize, max_speed: i32) -> ClipStore {
        let spec = SpriteSceneSpec {
            seed: 31,
            height: 16,
            width: 16,
            frames: 8,
            max_speed,
            ..SpriteSceneSpec::default()
        };
        synth_dataset(&spec, n, dir).unwrap();
        ClipStore::open(dir).unwrap()
    }

    #[test]
    fn exact_flow_thresholding_recovers_the_masks() {
        let dir = tempfile::tempdir().unwrap();
        let data = tiny_dataset(dir.path(), 10, 2);
        let report =
            flow_threshold_baseline(&data, &FlowSource::GroundTruth, &default_threshold_grid(), 0.5)
                .unwrap();
        // Sprites always move, so any sub-speed threshold is exact.
        assert!(report.threshold < 1.0, "threshold {}", report.threshold);
        assert!(report.train_mean_j > 0.999, "train J {}", report.train_mean_j);
        assert!(report.test_j.mean > 0.9, "test J {}", report.test_j.mean);
        assert_eq!(report.test_j.recall, 1.0);
    }

    #[test]
    fn computed_flow_stays_in_range_and_picks_a_grid_point() {
        let dir = tempfile::tempdir().unwrap();
        let data = tiny_dataset(dir.path(), 5, 2);
        let source = FlowSource::Computed(FarnebackParams::default());
        let report =
            flow_threshold_baseline(&data, &source, &default_threshold_grid(), 0.5).unwrap();
        assert!(default_threshold_grid().contains(&report.threshold));
        assert!((0.0..=1.0).contains(&report.train_mean_j));
        assert!((0.0..=1.0).contains(&report.test_j.mean));
    }

    #[test]
    fn zero_flow_predicts_no_foreground() {
        let flow = FlowClip::zeros(4, 8, 8);
        let mask = predict_masks(&flow, 0.125);
        assert!(mask.data().iter().all(|&v| v == 0));
    }

    #[test]
    fn singleton_grid_reproduces_the_stored_training_score() {
        let dir = tempfile::tempdir().unwrap();
        let data = tiny_dataset(dir.path(), 8, 3);
        let full =
            flow_threshold_baseline(&data, &FlowSource::GroundTruth, &default_threshold_grid(), 0.5)
                .unwrap();
        let redo =
            flow_threshold_baseline(&data, &FlowSource::GroundTruth, &[full.threshold], 0.5)
                .unwrap();
        assert_eq!(redo.threshold, full.threshold);
        assert_eq!(redo.train_mean_j.to_bits(), full.train_mean_j.to_bits());
    }

    #[test]
    fn degenerate_splits_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        // One clip lands entirely in the test split.
        let data = tiny_dataset(dir.path(), 1, 2);
        let err =
            flow_threshold_baseline(&data, &FlowSource::GroundTruth, &default_threshold_grid(), 0.5)
                .unwrap_err();
        assert!(matches!(err, TrainError::Empty(_)), "{err}");
    }
}

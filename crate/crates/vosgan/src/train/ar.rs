//! Action recognition on top of the discriminator: a linear probe over its
//! frozen transfer features, or whole-network fine-tuning with a fresh
//! softmax head. The toy task is three sprite motion directions.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{ActionMode, ActionTrainConfig, ConfigError};
use super::log::{csv_f64, write_json, CsvLog};
use super::opt::{Plateau, Sgd};
use super::TrainError;
use crate::autodiff::{Graph, VarStore};
use crate::clips::{videos_to_tensor, VideoClip};
use crate::data::{synth_directed_clip, Checkpoint, SpriteSceneSpec};
use crate::net::{ActionClassifier, Discriminator, LinearProbe, NetProfile};
use crate::objectives::cross_entropy;
use crate::tensor::Tensor;

const LOG_HEADER: &[&str] = &["epoch", "loss", "lr"];

/// Class -> constant sprite velocity, scaled so motion spans the same
/// fraction of the frame at every profile size.
pub fn direction_velocity(class: usize, speed: i32) -> (i32, i32) {
    match class {
        0 => (speed, 0),
        1 => (-speed, 0),
        2 => (speed, speed),
        _ => panic!("only 3 directions exist"),
    }
}

#[derive(Debug, Clone)]
pub struct DirectionDataset {
    pub videos: Vec<VideoClip>,
    pub labels: Vec<usize>,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub n_classes: usize,
}

/// Balanced 3-class direction clips with a stratified 80/20 split.
pub fn make_direction_dataset(profile: &NetProfile, per_class: usize, seed: u64) -> DirectionDataset {
    assert!(per_class >= 2, "a stratified split needs 2+ clips per class");
    let speed = (profile.spatial as i32 / 16).max(1);
    let spec = SpriteSceneSpec {
        seed,
        height: profile.spatial,
        width: profile.spatial,
        frames: profile.frames,
        n_sprites: (1, 1),
        max_speed: speed,
        ..SpriteSceneSpec::default()
    };
    let n_classes = 3;
    let mut videos = Vec::with_capacity(n_classes * per_class);
    let mut labels = Vec::with_capacity(n_classes * per_class);
    for class in 0..n_classes {
        let v = direction_velocity(class, speed);
        for i in 0..per_class {
            let (video, _, _) = synth_directed_clip(&spec, (class * per_class + i) as u64, v);
            videos.push(video);
            labels.push(class);
        }
    }
    // The split stream is far from any clip index stream.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let per_train = ((per_class * 4) / 5).clamp(1, per_class - 1);
    let (mut train_idx, mut test_idx) = (Vec::new(), Vec::new());
    for class in 0..n_classes {
        let mut idx: Vec<usize> = (class * per_class..(class + 1) * per_class).collect();
        idx.shuffle(&mut rng);
        train_idx.extend_from_slice(&idx[..per_train]);
        test_idx.extend_from_slice(&idx[per_train..]);
    }
    DirectionDataset { videos, labels, train_idx, test_idx, n_classes }
}

#[derive(Debug, Clone, Serialize)]
pub struct ActionReport {
    pub mode: ActionMode,
    /// Ratio correct/total on the test indices.
    pub accuracy: f64,
    pub epochs_run: usize,
    pub final_lr: f64,
    pub checkpoint: PathBuf,
    pub log_path: PathBuf,
}

fn gather_rows(t: &Tensor<f32>, idx: &[usize]) -> Tensor<f32> {
    let d = t.shape()[1];
    let mut out = Tensor::zeros(&[idx.len(), d]);
    for (r, &i) in idx.iter().enumerate() {
        out.data_mut()[r * d..(r + 1) * d].copy_from_slice(&t.data()[i * d..(i + 1) * d]);
    }
    out
}

fn accuracy_of(probs: &Tensor<f32>, labels: &[usize]) -> f64 {
    let k = probs.shape()[1];
    let mut correct = 0usize;
    for (i, &label) in labels.iter().enumerate() {
        let row = &probs.data()[i * k..(i + 1) * k];
        let mut arg = 0;
        for j in 1..k {
            if row[j] > row[arg] {
                arg = j;
            }
        }
        correct += usize::from(arg == label);
    }
    correct as f64 / labels.len() as f64
}

fn load_disc(
    disc_ckpt: Option<&Path>,
    profile: &NetProfile,
    seed: u64,
) -> Result<(Discriminator, VarStore<f32>, Option<Checkpoint>), TrainError> {
    match disc_ckpt {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            if ckpt.manifest.kind != "gan" {
                return Err(TrainError::MissingSource(format!(
                    "expected a gan checkpoint, got {:?}",
                    ckpt.manifest.kind
                )));
            }
            let (disc, store) = super::gan::discriminator_from_checkpoint(&ckpt, profile)?;
            Ok((disc, store, Some(ckpt)))
        }
        None => {
            let mut store = VarStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let disc = Discriminator::new(&mut store, profile, &mut rng);
            Ok((disc, store, None))
        }
    }
}

/// Frozen-discriminator features for every clip, in dataset order.
fn all_features(
    disc: &Discriminator,
    store: &VarStore<f32>,
    videos: &[VideoClip],
    batch: usize,
) -> Tensor<f32> {
    let mut rows: Vec<f32> = Vec::new();
    let mut d = 0;
    for chunk in videos.chunks(batch.max(1)) {
        let refs: Vec<&VideoClip> = chunk.iter().collect();
        let f = disc.extract_features(store, videos_to_tensor(&refs));
        d = f.shape()[1];
        rows.extend_from_slice(f.data());
    }
    Tensor::from_vec(&[videos.len(), d], rows)
}

pub fn train_action_classifier(
    cfg: &ActionTrainConfig,
    dataset: &DirectionDataset,
    disc_ckpt: Option<&Path>,
    out_dir: &Path,
) -> Result<ActionReport, TrainError> {
    cfg.validate()?;
    if cfg.n_classes != dataset.n_classes {
        return Err(ConfigError::Invalid(format!(
            "config says {} classes but the dataset has {}",
            cfg.n_classes, dataset.n_classes
        ))
        .into());
    }
    if dataset.train_idx.is_empty() || dataset.test_idx.is_empty() {
        return Err(TrainError::Empty("direction dataset has an empty split".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    write_json(
        &out_dir.join("run.json"),
        &serde_json::json!({
            "kind": "action",
            "config": cfg,
            "source": disc_ckpt.map(|p| p.display().to_string()),
            "clips": dataset.videos.len(),
        }),
    )?;
    let log_path = out_dir.join("train_log.csv");
    let ckpt_path = out_dir.join("action.vosc");
    let mut log = CsvLog::create(&log_path, LOG_HEADER)?;
    let mut plateau = Plateau::new(0.1, cfg.plateau_patience, false);
    let feature_batch = cfg.batch.min(16);

    let test_labels: Vec<usize> = dataset.test_idx.iter().map(|&i| dataset.labels[i]).collect();
    let (accuracy, final_lr, store) = match cfg.mode {
        ActionMode::TransferLinear => {
            let (disc, dstore, _) = load_disc(disc_ckpt, &cfg.profile, cfg.seed)?;
            let features = all_features(&disc, &dstore, &dataset.videos, feature_batch);
            let mut store = VarStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let probe = LinearProbe::new(&mut store, features.shape()[1], cfg.n_classes, &mut rng);
            let mut sgd =
                Sgd::new(cfg.lr, cfg.momentum, cfg.dampening, cfg.weight_decay, store.param_ids());
            for epoch in 1..=cfg.epochs {
                let mut erng = ChaCha8Rng::seed_from_u64(cfg.seed);
                erng.set_stream(epoch as u64);
                let mut order = dataset.train_idx.clone();
                order.shuffle(&mut erng);
                let mut sum = 0.0;
                let mut batches = 0;
                for chunk in order.chunks(cfg.batch) {
                    let labels: Vec<usize> = chunk.iter().map(|&i| dataset.labels[i]).collect();
                    let mut g = Graph::new(true);
                    let x = g.constant(gather_rows(&features, chunk));
                    let p = probe.forward(&mut g, &store, x);
                    let loss = cross_entropy(&mut g, p, &labels);
                    sum += g.value(loss).data()[0] as f64;
                    batches += 1;
                    let grads = g.backward(loss);
                    sgd.step(&mut store, &grads);
                }
                let epoch_loss = sum / batches as f64;
                sgd.lr *= plateau.observe(epoch_loss);
                log.row(&[epoch.to_string(), csv_f64(epoch_loss), csv_f64(sgd.lr)])?;
            }
            log.flush()?;
            let mut g = Graph::new(false);
            let x = g.constant(gather_rows(&features, &dataset.test_idx));
            let p = probe.forward(&mut g, &store, x);
            (accuracy_of(g.value(p), &test_labels), sgd.lr, store)
        }
        ActionMode::FinetuneSoftmax => {
            let mut store = VarStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let clf = ActionClassifier::new(&mut store, &cfg.profile, cfg.n_classes, &mut rng);
            if let Some(path) = disc_ckpt {
                let ckpt = Checkpoint::load(path)?;
                if ckpt.manifest.kind != "gan" {
                    return Err(TrainError::MissingSource(format!(
                        "expected a gan checkpoint, got {:?}",
                        ckpt.manifest.kind
                    )));
                }
                // The fresh class head has no counterpart in the checkpoint.
                ckpt.load_into_store(&mut store, false)?;
            }
            let mut sgd =
                Sgd::new(cfg.lr, cfg.momentum, cfg.dampening, cfg.weight_decay, store.param_ids());
            for epoch in 1..=cfg.epochs {
                let mut erng = ChaCha8Rng::seed_from_u64(cfg.seed);
                erng.set_stream(epoch as u64);
                let mut order = dataset.train_idx.clone();
                order.shuffle(&mut erng);
                let mut sum = 0.0;
                let mut batches = 0;
                for chunk in order.chunks(cfg.batch) {
                    let refs: Vec<&VideoClip> = chunk.iter().map(|&i| &dataset.videos[i]).collect();
                    let labels: Vec<usize> = chunk.iter().map(|&i| dataset.labels[i]).collect();
                    let mut g = Graph::new(true);
                    let x = g.constant(videos_to_tensor(&refs));
                    let p = clf.forward(&mut g, &store, x);
                    let loss = cross_entropy(&mut g, p, &labels);
                    sum += g.value(loss).data()[0] as f64;
                    batches += 1;
                    let grads = g.backward(loss);
                    sgd.step(&mut store, &grads);
                    for u in g.take_stat_updates() {
                        u.apply(&mut store);
                    }
                }
                let epoch_loss = sum / batches as f64;
                sgd.lr *= plateau.observe(epoch_loss);
                log.row(&[epoch.to_string(), csv_f64(epoch_loss), csv_f64(sgd.lr)])?;
            }
            log.flush()?;
            let mut correct_weighted = 0.0;
            for chunk in dataset.test_idx.chunks(feature_batch) {
                let refs: Vec<&VideoClip> = chunk.iter().map(|&i| &dataset.videos[i]).collect();
                let labels: Vec<usize> = chunk.iter().map(|&i| dataset.labels[i]).collect();
                let mut g = Graph::new(false);
                let x = g.constant(videos_to_tensor(&refs));
                let p = clf.forward(&mut g, &store, x);
                correct_weighted += accuracy_of(g.value(p), &labels) * labels.len() as f64;
            }
            (correct_weighted / dataset.test_idx.len() as f64, sgd.lr, store)
        }
    };

    let extra = serde_json::json!({ "config": cfg, "accuracy": accuracy });
    let mut ckpt = Checkpoint::new("action", cfg.epochs, 0.0, cfg.seed, extra);
    ckpt.add_store(&store);
    ckpt.save(&ckpt_path)?;
    Ok(ActionReport {
        mode: cfg.mode,
        accuracy,
        epochs_run: cfg.epochs,
        final_lr,
        checkpoint: ckpt_path,
        log_path,
    })
}

//! The segmentation regimes and segmenter evaluation.
//!
//! Five ways to obtain a segmenter: trained from scratch on generator-made
//! masks (synthetic), lifted straight out of a trained discriminator
//! (adversarial), either of those fine-tuned on ground-truth masks, or a
//! supervised-from-scratch baseline. Only the label-consuming regimes ever
//! call the store's counted mask reader.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{ConfigError, SegRegime, SegTrainConfig};
use super::gan::{generator_from_checkpoint, synth_pairs};
use super::log::{csv_f64, write_json, CsvLog};
use super::opt::Adam;
use super::TrainError;
use crate::autodiff::{Graph, VarStore};
use crate::clips::{masks_to_tensor, videos_to_tensor, FlowClip, MaskClip, VideoClip};
use crate::data::{labeled_subset, Checkpoint, ClipStore, Split};
use crate::metrics::{
    aggregate, contour_accuracy_f, default_f_tolerance, endpoint_error, region_similarity_j,
    Aggregate, SequenceScores,
};
use crate::net::{NetProfile, Segmenter};
use crate::objectives::seg_nll;
use crate::optflow::denormalize_flow_value;
use crate::tensor::Tensor;

const LOG_HEADER: &[&str] = &["step", "epoch", "loss", "wall_ms"];

pub fn segmenter_from_checkpoint(
    ckpt: &Checkpoint,
    profile: &NetProfile,
) -> Result<(Segmenter, VarStore<f32>), TrainError> {
    let mut store = VarStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let seg = Segmenter::new(&mut store, profile, &mut rng);
    ckpt.load_into_store(&mut store, true)?;
    Ok((seg, store))
}

/// One sample of the flow head back into pixel units.
fn tensor_to_flow(t: &Tensor<f32>, n: usize, flow_max: f64) -> FlowClip {
    assert_eq!(t.shape().len(), 5);
    assert_eq!(t.shape()[1], 2);
    let (d, h, w) = (t.shape()[2], t.shape()[3], t.shape()[4]);
    let len = 2 * d * h * w;
    let mut flow = FlowClip::zeros(d, h, w);
    for (dst, &v) in flow.data_mut().iter_mut().zip(&t.data()[n * len..(n + 1) * len]) {
        *dst = denormalize_flow_value(v as f64, flow_max) as f32;
    }
    flow
}

#[derive(Debug, Clone, Serialize)]
pub struct SegRunReport {
    pub regime: SegRegime,
    pub epochs_run: usize,
    pub labeled_clips_used: usize,
    pub checkpoint: PathBuf,
    pub log_path: PathBuf,
}

struct SegTrainer {
    cfg: SegTrainConfig,
    seg: Segmenter,
    store: VarStore<f32>,
    adam: Adam<f32>,
    global_step: u64,
}

impl SegTrainer {
    fn new(cfg: &SegTrainConfig) -> Self {
        let mut store = VarStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let seg = Segmenter::new(&mut store, &cfg.profile, &mut rng);
        let adam = Adam::new(cfg.lr, cfg.beta1, cfg.beta2, store.param_ids());
        SegTrainer { cfg: cfg.clone(), seg, store, adam, global_step: 0 }
    }

    /// One BCE step on (videos, binary masks); applies its own stat updates.
    fn step(&mut self, videos: &Tensor<f32>, masks01: &Tensor<f32>) -> Result<f64, TrainError> {
        let mut g = Graph::new(true);
        let x = g.constant(videos.clone());
        let out = self.seg.forward(&mut g, &self.store, x);
        let loss = seg_nll(&mut g, out.seg, masks01);
        let value = g.value(loss).data()[0] as f64;
        if !value.is_finite() {
            return Err(TrainError::Log(format!(
                "non-finite segmentation loss at step {}",
                self.global_step
            )));
        }
        let grads = g.backward(loss);
        self.adam.step(&mut self.store, &grads);
        for u in g.take_stat_updates() {
            u.apply(&mut self.store);
        }
        self.global_step += 1;
        Ok(value)
    }

    fn save(&self, epoch: usize, out_path: &Path) -> Result<(), TrainError> {
        let extra = serde_json::json!({ "config": serde_json::to_value(&self.cfg).unwrap() });
        let mut ckpt = Checkpoint::new("segmenter", epoch, 0.0, self.cfg.seed, extra);
        ckpt.add_store(&self.store);
        ckpt.save(out_path)?;
        Ok(())
    }
}

fn load_source(
    trainer: &mut SegTrainer,
    regime: SegRegime,
    source: Option<&Path>,
) -> Result<Option<Checkpoint>, TrainError> {
    let want_kind = match regime {
        SegRegime::Synthetic | SegRegime::Adversarial | SegRegime::FinetuneAdversarial => "gan",
        SegRegime::FinetuneSynthetic => "segmenter",
        SegRegime::SupervisedBaseline => return Ok(None),
    };
    let path = source.ok_or_else(|| {
        TrainError::MissingSource(format!("regime {regime:?} needs a {want_kind} checkpoint"))
    })?;
    let ckpt = Checkpoint::load(path)?;
    if ckpt.manifest.kind != want_kind {
        return Err(TrainError::MissingSource(format!(
            "regime {regime:?} needs a {want_kind} checkpoint, got {:?}",
            ckpt.manifest.kind
        )));
    }
    // The synthetic regime keeps its random segmenter and only uses the
    // checkpoint's generator; every other regime inherits weights.
    if regime != SegRegime::Synthetic {
        ckpt.load_into_store(&mut trainer.store, true)?;
    }
    Ok(Some(ckpt))
}

/// Trains (or converts) a segmenter per the configured regime and writes
/// `segmenter.vosc` plus a step log into `out_dir`.
pub fn train_segmenter(
    cfg: &SegTrainConfig,
    data: &ClipStore,
    source: Option<&Path>,
    out_dir: &Path,
) -> Result<SegRunReport, TrainError> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let mut trainer = SegTrainer::new(cfg);
    let source_ckpt = load_source(&mut trainer, cfg.regime, source)?;
    if cfg.freeze_encoder {
        Segmenter::set_encoder_trainable(&mut trainer.store, false);
    }

    write_json(
        &out_dir.join("run.json"),
        &serde_json::json!({
            "kind": "segmenter",
            "config": cfg,
            "dataset": data.root(),
            "source": source.map(|p| p.display().to_string()),
        }),
    )?;
    let ckpt_path = out_dir.join("segmenter.vosc");
    let log_path = out_dir.join("train_log.csv");

    let (epochs_run, labeled_used) = match cfg.regime {
        SegRegime::Adversarial => {
            // The discriminator's motion stream is the segmenter; nothing to
            // train, nothing to read.
            CsvLog::create(&log_path, LOG_HEADER)?.flush()?;
            (0, 0)
        }
        SegRegime::Synthetic => {
            let gan = source_ckpt.expect("checked by load_source");
            let (gen, gen_store) = generator_from_checkpoint(&gan, &cfg.profile)?;
            let mut log = CsvLog::create(&log_path, LOG_HEADER)?;
            for epoch in 1..=cfg.epochs {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(epoch as u64);
                for _ in 0..cfg.synthetic_steps {
                    let started = Instant::now();
                    let (videos, masks01) =
                        synth_pairs(&gen, &gen_store, &cfg.profile, cfg.batch, &mut rng);
                    let loss = trainer.step(&videos, &masks01)?;
                    log.row(&[
                        trainer.global_step.to_string(),
                        epoch.to_string(),
                        csv_f64(loss),
                        started.elapsed().as_millis().to_string(),
                    ])?;
                }
                log.flush()?;
            }
            (cfg.epochs, 0)
        }
        SegRegime::FinetuneSynthetic | SegRegime::FinetuneAdversarial | SegRegime::SupervisedBaseline => {
            check_label_dims(cfg, data)?;
            let train_names = data.names(Split::Train);
            let labeled = labeled_subset(&train_names, cfg.label_fraction, cfg.seed);
            if labeled.is_empty() {
                return Err(TrainError::Empty(format!(
                    "label_fraction {} of {} training clips leaves nothing to train on",
                    cfg.label_fraction,
                    train_names.len()
                )));
            }
            let mut log = CsvLog::create(&log_path, LOG_HEADER)?;
            for epoch in 1..=cfg.epochs {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(epoch as u64);
                let mut order = labeled.clone();
                order.shuffle(&mut rng);
                for chunk in order.chunks(cfg.batch) {
                    let started = Instant::now();
                    let videos: Vec<VideoClip> =
                        chunk.iter().map(|n| data.load_video(n)).collect::<Result<_, _>>()?;
                    let masks: Vec<MaskClip> =
                        chunk.iter().map(|n| data.load_mask(n)).collect::<Result<_, _>>()?;
                    let vrefs: Vec<&_> = videos.iter().collect();
                    let mrefs: Vec<&_> = masks.iter().collect();
                    let loss = trainer.step(&videos_to_tensor(&vrefs), &masks_to_tensor(&mrefs))?;
                    log.row(&[
                        trainer.global_step.to_string(),
                        epoch.to_string(),
                        csv_f64(loss),
                        started.elapsed().as_millis().to_string(),
                    ])?;
                }
                log.flush()?;
            }
            (cfg.epochs, labeled.len())
        }
    };

    trainer.save(epochs_run, &ckpt_path)?;
    Ok(SegRunReport {
        regime: cfg.regime,
        epochs_run,
        labeled_clips_used: labeled_used,
        checkpoint: ckpt_path,
        log_path,
    })
}

fn check_label_dims(cfg: &SegTrainConfig, data: &ClipStore) -> Result<(), TrainError> {
    let m = &data.manifest;
    let want = (3, cfg.profile.spatial, cfg.profile.spatial, cfg.profile.frames);
    let got = (m.channels, m.height, m.width, m.frames);
    if want != got {
        return Err(ConfigError::Invalid(format!(
            "dataset is (c,h,w,t)={got:?} but the profile needs {want:?}"
        ))
        .into());
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct SegEvalReport {
    pub j: Aggregate,
    pub f: Aggregate,
    /// Mean over clips of the masked endpoint error, in pixels; None when
    /// the dataset carries no ground-truth flow.
    pub epe: Option<f64>,
    pub sequences: usize,
}

/// Runs the segmenter over one split and scores it against ground truth.
/// Thresholds at 0.5; aggregates use recall threshold `tau`.
pub fn evaluate_segmenter(
    seg: &Segmenter,
    store: &VarStore<f32>,
    data: &ClipStore,
    split: Split,
    flow_max: f64,
    tau: f64,
) -> Result<SegEvalReport, TrainError> {
    let names = data.names(split);
    if names.is_empty() {
        return Err(TrainError::Empty(format!("split {split:?} has no clips")));
    }
    let mut j_scores = Vec::with_capacity(names.len());
    let mut f_scores = Vec::with_capacity(names.len());
    let mut epes = Vec::new();
    for name in &names {
        let video = data.load_video(name)?;
        let gt = data.load_mask(name)?;
        let (h, w, t_n) = (video.height, video.width, video.frames);
        let tol = default_f_tolerance(h, w);

        let x = videos_to_tensor::<f32>(&[&video]);
        let mut g = Graph::new(false);
        let xv = g.constant(x);
        let out = seg.forward(&mut g, store, xv);
        let probs = g.value(out.seg);
        let mut j = SequenceScores { id: name.clone(), frames: Vec::with_capacity(t_n) };
        let mut f = SequenceScores { id: name.clone(), frames: Vec::with_capacity(t_n) };
        for t in 0..t_n {
            let pred: Vec<u8> = probs.data()[t * h * w..(t + 1) * h * w]
                .iter()
                .map(|&p| u8::from(p >= 0.5))
                .collect();
            j.frames.push(region_similarity_j(&pred, gt.frame(t), h, w)?);
            f.frames.push(contour_accuracy_f(&pred, gt.frame(t), h, w, tol)?);
        }
        j_scores.push(j);
        f_scores.push(f);

        let has_flow = data.entry(name).map(|e| e.has_flow).unwrap_or(false);
        if has_flow {
            let pred_flow = tensor_to_flow(g.value(out.flow), 0, flow_max);
            let gt_flow = data.load_flow_gt(name)?;
            epes.push(endpoint_error(&pred_flow, &gt_flow, Some(&gt))?);
        }
    }
    Ok(SegEvalReport {
        j: aggregate(&j_scores, tau)?,
        f: aggregate(&f_scores, tau)?,
        epe: if epes.is_empty() { None } else { Some(epes.iter().sum::<f64>() / epes.len() as f64) },
        sequences: names.len(),
    })
}

//! Alternating adversarial training.
//!
//! Each step trains the discriminator once on a real batch plus a detached
//! generated batch, then the generator once on the same latent batch. Flow
//! targets come from the dense-flow module: cached on disk for real clips,
//! recomputed on the fly for generated ones. Segmentation targets are the
//! generator's own masks, binarized at 0.5; no annotation is ever read.
//!
//! All per-epoch randomness is re-derived from (seed, epoch), so a run
//! resumed from an epoch checkpoint replays the uninterrupted run bit for
//! bit.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::GanTrainConfig;
use super::log::{csv_f64, write_json, CsvLog};
use super::opt::Adam;
use super::TrainError;
use crate::autodiff::{Graph, StatUpdate, VarId, VarStore};
use crate::clips::{
    flows_to_tensor, tensor_to_mask, tensor_to_video, videos_to_tensor, MaskClip, VideoClip,
};
use crate::data::{Checkpoint, ClipStore, DatasetManifest, Split};
use crate::latent::{sample_gaussian, sample_latents, trajectory, LatentConfig, LatentSample};
use crate::net::{Discriminator, Generator, NetProfile};
use crate::objectives::{binarize_mask, discriminator_loss, generator_loss, DiscLossInputs, DiscLossParts};
use crate::optflow::{clip_flow, normalize_flow_value};
use crate::tensor::Tensor;

const LOG_HEADER: &[&str] = &[
    "step", "epoch", "alpha", "d_total", "d_adv_real", "d_adv_fake", "d_seg", "d_flow_fake",
    "d_flow_real", "g_loss", "wall_ms",
];

fn check_dims(profile: &NetProfile, m: &DatasetManifest) -> Result<(), TrainError> {
    let want = (3, profile.spatial, profile.spatial, profile.frames);
    let got = (m.channels, m.height, m.width, m.frames);
    if want != got {
        return Err(super::config::ConfigError::Invalid(format!(
            "dataset is (c,h,w,t)={got:?} but the profile needs {want:?}"
        ))
        .into());
    }
    Ok(())
}

fn ids_with_prefix(store: &VarStore<f32>, prefix: &str) -> Vec<VarId> {
    store
        .param_ids()
        .into_iter()
        .filter(|&id| store.name(id).starts_with(prefix))
        .collect()
}

/// Applies only the running-stat updates belonging to one network, so an
/// optimization step leaves the other network's store slots bit-unchanged.
fn apply_stats_with_prefix(store: &mut VarStore<f32>, updates: Vec<StatUpdate<f32>>, prefix: &str) {
    for u in updates {
        if store.name(u.mean_id).starts_with(prefix) {
            u.apply(store);
        }
    }
}

#[derive(Serialize)]
struct ParamDump {
    name: String,
    /// None when the tensor holds no finite value at all.
    min: Option<f64>,
    max: Option<f64>,
    non_finite: usize,
}

/// Writes the diagnostic state dump for a non-finite loss and returns the
/// matching error.
fn abort_non_finite(
    store: &VarStore<f32>,
    parts: Option<&DiscLossParts>,
    g_loss: Option<f64>,
    step: u64,
    epoch: usize,
    out_dir: &Path,
) -> TrainError {
    let mut params = Vec::new();
    for id in store.ids() {
        let t = store.value(id);
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut bad = 0usize;
        for &v in t.data() {
            let v = v as f64;
            if v.is_finite() {
                min = min.min(v);
                max = max.max(v);
            } else {
                bad += 1;
            }
        }
        params.push(ParamDump {
            name: store.name(id).to_string(),
            min: min.is_finite().then_some(min),
            max: max.is_finite().then_some(max),
            non_finite: bad,
        });
    }
    // JSON has no NaN/inf literal, so loss values go through as strings.
    let safe = |v: f64| serde_json::Value::String(format!("{v}"));
    let dump = out_dir.join(format!("abort_step_{step}.json"));
    let _ = write_json(
        &dump,
        &serde_json::json!({
            "step": step,
            "epoch": epoch,
            "disc_parts": parts.map(|p| serde_json::json!({
                "adv_real": safe(p.adv_real),
                "adv_fake": safe(p.adv_fake),
                "seg": safe(p.seg),
                "flow_fake": safe(p.flow_fake),
                "flow_real": safe(p.flow_real),
                "alpha": safe(p.alpha),
                "total": safe(p.total),
            })),
            "g_loss": g_loss.map(safe),
            "params": params,
        }),
    );
    TrainError::NonFinite { step, dump }
}

struct StepStats {
    parts: DiscLossParts,
    g_loss: f64,
}

/// Owns both networks, their optimizers, and the shared store.
struct Stepper {
    cfg: GanTrainConfig,
    gen: Generator,
    disc: Discriminator,
    store: VarStore<f32>,
    adam_g: Adam<f32>,
    adam_d: Adam<f32>,
    latent_cfg: LatentConfig,
    global_step: u64,
}

impl Stepper {
    fn new(cfg: &GanTrainConfig) -> Self {
        let mut store = VarStore::new();
        let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let gen = Generator::new(&mut store, &cfg.profile, &mut init_rng);
        let disc = Discriminator::new(&mut store, &cfg.profile, &mut init_rng);
        let adam_g = Adam::new(cfg.lr, cfg.beta1, cfg.beta2, ids_with_prefix(&store, "gen/"));
        let adam_d = Adam::new(cfg.lr, cfg.beta1, cfg.beta2, ids_with_prefix(&store, "disc/"));
        let latent_cfg = LatentConfig { dim: cfg.profile.latent_dim };
        Stepper { cfg: cfg.clone(), gen, disc, store, adam_g, adam_d, latent_cfg, global_step: 0 }
    }

    /// Restores params, stats, optimizer moments, and counters; returns the
    /// first epoch the resumed run should execute.
    fn load(&mut self, ckpt: &Checkpoint) -> Result<usize, TrainError> {
        if ckpt.manifest.kind != "gan" {
            return Err(TrainError::Resume(format!("checkpoint kind {:?}", ckpt.manifest.kind)));
        }
        if ckpt.manifest.seed != self.cfg.seed {
            return Err(TrainError::Resume(format!(
                "checkpoint seed {} differs from config seed {}",
                ckpt.manifest.seed, self.cfg.seed
            )));
        }
        ckpt.load_into_store(&mut self.store, true)?;
        let extra = &ckpt.manifest.extra;
        let take = |key: &str| -> Result<u64, TrainError> {
            extra
                .get(key)
                .and_then(|v| v.as_u64())
                .ok_or_else(|| TrainError::Resume(format!("checkpoint lacks {key}")))
        };
        self.global_step = take("global_step")?;
        let g_steps = take("adam_g_steps")?;
        let d_steps = take("adam_d_steps")?;
        self.adam_g.state_from(ckpt, "opt_g", &self.store, g_steps);
        self.adam_d.state_from(ckpt, "opt_d", &self.store, d_steps);
        Ok(ckpt.manifest.epoch + 1)
    }

    fn save(&self, epoch: usize, alpha: f64) -> Checkpoint {
        let extra = serde_json::json!({
            "global_step": self.global_step,
            "adam_g_steps": self.adam_g.step_count(),
            "adam_d_steps": self.adam_d.step_count(),
            "config": serde_json::to_value(&self.cfg).unwrap(),
        });
        let mut ckpt = Checkpoint::new("gan", epoch, alpha, self.cfg.seed, extra);
        ckpt.add_store(&self.store);
        self.adam_g.state_into(&mut ckpt, "opt_g", &self.store);
        self.adam_d.state_into(&mut ckpt, "opt_d", &self.store);
        ckpt
    }

    /// One alternating step: D once, then G once, on `reals` plus a fresh
    /// latent batch drawn from `rng`.
    fn step(
        &mut self,
        reals: &Tensor<f32>,
        real_flow_target: &Tensor<f32>,
        alpha: f64,
        epoch: usize,
        rng: &mut ChaCha8Rng,
        out_dir: &Path,
    ) -> Result<StepStats, TrainError> {
        let n = reals.shape()[0];
        let latents: Vec<LatentSample<f32>> = (0..n)
            .map(|_| sample_latents(&self.latent_cfg, self.cfg.profile.frames, rng))
            .collect();

        // Detached generation; its stat updates are discarded so only the
        // G step below can move generator running stats.
        let (fake_video, fake_mask_target) = {
            let mut g = Graph::new(true);
            let out = self.gen.forward(&mut g, &self.store, &latents);
            let video = g.value(out.video).clone();
            let mask = binarize_mask(g.value(out.mask), 0.5);
            (video, mask)
        };

        // Dense-flow targets for the generated batch, recomputed per step.
        let fake_flows: Vec<_> = (0..n)
            .map(|i| clip_flow(&tensor_to_video(&fake_video, i), &self.cfg.flow))
            .collect::<Result<_, _>>()?;
        let refs: Vec<&_> = fake_flows.iter().collect();
        let flow_max = self.cfg.flow_max;
        let fake_flow_target: Tensor<f32> =
            flows_to_tensor(&refs, |v| normalize_flow_value(v as f64, flow_max) as f32);

        // Discriminator update; the fakes enter as constants.
        let parts = {
            let mut g = Graph::new(true);
            let real_x = g.constant(reals.clone());
            let fake_x = g.constant(fake_video);
            let d_real = self.disc.forward(&mut g, &self.store, real_x);
            let d_fake = self.disc.forward(&mut g, &self.store, fake_x);
            let (loss, parts) = discriminator_loss(
                &mut g,
                DiscLossInputs {
                    real_probs: d_real.probs,
                    fake_probs: d_fake.probs,
                    fake_seg: d_fake.seg,
                    fake_mask_target: &fake_mask_target,
                    fake_flow: d_fake.flow,
                    real_flow: d_real.flow,
                    fake_flow_target: &fake_flow_target,
                    real_flow_target,
                    alpha,
                },
            );
            if !parts.total.is_finite() {
                return Err(abort_non_finite(&self.store, Some(&parts), None, self.global_step, epoch, out_dir));
            }
            let grads = g.backward(loss);
            self.adam_d.step(&mut self.store, &grads);
            apply_stats_with_prefix(&mut self.store, g.take_stat_updates(), "disc/");
            parts
        };

        // Generator update on the same latents; discriminator parameters are
        // frozen so backward skips their weight gradients.
        self.store.set_trainable_prefix("disc", false);
        let g_loss = {
            let mut g = Graph::new(true);
            let out = self.gen.forward(&mut g, &self.store, &latents);
            let d_fake = self.disc.forward(&mut g, &self.store, out.video);
            let loss = generator_loss(&mut g, d_fake.probs);
            let value = g.value(loss).data()[0] as f64;
            if !value.is_finite() {
                self.store.set_trainable_prefix("disc", true);
                return Err(abort_non_finite(&self.store, Some(&parts), Some(value), self.global_step, epoch, out_dir));
            }
            let grads = g.backward(loss);
            self.adam_g.step(&mut self.store, &grads);
            apply_stats_with_prefix(&mut self.store, g.take_stat_updates(), "gen/");
            value
        };
        self.store.set_trainable_prefix("disc", true);

        self.global_step += 1;
        Ok(StepStats { parts, g_loss })
    }

    /// Mean "real" probability the discriminator assigns to `videos`.
    fn mean_real_prob(&self, videos: &Tensor<f32>) -> f64 {
        let mut g = Graph::new(false);
        let x = g.constant(videos.clone());
        let out = self.disc.forward(&mut g, &self.store, x);
        let p = g.value(out.probs);
        let n = p.shape()[0];
        (0..n).map(|i| p.data()[2 * i] as f64).sum::<f64>() / n as f64
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GanRunReport {
    pub epochs_run: usize,
    pub steps_logged: u64,
    pub final_checkpoint: PathBuf,
    pub log_path: PathBuf,
}

/// Trains the GAN on the store's training split, checkpointing per epoch.
/// `resume` continues from a saved epoch checkpoint of the same seed.
pub fn train_gan(
    cfg: &GanTrainConfig,
    data: &ClipStore,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<GanRunReport, TrainError> {
    cfg.validate()?;
    check_dims(&cfg.profile, &data.manifest)?;
    std::fs::create_dir_all(out_dir)?;
    let train_names = data.names(Split::Train);
    if train_names.is_empty() {
        return Err(TrainError::Empty("training split has no clips".into()));
    }

    let mut stepper = Stepper::new(cfg);
    let start_epoch = match resume {
        Some(path) => stepper.load(&Checkpoint::load(path)?)?,
        None => 1,
    };
    if start_epoch > cfg.epochs {
        return Err(TrainError::Resume(format!(
            "checkpoint already covers epoch {}; nothing to do",
            start_epoch - 1
        )));
    }

    write_json(
        &out_dir.join("run.json"),
        &serde_json::json!({
            "kind": "gan",
            "config": cfg,
            "dataset": data.root(),
            "resumed_from": resume.map(|p| p.display().to_string()),
        }),
    )?;
    let mut log = if resume.is_some() {
        CsvLog::append(&out_dir.join("train_log.csv"), LOG_HEADER)?
    } else {
        CsvLog::create(&out_dir.join("train_log.csv"), LOG_HEADER)?
    };
    let mut val_log = if resume.is_some() {
        CsvLog::append(&out_dir.join("val_log.csv"), &["epoch", "real_prob"])?
    } else {
        CsvLog::create(&out_dir.join("val_log.csv"), &["epoch", "real_prob"])?
    };

    // Validation batch is fixed across epochs.
    let val_names = data.names(Split::Val);
    let val_tensor: Option<Tensor<f32>> = if cfg.val_clips > 0 && !val_names.is_empty() {
        let take = val_names.len().min(cfg.val_clips);
        let clips: Vec<VideoClip> = val_names[..take]
            .iter()
            .map(|n| data.load_video(n))
            .collect::<Result<_, _>>()?;
        let refs: Vec<&_> = clips.iter().collect();
        Some(videos_to_tensor(&refs))
    } else {
        None
    };

    let mut last_ckpt = PathBuf::new();
    for epoch in start_epoch..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        let mut order = train_names.clone();
        order.shuffle(&mut rng);
        let alpha = cfg.alpha.alpha_at(epoch);

        for chunk in order.chunks(cfg.batch) {
            let started = Instant::now();
            let clips: Vec<VideoClip> =
                chunk.iter().map(|n| data.load_video(n)).collect::<Result<_, _>>()?;
            let refs: Vec<&_> = clips.iter().collect();
            let reals = videos_to_tensor(&refs);
            let flows: Vec<_> = chunk
                .iter()
                .map(|n| data.computed_flow(n, &cfg.flow))
                .collect::<Result<_, _>>()?;
            let frefs: Vec<&_> = flows.iter().collect();
            let flow_max = cfg.flow_max;
            let real_flow_target =
                flows_to_tensor(&frefs, |v| normalize_flow_value(v as f64, flow_max) as f32);

            let stats = stepper.step(&reals, &real_flow_target, alpha, epoch, &mut rng, out_dir)?;
            log.row(&[
                stepper.global_step.to_string(),
                epoch.to_string(),
                csv_f64(alpha),
                csv_f64(stats.parts.total),
                csv_f64(stats.parts.adv_real),
                csv_f64(stats.parts.adv_fake),
                csv_f64(stats.parts.seg),
                csv_f64(stats.parts.flow_fake),
                csv_f64(stats.parts.flow_real),
                csv_f64(stats.g_loss),
                started.elapsed().as_millis().to_string(),
            ])?;
        }
        log.flush()?;

        if let Some(val) = &val_tensor {
            val_log.row(&[epoch.to_string(), csv_f64(stepper.mean_real_prob(val))])?;
            val_log.flush()?;
        }

        last_ckpt = out_dir.join(format!("ckpt_epoch_{epoch:03}.vosc"));
        stepper.save(epoch, alpha).save(&last_ckpt)?;
    }

    Ok(GanRunReport {
        epochs_run: cfg.epochs - start_epoch + 1,
        steps_logged: stepper.global_step,
        final_checkpoint: last_ckpt,
        log_path: out_dir.join("train_log.csv"),
    })
}

/// Builds a generator (and its running stats) from a GAN checkpoint.
pub fn generator_from_checkpoint(
    ckpt: &Checkpoint,
    profile: &NetProfile,
) -> Result<(Generator, VarStore<f32>), TrainError> {
    let mut store = VarStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let gen = Generator::new(&mut store, profile, &mut rng);
    ckpt.load_into_store(&mut store, true)?;
    Ok((gen, store))
}

/// Builds a discriminator from a GAN checkpoint.
pub fn discriminator_from_checkpoint(
    ckpt: &Checkpoint,
    profile: &NetProfile,
) -> Result<(Discriminator, VarStore<f32>), TrainError> {
    let mut store = VarStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let disc = Discriminator::new(&mut store, profile, &mut rng);
    ckpt.load_into_store(&mut store, true)?;
    Ok((disc, store))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixMode {
    None,
    /// One scene code shared by every sample; motion varies.
    Scene,
    /// One motion trajectory shared by every sample; scenes vary.
    Motion,
}

pub struct GanSample {
    pub video: VideoClip,
    pub mask: MaskClip,
    pub foreground: VideoClip,
    /// Single-frame background; the generator repeats it over time.
    pub background: VideoClip,
}

/// Inference-mode sampling. Under a fix mode the shared component is drawn
/// from `fixed_seed`, the varying one from `seed`, so two runs with equal
/// `fixed_seed` and different `seed` share exactly the fixed component.
pub fn sample_gan(
    gen: &Generator,
    store: &VarStore<f32>,
    profile: &NetProfile,
    n: usize,
    fix: FixMode,
    seed: u64,
    fixed_seed: u64,
) -> Vec<GanSample> {
    assert!(n > 0);
    let cfg = LatentConfig { dim: profile.latent_dim };
    let steps = profile.frames;
    let mut vary = ChaCha8Rng::seed_from_u64(seed);
    let mut fixed = ChaCha8Rng::seed_from_u64(fixed_seed);
    let latents: Vec<LatentSample<f32>> = match fix {
        FixMode::None => (0..n).map(|_| sample_latents(&cfg, steps, &mut vary)).collect(),
        FixMode::Scene => {
            let scene: Vec<f32> = sample_gaussian(cfg.dim, &mut fixed);
            (0..n)
                .map(|_| {
                    let a: Vec<f32> = sample_gaussian(cfg.dim, &mut vary);
                    let b: Vec<f32> = sample_gaussian(cfg.dim, &mut vary);
                    LatentSample { scene: scene.clone(), motion: trajectory(&a, &b, steps) }
                })
                .collect()
        }
        FixMode::Motion => {
            let a: Vec<f32> = sample_gaussian(cfg.dim, &mut fixed);
            let b: Vec<f32> = sample_gaussian(cfg.dim, &mut fixed);
            let motion = trajectory(&a, &b, steps);
            (0..n)
                .map(|_| LatentSample { scene: sample_gaussian(cfg.dim, &mut vary), motion: motion.clone() })
                .collect()
        }
    };

    let mut g = Graph::new(false);
    let out = gen.forward(&mut g, store, &latents);
    let video = g.value(out.video);
    let mask = g.value(out.mask);
    let fg = g.value(out.foreground);
    let bg = g.value(out.background);
    (0..n)
        .map(|i| GanSample {
            video: tensor_to_video(video, i),
            mask: tensor_to_mask(mask, i, 0.5),
            foreground: tensor_to_video(fg, i),
            background: tensor_to_video(bg, i),
        })
        .collect()
}

/// Synthesized training pairs for the segmentation regimes: inference-mode
/// generator batch as (video, binarized mask) tensors.
pub fn synth_pairs(
    gen: &Generator,
    store: &VarStore<f32>,
    profile: &NetProfile,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> (Tensor<f32>, Tensor<f32>) {
    let cfg = LatentConfig { dim: profile.latent_dim };
    let latents: Vec<LatentSample<f32>> =
        (0..n).map(|_| sample_latents(&cfg, profile.frames, rng)).collect();
    let mut g = Graph::new(false);
    let out = gen.forward(&mut g, store, &latents);
    let video = g.value(out.video).clone();
    let mask = binarize_mask(g.value(out.mask), 0.5);
    (video, mask)
}

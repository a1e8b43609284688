//! `vosgan gan train` and `vosgan gan sample`.

use std::path::{Path, PathBuf};

use clap::Subcommand;
use vosgan::data::{Checkpoint, ClipStore};
use vosgan::net::NetProfile;
use vosgan::train::{generator_from_checkpoint, sample_gan, train_gan, FixMode, GanTrainConfig};

use crate::config::load_config;
use crate::img;
use crate::rundir::{create_run_dir, write_manifest};
use crate::{emit, CliError, CliResult};

#[derive(Subcommand)]
pub enum GanCmd {
    /// Adversarial training per the config file's gan section.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Epoch checkpoint to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Decode clips from a trained generator checkpoint.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 4)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        /// Share one scene latent across samples (same background).
        #[arg(long, conflicts_with = "fix_motion")]
        fix_scene: bool,
        /// Share one motion trajectory across samples.
        #[arg(long)]
        fix_motion: bool,
        /// Seed for the varying latent component.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Seed for the fixed latent component.
        #[arg(long, default_value_t = 0)]
        fixed_seed: u64,
    },
}

/// The training config a checkpoint was produced under.
pub fn embedded_gan_config(ckpt: &Checkpoint) -> CliResult<GanTrainConfig> {
    serde_json::from_value(ckpt.manifest.extra["config"].clone())
        .map_err(|e| CliError::Runtime(format!("checkpoint carries no usable config: {e}")))
}

fn save_sample(dir: &Path, sample: &vosgan::train::GanSample) -> CliResult<()> {
    std::fs::create_dir_all(dir)?;
    for t in 0..sample.video.frames {
        img::save_png(&img::video_frame_rgb(&sample.video, t), &dir.join(format!("frame_{t:03}.png")))?;
        img::save_gray_png(&img::mask_frame_gray(&sample.mask, t), &dir.join(format!("mask_{t:03}.png")))?;
        img::save_png(
            &img::video_frame_rgb(&sample.foreground, t),
            &dir.join(format!("foreground_{t:03}.png")),
        )?;
    }
    img::save_png(&img::video_frame_rgb(&sample.background, 0), &dir.join("background.png"))?;
    Ok(())
}

pub fn run(cmd: GanCmd) -> CliResult<()> {
    match cmd {
        GanCmd::Train { config, resume } => {
            let file = load_config(&config)?;
            let cfg = file.gan_config()?;
            let data = ClipStore::open(file.dataset()?)?;
            let run_dir = create_run_dir("gan-train", file.out.as_deref())?;
            let resolved = serde_json::json!({
                "gan": cfg,
                "dataset": file.dataset()?,
                "resume": resume,
            });
            write_manifest(&run_dir, "gan train", &resolved)?;
            std::fs::write(
                run_dir.join("resolved_config.json"),
                serde_json::to_string_pretty(&resolved).expect("json"),
            )?;
            let report = train_gan(&cfg, &data, &run_dir, resume.as_deref())?;
            emit(&serde_json::json!({
                "run_dir": run_dir,
                "epochs_run": report.epochs_run,
                "steps_logged": report.steps_logged,
                "final_checkpoint": report.final_checkpoint,
                "log": report.log_path,
            }));
            Ok(())
        }
        GanCmd::Sample { ckpt, n, out, fix_scene, fix_motion, seed, fixed_seed } => {
            if n == 0 {
                return Err(CliError::Config("--n must be positive".into()));
            }
            let checkpoint = Checkpoint::load(&ckpt)?;
            if checkpoint.manifest.kind != "gan" {
                return Err(CliError::Runtime(format!(
                    "expected a gan checkpoint, got {:?}",
                    checkpoint.manifest.kind
                )));
            }
            let profile: NetProfile = embedded_gan_config(&checkpoint)?.profile;
            let (gen, store) = generator_from_checkpoint(&checkpoint, &profile)?;
            let fix = match (fix_scene, fix_motion) {
                (true, _) => FixMode::Scene,
                (_, true) => FixMode::Motion,
                _ => FixMode::None,
            };
            let samples = sample_gan(&gen, &store, &profile, n, fix, seed, fixed_seed);
            std::fs::create_dir_all(&out)?;
            for (i, s) in samples.iter().enumerate() {
                save_sample(&out.join(format!("sample_{i:03}")), s)?;
            }
            let resolved = serde_json::json!({
                "ckpt": ckpt, "n": n, "fix_scene": fix_scene, "fix_motion": fix_motion,
                "seed": seed, "fixed_seed": fixed_seed,
            });
            std::fs::write(
                out.join("resolved_config.json"),
                serde_json::to_string_pretty(&resolved).expect("json"),
            )?;
            emit(&serde_json::json!({ "out": out, "samples": n }));
            Ok(())
        }
    }
}

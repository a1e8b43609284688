//! `vosgan seg train` and `vosgan seg eval`.

use std::path::PathBuf;

use clap::Subcommand;
use vosgan::data::{Checkpoint, ClipStore, Split};
use vosgan::optflow::DEFAULT_FLOW_MAX;
use vosgan::train::{
    evaluate_segmenter, segmenter_from_checkpoint, train_segmenter, SegRegime, SegTrainConfig,
};

use crate::config::load_config;
use crate::rundir::{create_run_dir, write_manifest};
use crate::{emit, CliError, CliResult};

#[derive(Subcommand)]
pub enum SegCmd {
    /// Train (or convert) a segmenter under one of the five regimes.
    Train {
        /// synthetic | adversarial | finetune-synthetic | finetune-adversarial | supervised
        #[arg(long)]
        regime: String,
        #[arg(long)]
        config: PathBuf,
        /// Fraction of training masks made visible to label-consuming regimes.
        #[arg(long)]
        label_fraction: Option<f64>,
    },
    /// Score a segmenter checkpoint against a dataset split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Where the JSON report goes.
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Recall threshold for Eq. O.
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
    },
}

fn parse_regime(s: &str) -> CliResult<SegRegime> {
    Ok(match s {
        "synthetic" => SegRegime::Synthetic,
        "adversarial" => SegRegime::Adversarial,
        "finetune-synthetic" | "finetune_synthetic" => SegRegime::FinetuneSynthetic,
        "finetune-adversarial" | "finetune_adversarial" => SegRegime::FinetuneAdversarial,
        "supervised" | "supervised-baseline" | "supervised_baseline" => SegRegime::SupervisedBaseline,
        other => {
            return Err(CliError::Config(format!(
                "regime {other:?} is not one of synthetic, adversarial, finetune-synthetic, finetune-adversarial, supervised"
            )))
        }
    })
}

pub fn parse_split(s: &str) -> CliResult<Split> {
    Ok(match s {
        "train" => Split::Train,
        "val" => Split::Val,
        "test" => Split::Test,
        other => return Err(CliError::Config(format!("split {other:?} is not train/val/test"))),
    })
}

pub fn run(cmd: SegCmd) -> CliResult<()> {
    match cmd {
        SegCmd::Train { regime, config, label_fraction } => {
            let file = load_config(&config)?;
            let mut cfg = file.seg_config()?;
            cfg.regime = parse_regime(&regime)?;
            if let Some(f) = label_fraction {
                cfg.label_fraction = f;
                cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
            }
            if cfg.regime.needs_source() && file.source.is_none() {
                return Err(CliError::Config(format!(
                    "regime {regime:?} needs key \"source\" in the config file"
                )));
            }
            let data = ClipStore::open(file.dataset()?)?;
            let run_dir = create_run_dir("seg-train", file.out.as_deref())?;
            let resolved = serde_json::json!({
                "seg": cfg,
                "dataset": file.dataset()?,
                "source": file.source,
            });
            write_manifest(&run_dir, "seg train", &resolved)?;
            std::fs::write(
                run_dir.join("resolved_config.json"),
                serde_json::to_string_pretty(&resolved).expect("json"),
            )?;
            let report = train_segmenter(&cfg, &data, file.source.as_deref(), &run_dir)?;
            emit(&serde_json::json!({
                "run_dir": run_dir,
                "regime": report.regime,
                "epochs_run": report.epochs_run,
                "labeled_clips_used": report.labeled_clips_used,
                "checkpoint": report.checkpoint,
            }));
            Ok(())
        }
        SegCmd::Eval { ckpt, data, report, split, tau } => {
            let checkpoint = Checkpoint::load(&ckpt)?;
            if checkpoint.manifest.kind != "segmenter" {
                return Err(CliError::Runtime(format!(
                    "expected a segmenter checkpoint, got {:?}",
                    checkpoint.manifest.kind
                )));
            }
            let cfg: SegTrainConfig =
                serde_json::from_value(checkpoint.manifest.extra["config"].clone())
                    .map_err(|e| CliError::Runtime(format!("checkpoint carries no usable config: {e}")))?;
            let (seg, store) = segmenter_from_checkpoint(&checkpoint, &cfg.profile)?;
            let store_data = ClipStore::open(&data)?;
            let sp = parse_split(&split)?;
            let eval = evaluate_segmenter(&seg, &store, &store_data, sp, DEFAULT_FLOW_MAX, tau)?;
            let doc = serde_json::json!({
                "m_j": eval.j.mean,
                "o_j": eval.j.recall,
                "d_j": eval.j.decay,
                "m_f": eval.f.mean,
                "o_f": eval.f.recall,
                "d_f": eval.f.decay,
                "epe": eval.epe,
                "sequences": eval.sequences,
                "tau": tau,
                "split": split,
                "regime": cfg.regime,
                "label_fraction": cfg.label_fraction,
                "ckpt": ckpt,
            });
            if let Some(parent) = report.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            std::fs::write(&report, serde_json::to_string_pretty(&doc).expect("json"))?;
            emit(&doc);
            Ok(())
        }
    }
}

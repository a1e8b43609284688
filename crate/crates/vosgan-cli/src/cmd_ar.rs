//! `vosgan ar train`: the 3-class motion-direction transfer task.

use std::path::PathBuf;

use clap::Subcommand;
use vosgan::train::{make_direction_dataset, train_action_classifier, ActionMode};

use crate::config::load_config;
use crate::rundir::{create_run_dir, write_manifest};
use crate::{emit, CliError, CliResult};

#[derive(Subcommand)]
pub enum ArCmd {
    /// Train a classifier over discriminator features.
    Train {
        /// transfer (linear probe) | finetune (whole network, fresh head)
        #[arg(long)]
        mode: String,
        #[arg(long)]
        config: PathBuf,
        /// Direction clips generated per class.
        #[arg(long, default_value_t = 40)]
        per_class: usize,
    },
}

pub fn run(cmd: ArCmd) -> CliResult<()> {
    match cmd {
        ArCmd::Train { mode, config, per_class } => {
            let file = load_config(&config)?;
            let mut cfg = file.action_config()?;
            cfg.mode = match mode.as_str() {
                "transfer" | "transfer-linear" => ActionMode::TransferLinear,
                "finetune" | "finetune-softmax" => ActionMode::FinetuneSoftmax,
                other => {
                    return Err(CliError::Config(format!(
                        "mode {other:?} is not one of transfer, finetune"
                    )))
                }
            };
            if per_class < 2 {
                return Err(CliError::Config("--per-class must be at least 2".into()));
            }
            let dataset = make_direction_dataset(&cfg.profile, per_class, cfg.seed);
            let run_dir = create_run_dir("ar-train", file.out.as_deref())?;
            let resolved = serde_json::json!({
                "action": cfg,
                "per_class": per_class,
                "source": file.source,
            });
            write_manifest(&run_dir, "ar train", &resolved)?;
            std::fs::write(
                run_dir.join("resolved_config.json"),
                serde_json::to_string_pretty(&resolved).expect("json"),
            )?;
            let report = train_action_classifier(&cfg, &dataset, file.source.as_deref(), &run_dir)?;
            emit(&serde_json::json!({
                "run_dir": run_dir,
                "mode": report.mode,
                "accuracy": report.accuracy,
                "epochs_run": report.epochs_run,
                "checkpoint": report.checkpoint,
            }));
            Ok(())
        }
    }
}

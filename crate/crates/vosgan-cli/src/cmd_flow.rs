//! `vosgan flow compute` and `vosgan flow eval`.

use std::path::PathBuf;

use clap::Subcommand;
use vosgan::data::{read_flow_vosf, write_flow_vosf, ClipStore, Split};
use vosgan::metrics::endpoint_error;
use vosgan::optflow::{clip_flow, FarnebackParams};

use crate::{emit, CliError, CliResult};

#[derive(Subcommand)]
pub enum FlowCmd {
    /// Farneback flow for every clip of a dataset, written as NAME.vosf.
    Compute {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Endpoint error of predicted flow files against dataset ground truth.
    Eval {
        /// Directory of NAME.vosf predictions.
        #[arg(long)]
        pred: PathBuf,
        /// Dataset root carrying ground-truth flow (and masks, if any).
        #[arg(long)]
        gt: PathBuf,
    },
}

pub fn run(cmd: FlowCmd) -> CliResult<()> {
    match cmd {
        FlowCmd::Compute { data, out } => {
            let store = ClipStore::open(&data)?;
            std::fs::create_dir_all(&out)?;
            let params = FarnebackParams::default();
            let mut n = 0usize;
            for split in Split::ALL {
                for name in store.names(split) {
                    let video = store.load_video(&name)?;
                    let flow = clip_flow(&video, &params)?;
                    write_flow_vosf(&out.join(format!("{name}.vosf")), &flow)?;
                    n += 1;
                }
            }
            emit(&serde_json::json!({ "out": out, "clips": n, "params": params }));
            Ok(())
        }
        FlowCmd::Eval { pred, gt } => {
            let store = ClipStore::open(&gt)?;
            let mut names: Vec<String> = std::fs::read_dir(&pred)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().map_or(false, |e| e == "vosf"))
                .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
                .collect();
            names.sort();
            if names.is_empty() {
                return Err(CliError::Runtime(format!(
                    "{} holds no .vosf predictions",
                    pred.display()
                )));
            }
            let mut epe = Vec::with_capacity(names.len());
            let mut masked = Vec::new();
            for name in &names {
                let p = read_flow_vosf(&pred.join(format!("{name}.vosf")))?;
                let g = store.load_flow_gt(name)?;
                epe.push(endpoint_error(&p, &g, None)?);
                let has_mask = store.entry(name).map_or(false, |e| e.has_mask);
                if has_mask {
                    let mask = store.load_mask(name)?;
                    masked.push(endpoint_error(&p, &g, Some(&mask))?);
                }
            }
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            emit(&serde_json::json!({
                "clips": names.len(),
                "mean_epe": mean(&epe),
                "masked_epe": if masked.is_empty() { None } else { Some(mean(&masked)) },
            }));
            Ok(())
        }
    }
}

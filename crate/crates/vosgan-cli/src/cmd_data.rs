//! `vosgan data synth` and `vosgan data ingest`.
//!
//! Both write only deterministic content into --out, so equal invocations
//! produce byte-identical trees.

use std::path::PathBuf;

use clap::Subcommand;
use vosgan::data::{ingest_clips, synth_dataset, IngestSpec, SpriteSceneSpec};
use vosgan::net::NetProfile;

use crate::{emit, CliError, CliResult};

#[derive(Subcommand)]
pub enum DataCmd {
    /// Synthesize a sprite clip dataset with exact masks and flow.
    Synth {
        #[arg(long)]
        clips: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Clip geometry: desk (32x32x8) or full (64x64x32).
        #[arg(long, default_value = "desk")]
        profile: String,
    },
    /// Cut directories of frame images into fixed-length overlapping clips.
    Ingest {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        clip_len: usize,
        #[arg(long, default_value_t = 5)]
        stride: usize,
        /// Square output resolution.
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

pub fn run(cmd: DataCmd) -> CliResult<()> {
    match cmd {
        DataCmd::Synth { clips, out, seed, profile } => {
            if clips == 0 {
                return Err(CliError::Config("--clips must be positive".into()));
            }
            let p = match profile.as_str() {
                "desk" => NetProfile::desk(),
                "full" => NetProfile::full(),
                other => {
                    return Err(CliError::Config(format!(
                        "profile {other:?} is not one of desk, full"
                    )))
                }
            };
            let spec = SpriteSceneSpec {
                seed,
                height: p.spatial,
                width: p.spatial,
                frames: p.frames,
                ..SpriteSceneSpec::default()
            };
            let manifest = synth_dataset(&spec, clips, &out)?;
            let resolved = serde_json::json!({ "spec": spec, "clips": clips });
            std::fs::write(
                out.join("synth_config.json"),
                serde_json::to_string_pretty(&resolved).expect("json"),
            )?;
            emit(&serde_json::json!({
                "root": out,
                "clips": manifest.clips.len(),
                "frames": manifest.frames,
                "size": [manifest.height, manifest.width],
            }));
            Ok(())
        }
        DataCmd::Ingest { src, out, clip_len, stride, size, seed } => {
            if clip_len < 2 || stride == 0 {
                return Err(CliError::Config("--clip-len must be >= 2 and --stride >= 1".into()));
            }
            let spec = IngestSpec { height: size, width: size, clip_len, stride, seed };
            let (manifest, warnings) = ingest_clips(&src, &out, &spec)?;
            let resolved = serde_json::json!({ "src": src, "spec": spec });
            std::fs::write(
                out.join("ingest_config.json"),
                serde_json::to_string_pretty(&resolved).expect("json"),
            )?;
            emit(&serde_json::json!({
                "root": out,
                "clips": manifest.clips.len(),
                "warnings": warnings,
            }));
            Ok(())
        }
    }
}

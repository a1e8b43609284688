//! Run-directory plumbing: a timestamped directory per invocation under the
//! run root (`VOSGAN_RUNS` or ./runs), holding the resolved config, a run
//! manifest, logs and outputs.

use std::path::{Path, PathBuf};

use crate::{CliError, CliResult};

pub fn runs_root() -> PathBuf {
    std::env::var_os("VOSGAN_RUNS").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

/// `explicit` wins verbatim; otherwise <root>/<utc-stamp>-<tag>, suffixed on
/// collision so two invocations in one millisecond cannot share a directory.
pub fn create_run_dir(tag: &str, explicit: Option<&Path>) -> CliResult<PathBuf> {
    let dir = match explicit {
        Some(p) => p.to_path_buf(),
        None => {
            let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%3fZ");
            let base = runs_root().join(format!("{stamp}-{tag}"));
            let mut candidate = base.clone();
            let mut k = 1;
            while candidate.exists() {
                candidate = PathBuf::from(format!("{}-{k}", base.display()));
                k += 1;
            }
            candidate
        }
    };
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

/// The replay record: command tag, resolved configuration, creation time.
pub fn write_manifest(dir: &Path, tag: &str, resolved: &serde_json::Value) -> CliResult<()> {
    let manifest = serde_json::json!({
        "command": tag,
        "created_utc": chrono::Utc::now().to_rfc3339(),
        "resolved_config": resolved,
    });
    let text = serde_json::to_string_pretty(&manifest).expect("json");
    std::fs::write(dir.join("run_manifest.json"), text)
        .map_err(|e| CliError::Runtime(format!("cannot write manifest: {e}")))?;
    Ok(())
}

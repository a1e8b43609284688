//! `vosgan plots label-efficiency`: the labels-vs-quality curve, one series
//! per regime, from a directory of `seg eval` reports.

use std::path::PathBuf;

use clap::Subcommand;
use serde::Deserialize;

use crate::img::line_plot;
use crate::{emit, CliError, CliResult};

#[derive(Subcommand)]
pub enum PlotsCmd {
    /// M_J against label fraction across seg eval reports.
    LabelEfficiency {
        /// Directory of *.json reports written by `seg eval`.
        #[arg(long)]
        reports: PathBuf,
        /// CSV output path; the rendered image lands next to it as .png.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Deserialize)]
struct EvalReport {
    m_j: f64,
    regime: String,
    label_fraction: f64,
}

pub fn run(cmd: PlotsCmd) -> CliResult<()> {
    match cmd {
        PlotsCmd::LabelEfficiency { reports, out } => {
            let mut files: Vec<PathBuf> = std::fs::read_dir(&reports)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().map_or(false, |e| e == "json"))
                .collect();
            files.sort();
            let mut rows: Vec<EvalReport> = Vec::new();
            for f in &files {
                let text = std::fs::read_to_string(f)?;
                let report: EvalReport = serde_json::from_str(&text).map_err(|e| {
                    CliError::Runtime(format!("{}: not a seg eval report: {e}", f.display()))
                })?;
                rows.push(report);
            }
            if rows.is_empty() {
                return Err(CliError::Runtime(format!(
                    "{} holds no .json reports",
                    reports.display()
                )));
            }
            rows.sort_by(|a, b| {
                (&a.regime, a.label_fraction)
                    .partial_cmp(&(&b.regime, b.label_fraction))
                    .expect("finite fractions")
            });

            let mut csv = String::from("regime,label_fraction,m_j\n");
            for r in &rows {
                csv.push_str(&format!("{},{},{}\n", r.regime, r.label_fraction, r.m_j));
            }
            if let Some(parent) = out.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            std::fs::write(&out, csv)?;

            let mut series: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
            for r in &rows {
                match series.last_mut() {
                    Some((name, pts)) if *name == r.regime => pts.push((r.label_fraction, r.m_j)),
                    _ => series.push((r.regime.clone(), vec![(r.label_fraction, r.m_j)])),
                }
            }
            let png = out.with_extension("png");
            line_plot(&series, 640, 420)
                .save(&png)
                .map_err(|e| CliError::Runtime(format!("{}: {e}", png.display())))?;
            emit(&serde_json::json!({
                "csv": out,
                "png": png,
                "points": rows.len(),
                "series": series.iter().map(|(n, p)| serde_json::json!({"regime": n, "points": p.len()})).collect::<Vec<_>>(),
            }));
            Ok(())
        }
    }
}

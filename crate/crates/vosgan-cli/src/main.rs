//! The `vosgan` command: dataset synthesis and ingestion, GAN training and
//! sampling, segmentation training/evaluation, flow tools, distribution
//! metrics, action-recognition transfer and figure emission.
//!
//! Exit codes: 0 success, 2 configuration error, 1 runtime error.

mod cmd_ar;
mod cmd_data;
mod cmd_flow;
mod cmd_gan;
mod cmd_metrics;
mod cmd_plots;
mod cmd_seg;
mod config;
mod external;
mod img;
mod rundir;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    /// The invocation or config file is wrong; exit code 2.
    Config(String),
    /// The work itself failed; exit code 1.
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl From<vosgan::train::TrainError> for CliError {
    fn from(e: vosgan::train::TrainError) -> Self {
        match e {
            vosgan::train::TrainError::Config(c) => CliError::Config(c.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<vosgan::data::DataError> for CliError {
    fn from(e: vosgan::data::DataError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<vosgan::optflow::FlowError> for CliError {
    fn from(e: vosgan::optflow::FlowError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<vosgan::metrics::MetricsError> for CliError {
    fn from(e: vosgan::metrics::MetricsError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Prints one pretty JSON document to stdout: the machine-readable result
/// every subcommand ends with.
pub fn emit(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json"));
}

#[derive(Parser)]
#[command(name = "vosgan", version, about = "Adversarial video generation and self-supervised segmentation toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize or ingest clip datasets.
    #[command(subcommand)]
    Data(cmd_data::DataCmd),
    /// Train the GAN or sample from a checkpoint.
    #[command(subcommand)]
    Gan(cmd_gan::GanCmd),
    /// Train and evaluate segmenters.
    #[command(subcommand)]
    Seg(cmd_seg::SegCmd),
    /// Compute or evaluate dense optical flow.
    #[command(subcommand)]
    Flow(cmd_flow::FlowCmd),
    /// Distribution metrics over clip datasets.
    #[command(subcommand)]
    Metrics(cmd_metrics::MetricsCmd),
    /// Action-recognition transfer on the motion-direction toy task.
    #[command(subcommand)]
    Ar(cmd_ar::ArCmd),
    /// Figure emission from run reports.
    #[command(subcommand)]
    Plots(cmd_plots::PlotsCmd),
}

fn run(cmd: Cmd) -> CliResult<()> {
    match cmd {
        Cmd::Data(c) => cmd_data::run(c),
        Cmd::Gan(c) => cmd_gan::run(c),
        Cmd::Seg(c) => cmd_seg::run(c),
        Cmd::Flow(c) => cmd_flow::run(c),
        Cmd::Metrics(c) => cmd_metrics::run(c),
        Cmd::Ar(c) => cmd_ar::run(c),
        Cmd::Plots(c) => cmd_plots::run(c),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                CliError::Config(_) => ExitCode::from(2),
                CliError::Runtime(_) => ExitCode::from(1),
            }
        }
    }
}

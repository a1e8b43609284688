//! Training loops: adversarial GAN training, the segmentation regimes,
//! the flow-threshold baseline, and action-recognition transfer.

pub mod ar;
pub mod baseline;
pub mod config;
pub mod gan;
pub mod log;
pub mod opt;
pub mod seg;

use std::path::PathBuf;

pub use ar::{
    direction_velocity, make_direction_dataset, train_action_classifier, ActionReport,
    DirectionDataset,
};
pub use baseline::{
    default_threshold_grid, flow_threshold_baseline, predict_masks, BaselineReport, FlowSource,
};
pub use config::{ActionMode, ActionTrainConfig, ConfigError, GanTrainConfig, SegRegime, SegTrainConfig};
pub use gan::{
    discriminator_from_checkpoint, generator_from_checkpoint, sample_gan, synth_pairs, train_gan,
    FixMode, GanRunReport, GanSample,
};
pub use log::{csv_f64, read_csv_column, write_json, CsvLog};
pub use opt::{Adam, Plateau, Sgd};
pub use seg::{
    evaluate_segmenter, segmenter_from_checkpoint, train_segmenter, SegEvalReport, SegRunReport,
};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error(transparent)]
    Flow(#[from] crate::optflow::FlowError),
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
    #[error(transparent)]
    Clip(#[from] crate::clips::ClipError),
    #[error("log: {0}")]
    Log(String),
    #[error("non-finite loss at step {step}; diagnostics written to {dump}")]
    NonFinite { step: u64, dump: PathBuf },
    #[error("resume mismatch: {0}")]
    Resume(String),
    #[error("missing source: {0}")]
    MissingSource(String),
    #[error("empty: {0}")]
    Empty(String),
}

//! Training configuration types with the published defaults baked in.

use serde::{Deserialize, Serialize};

use crate::net::NetProfile;
use crate::objectives::AlphaSchedule;
use crate::optflow::{FarnebackParams, DEFAULT_FLOW_MAX};

#[derive(Debug, Clone, thiserror::Error)]
pub enum ConfigError {
    #[error("bad config: {0}")]
    Invalid(String),
}

fn positive(v: f64, what: &str) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::Invalid(format!("{what} must be positive, got {v}")))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanTrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch: usize,
    pub epochs: usize,
    pub alpha: AlphaSchedule,
    pub seed: u64,
    /// Single profile: generator and discriminator always agree.
    pub profile: NetProfile,
    pub flow: FarnebackParams,
    /// Flow normalization cap in pixels.
    pub flow_max: f64,
    /// Validation clips scored per epoch (0 disables validation).
    pub val_clips: usize,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        GanTrainConfig {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            batch: 16,
            epochs: 25,
            alpha: AlphaSchedule::default(),
            seed: 0,
            profile: NetProfile::desk(),
            flow: FarnebackParams::default(),
            flow_max: DEFAULT_FLOW_MAX,
            val_clips: 16,
        }
    }
}

impl GanTrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        positive(self.lr, "lr")?;
        positive(self.flow_max, "flow_max")?;
        if self.batch == 0 || self.epochs == 0 {
            return Err(ConfigError::Invalid("batch and epochs must be nonzero".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(ConfigError::Invalid("betas must lie in [0,1)".into()));
        }
        self.profile.validate().map_err(ConfigError::Invalid)?;
        self.flow.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegRegime {
    /// From scratch on generator-synthesized (clip, mask) pairs.
    Synthetic,
    /// The trained discriminator's motion stream, used as-is.
    Adversarial,
    /// Synthetic-regime segmenter fine-tuned on ground-truth masks.
    FinetuneSynthetic,
    /// Adversarial segmenter fine-tuned on ground-truth masks.
    FinetuneAdversarial,
    /// From scratch on ground-truth masks.
    SupervisedBaseline,
}

impl SegRegime {
    pub fn needs_source(self) -> bool {
        !matches!(self, SegRegime::SupervisedBaseline)
    }

    /// Regimes that may read real mask annotations during training.
    pub fn uses_labels(self) -> bool {
        matches!(
            self,
            SegRegime::FinetuneSynthetic | SegRegime::FinetuneAdversarial | SegRegime::SupervisedBaseline
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegTrainConfig {
    pub regime: SegRegime,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub profile: NetProfile,
    /// Fraction of labeled training clips consumed by label-based regimes.
    pub label_fraction: f64,
    /// Fine-tune only the motion decoder, keeping the encoder fixed.
    pub freeze_encoder: bool,
    /// Batches of synthesized pairs per epoch in the synthetic regime.
    pub synthetic_steps: usize,
}

impl Default for SegTrainConfig {
    fn default() -> Self {
        SegTrainConfig {
            regime: SegRegime::SupervisedBaseline,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            batch: 16,
            epochs: 200,
            seed: 0,
            profile: NetProfile::desk(),
            label_fraction: 1.0,
            freeze_encoder: false,
            synthetic_steps: 8,
        }
    }
}

impl SegTrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        positive(self.lr, "lr")?;
        if self.batch == 0 {
            return Err(ConfigError::Invalid("batch must be nonzero".into()));
        }
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return Err(ConfigError::Invalid(format!(
                "label_fraction must lie in (0,1], got {}",
                self.label_fraction
            )));
        }
        self.profile.validate().map_err(ConfigError::Invalid)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionMode {
    /// Linear classifier on frozen discriminator features.
    TransferLinear,
    /// Replace the real/fake head with an n-class softmax and train through.
    FinetuneSoftmax,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActionTrainConfig {
    pub mode: ActionMode,
    pub lr: f64,
    pub momentum: f64,
    pub dampening: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub epochs: usize,
    pub n_classes: usize,
    pub seed: u64,
    pub profile: NetProfile,
    /// Stagnant validation epochs before the lr is cut by 10x.
    pub plateau_patience: usize,
}

impl Default for ActionTrainConfig {
    fn default() -> Self {
        ActionTrainConfig {
            mode: ActionMode::TransferLinear,
            lr: 0.1,
            momentum: 0.9,
            dampening: 0.9,
            weight_decay: 0.001,
            batch: 128,
            epochs: 130,
            n_classes: 3,
            seed: 0,
            profile: NetProfile::desk(),
            plateau_patience: 10,
        }
    }
}

impl ActionTrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        positive(self.lr, "lr")?;
        if self.batch == 0 || self.epochs == 0 || self.n_classes < 2 || self.plateau_patience == 0 {
            return Err(ConfigError::Invalid(
                "batch/epochs/plateau_patience must be nonzero and n_classes >= 2".into(),
            ));
        }
        self.profile.validate().map_err(ConfigError::Invalid)?;
        Ok(())
    }
}

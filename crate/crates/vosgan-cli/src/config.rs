//! The run configuration file: one JSON document whose sections mirror the
//! library's training configs. Unknown keys are rejected; every run writes
//! back the resolved copy it actually used.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vosgan::net::NetProfile;
use vosgan::optflow::FarnebackParams;
use vosgan::train::{ActionTrainConfig, GanTrainConfig, SegTrainConfig};

use crate::{CliError, CliResult};

/// "desk", "full", or a spelled-out profile.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileSpec {
    Named(String),
    Custom(NetProfile),
}

impl ProfileSpec {
    pub fn resolve(&self) -> CliResult<NetProfile> {
        match self {
            ProfileSpec::Named(name) => match name.as_str() {
                "desk" => Ok(NetProfile::desk()),
                "full" => Ok(NetProfile::full()),
                other => Err(CliError::Config(format!(
                    "profile {other:?} is not one of desk, full"
                ))),
            },
            ProfileSpec::Custom(p) => Ok(*p),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfigFile {
    /// Clip dataset root for commands that read one.
    pub dataset: Option<PathBuf>,
    /// Source checkpoint for regimes that inherit weights.
    pub source: Option<PathBuf>,
    /// Exact run directory; defaults to a timestamped one under the run root.
    pub out: Option<PathBuf>,
    /// Overrides every section's seed when set.
    pub seed: Option<u64>,
    /// Overrides every section's profile when set.
    pub profile: Option<ProfileSpec>,
    /// Overrides the GAN section's flow parameters when set.
    pub flow: Option<FarnebackParams>,
    pub gan: Option<GanTrainConfig>,
    pub seg: Option<SegTrainConfig>,
    pub action: Option<ActionTrainConfig>,
}

pub fn load_config(path: &Path) -> CliResult<RunConfigFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

impl RunConfigFile {
    pub fn dataset(&self) -> CliResult<&Path> {
        self.dataset
            .as_deref()
            .ok_or_else(|| CliError::Config("missing key \"dataset\"".into()))
    }

    pub fn gan_config(&self) -> CliResult<GanTrainConfig> {
        let mut c = self.gan.clone().unwrap_or_default();
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(p) = &self.profile {
            c.profile = p.resolve()?;
        }
        if let Some(f) = self.flow {
            c.flow = f;
        }
        c.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(c)
    }

    pub fn seg_config(&self) -> CliResult<SegTrainConfig> {
        let mut c = self.seg.clone().unwrap_or_default();
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(p) = &self.profile {
            c.profile = p.resolve()?;
        }
        c.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(c)
    }

    pub fn action_config(&self) -> CliResult<ActionTrainConfig> {
        let mut c = self.action.clone().unwrap_or_default();
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(p) = &self.profile {
            c.profile = p.resolve()?;
        }
        c.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(c)
    }
}

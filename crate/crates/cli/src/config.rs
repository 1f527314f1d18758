//! Run configuration file for `nbtf train`.

use std::path::{Path, PathBuf};

use nbtf::model::ModelConfig;
use nbtf::training::TrainConfig;
use nbtf::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// NBTF file to train on.
    pub dataset: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("dataset.nbtf"),
            out_dir: PathBuf::from("run"),
            seed: 0,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Every field, defaults included.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate(self.model.stride())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips() {
        let cfg = RunConfig::parse("seed = 7\n[train]\nsteps = 12\n").unwrap();
        assert_eq!((cfg.seed, cfg.train.steps), (7, 12));
        assert_eq!(cfg.train.batch_size, TrainConfig::default().batch_size);
        let text = cfg.to_toml().unwrap();
        assert!(text.contains("latent_dim = 14") && text.contains("crop_size"));
        assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for bad in ["sede = 1", "[train]\nstep = 3", "[model.renderer]\nwidth = 8", "[extra]"] {
            assert!(matches!(RunConfig::parse(bad), Err(Error::Config(_))), "{bad}");
        }
    }
}

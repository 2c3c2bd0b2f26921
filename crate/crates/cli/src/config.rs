// SPDX-License-Identifier: Apache-2.0

//! Run configuration file. Command-line flags take precedence over every
//! value read here.

use std::path::{Path, PathBuf};

use patgen_core::denoiser::TrainConfig;
use patgen_core::diffusion::ScheduleConfig;
use patgen_core::legalize::DesignRules;
use patgen_core::patops::AugmentConfig;
use serde::Deserialize;

use crate::Invalid;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoConfig {
    pub out_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub library: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schedule: ScheduleConfig,
    pub rules: Option<DesignRules>,
    /// Network shape and optimiser settings. Its `augment` block is
    /// replaced by the top-level one.
    pub model: TrainConfig,
    pub augment: AugmentConfig,
    pub io: IoConfig,
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<RunConfig> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| {
            Invalid(crate::commands::json_error(path, &e))
        })?;
        cfg.validate()
            .map_err(|e| Invalid(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    fn validate(&self) -> patgen_core::Result<()> {
        self.schedule.build()?;
        if let Some(r) = &self.rules {
            r.validate()?;
        }
        self.model.validate()?;
        self.augment.validate()
    }

    /// Flag, then config file, then `PATGEN_SEED`, then 0.
    pub fn seed(&self, flag: Option<u64>) -> anyhow::Result<u64> {
        if let Some(s) = flag.or(self.seed) {
            return Ok(s);
        }
        match std::env::var("PATGEN_SEED") {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Invalid(format!("PATGEN_SEED `{v}` is not an unsigned integer")).into()),
            Err(_) => Ok(0),
        }
    }
}

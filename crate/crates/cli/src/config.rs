use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use widebnet::model::WideBNetConfig;
use widebnet::training::TrainSettings;
use widebnet::wavesim::{assign_bands, SimConfig};

/// Experiment file: forward-modelling setup, network and training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub sim: Option<SimConfig>,
    #[serde(default)]
    pub model: Option<WideBNetConfig>,
    #[serde(default)]
    pub train: TrainSettings,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: ExperimentConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(sim) = &self.sim {
            sim.validate()?;
        }
        if let Some(model) = &self.model {
            model.validate()?;
        }
        if let (Some(sim), Some(model)) = (&self.sim, &self.model) {
            if sim.grid != model.grid {
                bail!(
                    "simulation grid {:?} differs from the network grid {:?}",
                    sim.grid,
                    model.grid
                );
            }
            let sizes: Vec<usize> = assign_bands(&sim.frequencies, &sim.grid)?
                .iter()
                .map(Vec::len)
                .collect();
            if sizes != model.band_sizes {
                bail!(
                    "frequencies fall into bands {sizes:?} but the network expects {:?}",
                    model.band_sizes
                );
            }
        }
        Ok(())
    }

    pub fn sim(&self) -> Result<&SimConfig> {
        self.sim.as_ref().context("config has no `sim` section")
    }

    pub fn model(&self) -> Result<&WideBNetConfig> {
        self.model.as_ref().context("config has no `model` section")
    }
}

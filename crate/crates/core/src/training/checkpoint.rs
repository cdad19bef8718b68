use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::OptimizerState;
use super::trainer::TrainSettings;
use crate::error::{Error, Result};
use crate::io::{read_records, write_records, ArrayData};
use crate::model::{WideBNetConfig, WideBNetParams};
use crate::tensornet::Parameters;

pub const CHECKPOINT_FORMAT: &str = "widebnet-checkpoint";
const META: &str = "checkpoint.json";
const PARAMS: &str = "params.wbn";
const ADAM: &str = "adam.wbn";

/// Checkpoint description, stored as `checkpoint.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    pub version: u32,
    pub model: WideBNetConfig,
    pub settings: TrainSettings,
    /// Completed epochs.
    pub epoch: usize,
    pub step: u64,
    /// Per-band divisor applied to the network inputs.
    pub input_scales: Vec<f64>,
    pub param_names: Vec<String>,
}

/// Trained parameters with the optimizer state needed to resume.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: WideBNetParams<f32>,
    pub optimizer: OptimizerState<f32>,
}

impl Checkpoint {
    /// Writes `checkpoint.json`, `params.wbn` and `adam.wbn` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let params: Vec<ArrayData> = self
            .params
            .to_arrays()
            .into_iter()
            .map(ArrayData::F32)
            .collect();
        write_records(dir.join(PARAMS), &params)?;
        let moments: Vec<ArrayData> = self
            .optimizer
            .first
            .iter()
            .chain(&self.optimizer.second)
            .cloned()
            .map(ArrayData::F32)
            .collect();
        write_records(dir.join(ADAM), &moments)?;
        let path = dir.join(META);
        fs::write(&path, serde_json::to_string_pretty(&self.meta)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(META);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: CheckpointMeta = serde_json::from_str(&text)?;
        let bad = |reason: String| Error::Record {
            path: dir.to_path_buf(),
            reason,
        };
        if meta.format != CHECKPOINT_FORMAT {
            return Err(bad(format!("unexpected format {:?}", meta.format)));
        }
        let as_f32 = |records: Vec<ArrayData>, what: &str| {
            records
                .into_iter()
                .map(|r| {
                    r.into_f32()
                        .ok_or_else(|| bad(format!("{what} must be f32")))
                })
                .collect::<Result<Vec<_>>>()
        };
        let arrays = as_f32(read_records(dir.join(PARAMS))?, "parameters")?;
        let mut params = WideBNetParams::<f32>::zeros(&meta.model)?;
        if params.names() != meta.param_names {
            return Err(bad(
                "parameter names do not match the model configuration".into()
            ));
        }
        params.load_arrays(&arrays)?;
        let mut moments = as_f32(read_records(dir.join(ADAM))?, "moments")?;
        if moments.len() != 2 * arrays.len() {
            return Err(bad(format!(
                "expected {} moment arrays, found {}",
                2 * arrays.len(),
                moments.len()
            )));
        }
        let second = moments.split_off(arrays.len());
        if moments
            .iter()
            .chain(&second)
            .zip(arrays.iter().chain(&arrays))
            .any(|(m, p)| m.shape() != p.shape())
        {
            return Err(bad("moment shapes do not match the parameters".into()));
        }
        let optimizer = OptimizerState {
            config: meta.settings.adam,
            step: meta.step,
            first: moments,
            second,
        };
        Ok(Checkpoint {
            meta,
            params,
            optimizer,
        })
    }
}

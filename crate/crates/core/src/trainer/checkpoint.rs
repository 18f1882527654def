//! Versioned JSON checkpoints.
//!
//! ```json
//! {
//!   "format": "stein-pinn-checkpoint",
//!   "version": 1,
//!   "iteration": 300,
//!   "seed": 7,
//!   "network": { "layer_widths": [2, 256, 256, 256, 1], ... },
//!   "params": { "layers": [ { "weight": {...}, "bias": {...} }, ... ] },
//!   "adam": { "first_moment": ..., "second_moment": ..., "step_count": 300 }
//! }
//! ```
//!
//! Arrays use ndarray's serde layout (`{"v": 1, "dim": [..], "data": [..]}`).
//! Readers accept any version up to [`CHECKPOINT_VERSION`]; new fields are
//! only ever added with defaults.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::AdamState;
use crate::error::{Error, Result};
use crate::netcore::{Network, NetworkSpec, ParamSet};

pub const CHECKPOINT_FORMAT: &str = "stein-pinn-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// Number of completed parameter updates.
    pub iteration: usize,
    pub seed: u64,
    pub network: NetworkSpec,
    pub params: ParamSet,
    pub adam: AdamState,
}

impl Checkpoint {
    pub fn new(iteration: usize, seed: u64, network: NetworkSpec, params: ParamSet, adam: AdamState) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            iteration,
            seed,
            network,
            params,
            adam,
        }
    }

    /// Writes through a temporary file so a crash never leaves a torn file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        let text = serde_json::to_string(self).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let format_err = |message: String| Error::Format {
            path: path.to_path_buf(),
            message,
        };
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| format_err(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(format_err(format!("unexpected format tag {:?}", ck.format)));
        }
        if ck.version == 0 || ck.version > CHECKPOINT_VERSION {
            return Err(format_err(format!("unsupported checkpoint version {}", ck.version)));
        }
        ck.network.validate().map_err(|e| format_err(e.to_string()))?;
        ck.params.check_shape(&ck.network).map_err(|e| format_err(e.to_string()))?;
        ck.adam.first_moment.check_shape(&ck.network).map_err(|e| format_err(e.to_string()))?;
        ck.adam.second_moment.check_shape(&ck.network).map_err(|e| format_err(e.to_string()))?;
        if !ck.params.is_finite() {
            return Err(format_err("parameters are not finite".to_string()));
        }
        Ok(ck)
    }

    pub fn network(&self) -> Result<Network> {
        Network::new(self.network.clone(), self.params.clone())
    }
}

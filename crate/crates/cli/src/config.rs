//! Physics and pipeline parameters read from a JSON file.
//!
//! ```json
//! {
//!   "n_qubits": 2, "alpha": 0.5, "j_coupling": 1.0,
//!   "ground_convention": "x-polarized", "seed": 0,
//!   "mode": { "kind": "closed" },
//!   "window": { "d_crit": 1.0, "dt": 0.01, "crossing_tol": 1e-6 },
//!   "grid": { "h_values": [0.6], "n_theta": 100, "n_phi": 100 },
//!   "kernel": { "method": { "kind": "dsk" }, "map": { "kind": "qlin" } },
//!   "experiment": { "train_fraction": 0.7, "split_seed": 0, "folds": 5, "c_grid": [0.1, 1, 10, 100] }
//! }
//! ```
//!
//! Everything after `mode` is optional. See `docs/config.md` for all fields.

use std::path::Path;

use quench_core::dataset::GridSpec;
use quench_core::experiment::ExperimentOptions;
use quench_core::kernels::KernelSpec;
use quench_core::singularity::Scenario;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub scenario: Scenario,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelSpec>,
    #[serde(default)]
    pub experiment: ExperimentOptions,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        let config: Self =
            serde_json::from_slice(&bytes).map_err(|source| CliError::Json { path: path.to_owned(), source })?;
        config.scenario.validate()?;
        if let Some(kernel) = &config.kernel {
            kernel.validate()?;
        }
        Ok(config)
    }

    pub fn grid(&self) -> CliResult<&GridSpec> {
        self.grid.as_ref().ok_or_else(|| CliError::Usage("config has no \"grid\" section".into()))
    }
}

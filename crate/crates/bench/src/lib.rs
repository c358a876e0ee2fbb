//! Fixtures shared by the benchmarks.

use quench_core::dataset::{angle_grid, FeatureRow};
use quench_core::singularity::Scenario;
use quench_core::spin_model::SystemConfig;

pub fn closed(n_qubits: usize) -> Scenario {
    Scenario::closed(SystemConfig::new(n_qubits, 0.5).expect("valid system"))
}

/// `side × side` angle grid at `h = 0.6`.
pub fn grid(side: usize) -> Vec<FeatureRow> {
    angle_grid(side, side, 0.6).expect("valid grid")
}

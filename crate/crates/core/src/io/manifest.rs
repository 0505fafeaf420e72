use serde::{Deserialize, Serialize};

use crate::solver::AnalysisConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    /// The ramp stopped after step halving; the last converged load is the limit estimate.
    LimitReached,
}

/// Reproducibility record written next to the results as `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub problem: String,
    pub mesh_source: String,
    pub num_nodes: usize,
    pub num_elements: usize,
    pub num_dofs: usize,
    pub config: AnalysisConfig,
    pub write_every: usize,
    pub status: RunStatus,
    pub steps_converged: usize,
    pub last_converged_load_factor: f64,
    pub halvings: usize,
    pub failure: Option<String>,
    pub files: Vec<String>,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

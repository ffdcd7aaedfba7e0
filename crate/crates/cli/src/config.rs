//! Run configuration: the scenario plus tracker, fusion and evaluation settings.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use splinefuse::ekf::{InitConfig, ProcessNoiseConfig, UpdateConfig};
use splinefuse::evalkit::MetricOptions;
use splinefuse::fusion::FusionCost;
use splinefuse::simkit::ScenarioConfig;

use crate::RunError;

/// Shared by every pipeline so that runs differ only in the fusion scheme.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerSettings {
    pub process: ProcessNoiseConfig,
    pub update: UpdateConfig,
    pub init: InitConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionSettings {
    /// Both local tracks need this many applied points for a frame to fuse.
    pub min_points: usize,
    /// Write the fused estimate back into the local trackers.
    pub feedback: bool,
    pub cost: FusionCost,
}

impl Default for FusionSettings {
    fn default() -> Self {
        Self { min_points: 20, feedback: false, cost: FusionCost::Det }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub metrics: MetricOptions,
    /// A planar position error above this aborts the run as diverged (m).
    pub abort_position_error: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { metrics: MetricOptions { degenerate_as_zero: true, ..MetricOptions::default() }, abort_position_error: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub tracker: TrackerSettings,
    pub fusion: FusionSettings,
    pub eval: EvalSettings,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, RunError> {
        let cfg: Self = toml::from_str(text).map_err(|e| RunError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<(), RunError> {
        self.scenario.validate().map_err(|e| RunError::Config(e.to_string()))?;
        if !self.tracker.process.is_valid() {
            return Err(RunError::Config("process noise must be non-negative".into()));
        }
        if !(self.eval.abort_position_error > 0.0) {
            return Err(RunError::Config("abort_position_error must be positive".into()));
        }
        if self.eval.metrics.samples_per_span < 2 {
            return Err(RunError::Config("metrics.samples_per_span must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Single(u32),
    Centralized,
    Decentralized,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "centralized" => Ok(Mode::Centralized),
            "decentralized" => Ok(Mode::Decentralized),
            _ => s
                .strip_prefix("single:")
                .and_then(|id| id.parse().ok())
                .map(Mode::Single)
                .ok_or_else(|| format!("unknown mode `{s}`; expected single:<id>, centralized or decentralized")),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::Single(id) => write!(f, "single:{id}"),
            Mode::Centralized => f.write_str("centralized"),
            Mode::Decentralized => f.write_str("decentralized"),
        }
    }
}

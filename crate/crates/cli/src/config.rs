//! TOML run configuration.
//!
//! Every block is optional and falls back to the calibrated defaults; keys
//! that are not recognised are rejected.

use std::path::{Path, PathBuf};

use biowipe::experiment::{ProtocolConfig, SearchSpace};
use biowipe::fouling::{GrowthParams, WiperBand};
use biowipe::imaging::{RenderParams, ThresholdParams};
use biowipe::mechanism::DriveParams;
use biowipe::policy::{ActivationPolicy, ClosedLoopConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentBlock {
    pub observation_days: Vec<u32>,
    pub replicates: u32,
    pub cell_size_mm: f64,
    pub growth_step_days: f64,
    pub passes_per_cleaning: u32,
}

impl Default for ExperimentBlock {
    fn default() -> Self {
        let p = ProtocolConfig::default();
        Self {
            observation_days: p.observation_days,
            replicates: p.replicates,
            cell_size_mm: p.cell_size_mm,
            growth_step_days: p.growth_step_days,
            passes_per_cleaning: p.passes_per_cleaning,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClosedLoopBlock {
    pub days: u32,
    pub fault_at_mm: Option<f64>,
}

impl Default for ClosedLoopBlock {
    fn default() -> Self {
        let c = ClosedLoopConfig::default();
        Self {
            days: c.days,
            fault_at_mm: c.fault_at_mm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputBlock {
    /// Write every captured frame as PGM next to the report.
    pub frames: bool,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self { frames: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub experiment: ExperimentBlock,
    pub growth: GrowthParams,
    pub band: WiperBand,
    pub render: RenderParams,
    pub threshold: ThresholdParams,
    pub drive: DriveParams,
    pub policy: ActivationPolicy,
    pub closed_loop: ClosedLoopBlock,
    pub calibration: SearchSpace,
    pub output: OutputBlock,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: ProtocolConfig::default().seed,
            experiment: ExperimentBlock::default(),
            growth: GrowthParams::default(),
            band: WiperBand::default(),
            render: RenderParams::default(),
            threshold: ThresholdParams::default(),
            drive: DriveParams::default(),
            policy: ActivationPolicy::default(),
            closed_loop: ClosedLoopBlock::default(),
            calibration: SearchSpace::default(),
            output: OutputBlock::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Reads `path`, or the defaults when no path is given.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn protocol(&self) -> ProtocolConfig {
        ProtocolConfig {
            observation_days: self.experiment.observation_days.clone(),
            replicates: self.experiment.replicates,
            seed: self.seed,
            cell_size_mm: self.experiment.cell_size_mm,
            growth_step_days: self.experiment.growth_step_days,
            passes_per_cleaning: self.experiment.passes_per_cleaning,
            growth: self.growth,
            band: self.band,
            render: self.render,
            threshold: self.threshold,
            drive: self.drive,
        }
    }

    pub fn closed_loop(&self) -> ClosedLoopConfig {
        ClosedLoopConfig {
            days: self.closed_loop.days,
            policy: self.policy,
            fault_at_mm: self.closed_loop.fault_at_mm,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration serializes")
    }
}

/// Default location of the bundled configuration, relative to the repo.
pub fn bundled_default() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_all_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn partial_blocks_fill_in() {
        let c = RunConfig::parse("seed = 9\n[growth]\nrate_per_day = 0.5\n").unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.growth.rate_per_day, 0.5);
        assert_eq!(
            c.growth.seed_rate_per_day,
            GrowthParams::default().seed_rate_per_day
        );
        assert_eq!(c.experiment, ExperimentBlock::default());
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::parse("[growth]\nrate_per_dya = 0.5\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("rate_per_dya"), "{msg}");
        assert!(msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn infinite_trigger_parses() {
        let c = RunConfig::parse("[policy]\nmse_trigger = inf\n").unwrap();
        assert!(c.policy.mse_trigger.is_infinite());
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
    }
}

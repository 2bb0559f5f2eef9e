//! Image-driven activation of the wiper.
//!
//! The controller watches the binarized-frame MSE against the Day-0
//! reference and runs a cleaning cycle when it crosses a trigger. After a
//! cleaning it stays disarmed until the MSE falls back below the trigger by
//! the hysteresis margin.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{capture, ProtocolConfig};
use crate::fouling::{self, GrowthModel, GrowthParams, OpacityField};
use crate::imaging;
use crate::relay::{self, RelayPlant};
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActivationPolicy {
    pub mse_trigger: f64,
    pub hysteresis: f64,
    pub min_interval_days: f64,
    pub max_energy_budget_j: f64,
}

impl Default for ActivationPolicy {
    fn default() -> Self {
        Self {
            mse_trigger: 0.04,
            hysteresis: 0.01,
            min_interval_days: 1.0,
            max_energy_budget_j: 100.0,
        }
    }
}

impl ActivationPolicy {
    pub fn validate(&self) -> Result<()> {
        // zero hysteresis is allowed for any trigger, including a zero trigger
        let hysteresis_ok =
            self.hysteresis == 0.0 || (self.hysteresis > 0.0 && self.hysteresis < self.mse_trigger);
        if !(self.mse_trigger >= 0.0) || !hysteresis_ok {
            return Err(Error::invalid(format!(
                "hysteresis must satisfy 0 <= hysteresis < trigger, got {} and {}",
                self.hysteresis, self.mse_trigger
            )));
        }
        if !(self.max_energy_budget_j >= 0.0) {
            return Err(Error::invalid("energy budget must be nonnegative"));
        }
        if !(self.min_interval_days >= 0.0) {
            return Err(Error::invalid("minimum interval must be nonnegative"));
        }
        Ok(())
    }

    /// Policy that never fires.
    pub fn never() -> Self {
        Self {
            mse_trigger: f64::INFINITY,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerState {
    pub armed: bool,
    pub last_clean_day: Option<f64>,
    pub energy_spent_j: f64,
}

impl Default for ControllerState {
    fn default() -> Self {
        Self {
            armed: true,
            last_clean_day: None,
            energy_spent_j: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Clean,
    Hold,
}

/// One evaluation of the activation rule.
///
/// `cycle_energy_j` is what a cleaning cycle will draw; it is charged to the
/// returned state when the decision is [`Decision::Clean`].
pub fn should_clean(
    state: ControllerState,
    current_mse: f64,
    day: f64,
    policy: &ActivationPolicy,
    cycle_energy_j: f64,
) -> (Decision, ControllerState) {
    let mut next = state;
    // without hysteresis there is no re-arm latch
    if !next.armed
        && (policy.hysteresis == 0.0 || current_mse < policy.mse_trigger - policy.hysteresis)
    {
        next.armed = true;
    }
    let interval_ok = next
        .last_clean_day
        .is_none_or(|last| day - last >= policy.min_interval_days);
    let budget_ok = next.energy_spent_j + cycle_energy_j <= policy.max_energy_budget_j;
    if next.armed && current_mse > policy.mse_trigger && interval_ok && budget_ok {
        next.armed = false;
        next.last_clean_day = Some(day);
        next.energy_spent_j += cycle_energy_j;
        (Decision::Clean, next)
    } else {
        (Decision::Hold, next)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimelineDecision {
    Hold,
    Clean,
    /// A cleaning was started but the coupling broke away.
    Stalled,
}

impl fmt::Display for TimelineDecision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TimelineDecision::Hold => "hold",
            TimelineDecision::Clean => "clean",
            TimelineDecision::Stalled => "stalled",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimelineEntry {
    pub day: u32,
    /// MSE that the decision was based on, measured before any cleaning.
    pub mse: f64,
    pub decision: TimelineDecision,
    pub cumulative_energy_j: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClosedLoopConfig {
    pub days: u32,
    pub policy: ActivationPolicy,
    /// Breaks the coupling when the carriage first crosses this position.
    pub fault_at_mm: Option<f64>,
}

impl Default for ClosedLoopConfig {
    fn default() -> Self {
        Self {
            days: 16,
            policy: ActivationPolicy::default(),
            fault_at_mm: None,
        }
    }
}

/// Daily monitoring loop: grow, image, decide, and clean when told to.
///
/// Once the coupling has stalled the wiper stays out of service and every
/// later day holds.
pub fn closed_loop(
    protocol: &ProtocolConfig,
    run: &ClosedLoopConfig,
) -> Result<Vec<TimelineEntry>> {
    protocol.validate()?;
    run.policy.validate()?;
    let growth = GrowthParams {
        rng_seed: protocol.growth_seed(),
        ..protocol.growth
    };
    let mut model = GrowthModel::new(growth)?;
    let mut field = OpacityField::clean(protocol.cell_size_mm)?;
    let mut plant = RelayPlant::new(protocol.drive);
    plant.fault_at_mm = run.fault_at_mm;
    let cycle_energy = protocol.drive.pass_energy()? * f64::from(protocol.passes_per_cleaning);
    let noise = |day: u32| seeds::derive(protocol.seed, &[0x6e6f_6973, u64::from(day)]);

    let (_, reference) = capture(&field, &protocol.render, &protocol.threshold, noise(0))?;
    let mut state = ControllerState::default();
    let mut out_of_service = false;
    let mut timeline = Vec::with_capacity(run.days as usize + 1);
    timeline.push(TimelineEntry {
        day: 0,
        mse: 0.0,
        decision: TimelineDecision::Hold,
        cumulative_energy_j: 0.0,
    });

    for day in 1..=run.days {
        field = model.advance(&field, 1.0, protocol.growth_step_days)?;
        let (_, bits) = capture(&field, &protocol.render, &protocol.threshold, noise(day))?;
        let mse = imaging::binary_mse(&bits, &reference)?;

        let mut decision = TimelineDecision::Hold;
        if !out_of_service {
            let (d, next) = should_clean(state, mse, f64::from(day), &run.policy, cycle_energy);
            if d == Decision::Clean {
                plant.path_opacity = fouling::mean_opacity(&field, &protocol.band.area)?;
                let outcome = relay::run_passes(protocol.passes_per_cleaning, &mut plant)?;
                state = ControllerState {
                    energy_spent_j: state.energy_spent_j + outcome.energy_j,
                    ..next
                };
                if outcome.stalled {
                    out_of_service = true;
                    decision = TimelineDecision::Stalled;
                } else {
                    field = fouling::wipe(&field, &protocol.band, outcome.passes_completed)?;
                    decision = TimelineDecision::Clean;
                }
            } else {
                state = next;
            }
        }
        timeline.push(TimelineEntry {
            day,
            mse,
            decision,
            cumulative_energy_j: state.energy_spent_j,
        });
    }
    Ok(timeline)
}

pub fn cleanings(timeline: &[TimelineEntry]) -> usize {
    timeline
        .iter()
        .filter(|e| e.decision == TimelineDecision::Clean)
        .count()
}

pub const TIMELINE_HEADER: &str = "day,mse,decision,cumulative_energy_J";

pub fn write_timeline_csv<W: Write>(mut out: W, timeline: &[TimelineEntry]) -> std::io::Result<()> {
    writeln!(out, "{TIMELINE_HEADER}")?;
    for e in timeline {
        writeln!(
            out,
            "{},{:.6},{},{:.6}",
            e.day, e.mse, e.decision, e.cumulative_energy_j
        )?;
    }
    Ok(())
}

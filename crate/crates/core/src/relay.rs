//! Latching-relay control of the wiper.
//!
//! A bistable two-coil relay sets the motor polarity. Limit switches at both
//! ends of the coverage pulse the opposite coil, so the carriage shuttles
//! between the ends without a motor driver.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanism::{self, Direction, DriveParams, MechanismState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WiperPhase {
    ParkedAtA,
    ParkedAtB,
    /// Moving from A to B.
    ForwardPass,
    /// Moving from B to A.
    ReversePass,
}

impl WiperPhase {
    pub const ALL: [WiperPhase; 4] = [
        WiperPhase::ParkedAtA,
        WiperPhase::ParkedAtB,
        WiperPhase::ForwardPass,
        WiperPhase::ReversePass,
    ];

    pub fn is_parked(self) -> bool {
        matches!(self, WiperPhase::ParkedAtA | WiperPhase::ParkedAtB)
    }

    /// Direction of carriage motion, `None` while parked.
    pub fn direction(self) -> Option<Direction> {
        match self {
            WiperPhase::ForwardPass => Some(Direction::Forward),
            WiperPhase::ReversePass => Some(Direction::Reverse),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            WiperPhase::ParkedAtA => "parked_a",
            WiperPhase::ParkedAtB => "parked_b",
            WiperPhase::ForwardPass => "forward",
            WiperPhase::ReversePass => "reverse",
        }
    }
}

impl fmt::Display for WiperPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RelayEvent {
    PowerOn,
    PowerOff,
    /// End A limit switch (position 0).
    LimitA,
    /// End B limit switch (full travel).
    LimitB,
}

impl RelayEvent {
    pub const ALL: [RelayEvent; 4] = [
        RelayEvent::PowerOn,
        RelayEvent::PowerOff,
        RelayEvent::LimitA,
        RelayEvent::LimitB,
    ];

    pub fn is_limit(self) -> bool {
        matches!(self, RelayEvent::LimitA | RelayEvent::LimitB)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RelayEvent::PowerOn => "power_on",
            RelayEvent::PowerOff => "power_off",
            RelayEvent::LimitA => "limit_a",
            RelayEvent::LimitB => "limit_b",
        }
    }
}

impl fmt::Display for RelayEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn violation(phase: WiperPhase, event: RelayEvent, detail: &str) -> Error {
    Error::ProtocolViolation {
        phase,
        event,
        detail: if detail.is_empty() {
            String::new()
        } else {
            format!(" ({detail})")
        },
    }
}

/// Relay transition function.
///
/// A limit switch can only be hit at the end the carriage is heading for (or
/// re-reported at the end it is parked on). PowerOff parks at the end last
/// reached, which for a pass is the end it started from.
pub fn handle_event(phase: WiperPhase, event: RelayEvent) -> Result<WiperPhase> {
    use RelayEvent::*;
    use WiperPhase::*;
    match (phase, event) {
        (ParkedAtA, PowerOn) => Ok(ForwardPass),
        (ParkedAtB, PowerOn) => Ok(ReversePass),
        (ForwardPass | ReversePass, PowerOn) => Ok(phase),

        (ParkedAtA | ParkedAtB, PowerOff) => Ok(phase),
        (ForwardPass, PowerOff) => Ok(ParkedAtA),
        (ReversePass, PowerOff) => Ok(ParkedAtB),

        (ForwardPass, LimitB) => Ok(ReversePass),
        (ReversePass, LimitA) => Ok(ForwardPass),
        (ParkedAtA, LimitA) | (ParkedAtB, LimitB) => Ok(phase),

        (ForwardPass, LimitA) => Err(violation(phase, event, "carriage is moving away from A")),
        (ReversePass, LimitB) => Err(violation(phase, event, "carriage is moving away from B")),
        (ParkedAtA, LimitB) => Err(violation(phase, event, "carriage is parked at A")),
        (ParkedAtB, LimitA) => Err(violation(phase, event, "carriage is parked at B")),
    }
}

/// Like [`handle_event`], but also checks the event against where the
/// carriage physically is. Limit switches fire only at their own end and
/// power is only cut at an end.
pub fn handle_event_at(
    phase: WiperPhase,
    event: RelayEvent,
    position_mm: f64,
    travel_mm: f64,
) -> Result<WiperPhase> {
    let at_a = position_mm <= 0.0;
    let at_b = position_mm >= travel_mm;
    match event {
        RelayEvent::LimitA if !at_a => {
            return Err(violation(
                phase,
                event,
                &format!("carriage at {position_mm} mm"),
            ))
        }
        RelayEvent::LimitB if !at_b => {
            return Err(violation(
                phase,
                event,
                &format!("carriage at {position_mm} mm"),
            ))
        }
        RelayEvent::PowerOff if !(at_a || at_b) => {
            return Err(violation(phase, event, "power is only cut at an end"))
        }
        _ => {}
    }
    let next = handle_event(phase, event)?;
    // parked phases must sit on their own end
    match next {
        WiperPhase::ParkedAtA if !at_a => Err(violation(phase, event, "would park away from A")),
        WiperPhase::ParkedAtB if !at_b => Err(violation(phase, event, "would park away from B")),
        _ => Ok(next),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceEvent {
    Relay(RelayEvent),
    /// The magnetic coupling broke away; no further events follow.
    Stalled,
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceEvent::Relay(e) => e.fmt(f),
            TraceEvent::Stalled => f.write_str("stalled"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub time_s: f64,
    pub event: TraceEvent,
    /// Phase after the event.
    pub phase: WiperPhase,
}

/// Writes a trace as `time_s,event,phase` lines with a header.
pub fn write_trace_csv<W: Write>(mut out: W, trace: &[TraceEntry]) -> std::io::Result<()> {
    writeln!(out, "time_s,event,phase")?;
    for e in trace {
        writeln!(out, "{:.6},{},{}", e.time_s, e.event, e.phase)?;
    }
    Ok(())
}

/// Relay, carriage and drive bundled as one controllable plant.
#[derive(Debug, Clone)]
pub struct RelayPlant {
    pub drive: DriveParams,
    pub state: MechanismState,
    pub phase: WiperPhase,
    pub dt_s: f64,
    /// Mean opacity on the wiper's path, feeding the coupling drag.
    pub path_opacity: f64,
    /// Forces the coupling to break the next time the carriage crosses this
    /// position. Consumed when it fires.
    pub fault_at_mm: Option<f64>,
}

impl RelayPlant {
    pub fn new(drive: DriveParams) -> Self {
        Self {
            drive,
            state: MechanismState::parked_at_a(),
            phase: WiperPhase::ParkedAtA,
            dt_s: 1e-3,
            path_opacity: 0.0,
            fault_at_mm: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PassOutcome {
    pub trace: Vec<TraceEntry>,
    pub final_phase: WiperPhase,
    pub energy_j: f64,
    pub passes_completed: u32,
    pub stalled: bool,
}

/// Energizes the plant, lets it make `n` end-to-end passes and cuts power at
/// the end reached.
///
/// Completed passes are billed at the steady-state pass energy. A pass cut
/// short by a coupling break-away is billed for the time the motor actually
/// ran before the stall.
pub fn run_passes(n: u32, plant: &mut RelayPlant) -> Result<PassOutcome> {
    if n == 0 {
        return Err(Error::invalid("at least one pass is required"));
    }
    if !plant.phase.is_parked() {
        return Err(Error::invalid(format!(
            "plant must start parked, found {}",
            plant.phase
        )));
    }
    if !(plant.dt_s > 0.0) {
        return Err(Error::invalid("plant time step must be positive"));
    }
    plant.drive.validate()?;
    let travel = plant.drive.screw.travel_mm;
    let power = mechanism::steady_power(&plant.drive.motor);
    let energy_per_pass = plant.drive.pass_energy()?;

    let mut trace = Vec::with_capacity(n as usize + 2);
    let mut state = mechanism::recouple(plant.state);
    let mut phase = handle_event_at(plant.phase, RelayEvent::PowerOn, state.position_mm, travel)?;
    trace.push(TraceEntry {
        time_s: state.elapsed_s,
        event: TraceEvent::Relay(RelayEvent::PowerOn),
        phase,
    });

    let mut completed = 0u32;
    let mut partial_energy = 0.0;
    let mut stalled = false;
    // guards against a drive that can never reach the far end
    let max_steps = ((plant.drive.pass_time()? / plant.dt_s).ceil() as u64).saturating_mul(4) + 16;

    while completed < n {
        let direction = phase.direction().expect("moving phase while powered");
        state.direction = direction;
        let pass_start = state.elapsed_s;
        let mut steps = 0u64;
        loop {
            let before = state.position_mm;
            state = mechanism::step_carriage(
                state,
                plant.dt_s,
                &plant.drive.screw,
                &plant.drive.gears,
                &plant.drive.motor,
                &plant.drive.coupling,
                plant.path_opacity,
            )?;
            steps += 1;
            if let Some(fault) = plant.fault_at_mm {
                let (lo, hi) = if before <= state.position_mm {
                    (before, state.position_mm)
                } else {
                    (state.position_mm, before)
                };
                if state.coupled && fault >= lo && fault <= hi && lo != hi {
                    state.position_mm = fault;
                    state.coupled = false;
                    plant.fault_at_mm = None;
                }
            }
            if !state.coupled {
                stalled = true;
                break;
            }
            let arrived = match direction {
                Direction::Forward => state.position_mm >= travel,
                Direction::Reverse => state.position_mm <= 0.0,
            };
            if arrived {
                break;
            }
            if steps > max_steps {
                return Err(Error::invalid("carriage failed to reach the end of travel"));
            }
        }
        if stalled {
            partial_energy = mechanism::pass_energy(power, state.elapsed_s - pass_start);
            trace.push(TraceEntry {
                time_s: state.elapsed_s,
                event: TraceEvent::Stalled,
                phase,
            });
            break;
        }
        let limit = match direction {
            Direction::Forward => RelayEvent::LimitB,
            Direction::Reverse => RelayEvent::LimitA,
        };
        phase = handle_event_at(phase, limit, state.position_mm, travel)?;
        completed += 1;
        trace.push(TraceEntry {
            time_s: state.elapsed_s,
            event: TraceEvent::Relay(limit),
            phase,
        });
    }

    if !stalled {
        phase = handle_event_at(phase, RelayEvent::PowerOff, state.position_mm, travel)?;
        trace.push(TraceEntry {
            time_s: state.elapsed_s,
            event: TraceEvent::Relay(RelayEvent::PowerOff),
            phase,
        });
    }

    plant.state = state;
    plant.phase = phase;
    Ok(PassOutcome {
        trace,
        final_phase: phase,
        energy_j: f64::from(completed) * energy_per_pass + partial_energy,
        passes_completed: completed,
        stalled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use RelayEvent::*;
    use WiperPhase::*;

    fn events(outcome: &PassOutcome) -> Vec<TraceEvent> {
        outcome.trace.iter().map(|e| e.event).collect()
    }

    #[test]
    fn transition_examples() {
        assert_eq!(handle_event(ForwardPass, LimitB).unwrap(), ReversePass);
        assert_eq!(handle_event(ParkedAtA, PowerOn).unwrap(), ForwardPass);
        assert_eq!(handle_event(ReversePass, LimitA).unwrap(), ForwardPass);
        assert_eq!(handle_event(ParkedAtB, PowerOn).unwrap(), ReversePass);
    }

    #[test]
    fn inconsistent_limit_is_a_violation() {
        let err = handle_event(ForwardPass, LimitA).unwrap_err();
        assert!(matches!(err, Error::ProtocolViolation { .. }));
        assert!(handle_event(ParkedAtB, LimitA).is_err());
    }

    #[test]
    fn position_checks() {
        assert!(handle_event_at(ForwardPass, LimitB, 20.0, 40.0).is_err());
        assert!(handle_event_at(ForwardPass, PowerOff, 20.0, 40.0).is_err());
        assert_eq!(
            handle_event_at(ForwardPass, PowerOff, 0.0, 40.0).unwrap(),
            ParkedAtA
        );
        assert_eq!(
            handle_event_at(ForwardPass, LimitB, 40.0, 40.0).unwrap(),
            ReversePass
        );
    }

    #[test]
    fn full_cycle_trace() {
        let mut plant = RelayPlant::new(DriveParams::default());
        let out = run_passes(2, &mut plant).unwrap();
        assert_eq!(
            events(&out),
            vec![
                TraceEvent::Relay(PowerOn),
                TraceEvent::Relay(LimitB),
                TraceEvent::Relay(LimitA),
                TraceEvent::Relay(PowerOff)
            ]
        );
        assert_eq!(out.final_phase, ParkedAtA);
        assert!((out.trace[1].time_s - 8.0).abs() <= 2.0 * plant.dt_s);
        assert!((out.trace[2].time_s - 16.0).abs() <= 2.0 * plant.dt_s);
    }

    #[test]
    fn single_pass_energy() {
        let mut plant = RelayPlant::new(DriveParams::default());
        let out = run_passes(1, &mut plant).unwrap();
        assert!((out.energy_j - 6.72).abs() < 1e-12);
        assert_eq!(out.final_phase, ParkedAtB);
        assert_eq!(plant.phase, ParkedAtB);
        assert_eq!(plant.state.position_mm, 40.0);
    }

    #[test]
    fn forced_decouple_mid_travel() {
        let mut plant = RelayPlant::new(DriveParams::default());
        plant.fault_at_mm = Some(20.0);
        let out = run_passes(3, &mut plant).unwrap();
        assert!(out.stalled);
        assert_eq!(out.trace.last().unwrap().event, TraceEvent::Stalled);
        assert_eq!(out.passes_completed, 0);
        // 20 mm at 5 mm/s is 4 s of motor time at 0.84 W
        let expected = 0.84 * 4.0;
        assert!((out.energy_j - expected).abs() <= 0.84 * plant.dt_s + 1e-12);
        assert!((plant.state.position_mm - 20.0).abs() < 1e-12);
        assert!(!plant.state.coupled);
    }

    #[test]
    fn zero_passes_rejected() {
        let mut plant = RelayPlant::new(DriveParams::default());
        assert!(run_passes(0, &mut plant).is_err());
    }

    #[test]
    fn trace_csv_layout() {
        let mut plant = RelayPlant::new(DriveParams::default());
        let out = run_passes(1, &mut plant).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &out.trace).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "time_s,event,phase");
        assert_eq!(lines[1], "0.000000,power_on,forward");
        assert!(lines[2].ends_with(",limit_b,reverse"));
        assert!(lines[3].ends_with(",power_off,parked_b"));
    }
}

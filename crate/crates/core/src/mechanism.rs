//! Kinematics and energetics of the wiper drive.
//!
//! Two transmissions are modeled: the geared lead screw used by the final
//! prototype and the scotch yoke of the first one. The internal carriage
//! drags the external wiper through a magnetic coupling that breaks away
//! when the lateral load exceeds its holding force.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spur gear pair between the motor pinion and the screw gears.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GearTrain {
    pub driver_teeth: u32,
    pub driven_teeth: u32,
    pub module_mm: f64,
}

impl Default for GearTrain {
    fn default() -> Self {
        Self {
            driver_teeth: 20,
            driven_teeth: 38,
            module_mm: 1.0,
        }
    }
}

impl GearTrain {
    pub fn validate(&self) -> Result<()> {
        if self.driver_teeth == 0 || self.driven_teeth == 0 {
            return Err(Error::invalid(
                "gear train needs at least one tooth per gear",
            ));
        }
        if !(self.module_mm > 0.0 && self.module_mm.is_finite()) {
            return Err(Error::invalid(format!(
                "gear module must be positive, got {}",
                self.module_mm
            )));
        }
        Ok(())
    }

    /// Pitch diameter of the driven gear.
    pub fn driven_pitch_diameter_mm(&self) -> f64 {
        self.module_mm * f64::from(self.driven_teeth)
    }
}

/// Output over input angular speed of the gear pair.
pub fn gear_ratio(train: &GearTrain) -> Result<f64> {
    train.validate()?;
    Ok(f64::from(train.driver_teeth) / f64::from(train.driven_teeth))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeadScrew {
    pub lead_mm_per_rev: f64,
    pub travel_mm: f64,
}

/// Length of the M3 screws; carriage travel can never exceed it.
pub const SCREW_LENGTH_MM: f64 = 75.0;

impl Default for LeadScrew {
    fn default() -> Self {
        // M3 coarse pitch, 75 mm screw minus holder width and end clearances.
        Self {
            lead_mm_per_rev: 0.5,
            travel_mm: 40.0,
        }
    }
}

impl LeadScrew {
    pub fn validate(&self) -> Result<()> {
        if !(self.lead_mm_per_rev > 0.0 && self.lead_mm_per_rev.is_finite()) {
            return Err(Error::invalid(format!(
                "screw lead must be positive, got {}",
                self.lead_mm_per_rev
            )));
        }
        // Zero travel is accepted as a degenerate screw for timing queries.
        if !(self.travel_mm >= 0.0 && self.travel_mm <= SCREW_LENGTH_MM) {
            return Err(Error::invalid(format!(
                "travel must lie in [0, {SCREW_LENGTH_MM}] mm, got {}",
                self.travel_mm
            )));
        }
        Ok(())
    }
}

/// Pin-in-slot crank converting gear rotation to reciprocation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScotchYoke {
    pub crank_radius_mm: f64,
}

impl Default for ScotchYoke {
    fn default() -> Self {
        Self {
            crank_radius_mm: 10.0,
        }
    }
}

impl ScotchYoke {
    /// The crank pin sits on the driven gear, so the stroke is bounded by its
    /// pitch diameter.
    pub fn validate(&self, gear: &GearTrain) -> Result<()> {
        gear.validate()?;
        if !(self.crank_radius_mm > 0.0 && self.crank_radius_mm.is_finite()) {
            return Err(Error::invalid("crank radius must be positive"));
        }
        if self.stroke_mm() > gear.driven_pitch_diameter_mm() {
            return Err(Error::invalid(format!(
                "yoke stroke {} mm exceeds gear diameter {} mm",
                self.stroke_mm(),
                gear.driven_pitch_diameter_mm()
            )));
        }
        Ok(())
    }

    pub fn stroke_mm(&self) -> f64 {
        2.0 * self.crank_radius_mm
    }

    /// Slot velocity for crank angular speed `omega_rad_s`.
    pub fn velocity(&self, crank_angle_rad: f64, omega_rad_s: f64) -> f64 {
        self.crank_radius_mm * omega_rad_s * crank_angle_rad.cos()
    }

    /// Time for one stroke (half a crank revolution).
    pub fn pass_time(&self, train: &GearTrain, motor: &MotorSpec) -> Result<f64> {
        self.validate(train)?;
        motor.validate()?;
        let crank_rev_per_s = motor.speed_rev_per_s * gear_ratio(train)?;
        if crank_rev_per_s <= 0.0 {
            return Err(Error::invalid(
                "motor speed must be positive to time a pass",
            ));
        }
        Ok(0.5 / crank_rev_per_s)
    }
}

/// Yoke displacement from the crank centre line, `r sin(theta)`.
pub fn scotch_yoke_position(crank_angle_rad: f64, yoke: &ScotchYoke) -> f64 {
    yoke.crank_radius_mm * crank_angle_rad.sin()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MagneticCoupling {
    pub max_lateral_force_n: f64,
    /// Drag per unit of opacity along the wiper's path.
    pub drag_coeff_n_per_opacity: f64,
    pub viscous_drag_n_s_per_mm: f64,
}

impl Default for MagneticCoupling {
    fn default() -> Self {
        Self {
            max_lateral_force_n: 1.5,
            drag_coeff_n_per_opacity: 1.0,
            viscous_drag_n_s_per_mm: 0.02,
        }
    }
}

impl MagneticCoupling {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.max_lateral_force_n,
            self.drag_coeff_n_per_opacity,
            self.viscous_drag_n_s_per_mm,
        ];
        if fields.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::invalid(
                "magnetic coupling parameters must be nonnegative",
            ));
        }
        Ok(())
    }

    /// Lateral load on the external wiper.
    pub fn drag_n(&self, path_opacity: f64, speed_mm_s: f64) -> f64 {
        self.drag_coeff_n_per_opacity * path_opacity + self.viscous_drag_n_s_per_mm * speed_mm_s
    }

    pub fn holds(&self, path_opacity: f64, speed_mm_s: f64) -> bool {
        self.drag_n(path_opacity, speed_mm_s) <= self.max_lateral_force_n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotorSpec {
    pub rated_voltage_v: f64,
    pub steady_current_a: f64,
    pub speed_rev_per_s: f64,
}

impl Default for MotorSpec {
    fn default() -> Self {
        // Speed chosen so the default screw makes one pass in 8 s.
        Self {
            rated_voltage_v: 6.0,
            steady_current_a: 0.14,
            speed_rev_per_s: 19.0,
        }
    }
}

impl MotorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.rated_voltage_v > 0.0) {
            return Err(Error::invalid("rated voltage must be positive"));
        }
        if !(self.steady_current_a >= 0.0) || !(self.speed_rev_per_s >= 0.0) {
            return Err(Error::invalid(
                "motor current and speed must be nonnegative",
            ));
        }
        Ok(())
    }
}

/// Linear carriage speed of the geared lead screw.
pub fn carriage_speed(screw: &LeadScrew, train: &GearTrain, motor: &MotorSpec) -> Result<f64> {
    Ok(screw.lead_mm_per_rev * motor.speed_rev_per_s * gear_ratio(train)?)
}

/// Time for the carriage to cross the full travel once.
pub fn pass_time(screw: &LeadScrew, train: &GearTrain, motor: &MotorSpec) -> Result<f64> {
    screw.validate()?;
    motor.validate()?;
    if motor.speed_rev_per_s <= 0.0 {
        return Err(Error::invalid(
            "motor speed must be positive to time a pass",
        ));
    }
    Ok(screw.travel_mm / carriage_speed(screw, train, motor)?)
}

pub fn steady_power(motor: &MotorSpec) -> f64 {
    motor.rated_voltage_v * motor.steady_current_a
}

pub fn pass_energy(power_w: f64, time_s: f64) -> f64 {
    power_w * time_s
}

/// Carriage travel direction along the screw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    /// From end A (position 0) towards end B (full travel).
    Forward,
    Reverse,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Reverse => -1.0,
        }
    }

    pub fn reversed(self) -> Self {
        match self {
            Direction::Forward => Direction::Reverse,
            Direction::Reverse => Direction::Forward,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MechanismState {
    pub position_mm: f64,
    pub direction: Direction,
    pub coupled: bool,
    pub elapsed_s: f64,
}

impl MechanismState {
    pub fn parked_at_a() -> Self {
        Self {
            position_mm: 0.0,
            direction: Direction::Forward,
            coupled: true,
            elapsed_s: 0.0,
        }
    }
}

/// Complete drive description for the lead-screw transmission.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriveParams {
    pub screw: LeadScrew,
    pub gears: GearTrain,
    pub motor: MotorSpec,
    pub coupling: MagneticCoupling,
    pub yoke: ScotchYoke,
}

impl DriveParams {
    pub fn validate(&self) -> Result<()> {
        self.screw.validate()?;
        self.gears.validate()?;
        self.motor.validate()?;
        self.coupling.validate()?;
        self.yoke.validate(&self.gears)
    }

    pub fn pass_time(&self) -> Result<f64> {
        pass_time(&self.screw, &self.gears, &self.motor)
    }

    /// Energy drawn by one pass at steady state.
    pub fn pass_energy(&self) -> Result<f64> {
        Ok(pass_energy(steady_power(&self.motor), self.pass_time()?))
    }
}

/// Advances the carriage by one fixed time step.
///
/// The coupling breaks when the lateral drag at the commanded speed exceeds
/// its holding force. A decoupled carriage stays where it is until
/// [`recouple`] is called; time keeps running either way.
pub fn step_carriage(
    state: MechanismState,
    dt_s: f64,
    screw: &LeadScrew,
    train: &GearTrain,
    motor: &MotorSpec,
    coupling: &MagneticCoupling,
    path_opacity: f64,
) -> Result<MechanismState> {
    if !(dt_s > 0.0) {
        return Err(Error::invalid(format!(
            "time step must be positive, got {dt_s}"
        )));
    }
    let mut next = state;
    next.elapsed_s += dt_s;
    if !state.coupled {
        return Ok(next);
    }
    let speed = carriage_speed(screw, train, motor)?;
    if !coupling.holds(path_opacity, speed) {
        next.coupled = false;
        return Ok(next);
    }
    let advance = state.direction.sign() * speed * dt_s;
    next.position_mm = (state.position_mm + advance).clamp(0.0, screw.travel_mm);
    Ok(next)
}

pub fn recouple(state: MechanismState) -> MechanismState {
    MechanismState {
        coupled: true,
        ..state
    }
}

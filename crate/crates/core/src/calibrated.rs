//! Growth parameters fitted to the reference control trajectory.
//!
//! Produced by `biowipe calibrate` with the bundled targets and the default
//! configuration; see `configs/reference_targets.csv`.

use crate::fouling::GrowthParams;

pub fn growth() -> GrowthParams {
    GrowthParams {
        rate_per_day: 0.075,
        seed_rate_per_day: 16.666666666666668,
        seed_opacity: 0.35,
        colony_radius_mm: 0.5,
        stimulation_factor: 1.0,
        spread_per_day: 0.05,
        rng_seed: 7,
    }
}

//! Biofilm growth on the observation window and its removal by the wiper.
//!
//! Growth is phenomenological: each cell follows a logistic law, opacity
//! diffuses to the four neighbours, and new colonies settle as discs at
//! Poisson-distributed times and uniformly random places.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sampled screen area, rows run along the height.
pub const WINDOW_HEIGHT_MM: f64 = 45.0;
pub const WINDOW_WIDTH_MM: f64 = 60.0;

/// Fouling opacity over the observation window, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct OpacityField {
    rows: usize,
    cols: usize,
    cell_size_mm: f64,
    cells: Vec<f64>,
}

impl OpacityField {
    /// Clean window sampled at `cell_size_mm`. The cell size must tile both
    /// window sides.
    pub fn clean(cell_size_mm: f64) -> Result<Self> {
        if !(cell_size_mm > 0.0 && cell_size_mm.is_finite()) {
            return Err(Error::invalid(format!(
                "cell size must be positive, got {cell_size_mm}"
            )));
        }
        let rows = (WINDOW_HEIGHT_MM / cell_size_mm).round();
        let cols = (WINDOW_WIDTH_MM / cell_size_mm).round();
        let tiles = |n: f64, side: f64| n >= 1.0 && (n * cell_size_mm - side).abs() < 1e-9 * side;
        if !tiles(rows, WINDOW_HEIGHT_MM) || !tiles(cols, WINDOW_WIDTH_MM) {
            return Err(Error::invalid(format!(
                "cell size {cell_size_mm} mm does not tile the {WINDOW_WIDTH_MM}x{WINDOW_HEIGHT_MM} mm window"
            )));
        }
        let (rows, cols) = (rows as usize, cols as usize);
        Ok(Self {
            rows,
            cols,
            cell_size_mm,
            cells: vec![0.0; rows * cols],
        })
    }

    pub fn uniform(cell_size_mm: f64, opacity: f64) -> Result<Self> {
        let mut f = Self::clean(cell_size_mm)?;
        f.cells.fill(opacity.clamp(0.0, 1.0));
        Ok(f)
    }

    /// Builds a field from explicit cell values, clamping them to [0, 1].
    pub fn from_cells(cell_size_mm: f64, cells: Vec<f64>) -> Result<Self> {
        let mut f = Self::clean(cell_size_mm)?;
        if cells.len() != f.cells.len() {
            return Err(Error::ShapeMismatch {
                left: format!("{} cells", cells.len()),
                right: format!("{}x{} grid", f.rows, f.cols),
            });
        }
        f.cells = cells.into_iter().map(|o| o.clamp(0.0, 1.0)).collect();
        Ok(f)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cell_size_mm(&self) -> f64 {
        self.cell_size_mm
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.cells[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, opacity: f64) {
        self.cells[row * self.cols + col] = opacity.clamp(0.0, 1.0);
    }

    /// Opacity at window coordinates (x across the width, y down the height).
    pub fn at_mm(&self, x_mm: f64, y_mm: f64) -> f64 {
        let col = ((x_mm / self.cell_size_mm) as usize).min(self.cols - 1);
        let row = ((y_mm / self.cell_size_mm) as usize).min(self.rows - 1);
        self.get(row, col)
    }

    fn cell_centre(&self, row: usize, col: usize) -> (f64, f64) {
        (
            (col as f64 + 0.5) * self.cell_size_mm,
            (row as f64 + 0.5) * self.cell_size_mm,
        )
    }
}

/// Axis-aligned rectangle in window millimetres, half-open on the far sides.
/// A cell belongs to the rectangle when its centre does.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RectMm {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl RectMm {
    pub fn window() -> Self {
        Self {
            x_min: 0.0,
            x_max: WINDOW_WIDTH_MM,
            y_min: 0.0,
            y_max: WINDOW_HEIGHT_MM,
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x < self.x_max && y >= self.y_min && y < self.y_max
    }

    pub fn within_window(&self) -> bool {
        self.x_min >= 0.0
            && self.y_min >= 0.0
            && self.x_max <= WINDOW_WIDTH_MM
            && self.y_max <= WINDOW_HEIGHT_MM
            && self.x_min <= self.x_max
            && self.y_min <= self.y_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrowthParams {
    /// Logistic growth rate of established film.
    pub rate_per_day: f64,
    /// Mean number of new colonies settling on the window per day.
    pub seed_rate_per_day: f64,
    pub seed_opacity: f64,
    pub colony_radius_mm: f64,
    /// Biostimulant multiplier on the growth rate; 1 without stimulant.
    pub stimulation_factor: f64,
    /// Neighbour exchange coefficient of the diffusion spread, per day.
    pub spread_per_day: f64,
    pub rng_seed: u64,
}

impl Default for GrowthParams {
    fn default() -> Self {
        crate::calibrated::growth()
    }
}

impl GrowthParams {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("rate_per_day", self.rate_per_day),
            ("seed_rate_per_day", self.seed_rate_per_day),
            ("seed_opacity", self.seed_opacity),
            ("colony_radius_mm", self.colony_radius_mm),
            ("stimulation_factor", self.stimulation_factor),
            ("spread_per_day", self.spread_per_day),
        ];
        for (name, v) in named {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        if self.seed_opacity > 1.0 {
            return Err(Error::invalid("seed_opacity must not exceed 1"));
        }
        Ok(())
    }

    /// Parameters under which nothing ever grows.
    pub fn inert() -> Self {
        Self {
            rate_per_day: 0.0,
            seed_rate_per_day: 0.0,
            spread_per_day: 0.0,
            ..Self::default()
        }
    }
}

/// Advances the field by `dt_days`.
///
/// The deterministic part (diffusion then logistic growth, split per
/// sub-step) runs first; colonies drawn from `rng` are stamped afterwards in
/// draw order. The interval is sub-stepped whenever a single explicit step
/// could leave [0, 1].
pub fn grow<R: Rng + ?Sized>(
    field: &OpacityField,
    params: &GrowthParams,
    dt_days: f64,
    rng: &mut R,
) -> Result<OpacityField> {
    params.validate()?;
    if !(dt_days > 0.0 && dt_days.is_finite()) {
        return Err(Error::invalid(format!(
            "growth step must be positive, got {dt_days}"
        )));
    }
    let logistic_k = params.stimulation_factor * params.rate_per_day * dt_days;
    let spread_k = params.spread_per_day * dt_days;
    let substeps = (logistic_k.ceil().max((4.0 * spread_k).ceil()).max(1.0)) as usize;
    let logistic_k = logistic_k / substeps as f64;
    let spread_k = spread_k / substeps as f64;

    let mut current = field.clone();
    let mut scratch = field.cells.clone();
    for _ in 0..substeps {
        step_cells(&current, &mut scratch, logistic_k, spread_k);
        std::mem::swap(&mut current.cells, &mut scratch);
    }

    let expected = params.seed_rate_per_day * dt_days;
    if expected > 0.0 {
        let count = Poisson::new(expected)
            .map_err(|e| Error::invalid(format!("seeding rate: {e}")))?
            .sample(rng) as u64;
        for _ in 0..count {
            let x = rng.random::<f64>() * WINDOW_WIDTH_MM;
            let y = rng.random::<f64>() * WINDOW_HEIGHT_MM;
            stamp_colony(
                &mut current,
                x,
                y,
                params.colony_radius_mm,
                params.seed_opacity,
            );
        }
    }
    Ok(current)
}

fn step_cells(field: &OpacityField, out: &mut [f64], logistic_k: f64, spread_k: f64) {
    let (rows, cols) = (field.rows, field.cols);
    let src = &field.cells;
    out.par_chunks_mut(cols)
        .enumerate()
        .for_each(|(r, row_out)| {
            for (c, o_out) in row_out.iter_mut().enumerate() {
                let o = src[r * cols + c];
                // no-flux boundary: missing neighbours contribute nothing
                let mut exchange = 0.0;
                if r > 0 {
                    exchange += src[(r - 1) * cols + c] - o;
                }
                if r + 1 < rows {
                    exchange += src[(r + 1) * cols + c] - o;
                }
                if c > 0 {
                    exchange += src[r * cols + c - 1] - o;
                }
                if c + 1 < cols {
                    exchange += src[r * cols + c + 1] - o;
                }
                let spread = (o + spread_k * exchange).clamp(0.0, 1.0);
                *o_out = (spread + logistic_k * spread * (1.0 - spread)).clamp(0.0, 1.0);
            }
        });
}

fn stamp_colony(field: &mut OpacityField, x: f64, y: f64, radius: f64, opacity: f64) {
    let cs = field.cell_size_mm;
    let r0 = (((y - radius) / cs).floor().max(0.0)) as usize;
    let r1 = (((y + radius) / cs).ceil() as usize).min(field.rows);
    let c0 = (((x - radius) / cs).floor().max(0.0)) as usize;
    let c1 = (((x + radius) / cs).ceil() as usize).min(field.cols);
    let mut hit = false;
    for r in r0..r1 {
        for c in c0..c1 {
            let (cx, cy) = field.cell_centre(r, c);
            if (cx - x).powi(2) + (cy - y).powi(2) <= radius * radius {
                let cell = &mut field.cells[r * field.cols + c];
                *cell = cell.max(opacity);
                hit = true;
            }
        }
    }
    // colonies smaller than a cell still mark the cell they land in
    if !hit {
        let r = ((y / cs) as usize).min(field.rows - 1);
        let c = ((x / cs) as usize).min(field.cols - 1);
        let cell = &mut field.cells[r * field.cols + c];
        *cell = cell.max(opacity);
    }
}

/// Growth process with its own seeded random stream, so repeated calls
/// settle colonies at fresh places while staying reproducible.
#[derive(Debug, Clone)]
pub struct GrowthModel {
    pub params: GrowthParams,
    rng: ChaCha8Rng,
}

impl GrowthModel {
    pub fn new(params: GrowthParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(params.rng_seed),
            params,
        })
    }

    pub fn grow(&mut self, field: &OpacityField, dt_days: f64) -> Result<OpacityField> {
        grow(field, &self.params, dt_days, &mut self.rng)
    }

    /// Grows over `days` in steps no longer than `max_step_days`.
    pub fn advance(
        &mut self,
        field: &OpacityField,
        days: f64,
        max_step_days: f64,
    ) -> Result<OpacityField> {
        if days == 0.0 {
            return Ok(field.clone());
        }
        if !(max_step_days > 0.0) || !(days > 0.0) {
            return Err(Error::invalid("growth horizon and step must be positive"));
        }
        let steps = (days / max_step_days).ceil().max(1.0) as usize;
        let dt = days / steps as f64;
        let mut f = field.clone();
        for _ in 0..steps {
            f = self.grow(&f, dt)?;
        }
        Ok(f)
    }
}

/// Area swept by the wiper and how well one pass cleans it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WiperBand {
    pub area: RectMm,
    /// Fraction of opacity removed per pass.
    pub efficiency: f64,
    /// Opacity added by scratching per pass.
    pub scratch_haze_per_pass: f64,
}

impl Default for WiperBand {
    fn default() -> Self {
        // 40 mm of carriage travel plus a 16 mm blade, centred on the window.
        Self {
            area: RectMm {
                x_min: 2.0,
                x_max: 58.0,
                y_min: 0.0,
                y_max: WINDOW_HEIGHT_MM,
            },
            efficiency: 0.9,
            scratch_haze_per_pass: 0.0,
        }
    }
}

impl WiperBand {
    pub fn validate(&self) -> Result<()> {
        if !self.area.within_window() {
            return Err(Error::invalid("wiper band must lie inside the window"));
        }
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(Error::invalid(format!(
                "wiper efficiency must be in [0, 1], got {}",
                self.efficiency
            )));
        }
        if !(self.scratch_haze_per_pass >= 0.0) {
            return Err(Error::invalid("scratch haze must be nonnegative"));
        }
        Ok(())
    }
}

pub fn wipe(field: &OpacityField, band: &WiperBand, pass_count: u32) -> Result<OpacityField> {
    band.validate()?;
    if pass_count == 0 {
        return Err(Error::invalid("wipe needs at least one pass"));
    }
    let keep = (1.0 - band.efficiency).powi(pass_count as i32);
    let haze = band.scratch_haze_per_pass * f64::from(pass_count);
    let mut out = field.clone();
    for r in 0..field.rows {
        for c in 0..field.cols {
            let (x, y) = field.cell_centre(r, c);
            if band.area.contains(x, y) {
                let cell = &mut out.cells[r * field.cols + c];
                *cell = (*cell * keep + haze).clamp(0.0, 1.0);
            }
        }
    }
    Ok(out)
}

/// Mean opacity of the cells whose centres fall inside `region`.
pub fn mean_opacity(field: &OpacityField, region: &RectMm) -> Result<f64> {
    if !region.within_window() {
        return Err(Error::invalid("region must lie inside the window"));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for r in 0..field.rows {
        for c in 0..field.cols {
            let (x, y) = field.cell_centre(r, c);
            if region.contains(x, y) {
                sum += field.get(r, c);
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::invalid("region contains no cells"));
    }
    Ok(sum / n as f64)
}

/// Mean opacity of the cells outside `region`.
pub fn mean_opacity_outside(field: &OpacityField, region: &RectMm) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for r in 0..field.rows {
        for c in 0..field.cols {
            let (x, y) = field.cell_centre(r, c);
            if !region.contains(x, y) {
                sum += field.get(r, c);
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::invalid("no cells outside the region"));
    }
    Ok(sum / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_spread(rate: f64) -> GrowthParams {
        GrowthParams {
            rate_per_day: rate,
            seed_rate_per_day: 0.0,
            seed_opacity: 0.3,
            colony_radius_mm: 1.0,
            stimulation_factor: 1.0,
            spread_per_day: 0.0,
            rng_seed: 1,
        }
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn default_grid_is_180_by_240() {
        let f = OpacityField::clean(0.25).unwrap();
        assert_eq!((f.rows(), f.cols()), (180, 240));
        assert!(OpacityField::clean(0.7).is_err());
    }

    #[test]
    fn logistic_fixed_points_and_step() {
        for (o, expected) in [(0.0, 0.0), (1.0, 1.0), (0.5, 0.6)] {
            let f = OpacityField::uniform(2.5, o).unwrap();
            let g = grow(&f, &no_spread(0.4), 1.0, &mut rng()).unwrap();
            for &v in g.cells() {
                assert!((v - expected).abs() < 1e-15, "{o} -> {v}");
            }
        }
    }

    #[test]
    fn stimulation_scales_rate() {
        let f = OpacityField::uniform(2.5, 0.5).unwrap();
        let p = GrowthParams {
            stimulation_factor: 2.0,
            ..no_spread(0.2)
        };
        let g = grow(&f, &p, 1.0, &mut rng()).unwrap();
        assert!((g.get(0, 0) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn spread_conserves_mass_without_growth() {
        let mut f = OpacityField::clean(2.5).unwrap();
        f.set(5, 5, 1.0);
        let p = GrowthParams {
            spread_per_day: 0.2,
            ..no_spread(0.0)
        };
        let g = grow(&f, &p, 1.0, &mut rng()).unwrap();
        let total: f64 = g.cells().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!((g.get(5, 5) - 0.2).abs() < 1e-12);
        assert!((g.get(5, 6) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn seeding_is_reproducible() {
        let p = GrowthParams {
            seed_rate_per_day: 20.0,
            ..no_spread(0.3)
        };
        let f = OpacityField::clean(0.5).unwrap();
        let mut a = GrowthModel::new(p).unwrap();
        let mut b = GrowthModel::new(p).unwrap();
        let fa = a.advance(&f, 4.0, 0.5).unwrap();
        let fb = b.advance(&f, 4.0, 0.5).unwrap();
        assert_eq!(fa, fb);
        assert!(fa.cells().iter().any(|&o| o > 0.0));
    }

    #[test]
    fn wipe_examples() {
        let band = WiperBand {
            efficiency: 1.0,
            ..WiperBand::default()
        };
        let f = OpacityField::uniform(0.25, 0.7).unwrap();
        let w = wipe(&f, &band, 1).unwrap();
        assert_eq!(mean_opacity(&w, &band.area).unwrap(), 0.0);
        assert!((mean_opacity_outside(&w, &band.area).unwrap() - 0.7).abs() < 1e-12);

        let f = OpacityField::uniform(0.25, 0.5).unwrap();
        let band = WiperBand::default();
        let one = wipe(&f, &band, 1).unwrap();
        assert!((mean_opacity(&one, &band.area).unwrap() - 0.05).abs() < 1e-12);
        let two = wipe(&f, &band, 2).unwrap();
        assert!((mean_opacity(&two, &band.area).unwrap() - 0.005).abs() < 1e-12);
        assert!(wipe(&f, &band, 0).is_err());
    }

    #[test]
    fn haze_accumulates_per_pass() {
        let band = WiperBand {
            efficiency: 1.0,
            scratch_haze_per_pass: 0.01,
            ..WiperBand::default()
        };
        let f = OpacityField::uniform(0.25, 0.5).unwrap();
        let w = wipe(&f, &band, 3).unwrap();
        assert!((mean_opacity(&w, &band.area).unwrap() - 0.03).abs() < 1e-12);
    }

    #[test]
    fn mean_opacity_cases() {
        let f = OpacityField::uniform(0.25, 0.3).unwrap();
        assert!((mean_opacity(&f, &RectMm::window()).unwrap() - 0.3).abs() < 1e-12);
        let z = OpacityField::clean(0.25).unwrap();
        assert_eq!(mean_opacity(&z, &RectMm::window()).unwrap(), 0.0);

        let mut half = OpacityField::clean(0.25).unwrap();
        for r in 0..half.rows() {
            for c in half.cols() / 2..half.cols() {
                half.set(r, c, 1.0);
            }
        }
        assert!((mean_opacity(&half, &RectMm::window()).unwrap() - 0.5).abs() < 1e-12);

        let empty = RectMm {
            x_min: 10.0,
            x_max: 10.0,
            y_min: 0.0,
            y_max: 5.0,
        };
        assert!(mean_opacity(&f, &empty).is_err());
    }

    #[test]
    fn large_steps_are_substepped_within_range() {
        let p = GrowthParams {
            rate_per_day: 5.0,
            spread_per_day: 3.0,
            ..no_spread(0.0)
        };
        let mut f = OpacityField::clean(2.5).unwrap();
        f.set(3, 3, 0.9);
        let g = grow(&f, &p, 2.0, &mut rng()).unwrap();
        assert!(g.cells().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

//! Control-versus-treated fouling experiment.
//!
//! Both arms start from the same clean window and see the same colony
//! settlement. The treated arm is wiped right before every imaging session
//! after Day 0. Each session takes several replicate frames that differ only
//! in sensor noise; every frame is binarized and compared against the first
//! Day-0 control frame and against its counterpart in the other arm.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fouling::{self, GrowthModel, GrowthParams, OpacityField, WiperBand};
use crate::imaging::{self, BinaryImage, GrayImage, RenderParams, ThresholdParams};
use crate::mechanism::DriveParams;
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Control,
    Treated,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Control, Arm::Treated];

    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Control => "control",
            Arm::Treated => "treated",
        }
    }

    fn index(self) -> u64 {
        match self {
            Arm::Control => 0,
            Arm::Treated => 1,
        }
    }
}

impl std::str::FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "control" => Ok(Arm::Control),
            "treated" => Ok(Arm::Treated),
            other => Err(Error::invalid(format!("unknown arm '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub observation_days: Vec<u32>,
    pub replicates: u32,
    pub seed: u64,
    pub cell_size_mm: f64,
    /// Longest growth integration step.
    pub growth_step_days: f64,
    /// Passes per cleaning session of the treated arm.
    pub passes_per_cleaning: u32,
    pub growth: GrowthParams,
    pub band: WiperBand,
    pub render: RenderParams,
    pub threshold: ThresholdParams,
    pub drive: DriveParams,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            observation_days: vec![0, 8, 13, 16],
            replicates: 3,
            seed: 2022,
            cell_size_mm: 0.25,
            growth_step_days: 0.5,
            passes_per_cleaning: 1,
            growth: GrowthParams::default(),
            band: WiperBand::default(),
            render: RenderParams::default(),
            threshold: ThresholdParams::default(),
            drive: DriveParams::default(),
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        match self.observation_days.first() {
            Some(0) => {}
            _ => return Err(Error::invalid("observation days must start at day 0")),
        }
        if self.observation_days.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(
                "observation days must be strictly increasing",
            ));
        }
        if self.replicates == 0 {
            return Err(Error::invalid("at least one replicate is required"));
        }
        if self.passes_per_cleaning == 0 {
            return Err(Error::invalid("cleaning needs at least one pass"));
        }
        if !(self.growth_step_days > 0.0) {
            return Err(Error::invalid("growth step must be positive"));
        }
        self.growth.validate().map_err(|e| e.context("growth"))?;
        self.band.validate().map_err(|e| e.context("wiper band"))?;
        self.threshold
            .validate()
            .map_err(|e| e.context("threshold"))?;
        self.drive.validate().map_err(|e| e.context("drive"))?;
        let field = OpacityField::clean(self.cell_size_mm).map_err(|e| e.context("grid"))?;
        self.render
            .validate(&field)
            .map_err(|e| e.context("render"))?;
        Ok(())
    }

    /// Seed of the colony-settlement stream shared by both arms.
    pub(crate) fn growth_seed(&self) -> u64 {
        seeds::derive(self.seed, &[0x6772_6f77, self.growth.rng_seed])
    }

    fn noise_seed(&self, day_index: usize, arm: Arm, replicate: u32) -> u64 {
        seeds::derive(
            self.seed,
            &[
                0x6e6f_6973,
                day_index as u64,
                arm.index(),
                u64::from(replicate),
            ],
        )
    }
}

/// Identifies one captured frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameId {
    pub day: u32,
    pub arm: Arm,
    pub replicate: u32,
}

impl FrameId {
    pub fn file_name(&self) -> String {
        format!(
            "day{:02}_{}_r{}.pgm",
            self.day,
            self.arm.as_str(),
            self.replicate
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub day: u32,
    pub arm: Arm,
    pub replicate: u32,
    pub mse_vs_day0: f64,
    pub mse_control_vs_treated: f64,
    /// Mean of `mse_vs_day0` over this day's replicates of this arm.
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesPoint {
    pub day: u32,
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
    pub control: Vec<SeriesPoint>,
    pub treated: Vec<SeriesPoint>,
    pub control_vs_treated: Vec<SeriesPoint>,
}

impl ExperimentReport {
    pub fn series(&self, arm: Arm) -> &[SeriesPoint] {
        match arm {
            Arm::Control => &self.control,
            Arm::Treated => &self.treated,
        }
    }
}

/// Sample mean and standard error of the mean; one sample has zero error.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt() / (n as f64).sqrt())
}

/// Sensor frame and its binarization, as the analysis pipeline sees them.
pub fn capture(
    field: &OpacityField,
    render: &RenderParams,
    threshold: &ThresholdParams,
    noise_seed: u64,
) -> Result<(GrayImage, BinaryImage)> {
    let frame = imaging::render(field, render, noise_seed)?.quantized();
    let bits = imaging::binarize(&frame, threshold)?;
    Ok((frame, bits))
}

pub fn run_protocol(config: &ProtocolConfig) -> Result<ExperimentReport> {
    run_protocol_with_frames(config, |_, _| Ok(()))
}

/// Runs the experiment and hands every quantized frame to `sink` in report
/// order.
pub fn run_protocol_with_frames<F>(config: &ProtocolConfig, mut sink: F) -> Result<ExperimentReport>
where
    F: FnMut(FrameId, &GrayImage) -> Result<()>,
{
    config.validate()?;
    let growth = GrowthParams {
        rng_seed: config.growth_seed(),
        ..config.growth
    };
    let mut control_model = GrowthModel::new(growth)?;
    let mut treated_model = control_model.clone();
    let mut control = OpacityField::clean(config.cell_size_mm)?;
    let mut treated = control.clone();

    let mut report = ExperimentReport::default();
    let mut reference: Option<BinaryImage> = None;
    let mut previous_day = 0;

    for (day_index, &day) in config.observation_days.iter().enumerate() {
        if day_index > 0 {
            let span = f64::from(day - previous_day);
            control = control_model.advance(&control, span, config.growth_step_days)?;
            treated = treated_model.advance(&treated, span, config.growth_step_days)?;
            treated = fouling::wipe(&treated, &config.band, config.passes_per_cleaning)?;
        }
        previous_day = day;

        let shots: Vec<(Arm, u32)> = Arm::BOTH
            .iter()
            .flat_map(|&arm| (0..config.replicates).map(move |r| (arm, r)))
            .collect();
        let captured: Vec<(GrayImage, BinaryImage)> = shots
            .par_iter()
            .map(|&(arm, r)| {
                let field = match arm {
                    Arm::Control => &control,
                    Arm::Treated => &treated,
                };
                capture(
                    field,
                    &config.render,
                    &config.threshold,
                    config.noise_seed(day_index, arm, r),
                )
            })
            .collect::<Result<_>>()
            .map_err(|e| e.context(format!("imaging day {day}")))?;

        for (&(arm, replicate), (frame, _)) in shots.iter().zip(&captured) {
            sink(
                FrameId {
                    day,
                    arm,
                    replicate,
                },
                frame,
            )?;
        }
        let reference = reference.get_or_insert_with(|| captured[0].1.clone());

        let n = config.replicates as usize;
        let (control_bits, treated_bits) = captured.split_at(n);
        let cross: Vec<f64> = control_bits
            .iter()
            .zip(treated_bits)
            .map(|((_, c), (_, t))| imaging::binary_mse(c, t))
            .collect::<Result<_>>()?;
        let (cross_mean, cross_err) = mean_and_stderr(&cross);
        report.control_vs_treated.push(SeriesPoint {
            day,
            mean: cross_mean,
            stderr: cross_err,
        });

        for (arm, arm_bits) in [(Arm::Control, control_bits), (Arm::Treated, treated_bits)] {
            let vs_ref: Vec<f64> = arm_bits
                .iter()
                .map(|(_, b)| imaging::binary_mse(b, reference))
                .collect::<Result<_>>()?;
            let (mean, stderr) = mean_and_stderr(&vs_ref);
            for (r, &value) in vs_ref.iter().enumerate() {
                report.rows.push(ReportRow {
                    day,
                    arm,
                    replicate: r as u32,
                    mse_vs_day0: value,
                    mse_control_vs_treated: cross[r],
                    mean,
                    stderr,
                });
            }
            let point = SeriesPoint { day, mean, stderr };
            match arm {
                Arm::Control => report.control.push(point),
                Arm::Treated => report.treated.push(point),
            }
        }
    }
    Ok(report)
}

/// Final simulated fields of both arms, without imaging.
pub fn simulate_fields(config: &ProtocolConfig) -> Result<(OpacityField, OpacityField)> {
    config.validate()?;
    let growth = GrowthParams {
        rng_seed: config.growth_seed(),
        ..config.growth
    };
    let mut control_model = GrowthModel::new(growth)?;
    let mut treated_model = control_model.clone();
    let mut control = OpacityField::clean(config.cell_size_mm)?;
    let mut treated = control.clone();
    for w in config.observation_days.windows(2) {
        let span = f64::from(w[1] - w[0]);
        control = control_model.advance(&control, span, config.growth_step_days)?;
        treated = treated_model.advance(&treated, span, config.growth_step_days)?;
        treated = fouling::wipe(&treated, &config.band, config.passes_per_cleaning)?;
    }
    Ok((control, treated))
}

/// Mean control-arm MSE against Day 0 at each observation day.
pub fn control_trajectory(config: &ProtocolConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let reference = capture(
        &OpacityField::clean(config.cell_size_mm)?,
        &config.render,
        &config.threshold,
        config.noise_seed(0, Arm::Control, 0),
    )?
    .1;
    control_trajectory_against(config, &reference)
}

fn control_trajectory_against(
    config: &ProtocolConfig,
    reference: &BinaryImage,
) -> Result<Vec<f64>> {
    let growth = GrowthParams {
        rng_seed: config.growth_seed(),
        ..config.growth
    };
    let mut model = GrowthModel::new(growth)?;
    let mut field = OpacityField::clean(config.cell_size_mm)?;
    let mut out = Vec::with_capacity(config.observation_days.len());
    let mut previous = 0;
    for (day_index, &day) in config.observation_days.iter().enumerate() {
        if day_index > 0 {
            field = model.advance(&field, f64::from(day - previous), config.growth_step_days)?;
        }
        previous = day;
        let values: Vec<f64> = (0..config.replicates)
            .into_par_iter()
            .map(|r| {
                let (_, bits) = capture(
                    &field,
                    &config.render,
                    &config.threshold,
                    config.noise_seed(day_index, Arm::Control, r),
                )?;
                imaging::binary_mse(&bits, reference)
            })
            .collect::<Result<_>>()?;
        out.push(mean_and_stderr(&values).0);
    }
    Ok(out)
}

/// Inclusive range sampled at `steps` evenly spaced points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRange {
    pub min: f64,
    pub max: f64,
    pub steps: u32,
}

impl ParamRange {
    pub fn new(min: f64, max: f64, steps: u32) -> Self {
        Self { min, max, steps }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid(format!("search range for {name} is empty")));
        }
        if !(self.min >= 0.0 && self.max >= self.min && self.max.is_finite()) {
            return Err(Error::invalid(format!(
                "search range for {name} must satisfy 0 <= min <= max, got [{}, {}]",
                self.min, self.max
            )));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        if self.steps == 1 || self.min == self.max {
            return vec![self.min];
        }
        let span = self.max - self.min;
        let last = f64::from(self.steps - 1);
        (0..self.steps)
            .map(|i| self.min + span * f64::from(i) / last)
            .collect()
    }
}

/// Bounds of the growth-parameter search. Only the logistic rate and the
/// settlement rate are searched; every other growth parameter is taken from
/// the protocol configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub rate_per_day: ParamRange,
    pub seed_rate_per_day: ParamRange,
    /// Extra rounds of grid search, each on a grid shrunk around the best
    /// point so far.
    #[serde(default)]
    pub refinements: u32,
    /// Noise replicates averaged per candidate; sensor noise barely moves
    /// the binarized MSE, so one is usually enough.
    #[serde(default = "one")]
    pub replicates: u32,
}

fn one() -> u32 {
    1
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            rate_per_day: ParamRange::new(0.0, 1.2, 5),
            seed_rate_per_day: ParamRange::new(0.0, 36.0, 7),
            refinements: 2,
            replicates: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetPoint {
    pub day: u32,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub params: GrowthParams,
    /// Sum of squared errors of the best trajectory.
    pub residual: f64,
    pub trajectory: Vec<f64>,
    pub evaluations: usize,
}

pub fn check_targets(targets: &[TargetPoint]) -> Result<()> {
    if targets.is_empty() {
        return Err(Error::invalid("no calibration targets"));
    }
    if targets[0].day != 0 {
        return Err(Error::invalid("calibration targets must start at day 0"));
    }
    if targets.windows(2).any(|w| w[1].day <= w[0].day) {
        return Err(Error::invalid("target days must be strictly increasing"));
    }
    if targets.iter().any(|t| !(t.mse >= 0.0)) {
        return Err(Error::invalid("target MSE values must be nonnegative"));
    }
    if targets.windows(2).any(|w| w[1].mse < w[0].mse) {
        return Err(Error::invalid("target MSE values must be non-decreasing"));
    }
    Ok(())
}

/// Grid search for the growth rates whose control trajectory best matches
/// `targets` in the least-squares sense.
///
/// Candidates are scanned in row-major order (rate outer, settlement inner)
/// and the first strict improvement wins, so the result is deterministic.
/// Each refinement round re-grids a box of one coarse step either side of
/// the incumbent.
pub fn calibrate(
    config: &ProtocolConfig,
    targets: &[TargetPoint],
    space: &SearchSpace,
) -> Result<CalibrationResult> {
    space.rate_per_day.validate("rate_per_day")?;
    space.seed_rate_per_day.validate("seed_rate_per_day")?;
    check_targets(targets)?;
    if space.replicates == 0 {
        return Err(Error::invalid("calibration needs at least one replicate"));
    }
    let mut base = config.clone();
    base.observation_days = targets.iter().map(|t| t.day).collect();
    base.replicates = space.replicates;
    base.validate()?;

    let reference = capture(
        &OpacityField::clean(base.cell_size_mm)?,
        &base.render,
        &base.threshold,
        base.noise_seed(0, Arm::Control, 0),
    )?
    .1;

    let evaluate = |rate: f64, seed_rate: f64| -> Result<(f64, Vec<f64>)> {
        let mut cfg = base.clone();
        cfg.growth.rate_per_day = rate;
        cfg.growth.seed_rate_per_day = seed_rate;
        let traj = control_trajectory_against(&cfg, &reference)?;
        let sse = traj
            .iter()
            .zip(targets)
            .map(|(s, t)| (s - t.mse).powi(2))
            .sum();
        Ok((sse, traj))
    };

    let mut rates = space.rate_per_day;
    let mut seeds_r = space.seed_rate_per_day;
    let mut best: Option<(f64, f64, f64, Vec<f64>)> = None;
    let mut evaluations = 0;
    for round in 0..=space.refinements {
        let candidates: Vec<(f64, f64)> = rates
            .values()
            .into_iter()
            .flat_map(|r| seeds_r.values().into_iter().map(move |s| (r, s)))
            .collect();
        let scored: Vec<(f64, Vec<f64>)> = candidates
            .par_iter()
            .map(|&(r, s)| evaluate(r, s))
            .collect::<Result<_>>()?;
        evaluations += candidates.len();
        for (&(r, s), (sse, traj)) in candidates.iter().zip(scored) {
            if best.as_ref().is_none_or(|b| sse < b.2) {
                best = Some((r, s, sse, traj));
            }
        }
        if round == space.refinements {
            break;
        }
        let (br, bs, ..) = best.as_ref().expect("at least one candidate");
        rates = shrink(&rates, *br, space.rate_per_day);
        seeds_r = shrink(&seeds_r, *bs, space.seed_rate_per_day);
    }
    let (rate, seed_rate, residual, trajectory) = best.expect("at least one candidate");
    Ok(CalibrationResult {
        params: GrowthParams {
            rate_per_day: rate,
            seed_rate_per_day: seed_rate,
            ..config.growth
        },
        residual,
        trajectory,
        evaluations,
    })
}

fn shrink(current: &ParamRange, centre: f64, bounds: ParamRange) -> ParamRange {
    if current.steps <= 1 || current.min == current.max {
        return *current;
    }
    let step = (current.max - current.min) / f64::from(current.steps - 1);
    ParamRange {
        min: (centre - step).max(bounds.min),
        max: (centre + step).min(bounds.max),
        steps: current.steps,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    /// One line per frame.
    Csv,
    /// `series,day,mean,stderr` per arm and for the arm comparison.
    PlotData,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "plot" | "plot-data" => Ok(ReportFormat::PlotData),
            other => Err(Error::invalid(format!("unknown report format '{other}'"))),
        }
    }
}

pub const REPORT_HEADER: &str = "day,arm,replicate,mse_vs_day0,mse_control_vs_treated,mean,stderr";

pub fn emit_report(report: &ExperimentReport, format: ReportFormat) -> Vec<u8> {
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            out.push_str(REPORT_HEADER);
            out.push('\n');
            for r in &report.rows {
                let _ = writeln!(
                    out,
                    "{},{},{},{:.6},{:.6},{:.6},{:.6}",
                    r.day,
                    r.arm.as_str(),
                    r.replicate,
                    r.mse_vs_day0,
                    r.mse_control_vs_treated,
                    r.mean,
                    r.stderr
                );
            }
        }
        ReportFormat::PlotData => {
            out.push_str("series,day,mean,stderr\n");
            for (name, series) in [
                ("control", &report.control),
                ("treated", &report.treated),
                ("control_vs_treated", &report.control_vs_treated),
            ] {
                for p in series {
                    let _ = writeln!(out, "{name},{},{:.6},{:.6}", p.day, p.mean, p.stderr);
                }
            }
        }
    }
    out.into_bytes()
}

/// Like [`emit_report`] with the format given by name.
pub fn emit_report_named(report: &ExperimentReport, format: &str) -> Result<Vec<u8>> {
    Ok(emit_report(report, format.parse()?))
}

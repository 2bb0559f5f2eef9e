use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use biowipe::experiment::{self, mean_and_stderr, ReportFormat, TargetPoint};
use biowipe::imaging::{self, BinaryImage, Polarity, ThresholdParams};
use biowipe::{pnm, policy};

use crate::config::RunConfig;
use crate::manifest::{CorpusManifest, ManifestEntry};
use crate::{CliError, Command, CommonArgs};

pub const REPORT_FILE: &str = "report.csv";
pub const PLOT_FILE: &str = "plot_data.csv";
pub const MANIFEST_FILE: &str = "manifest.csv";
pub const FRAMES_DIR: &str = "frames";

pub fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate { common, out } => cmd_simulate(&common, &out),
        Command::Analyze {
            common,
            manifest,
            out,
            sensitivity,
            polarity,
            window,
        } => {
            let config = load(&common)?;
            let mut threshold = config.threshold;
            if let Some(s) = sensitivity {
                threshold.sensitivity = s;
            }
            if let Some(p) = polarity {
                threshold.polarity = match p.as_str() {
                    "dark" => Polarity::Dark,
                    "bright" => Polarity::Bright,
                    other => return Err(CliError::Config(format!("unknown polarity '{other}'"))),
                };
            }
            if window.is_some() {
                threshold.window_side = window;
            }
            cmd_analyze(&manifest, &threshold, &out, common.quiet)
        }
        Command::Calibrate {
            common,
            targets,
            out,
        } => cmd_calibrate(&common, &targets, &out),
        Command::ClosedLoop { common, out } => cmd_closed_loop(&common, &out),
    }
}

fn load(common: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut config = RunConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn cmd_simulate(common: &CommonArgs, out_dir: &Path) -> Result<(), CliError> {
    let config = load(common)?;
    let protocol = config.protocol();
    protocol.validate()?;
    let frames_dir = out_dir.join(FRAMES_DIR);
    fs::create_dir_all(if config.output.frames {
        &frames_dir
    } else {
        out_dir
    })
    .map_err(|e| CliError::io(out_dir, e))?;

    let mut entries = Vec::new();
    let report = experiment::run_protocol_with_frames(&protocol, |id, frame| {
        if config.output.frames {
            let path = frames_dir.join(id.file_name());
            pnm::write_pgm(&path, frame).map_err(|e| e.context(path.display().to_string()))?;
            entries.push(ManifestEntry {
                day: id.day,
                arm: id.arm.as_str().to_string(),
                path,
            });
        }
        Ok(())
    })?;

    write_file(
        &out_dir.join(REPORT_FILE),
        &experiment::emit_report(&report, ReportFormat::Csv),
    )?;
    write_file(
        &out_dir.join(PLOT_FILE),
        &experiment::emit_report(&report, ReportFormat::PlotData),
    )?;
    if config.output.frames {
        CorpusManifest::new(entries)?.write(&out_dir.join(MANIFEST_FILE))?;
    }
    if !common.quiet {
        for ((c, t), x) in report
            .control
            .iter()
            .zip(&report.treated)
            .zip(&report.control_vs_treated)
        {
            println!(
                "day {:>3}: control {:.4} ± {:.4}  treated {:.4} ± {:.4}  control-vs-treated {:.4}",
                c.day, c.mean, c.stderr, t.mean, t.stderr, x.mean
            );
        }
        println!("wrote {}", out_dir.display());
    }
    Ok(())
}

struct AnalyzedFrame<'a> {
    entry: &'a ManifestEntry,
    replicate: u32,
    bits: BinaryImage,
}

pub fn cmd_analyze(
    manifest_path: &Path,
    threshold: &ThresholdParams,
    out: &Path,
    quiet: bool,
) -> Result<(), CliError> {
    threshold.validate()?;
    let manifest = CorpusManifest::load(manifest_path)?;
    let reference_entry = &manifest.entries[manifest.reference];
    let reference = pnm::read_gray(&reference_entry.path)?;
    let (w, h) = (reference.width(), reference.height());

    let mut seen: HashMap<(u32, &str), u32> = HashMap::new();
    let mut frames = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let img = pnm::read_gray(&entry.path)?;
        if (img.width(), img.height()) != (w, h) {
            return Err(CliError::SizeMismatch(format!(
                "{} is {}x{} but the reference {} is {}x{}",
                entry.path.display(),
                img.width(),
                img.height(),
                reference_entry.path.display(),
                w,
                h
            )));
        }
        let counter = seen.entry((entry.day, entry.arm.as_str())).or_insert(0);
        let replicate = *counter;
        *counter += 1;
        frames.push(AnalyzedFrame {
            entry,
            replicate,
            bits: imaging::binarize(&img, threshold)?,
        });
    }
    let reference_bits = &frames[manifest.reference].bits;

    let vs_ref: Vec<f64> = frames
        .iter()
        .map(|f| imaging::binary_mse(&f.bits, reference_bits))
        .collect::<Result<_, _>>()?;

    let by_key: HashMap<(u32, &str, u32), usize> = frames
        .iter()
        .enumerate()
        .map(|(i, f)| ((f.entry.day, f.entry.arm.as_str(), f.replicate), i))
        .collect();
    let mut groups: HashMap<(u32, &str), Vec<f64>> = HashMap::new();
    for (f, &v) in frames.iter().zip(&vs_ref) {
        groups
            .entry((f.entry.day, f.entry.arm.as_str()))
            .or_default()
            .push(v);
    }

    let mut text = String::from(experiment::REPORT_HEADER);
    text.push('\n');
    for (f, &v) in frames.iter().zip(&vs_ref) {
        let other_arm = match f.entry.arm.as_str() {
            "control" => Some("treated"),
            "treated" => Some("control"),
            _ => None,
        };
        let cross = match other_arm.and_then(|a| by_key.get(&(f.entry.day, a, f.replicate))) {
            Some(&j) => format!("{:.6}", imaging::binary_mse(&f.bits, &frames[j].bits)?),
            None => String::new(),
        };
        let (mean, stderr) = mean_and_stderr(&groups[&(f.entry.day, f.entry.arm.as_str())]);
        let _ = writeln!(
            text,
            "{},{},{},{:.6},{},{:.6},{:.6}",
            f.entry.day, f.entry.arm, f.replicate, v, cross, mean, stderr
        );
    }
    write_file(out, text.as_bytes())?;
    if !quiet {
        println!("analyzed {} frames, wrote {}", frames.len(), out.display());
    }
    Ok(())
}

pub fn read_targets(path: &Path) -> Result<Vec<TargetPoint>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut targets = Vec::new();
    for row in reader.deserialize::<(u32, f64)>() {
        let (day, mse) = row.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        targets.push(TargetPoint { day, mse });
    }
    if targets.windows(2).any(|w| w[1].mse < w[0].mse) {
        return Err(CliError::NonMonotoneTargets(format!(
            "{}: target MSE values must be non-decreasing",
            path.display()
        )));
    }
    experiment::check_targets(&targets)?;
    Ok(targets)
}

pub fn cmd_calibrate(common: &CommonArgs, targets_path: &Path, out: &Path) -> Result<(), CliError> {
    let config = load(common)?;
    let targets = read_targets(targets_path)?;
    let result = experiment::calibrate(&config.protocol(), &targets, &config.calibration)?;

    let mut text = String::new();
    let _ = writeln!(text, "# residual = {:e}", result.residual);
    let trajectory: Vec<String> = targets
        .iter()
        .zip(&result.trajectory)
        .map(|(t, s)| format!("{}:{s:.6}", t.day))
        .collect();
    let _ = writeln!(text, "# trajectory = {}", trajectory.join(" "));
    let block = toml::to_string(&GrowthBlock {
        growth: result.params,
    })
    .expect("growth block serializes");
    text.push_str(&block);
    write_file(out, text.as_bytes())?;
    if !common.quiet {
        println!(
            "rate_per_day = {}, seed_rate_per_day = {}, residual = {:e} ({} evaluations)",
            result.params.rate_per_day,
            result.params.seed_rate_per_day,
            result.residual,
            result.evaluations
        );
    }
    Ok(())
}

#[derive(serde::Serialize)]
struct GrowthBlock {
    growth: biowipe::fouling::GrowthParams,
}

pub fn cmd_closed_loop(common: &CommonArgs, out: &Path) -> Result<(), CliError> {
    let config = load(common)?;
    let timeline = policy::closed_loop(&config.protocol(), &config.closed_loop())?;
    let mut buf = Vec::new();
    policy::write_timeline_csv(&mut buf, &timeline).map_err(|e| CliError::io(out, e))?;
    write_file(out, &buf)?;
    if !common.quiet {
        println!(
            "{} cleanings, {:.2} J, wrote {}",
            policy::cleanings(&timeline),
            timeline.last().map_or(0.0, |e| e.cumulative_energy_j),
            out.display()
        );
    }
    Ok(())
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use biowipe::imaging::GrayImage;
use biowipe::pnm;

const SMALL: &str = r#"
[experiment]
cell_size_mm = 1.5

[render]
width = 160
height = 120

[calibration]
refinements = 0
rate_per_day = { min = 0.0, max = 0.15, steps = 3 }
seed_rate_per_day = { min = 0.0, max = 30.0, steps = 3 }
"#;

fn biowipe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_biowipe"))
        .args(args)
        .output()
        .unwrap()
}

fn run(args: &[&str]) -> i32 {
    let mut all = vec!["biowipe"];
    all.extend_from_slice(args);
    biowipe_cli::run(all)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_small(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("small.toml");
    fs::write(&path, format!("{SMALL}{extra}")).unwrap();
    path
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn simulate_writes_report_frames_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small(dir.path(), "");
    let out = dir.path().join("run");
    assert_eq!(
        run(&["simulate", "--quiet", "--config", s(&cfg), "--out", s(&out)]),
        0
    );
    let rows = read_csv(&out.join("report.csv"));
    assert_eq!(rows.len(), 24);
    assert_eq!(rows[0][..4], ["0", "control", "0", "0.000000"]);
    assert_eq!(fs::read_dir(out.join("frames")).unwrap().count(), 24);
    assert_eq!(read_csv(&out.join("manifest.csv")).len(), 24);
    assert!(out.join("plot_data.csv").exists());
}

#[test]
fn seeds_reproduce_and_differ() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small(dir.path(), "[output]\nframes = false\n");
    let mut reports = Vec::new();
    for (name, seed) in [("a", "5"), ("b", "5"), ("c", "6")] {
        let out = dir.path().join(name);
        assert_eq!(
            run(&[
                "simulate",
                "--quiet",
                "--config",
                s(&cfg),
                "--seed",
                seed,
                "--out",
                s(&out)
            ]),
            0
        );
        reports.push(fs::read(out.join("report.csv")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
    assert_ne!(reports[0], reports[2]);
}

#[test]
fn misspelled_key_exits_two_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[growth]\nrate_per_dya = 0.2\n").unwrap();
    let out = biowipe(&[
        "simulate",
        "--config",
        s(&cfg),
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("rate_per_dya"));
}

#[test]
fn usage_errors_and_help() {
    assert_eq!(
        biowipe(&["simulate", "--out", "x", "--bogus"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(biowipe(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(biowipe(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_config_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    let out = dir.path().join("o");
    assert_eq!(
        run(&["simulate", "--config", s(&missing), "--out", s(&out)]),
        3
    );
}

fn frame(path: &Path, w: usize, h: usize, dark_square: bool) {
    let mut px = vec![0.9; w * h];
    if dark_square {
        for y in h / 4..h / 2 {
            for x in w / 4..w / 2 {
                px[y * w + x] = 0.2;
            }
        }
    }
    pnm::write_pgm(path, &GrayImage::new(w, h, px).unwrap()).unwrap();
}

#[test]
fn analyze_reference_alone_scores_zero() {
    let dir = tempfile::tempdir().unwrap();
    frame(&dir.path().join("ref.pgm"), 64, 48, true);
    let manifest = dir.path().join("m.csv");
    fs::write(&manifest, "day,arm,path\n0,control,ref.pgm\n").unwrap();
    let out = dir.path().join("r.csv");
    assert_eq!(
        run(&["analyze", "--manifest", s(&manifest), "--out", s(&out)]),
        0
    );
    let rows = read_csv(&out);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][3], "0.000000");
    assert_eq!(rows[0][4], "");
}

#[test]
fn analyze_identical_frames_and_a_changed_one() {
    let dir = tempfile::tempdir().unwrap();
    frame(&dir.path().join("a.pgm"), 64, 48, false);
    frame(&dir.path().join("b.pgm"), 64, 48, false);
    frame(&dir.path().join("c.pgm"), 64, 48, true);
    let manifest = dir.path().join("m.csv");
    fs::write(
        &manifest,
        "day,arm,path\n0,control,a.pgm\n0,treated,b.pgm\n8,control,c.pgm\n",
    )
    .unwrap();
    let out = dir.path().join("r.csv");
    assert_eq!(
        run(&["analyze", "--manifest", s(&manifest), "--out", s(&out)]),
        0
    );
    let rows = read_csv(&out);
    assert_eq!(rows[1][3], "0.000000");
    assert_eq!(rows[0][4], "0.000000");
    assert!(rows[2][3].parse::<f64>().unwrap() > 0.0);
}

#[test]
fn analyze_size_mismatch_exits_four() {
    let dir = tempfile::tempdir().unwrap();
    frame(&dir.path().join("a.pgm"), 64, 48, false);
    frame(&dir.path().join("b.pgm"), 32, 48, false);
    let manifest = dir.path().join("m.csv");
    fs::write(
        &manifest,
        "day,arm,path\n0,control,a.pgm\n8,control,b.pgm\n",
    )
    .unwrap();
    let out = biowipe(&[
        "analyze",
        "--manifest",
        s(&manifest),
        "--out",
        s(&dir.path().join("r.csv")),
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("b.pgm"));
}

#[test]
fn calibrate_zero_targets_gives_zero_rates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small(dir.path(), "");
    let targets = dir.path().join("t.csv");
    fs::write(&targets, "day,mse\n0,0\n8,0\n13,0\n16,0\n").unwrap();
    let out = dir.path().join("fit.toml");
    assert_eq!(
        run(&[
            "calibrate",
            "--quiet",
            "--config",
            s(&cfg),
            "--targets",
            s(&targets),
            "--out",
            s(&out)
        ]),
        0
    );
    let fit = biowipe_cli::RunConfig::parse(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(fit.growth.rate_per_day, 0.0);
    assert_eq!(fit.growth.seed_rate_per_day, 0.0);
}

#[test]
fn calibrate_rejects_falling_targets() {
    let dir = tempfile::tempdir().unwrap();
    let targets = dir.path().join("t.csv");
    fs::write(&targets, "day,mse\n0,0\n8,0.05\n16,0.03\n").unwrap();
    let out = dir.path().join("fit.toml");
    assert_eq!(
        run(&["calibrate", "--targets", s(&targets), "--out", s(&out)]),
        5
    );
    assert!(!out.exists());
}

#[test]
fn calibrate_recovers_simulated_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    // full resolution: coarse grids do not give a monotone control curve
    let cfg = dir.path().join("full.toml");
    fs::write(
        &cfg,
        "[experiment]\nreplicates = 1\n\n[growth]\nrate_per_day = 0.075\nseed_rate_per_day = 15.0\n\n\
         [output]\nframes = false\n\n[calibration]\nrefinements = 0\n\
         rate_per_day = { min = 0.0, max = 0.15, steps = 3 }\n\
         seed_rate_per_day = { min = 0.0, max = 30.0, steps = 3 }\n",
    )
    .unwrap();
    let sim = dir.path().join("sim");
    assert_eq!(
        run(&["simulate", "--quiet", "--config", s(&cfg), "--out", s(&sim)]),
        0
    );
    let mut targets = String::from("day,mse\n");
    for row in read_csv(&sim.join("report.csv"))
        .iter()
        .filter(|r| r[1] == "control")
    {
        targets.push_str(&format!("{},{}\n", row[0], row[5]));
    }
    let targets_path = dir.path().join("t.csv");
    fs::write(&targets_path, targets).unwrap();
    let out = dir.path().join("fit.toml");
    assert_eq!(
        run(&[
            "calibrate",
            "--quiet",
            "--config",
            s(&cfg),
            "--targets",
            s(&targets_path),
            "--out",
            s(&out)
        ]),
        0
    );
    let text = fs::read_to_string(&out).unwrap();
    let residual: f64 = text
        .lines()
        .next()
        .unwrap()
        .trim_start_matches("# residual = ")
        .parse()
        .unwrap();
    assert!(residual <= 1e-4, "{residual}");
    let fit = biowipe_cli::RunConfig::parse(&text).unwrap();
    assert_eq!(
        (fit.growth.rate_per_day, fit.growth.seed_rate_per_day),
        (0.075, 15.0)
    );
}

fn closed_loop(dir: &Path, extra: &str) -> Vec<Vec<String>> {
    let cfg = write_small(dir, extra);
    let out = dir.join("timeline.csv");
    assert_eq!(
        run(&[
            "closed-loop",
            "--quiet",
            "--config",
            s(&cfg),
            "--out",
            s(&out)
        ]),
        0
    );
    assert!(fs::read_to_string(&out)
        .unwrap()
        .starts_with("day,mse,decision,cumulative_energy_J\n"));
    read_csv(&out)
}

#[test]
fn closed_loop_unreachable_trigger_and_empty_budget_hold() {
    let dir = tempfile::tempdir().unwrap();
    for extra in [
        "[policy]\nmse_trigger = inf\n",
        "[policy]\nmax_energy_budget_j = 0.0\n",
    ] {
        let rows = closed_loop(dir.path(), extra);
        assert_eq!(rows.len(), 17);
        assert!(rows.iter().all(|r| r[2] == "hold"), "{extra}");
    }
}

#[test]
fn closed_loop_default_policy_cleans() {
    let dir = tempfile::tempdir().unwrap();
    let rows = closed_loop(dir.path(), "");
    let cleans: Vec<_> = rows.iter().filter(|r| r[2] == "clean").collect();
    assert!(!cleans.is_empty());
    let last: f64 = rows.last().unwrap()[3].parse().unwrap();
    assert!((last - 6.72 * cleans.len() as f64).abs() < 1e-6);
}

#[test]
fn bundled_config_matches_builtin_defaults() {
    let bundled =
        biowipe_cli::RunConfig::load(Some(&biowipe_cli::config::bundled_default())).unwrap();
    assert_eq!(bundled, biowipe_cli::RunConfig::default());
}

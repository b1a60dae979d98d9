//! Scenario configuration, the simulation loop, Monte-Carlo sweeps and
//! reports.
//!
//! Run directories contain:
//!
//! | file            | columns |
//! |-----------------|---------|
//! | `summary.csv`   | `scope,metric,value` |
//! | `estimates.csv` | `tick,robot,neighbor,theta_error,relative_theta_error,excitation_ratio,p0_x,p0_y,p0_z,theta0` |
//! | `leader.csv`    | `tick,robot,q0_x,q0_y,q0_z,q0_yaw,leader_error,tracking_error,estimation_error` |
//! | `commands.csv`  | `tick,robot,stage,v_h,v_z,w,held,saturated` |
//! | `samples.csv`   | `tick,robot,neighbor,phi_0..phi_6,y,truth_residual,outcome,eta,lambda_min,lambda_max,v_before,v_after` |
//! | `outliers.csv`  | `tick,robot,neighbor,d,votes,size,rejected,injected` |
//! | `manifest.json` | tool version, seed, SHA-256 of the resolved config |
//!
//! Sweep directories contain `sweep.csv` (one row per cell), `sweep_runs.csv`
//! (one row per run) and `manifest.json`. Unavailable values are written as
//! `NA`.

mod config;
mod run;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use config::{
    presets, AcceptanceConfig, EstimatorConfig, LayeredExcitation, LeaderCommand, ModeConfig, PeBaselineConfig, RandomizeConfig,
    RobotConfig, Scenario, ScenarioConfig, ScreeningConfig, TopologyConfig, TopologyGenerator, SCHEMA_VERSION,
};
pub use run::{
    run, run_with, simulate, CommandRow, EstimateRow, LeaderRow, PairFinal, RunLogs, RunOptions, RunOutput,
    SampleRow, SummaryRow,
};

use crate::control::ControlError;
use crate::coop_localization::CoopError;

/// Overrides the output directory given on the command line.
pub const OUT_DIR_ENV: &str = "SWARMLOC_OUT_DIR";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Topology(#[from] CoopError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error("non-finite {what} at tick {tick}")]
    NonFinite { tick: u64, what: String },
    #[error("no run or sweep logs in {0}")]
    MissingLogs(PathBuf),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub kind: String,
    pub name: String,
    pub seed: u64,
    pub schema_version: u32,
    pub config_sha256: String,
    pub files: Vec<String>,
}

pub fn config_hash(config: &ScenarioConfig) -> String {
    hex::encode(Sha256::digest(config.to_toml().as_bytes()))
}

fn manifest(config: &ScenarioConfig, kind: &str, seed: u64, files: &[&str]) -> Manifest {
    Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        kind: kind.into(),
        name: config.name.clone(),
        seed,
        schema_version: config.schema_version,
        config_sha256: config_hash(config),
        files: files.iter().map(|s| s.to_string()).collect(),
    }
}

/// `env` wins over `cli` when set and non-empty.
pub fn resolve_out_dir(cli: &Path) -> PathBuf {
    match std::env::var_os(OUT_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => cli.to_path_buf(),
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<(), HarnessError> {
    let mut w = csv::WriterBuilder::new().has_headers(true).from_path(path)?;
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

const RUN_FILES: [&str; 7] =
    ["summary.csv", "estimates.csv", "leader.csv", "commands.csv", "samples.csv", "outliers.csv", "config.toml"];

/// Writes every log of a run plus its manifest into `dir`.
pub fn write_run(dir: &Path, config: &ScenarioConfig, out: &RunOutput) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    write_csv(&dir.join("summary.csv"), &out.summary, &["scope", "metric", "value"])?;
    let l = &out.logs;
    write_csv(&dir.join("estimates.csv"), &l.estimates, &["tick"])?;
    write_csv(&dir.join("leader.csv"), &l.leader, &["tick"])?;
    write_csv(&dir.join("commands.csv"), &l.commands, &["tick"])?;
    write_csv(&dir.join("samples.csv"), &l.samples, &["tick"])?;
    write_csv(&dir.join("outliers.csv"), &l.outliers, &["tick"])?;
    std::fs::write(dir.join("config.toml"), config.to_toml())?;
    let m = manifest(config, "run", out.seed, &RUN_FILES);
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&m)? + "\n")?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Standard deviation of range and per-step odometry noise.
    Noise,
    /// Number of robots; requires a randomized config.
    SwarmSize,
    /// Outlier probability; every cell is run with screening on and off.
    OutlierProb,
}

impl std::str::FromStr for SweepAxis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "noise" => Ok(SweepAxis::Noise),
            "swarm_size" => Ok(SweepAxis::SwarmSize),
            "outlier_prob" => Ok(SweepAxis::OutlierProb),
            _ => Err(format!("unknown axis `{s}` (noise, swarm_size, outlier_prob)")),
        }
    }
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Noise => "noise",
            SweepAxis::SwarmSize => "swarm_size",
            SweepAxis::OutlierProb => "outlier_prob",
        }
    }

    /// Config variants for one axis value, labelled.
    pub fn apply(self, base: &ScenarioConfig, value: f64) -> Result<Vec<(String, ScenarioConfig)>, HarnessError> {
        let mut cfg = base.clone();
        match self {
            SweepAxis::Noise => {
                cfg.noise.sigma_range = value;
                cfg.noise.sigma_odom_pos = value;
            }
            SweepAxis::SwarmSize => {
                let r = cfg
                    .randomize
                    .as_mut()
                    .ok_or_else(|| HarnessError::Config("swarm_size sweeps need [randomize]".into()))?;
                if value < 2.0 || value.fract() != 0.0 {
                    return Err(HarnessError::Config(format!("swarm size {value} is not an integer >= 2")));
                }
                r.count = value as usize;
            }
            SweepAxis::OutlierProb => {
                cfg.noise.outlier_prob = value;
                let mut off = cfg.clone();
                cfg.screening.enabled = true;
                off.screening.enabled = false;
                cfg.validate()?;
                return Ok(vec![("screening".into(), cfg), ("no_screening".into(), off)]);
            }
        }
        cfg.validate()?;
        Ok(vec![("default".into(), cfg)])
    }
}

/// One run of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub axis: String,
    pub value: f64,
    pub variant: String,
    pub seed: u64,
    pub ok: bool,
    pub error: String,
    pub final_theta_error: f64,
    pub final_leader_error: f64,
    pub max_final_tracking_error: f64,
    pub stage2_start_time: f64,
    pub mean_smoothness: f64,
    pub detection_success_rate: f64,
    pub detection_false_positive_rate: f64,
}

/// Aggregate over the seeds of one `(value, variant)` cell. Means skip
/// unavailable values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub axis: String,
    pub value: f64,
    pub variant: String,
    pub runs: usize,
    pub failures: usize,
    pub mean_final_theta_error: f64,
    pub std_final_theta_error: f64,
    pub mean_final_leader_error: f64,
    pub std_final_leader_error: f64,
    pub mean_max_final_tracking_error: f64,
    pub mean_stage2_start_time: f64,
    pub mean_smoothness: f64,
    pub mean_detection_success_rate: f64,
    pub mean_detection_false_positive_rate: f64,
}

fn mean_std(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let xs: Vec<f64> = v.filter(|x| x.is_finite()).collect();
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Runs every `(value, variant, seed)` combination. Seeds are
/// `base.seed .. base.seed + seeds`. Failed runs are recorded and skipped.
pub fn sweep(
    base: &ScenarioConfig,
    axis: SweepAxis,
    values: &[f64],
    seeds: u64,
) -> Result<(Vec<SweepCell>, Vec<SweepRun>), HarnessError> {
    let mut cells = Vec::new();
    let mut runs = Vec::new();
    for &value in values {
        for (variant, cfg) in axis.apply(base, value)? {
            let start = runs.len();
            for seed in base.seed..base.seed + seeds {
                runs.push(sweep_run(axis, value, &variant, &cfg, seed));
            }
            cells.push(aggregate(axis, value, &variant, &runs[start..]));
        }
    }
    Ok((cells, runs))
}

fn sweep_run(axis: SweepAxis, value: f64, variant: &str, cfg: &ScenarioConfig, seed: u64) -> SweepRun {
    let mut row = SweepRun {
        axis: axis.name().into(),
        value,
        variant: variant.into(),
        seed,
        ok: false,
        error: String::new(),
        final_theta_error: f64::NAN,
        final_leader_error: f64::NAN,
        max_final_tracking_error: f64::NAN,
        stage2_start_time: f64::NAN,
        mean_smoothness: f64::NAN,
        detection_success_rate: f64::NAN,
        detection_false_positive_rate: f64::NAN,
    };
    match run_with(cfg, seed, RunOptions { logs: false }) {
        Ok(out) => {
            let g = |m| out.summary_f64("run", m).unwrap_or(f64::NAN);
            row.ok = true;
            row.final_theta_error = g("mean_final_relative_theta_error");
            row.final_leader_error = g("mean_final_leader_error");
            row.max_final_tracking_error = g("max_final_tracking_error");
            row.stage2_start_time = g("stage2_start_time");
            row.mean_smoothness = g("mean_smoothness");
            row.detection_success_rate = g("detection_success_rate");
            row.detection_false_positive_rate = g("detection_false_positive_rate");
        }
        Err(e) => row.error = e.to_string(),
    }
    row
}

fn aggregate(axis: SweepAxis, value: f64, variant: &str, runs: &[SweepRun]) -> SweepCell {
    let ok = || runs.iter().filter(|r| r.ok);
    let (mt, st) = mean_std(ok().map(|r| r.final_theta_error));
    let (ml, sl) = mean_std(ok().map(|r| r.final_leader_error));
    SweepCell {
        axis: axis.name().into(),
        value,
        variant: variant.into(),
        runs: runs.len(),
        failures: runs.iter().filter(|r| !r.ok).count(),
        mean_final_theta_error: mt,
        std_final_theta_error: st,
        mean_final_leader_error: ml,
        std_final_leader_error: sl,
        mean_max_final_tracking_error: mean_std(ok().map(|r| r.max_final_tracking_error)).0,
        mean_stage2_start_time: mean_std(ok().map(|r| r.stage2_start_time)).0,
        mean_smoothness: mean_std(ok().map(|r| r.mean_smoothness)).0,
        mean_detection_success_rate: mean_std(ok().map(|r| r.detection_success_rate)).0,
        mean_detection_false_positive_rate: mean_std(ok().map(|r| r.detection_false_positive_rate)).0,
    }
}

pub fn write_sweep(
    dir: &Path,
    config: &ScenarioConfig,
    cells: &[SweepCell],
    runs: &[SweepRun],
) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    write_csv(&dir.join("sweep.csv"), cells, &["axis"])?;
    write_csv(&dir.join("sweep_runs.csv"), runs, &["axis"])?;
    std::fs::write(dir.join("config.toml"), config.to_toml())?;
    let m = manifest(config, "sweep", config.seed, &["sweep.csv", "sweep_runs.csv", "config.toml"]);
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&m)? + "\n")?;
    Ok(())
}

/// Human-readable report of a run or sweep directory and whether it passed.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub text: String,
    pub passed: bool,
}

pub fn report(dir: &Path) -> Result<Report, HarnessError> {
    let summary = dir.join("summary.csv");
    let sweep_csv = dir.join("sweep.csv");
    if summary.is_file() {
        report_run(&summary)
    } else if sweep_csv.is_file() {
        report_sweep(&sweep_csv)
    } else {
        Err(HarnessError::MissingLogs(dir.to_path_buf()))
    }
}

fn report_run(path: &Path) -> Result<Report, HarnessError> {
    let mut rd = csv::Reader::from_path(path)?;
    let rows: Vec<SummaryRow> = rd
        .records()
        .map(|r| {
            let r = r?;
            Ok(SummaryRow { scope: r[0].to_string(), metric: r[1].to_string(), value: r[2].to_string() })
        })
        .collect::<Result<_, csv::Error>>()?;
    let mut text = String::new();
    let mut scope = "";
    for r in &rows {
        if r.scope != scope {
            scope = &r.scope;
            let _ = writeln!(text, "[{scope}]");
        }
        let _ = writeln!(text, "  {:<32} {}", r.metric, r.value);
    }
    let passed = rows.iter().any(|r| r.scope == "run" && r.metric == "pass" && r.value == "1");
    let _ = writeln!(text, "result: {}", if passed { "PASS" } else { "FAIL" });
    Ok(Report { text, passed })
}

fn report_sweep(path: &Path) -> Result<Report, HarnessError> {
    let mut rd = csv::Reader::from_path(path)?;
    let cells: Vec<SweepCell> = rd.deserialize().collect::<Result<_, _>>()?;
    let mut text = String::new();
    let _ = writeln!(
        text,
        "{:<13} {:>8} {:<13} {:>5} {:>5} {:>12} {:>12} {:>12} {:>10}",
        "axis", "value", "variant", "runs", "fail", "theta_err", "leader_err", "smoothness", "detect"
    );
    for c in &cells {
        let _ = writeln!(
            text,
            "{:<13} {:>8} {:<13} {:>5} {:>5} {:>12.4e} {:>12.4e} {:>12.4} {:>10.3}",
            c.axis,
            c.value,
            c.variant,
            c.runs,
            c.failures,
            c.mean_final_theta_error,
            c.mean_final_leader_error,
            c.mean_smoothness,
            c.mean_detection_success_rate
        );
    }
    let passed = !cells.is_empty() && cells.iter().all(|c| c.failures == 0);
    let _ = writeln!(text, "result: {}", if passed { "PASS" } else { "FAIL" });
    Ok(Report { text, passed })
}

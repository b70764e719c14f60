//! Subcommands of the `splitguard` binary. Every artifact is a pure function
//! of the config file and seed.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use splitguard::planner::{self, CostTable, GridCell};
use splitguard::protocol::Mode;
use splitguard::selftest::{self, Golden};
use splitguard::simulator::{
    self, parse_json, Adversary, AdversaryKind, PayloadRule, RunMetrics, ScenarioConfig, SimError,
};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DETECTED: u8 = 10;
pub const EXIT_FALLBACK: u8 = 11;

/// Branch counts on the planner frontier.
pub const FRONTIER_BRANCHES: [usize; 4] = [1, 2, 4, 8];
/// Detection windows reported on the frontier, seconds.
pub const FRONTIER_DT: [f64; 4] = [0.5, 1.0, 2.0, 4.0];

#[derive(Debug, Parser)]
#[command(
    name = "splitguard",
    version,
    about = "Verified split inference: planner, simulator, self-test"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON config; each subcommand has a built-in default.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Suppress the console summary.
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Latency grid, optimal cuts and frontier from a cost table.
    Plan(Common),
    /// One scenario run: per-frame CSV and JSON summary.
    Simulate(Common),
    /// Detection curve over many seeds and branch counts.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Runs per branch count (at least 100).
        #[arg(long, default_value_t = 1000)]
        seeds: u64,
    },
    /// Golden vectors and oracle checks; `--config` names a golden file.
    Selftest(Common),
    /// Scripted honest, crafted-attack and recovery phases.
    Demo(Common),
}

/// Bad config input: maps to exit code 2.
#[derive(Debug)]
pub struct ConfigFailure(pub String);

impl std::fmt::Display for ConfigFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigFailure {}

fn config_err(e: impl std::fmt::Display) -> anyhow::Error {
    ConfigFailure(e.to_string()).into()
}

fn read_config(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

fn sim_err(e: SimError) -> anyhow::Error {
    match e {
        SimError::Config(c) => config_err(c),
        other => other.into(),
    }
}

fn load_scenario(c: &Common, default: ScenarioConfig) -> Result<ScenarioConfig> {
    let mut cfg = match &c.config {
        Some(p) => ScenarioConfig::from_json(&read_config(p)?).map_err(config_err)?,
        None => default,
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(config_err)?;
    Ok(cfg)
}

/// Cost table from JSON, validated before any work starts.
pub fn load_table(text: &str) -> Result<CostTable> {
    let table: CostTable = parse_json(text).map_err(config_err)?;
    table.validate().map_err(config_err)?;
    Ok(table)
}

/// Default sweep scenario: continuous single-branch bit flips from 1 s.
pub fn sweep_default() -> ScenarioConfig {
    ScenarioConfig {
        adversary: Adversary {
            kind: AdversaryKind::TamperOne {
                branch: 5,
                rule: PayloadRule::Bitflip { bits: 1 },
            },
            active_from: 1.0,
            active_until: None,
        },
        duration_s: 16.0,
        ..ScenarioConfig::baseline()
    }
}

fn out_dir(c: &Common) -> Result<&Path> {
    fs::create_dir_all(&c.out).with_context(|| format!("creating {}", c.out.display()))?;
    Ok(&c.out)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_csv<T: Serialize>(
    path: &Path,
    rows: impl IntoIterator<Item = T>,
    header: &[&str],
) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub const GRID_COLUMNS: [&str; 9] = [
    "trunk_cut",
    "head_cut",
    "trunk_s",
    "tx_s",
    "branch_s",
    "rx_s",
    "head_s",
    "end_to_end_s",
    "fps",
];

fn grid_row(c: &GridCell) -> (u8, u8, f64, f64, f64, f64, f64, f64, f64) {
    let l = &c.latencies;
    (
        c.trunk_cut,
        c.head_cut,
        l.trunk,
        l.tx,
        l.branch,
        l.rx,
        l.head,
        l.end_to_end,
        l.fps(),
    )
}

#[derive(Debug, Serialize)]
struct Optimal<'a> {
    label: &'a str,
    n_branches: usize,
    trunk_cut: u8,
    head_cut: u8,
    end_to_end_s: f64,
    fps: f64,
    latencies: planner::StageLatencies,
    chosen_operating_point: Option<&'a planner::OperatingPoint>,
}

fn cmd_plan(c: &Common) -> Result<u8> {
    let table = match &c.config {
        Some(p) => load_table(&read_config(p)?)?,
        None => CostTable::calibrated(),
    };
    let dir = out_dir(c)?;
    let grid = planner::latency_grid(&table).map_err(config_err)?;
    write_csv(
        &dir.join("latency_grid.csv"),
        grid.iter().map(grid_row),
        &GRID_COLUMNS,
    )?;
    let best = planner::optimal_cut(&table).map_err(config_err)?;
    let counts: Vec<usize> = FRONTIER_BRANCHES
        .into_iter()
        .filter(|&n| n <= table.n_branches.max(1))
        .collect();
    let frontier = planner::frontier(&table, &counts, &FRONTIER_DT)?;
    let rows = frontier.iter().flat_map(|p| {
        p.detection.iter().map(move |d| {
            (
                p.n_branches,
                p.trunk_cut,
                p.head_cut,
                p.end_to_end_s,
                p.fps,
                d.dt,
                d.probability,
            )
        })
    });
    write_csv(
        &dir.join("frontier.csv"),
        rows,
        &[
            "n_branches",
            "trunk_cut",
            "head_cut",
            "end_to_end_s",
            "fps",
            "dt_s",
            "p_detect",
        ],
    )?;
    write_json(
        &dir.join("optimal.json"),
        &Optimal {
            label: &table.label,
            n_branches: table.n_branches,
            trunk_cut: best.trunk_cut,
            head_cut: best.head_cut,
            end_to_end_s: best.latencies.end_to_end,
            fps: best.latencies.fps(),
            latencies: best.latencies,
            chosen_operating_point: planner::chosen_operating_point(&frontier),
        },
    )?;
    if !c.quiet {
        println!(
            "optimal cuts (trunk={}, head={}): end-to-end {:.6} s, {:.2} fps over {} pairs",
            best.trunk_cut,
            best.head_cut,
            best.latencies.end_to_end,
            best.latencies.fps(),
            grid.len()
        );
    }
    Ok(EXIT_OK)
}

pub const FRAME_COLUMNS: [&str; 13] = [
    "frame_id",
    "capture_s",
    "complete_s",
    "latency_s",
    "mode",
    "source",
    "x",
    "y",
    "z",
    "phi",
    "verified_branch",
    "verdict",
    "tampered",
];

fn write_run(dir: &Path, m: &RunMetrics) -> Result<()> {
    write_csv(&dir.join("frames.csv"), &m.frames, &FRAME_COLUMNS)?;
    write_json(&dir.join("summary.json"), &m.summary)
}

/// Exit code of a finished run: detection outranks fallback.
pub fn run_exit_code(m: &RunMetrics) -> u8 {
    let c = &m.summary.counters;
    if c.mismatches > 0 {
        EXIT_DETECTED
    } else if c.timeouts > 0 || m.summary.first_fallback_s.is_some() {
        EXIT_FALLBACK
    } else {
        EXIT_OK
    }
}

fn print_run(m: &RunMetrics) {
    let s = &m.summary;
    let timeline: Vec<String> = s
        .mode_timeline
        .iter()
        .map(|c| format!("{:?}@{:.3}", c.mode, c.time_s))
        .collect();
    println!(
        "{} frames ({} in flight), {} verified, {} mismatches, {} timeouts; throughput {}",
        s.completed,
        s.in_flight,
        s.counters.frames_verified,
        s.counters.mismatches,
        s.counters.timeouts,
        s.throughput_fps
            .map_or("n/a".into(), |f| format!("{f:.2} fps")),
    );
    println!("modes: {}", timeline.join(" -> "));
    if let Some(t) = s.detection.first_detection_s {
        println!(
            "first detection at {t:.3} s (frame {}), {} tampered frames verified",
            s.detection.detection_frame.unwrap_or_default(),
            s.detection.frames_to_detection.unwrap_or_default()
        );
    }
}

fn cmd_simulate(c: &Common, default: ScenarioConfig) -> Result<u8> {
    let cfg = load_scenario(c, default)?;
    let dir = out_dir(c)?;
    let m = simulator::run_scenario(&cfg).map_err(sim_err)?;
    write_run(dir, &m)?;
    if !c.quiet {
        print_run(&m);
    }
    Ok(run_exit_code(&m))
}

fn cmd_demo(c: &Common) -> Result<u8> {
    let code = cmd_simulate(c, ScenarioConfig::demo())?;
    if !c.quiet {
        let s: simulator::RunSummary =
            serde_json::from_str(&fs::read_to_string(c.out.join("summary.json"))?)?;
        let entered = s.mode_timeline.iter().any(|m| m.mode == Mode::Emergency);
        println!(
            "emergency entered: {entered}; final mode {:?}; crafted payload x = {}",
            s.final_mode,
            s.crafted.map_or("n/a".into(), |r| format!(
                "{:.4} (target {})",
                r.chosen_x, r.target_x
            )),
        );
    }
    Ok(code)
}

pub const CURVE_COLUMNS: [&str; 7] = [
    "n_branches",
    "dt_s",
    "fps",
    "verified_frames",
    "analytic",
    "empirical_frames",
    "empirical_time",
];

fn cmd_sweep(c: &Common, seeds: u64) -> Result<u8> {
    if seeds < simulator::MIN_SWEEP_SEEDS {
        return Err(config_err(format!(
            "--seeds must be at least {}, got {seeds}",
            simulator::MIN_SWEEP_SEEDS
        )));
    }
    let cfg = load_scenario(c, sweep_default())?;
    let dir = out_dir(c)?;
    let counts: Vec<usize> = simulator::SWEEP_BRANCH_COUNTS.to_vec();
    let r = simulator::run_sweep(&cfg, seeds, &counts, &simulator::default_dt_grid())
        .map_err(sim_err)?;
    write_csv(&dir.join("detection_curve.csv"), &r.curve, &CURVE_COLUMNS)?;
    write_json(&dir.join("sweep_summary.json"), &r.summary)?;
    if !c.quiet {
        for b in &r.summary.branches {
            println!(
                "N={}: {}/{} detected, mean {:.3} tampered frames to detection at {:.2} fps",
                b.n_branches,
                b.detected,
                b.runs,
                b.mean_frames_to_detection.unwrap_or(f64::NAN),
                b.fps
            );
        }
        println!("{}", r.summary.headline.discrepancy);
    }
    Ok(EXIT_OK)
}

fn cmd_selftest(c: &Common) -> Result<u8> {
    let golden = match &c.config {
        Some(p) => Golden::from_json(&read_config(p)?).map_err(config_err)?,
        None => Golden::bundled(),
    };
    let report = selftest::run(&golden);
    let dir = out_dir(c)?;
    write_json(&dir.join("selftest_report.json"), &report)?;
    if !c.quiet {
        print!("{}", report.render());
    } else {
        for f in report.failures() {
            eprintln!("FAIL {}: {}", f.name, f.detail);
        }
    }
    Ok(if report.passed() {
        EXIT_OK
    } else {
        EXIT_FAILURE
    })
}

pub fn run(cli: Cli) -> Result<u8> {
    match &cli.command {
        Command::Plan(c) => cmd_plan(c),
        Command::Simulate(c) => cmd_simulate(c, ScenarioConfig::baseline()),
        Command::Sweep { common, seeds } => cmd_sweep(common, *seeds),
        Command::Selftest(c) => cmd_selftest(c),
        Command::Demo(c) => cmd_demo(c),
    }
}

/// Parses arguments, runs, and maps errors onto the exit-code contract.
pub fn main_with(args: impl IntoIterator<Item = std::ffi::OsString>) -> ExitCode {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigFailure>().is_some() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::from(EXIT_FAILURE)
            }
        }
    }
}

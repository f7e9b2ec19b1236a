//! Command-line front end: `analyze`, `simulate`, `verify` and `compare`,
//! each driven by a single JSON configuration file.

mod config;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

pub use config::{CompareBlock, Format, OutputBlock, RunConfig, SimBlock, MAX_CONFIG_BYTES};

use crate::iterate::{solve_stationary, ConvergenceReport, IterateError, Stationary};
use crate::pgf::{marginal, marginal_csv, Epoch};
use crate::sim::{simulate_with, SimEstimate, SimError};
use crate::verify::{run_battery, VerifyReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "POLLING_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
    #[error(transparent)]
    Solve(#[from] IterateError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Solve(
                IterateError::MaxCyclesExceeded { .. } | IterateError::DivergenceDetected { .. },
            ) => EXIT_DIVERGED,
            _ => EXIT_CONFIG,
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "polling", version, about = "Visit-epoch queue-length distributions of polling systems")]
struct Cli {
    /// Print progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the fixed point and write marginals, means and the convergence report.
    Analyze { config: PathBuf },
    /// Simulate and write empirical marginals and means with standard errors.
    Simulate { config: PathBuf },
    /// Run the oracle battery.
    Verify { config: PathBuf },
    /// Analyze and simulate (simulation outputs go to `sim/`), then report
    /// z-scores and total-variation distances.
    Compare { config: PathBuf },
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("{msg}");
        return EXIT_CONFIG;
    }
    let (path, cmd): (&Path, fn(&RunConfig, bool) -> Result<i32, CliError>) = match &cli.command {
        Command::Analyze { config } => (config, |c, v| cmd_analyze(c, v).map(|_| EXIT_OK)),
        Command::Simulate { config } => (config, |c, v| cmd_simulate(c, v).map(|_| EXIT_OK)),
        Command::Verify { config } => (config, |c, v| {
            cmd_verify(c, v).map(|r| if r.passed() { EXIT_OK } else { EXIT_VERIFY })
        }),
        Command::Compare { config } => (config, |c, v| {
            cmd_compare(c, v).map(|r| if r.passed { EXIT_OK } else { EXIT_VERIFY })
        }),
    };
    let outcome = RunConfig::load(path).and_then(|cfg| {
        prepare_output_dir(&cfg.output.directory)?;
        cmd(&cfg, cli.verbose)
    });
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(r) = match &e {
                CliError::Solve(s) => s.report(),
                _ => None,
            } {
                eprintln!("residual trace (last 10): {:?}", &r.residual_trace[r.residual_trace.len().saturating_sub(10)..]);
            }
            e.exit_code()
        }
    }
}

fn configure_threads() -> Result<(), String> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("{THREADS_ENV} must be a positive integer, got {v:?}"))?;
    // A second initialisation in the same process keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn prepare_output_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(dir, format!("not writable: {e}")))?;
    Ok(())
}

/// Writes `contents` to `dir/name` through a temporary file and a rename.
pub fn write_atomic(dir: &Path, name: &str, contents: &[u8]) -> Result<PathBuf, CliError> {
    let target = dir.join(name);
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(dir, e))?;
    tmp.write_all(contents).map_err(|e| io_err(&target, e))?;
    tmp.as_file().sync_all().map_err(|e| io_err(&target, e))?;
    tmp.persist(&target).map_err(|e| io_err(&target, e.error))?;
    Ok(target)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf, CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    write_atomic(dir, name, text.as_bytes())
}

pub fn marginal_file_name(queue: usize, epoch: Epoch) -> String {
    format!("marginal_q{}_{}.csv", queue + 1, epoch.as_str())
}

/// Mean of the served queue's length at one of its epochs, plus all coordinates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanEntry {
    pub mean: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub se: Option<f64>,
    pub all_means: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub all_se: Option<Vec<f64>>,
}

/// `means.json`: queue index (one-based) to epoch to entry.
pub type MeansJson = BTreeMap<String, BTreeMap<String, MeanEntry>>;

const EPOCHS: [Epoch; 2] = [Epoch::Begin, Epoch::End];

pub fn analytic_means(st: &Stationary) -> MeansJson {
    (0..st.end.len())
        .map(|i| {
            let m = &st.report.means[i];
            let per_epoch = EPOCHS
                .iter()
                .map(|&e| {
                    let all = match e {
                        Epoch::Begin => m.begin.clone(),
                        Epoch::End => m.end.clone(),
                    };
                    let entry = MeanEntry {
                        mean: all[i],
                        se: None,
                        all_means: all,
                        all_se: None,
                    };
                    (e.as_str().to_string(), entry)
                })
                .collect();
            ((i + 1).to_string(), per_epoch)
        })
        .collect()
}

pub fn simulated_means(est: &SimEstimate) -> MeansJson {
    let m = est.epochs.len();
    (0..m)
        .map(|i| {
            let per_epoch = EPOCHS
                .iter()
                .map(|&e| {
                    let s = est.epoch(i, e);
                    let entry = MeanEntry {
                        mean: s.mean(i),
                        se: Some(s.standard_error(i)),
                        all_means: (0..m).map(|c| s.mean(c)).collect(),
                        all_se: Some((0..m).map(|c| s.standard_error(c)).collect()),
                    };
                    (e.as_str().to_string(), entry)
                })
                .collect();
            ((i + 1).to_string(), per_epoch)
        })
        .collect()
}

fn analytic_marginal(st: &Stationary, i: usize, e: Epoch) -> Vec<f64> {
    let t = match e {
        Epoch::Begin => &st.begin[i],
        Epoch::End => &st.end[i],
    };
    marginal(t, i)
}

pub fn cmd_analyze(cfg: &RunConfig, verbose: bool) -> Result<Stationary, CliError> {
    let dir = &cfg.output.directory;
    let st = match solve_stationary(&cfg.model, &cfg.solver) {
        Ok(st) => st,
        Err(e) => {
            if let (Some(report), true) = (e.report(), cfg.wants(Format::Json)) {
                write_json(dir, "convergence.json", report)?;
            }
            return Err(e.into());
        }
    };
    if verbose {
        eprintln!(
            "converged in {} cycles, residual {:e}, tail {:e}",
            st.report.cycles, st.report.final_residual, st.report.tail_mass
        );
    }
    let m = cfg.model.num_queues();
    if cfg.wants(Format::Csv) {
        for i in 0..m {
            for e in EPOCHS {
                let csv = marginal_csv(&analytic_marginal(&st, i, e));
                write_atomic(dir, &marginal_file_name(i, e), csv.as_bytes())?;
            }
        }
    }
    if cfg.wants(Format::Json) {
        write_json(dir, "means.json", &analytic_means(&st))?;
        write_json(dir, "convergence.json", &st.report)?;
        for i in 0..m {
            for (e, t) in [(Epoch::Begin, &st.begin[i]), (Epoch::End, &st.end[i])] {
                let name = format!("tensor_q{}_{}.json", i + 1, e.as_str());
                write_atomic(dir, &name, t.clone().with_tag(i, e).to_json().as_bytes())?;
            }
        }
    }
    Ok(st)
}

#[derive(Debug, Clone, Serialize)]
struct VisitSummary {
    visits: u64,
    mean_duration: f64,
    duration_se: f64,
    max_services: u64,
    causes: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, Serialize)]
struct SimSummary {
    seed: u64,
    n_cycles: u64,
    warmup_cycles: u64,
    elapsed_time: f64,
    final_state: Vec<u32>,
    visits: Vec<VisitSummary>,
}

pub fn cmd_simulate(cfg: &RunConfig, verbose: bool) -> Result<SimEstimate, CliError> {
    simulate_into(cfg, &cfg.model, &cfg.output.directory, verbose)
}

fn simulate_into(
    cfg: &RunConfig,
    model: &crate::model::PollingModel,
    dir: &Path,
    verbose: bool,
) -> Result<SimEstimate, CliError> {
    let est = simulate_with(model, &cfg.sim.options())?;
    if verbose {
        eprintln!("simulated {} cycles (seed {})", est.n_cycles, est.seed);
    }
    let m = model.num_queues();
    if cfg.wants(Format::Csv) {
        for i in 0..m {
            for e in EPOCHS {
                let csv = marginal_csv(&est.epoch(i, e).marginal_probs(i));
                write_atomic(dir, &marginal_file_name(i, e), csv.as_bytes())?;
            }
        }
    }
    if cfg.wants(Format::Json) {
        write_json(dir, "means.json", &simulated_means(&est))?;
        let summary = SimSummary {
            seed: est.seed,
            n_cycles: est.n_cycles,
            warmup_cycles: est.warmup_cycles,
            elapsed_time: est.elapsed_time,
            final_state: est.final_state.clone(),
            visits: est
                .visits
                .iter()
                .map(|v| VisitSummary {
                    visits: v.visits,
                    mean_duration: v.mean_duration(),
                    duration_se: v.duration_se(),
                    max_services: v.max_services,
                    causes: v.causes.iter().map(|(c, n)| (format!("{c:?}").to_lowercase(), *n)).collect(),
                })
                .collect(),
        };
        write_json(dir, "simulation.json", &summary)?;
    }
    Ok(est)
}

pub fn cmd_verify(cfg: &RunConfig, verbose: bool) -> Result<VerifyReport, CliError> {
    let report = run_battery(&cfg.verify);
    for c in &report.checks {
        let status = if c.passed { "PASS" } else { "FAIL" };
        println!(
            "{status} {:<22} cases={:<5} max_error={:.3e} tol={:.1e}{}",
            c.name,
            c.cases,
            c.max_error,
            c.tolerance,
            c.failure.as_deref().map(|f| format!(" ({f})")).unwrap_or_default()
        );
    }
    if verbose {
        eprintln!("{} checks, all passed: {}", report.checks.len(), report.passed());
    }
    if cfg.wants(Format::Json) {
        write_json(&cfg.output.directory, "verify.json", &report)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareEntry {
    pub queue: usize,
    pub epoch: String,
    pub analytic_mean: f64,
    pub simulated_mean: f64,
    pub se: f64,
    pub z: f64,
    pub tv_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub entries: Vec<CompareEntry>,
    pub z_max: f64,
    pub tv_max: f64,
    pub passed: bool,
    pub convergence: ConvergenceReport,
}

/// `(a - b) / se`, zero for identical values and infinite for a nonzero gap with no noise.
pub fn z_score(a: f64, b: f64, se: f64) -> f64 {
    let d = a - b;
    if d.abs() <= 1e-12 {
        0.0
    } else if se > 0.0 {
        d / se
    } else {
        f64::INFINITY.copysign(d)
    }
}

/// Total-variation distance of two distributions on `0, 1, 2, ...`.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    let n = p.len().max(q.len());
    0.5 * (0..n)
        .map(|k| (p.get(k).copied().unwrap_or(0.0) - q.get(k).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}

pub fn cmd_compare(cfg: &RunConfig, verbose: bool) -> Result<CompareReport, CliError> {
    let sim_model = cfg.sim_model()?;
    let st = cmd_analyze(cfg, verbose)?;
    let sim_dir = cfg.output.directory.join("sim");
    prepare_output_dir(&sim_dir)?;
    let est = simulate_into(cfg, sim_model, &sim_dir, verbose)?;
    let mut entries = Vec::new();
    for i in 0..cfg.model.num_queues() {
        for e in EPOCHS {
            let s = est.epoch(i, e);
            let analytic = analytic_marginal(&st, i, e);
            let a_mean = match e {
                Epoch::Begin => st.report.means[i].begin[i],
                Epoch::End => st.report.means[i].end[i],
            };
            let se = s.standard_error(i);
            entries.push(CompareEntry {
                queue: i + 1,
                epoch: e.as_str().into(),
                analytic_mean: a_mean,
                simulated_mean: s.mean(i),
                se,
                z: z_score(a_mean, s.mean(i), se),
                tv_distance: tv_distance(&analytic, &s.marginal_probs(i)),
            });
        }
    }
    let c = &cfg.compare;
    let passed = entries
        .iter()
        .all(|e| e.z.abs() <= c.z_max && e.tv_distance <= c.tv_max);
    for e in &entries {
        println!(
            "q{} {:<5} analytic={:.6} simulated={:.6} se={:.2e} z={:+.2} tv={:.4}",
            e.queue, e.epoch, e.analytic_mean, e.simulated_mean, e.se, e.z, e.tv_distance
        );
    }
    let report = CompareReport {
        entries,
        z_max: c.z_max,
        tv_max: c.tv_max,
        passed,
        convergence: st.report,
    };
    if cfg.wants(Format::Json) {
        write_json(&cfg.output.directory, "compare.json", &report)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn z_scores_and_tv() {
        assert_eq!(z_score(1.0, 1.0, 0.0), 0.0);
        assert_eq!(z_score(1.0, 0.5, 0.0), f64::INFINITY);
        assert!((z_score(1.0, 0.5, 0.25) - 2.0).abs() < 1e-15);
        assert!((tv_distance(&[0.5, 0.5], &[1.0]) - 0.5).abs() < 1e-15);
        assert_eq!(tv_distance(&[0.2, 0.8], &[0.2, 0.8]), 0.0);
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["polling", "frobnicate"]), EXIT_CONFIG);
        assert_eq!(run(["polling", "analyze", "/nonexistent/config.json"]), EXIT_CONFIG);
        assert_eq!(run(["polling", "--help"]), EXIT_OK);
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        write_atomic(dir.path(), "a.txt", b"one").unwrap();
        write_atomic(dir.path(), "a.txt", b"two").unwrap();
        assert_eq!(fs::read(dir.path().join("a.txt")).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}

//! Acceptance battery. Prints one PASS/FAIL line per criterion and exits
//! nonzero if a criterion fails that is not listed in `KNOWN_FAILURES`, or if
//! a listed one unexpectedly passes.

use std::time::{Duration, Instant};

use polling::cli;
use polling::iterate::{solve_stationary, ConvergenceReport, SolveOptions, Stationary};
use polling::model::{Discipline, PollingModel, QueueSpec, Routing, SwitchoverDist};
use polling::pgf::{marginal, Epoch};
use polling::sim::{simulate, SimEstimate};
use polling::verify;

/// Criteria that fail for reasons documented in the project notes: the
/// tandem reference model is unstable, and plain iteration on the symmetric
/// time-limited model contracts more slowly than a factor 2 per 10 cycles.
const KNOWN_FAILURES: &[&str] = &["7c", "8"];

const SEED: u64 = 20240611;
const SIM_CYCLES: u64 = 1_000_000;
const WARMUP: u64 = 10_000;

struct Outcome {
    id: &'static str,
    passed: bool,
    detail: String,
    elapsed: Duration,
}

fn timed(id: &'static str, f: impl FnOnce() -> (bool, String)) -> Outcome {
    timed_within(id, None, f)
}

/// Runs a criterion; `limit` is its runtime budget in seconds.
fn timed_within(id: &'static str, limit: Option<u64>, f: impl FnOnce() -> (bool, String)) -> Outcome {
    let t = Instant::now();
    let (mut passed, mut detail) = f();
    let elapsed = t.elapsed();
    if let Some(secs) = limit {
        passed &= elapsed <= Duration::from_secs(secs);
        detail.push_str(&format!("; runtime budget {secs}s"));
    }
    let o = Outcome {
        id,
        passed,
        detail,
        elapsed,
    };
    println!(
        "{} criterion {:<3} [{:>7.2}s] {}",
        if o.passed { "PASS" } else { "FAIL" },
        o.id,
        o.elapsed.as_secs_f64(),
        o.detail
    );
    o
}

fn model_a() -> PollingModel {
    PollingModel::symmetric(
        2,
        QueueSpec::new(0.3, 1.0, Discipline::TimeLimited { alpha: 1.0 }),
        SwitchoverDist::Deterministic { c: 0.2 },
    )
}

fn model_b() -> PollingModel {
    PollingModel::new(
        vec![
            QueueSpec::new(0.4, 1.0, Discipline::Exhaustive),
            QueueSpec::new(0.2, 1.0, Discipline::KLimited { k: 1 }),
        ],
        vec![SwitchoverDist::Exponential { mean: 0.3 }; 2],
        Routing::CyclicPoisson,
    )
}

fn model_c() -> PollingModel {
    PollingModel::new(
        vec![
            QueueSpec::new(0.5, 1.0, Discipline::Autonomous { alpha: 1.0 }),
            QueueSpec::new(0.0, 1.0, Discipline::Autonomous { alpha: 1.0 }),
        ],
        vec![SwitchoverDist::Deterministic { c: 0.1 }; 2],
        Routing::Tandem,
    )
}

/// Default tolerances with the truncation order held at 64: the stable
/// reference models have tails far below `tail_tol` there, and an unstable
/// model is flagged once its mass reaches the box edge.
fn solver_options() -> SolveOptions {
    SolveOptions {
        n_max: Some(64),
        n_max_cap: Some(64),
        ..SolveOptions::default()
    }
}

/// Worst `|z|` over all coordinates' visit-end means and worst TV distance
/// over all coordinates' visit-end marginals.
fn compare_end_epochs(st: &Stationary, est: &SimEstimate) -> (f64, f64) {
    let m = st.end.len();
    let mut worst_z: f64 = 0.0;
    let mut worst_tv: f64 = 0.0;
    for i in 0..m {
        let s = est.epoch(i, Epoch::End);
        for c in 0..m {
            let z = cli::z_score(st.report.means[i].end[c], s.mean(c), s.standard_error(c));
            worst_z = worst_z.max(z.abs());
            let tv = cli::tv_distance(&marginal(&st.end[i], c), &s.marginal_probs(c));
            worst_tv = worst_tv.max(tv);
        }
    }
    (worst_z, worst_tv)
}

fn criterion_7(id: &'static str, model: &PollingModel) -> (Outcome, Option<ConvergenceReport>) {
    let mut report = None;
    let o = timed(id, || {
        let solved = solve_stationary(model, &solver_options());
        let est = simulate(model, SIM_CYCLES, SEED, WARMUP).expect("valid model");
        match solved {
            Ok(st) => {
                let (z, tv) = compare_end_epochs(&st, &est);
                report = Some(st.report.clone());
                (
                    z <= 3.0 && tv <= 0.01,
                    format!(
                        "{} cycles, max |z| {z:.2} (<= 3), max TV {tv:.4} (<= 0.01)",
                        st.report.cycles
                    ),
                )
            }
            Err(e) => {
                report = e.report().cloned();
                (
                    false,
                    format!(
                        "solve failed: {e}; simulated state after {} cycles {:?}",
                        est.n_cycles + est.warmup_cycles,
                        est.final_state
                    ),
                )
            }
        }
    });
    (o, report)
}

/// Largest ratio `r[c + 10] / r[c]` over `c >= 10`.
fn worst_ten_cycle_ratio(trace: &[f64]) -> f64 {
    (10..trace.len().saturating_sub(10))
        .map(|c| trace[c + 10] / trace[c])
        .fold(0.0, f64::max)
}

fn main() {
    let mut outcomes = Vec::new();

    outcomes.push(timed_within("1", Some(10), || {
        let r = verify::check_toeplitz(100, SEED, 1e-10);
        (
            r.passed,
            format!("{} cases, max rel error {:.2e} (<= 1e-10)", r.cases, r.max_error),
        )
    }));

    outcomes.push(timed_within("2", Some(5), || {
        let r = verify::check_lattice(6, 12);
        (r.passed, format!("{} entries, {} disagreements", r.cases, r.max_error))
    }));

    outcomes.push(timed_within("3", Some(120), || {
        let r = verify::check_kernel_amc(SEED, 1e-5);
        (
            r.passed,
            format!("{} points, max gap {:.2e} (<= 1e-5) {}", r.cases, r.max_error, r.failure.unwrap_or_default()),
        )
    }));

    let o6 = timed("6", || {
        let r = verify::check_dual_path(SEED, 1e-9);
        (r.passed, format!("{} evaluations, max gap {:.2e} (<= 1e-9)", r.cases, r.max_error))
    });

    let t7 = Instant::now();
    let (o7a, rep_a) = criterion_7("7a", &model_a());
    let (o7b, rep_b) = criterion_7("7b", &model_b());
    let (o7c, rep_c) = criterion_7("7c", &model_c());
    let total7 = t7.elapsed();
    let o7 = timed("7", || {
        let all = o7a.passed && o7b.passed && o7c.passed;
        (
            all && total7 <= Duration::from_secs(600),
            format!(
                "a {}, b {}, c {}; total {:.1}s (< 600s)",
                o7a.passed, o7b.passed, o7c.passed,
                total7.as_secs_f64()
            ),
        )
    });

    let o4 = timed("4", || {
        let r = verify::check_normalization(SEED, 1e-9);
        let solve_max = [&rep_a, &rep_b, &rep_c]
            .iter()
            .filter_map(|r| r.as_ref().map(|r| r.max_normalization_error))
            .fold(0.0, f64::max);
        let worst = r.max_error.max(solve_max);
        (
            r.passed && worst <= 1e-9,
            format!(
                "{} direct applications max {:.2e}; reference solves max {:.2e} (<= 1e-9)",
                r.cases, r.max_error, solve_max
            ),
        )
    });

    let o5 = timed("5", || {
        let r = verify::check_exhaustive(1e-9, 1e-12);
        let st = solve_stationary(&model_b(), &solver_options());
        let stationary_mass = match &st {
            Ok(st) => 1.0 - marginal(&st.end[0], 0)[0],
            Err(_) => f64::INFINITY,
        };
        (
            r.passed && stationary_mass.abs() <= 1e-9,
            format!(
                "kernel served-axis mass / root check {:.2e}; stationary end mass on n_1 >= 1 {:.2e}",
                r.max_error, stationary_mass
            ),
        )
    });

    let o8 = timed("8", || {
        let mut parts = Vec::new();
        let mut ok = true;
        for (name, rep) in [("a", &rep_a), ("b", &rep_b)] {
            match rep {
                Some(r) if r.converged => {
                    let w = worst_ten_cycle_ratio(&r.residual_trace);
                    ok &= w <= 0.5;
                    parts.push(format!("{name}: worst 10-cycle ratio {w:.3} over {} cycles", r.cycles));
                }
                _ => {
                    ok = false;
                    parts.push(format!("{name}: did not converge"));
                }
            }
        }
        (ok, format!("{} (<= 0.5)", parts.join("; ")))
    });

    let o9 = timed("9", || {
        let dir = tempfile::tempdir().expect("temp dir");
        let config = dir.path().join("config.json");
        let text = format!(
            r#"{{
                "model": {},
                "sim": {{"n_cycles": 20000, "seed": 5, "warmup_cycles": 100}},
                "output": {{"directory": "run", "formats": ["csv"]}}
            }}"#,
            serde_json::to_string(&model_b()).unwrap()
        );
        std::fs::write(&config, text).unwrap();
        let read_all = || {
            let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir.path().join("run"))
                .unwrap()
                .map(|e| {
                    let e = e.unwrap();
                    (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
                })
                .collect();
            files.sort();
            files
        };
        let code1 = cli::run(["polling", "simulate", config.to_str().unwrap()]);
        let first = read_all();
        let code2 = cli::run(["polling", "simulate", config.to_str().unwrap()]);
        let second = read_all();
        (
            code1 == 0 && code2 == 0 && !first.is_empty() && first == second,
            format!("{} CSV files, exit codes {code1}/{code2}, identical: {}", first.len(), first == second),
        )
    });

    outcomes.extend([o4, o5, o6, o7a, o7b, o7c, o7, o8, o9]);
    outcomes.sort_by_key(|o| o.id);

    let mut unexpected = Vec::new();
    for o in &outcomes {
        let known = KNOWN_FAILURES.contains(&o.id) || (o.id == "7" && KNOWN_FAILURES.contains(&"7c"));
        if o.passed == known {
            unexpected.push(o.id);
        }
    }
    println!(
        "summary: {} passed, {} failed; unexpected outcomes: {:?}",
        outcomes.iter().filter(|o| o.passed).count(),
        outcomes.iter().filter(|o| !o.passed).count(),
        unexpected
    );
    if !unexpected.is_empty() {
        std::process::exit(1);
    }
}

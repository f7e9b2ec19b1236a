//! Fixed-point iteration over the cycle of visits.
//!
//! Starting from an empty system, each queue's visit-begin PGF is the
//! previous queue's visit-end PGF times the switch-over arrival transform,
//! and its visit-end PGF is the visit kernel applied to that. Cycles repeat
//! until the visit-end PGFs stop moving on the torus grid.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::{KLimitedPath, KernelError, VisitKernel};
use crate::model::{arrival_exponent, PollingModel, ValidationReport};
use crate::pgf::{
    grid_to_tensor_with_tail, mean, project_to_probability, tensor_to_grid, CoeffTensor, Epoch,
    GridFunction, PgfError, ProjectionOptions, TorusGrid, MAX_DIMS,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOptions {
    /// Truncation order per queue; defaults to 64 for `M <= 2`, 32 otherwise.
    pub n_max: Option<usize>,
    /// Grid points per axis; defaults to the smallest power of two `>= 2 (n_max + 1)`.
    pub grid: Option<usize>,
    /// Largest truncation order reached by automatic doubling; defaults to `4 n_max`.
    pub n_max_cap: Option<usize>,
    pub max_cycles: usize,
    /// Sup-norm of successive visit-end PGFs on the grid at convergence.
    pub tol: f64,
    /// Tail mass above which the truncation order is doubled.
    pub tail_tol: f64,
    /// Tail mass above which the iteration is declared divergent at the cap.
    pub divergence_tail: f64,
    /// Normalisation defect above which the iteration is declared divergent.
    pub divergence_drift: f64,
    pub k_limited_path: KLimitedPathOption,
}

/// Serializable mirror of [`KLimitedPath`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KLimitedPathOption {
    #[default]
    Auto,
    ClosedForm,
    GeneralS,
}

impl From<KLimitedPathOption> for KLimitedPath {
    fn from(v: KLimitedPathOption) -> Self {
        match v {
            KLimitedPathOption::Auto => KLimitedPath::Auto,
            KLimitedPathOption::ClosedForm => KLimitedPath::ClosedForm,
            KLimitedPathOption::GeneralS => KLimitedPath::GeneralS,
        }
    }
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            n_max: None,
            grid: None,
            n_max_cap: None,
            max_cycles: 5000,
            tol: 1e-10,
            tail_tol: 1e-8,
            divergence_tail: 1e-3,
            divergence_drift: 1e-4,
            k_limited_path: KLimitedPathOption::Auto,
        }
    }
}

impl SolveOptions {
    pub fn default_n_max(m: usize) -> usize {
        if m <= 2 {
            64
        } else {
            32
        }
    }

    fn grid_for(&self, n_max: usize, initial_n_max: usize) -> usize {
        match self.grid {
            // A fixed grid scales with the truncation order after doubling.
            Some(g) => g * (n_max / initial_n_max).max(1),
            None => TorusGrid::default_size(n_max),
        }
    }
}

/// Mean queue lengths at one queue's visit epochs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMeans {
    /// `E[N_m]` for every queue `m` at visit begin.
    pub begin: Vec<f64>,
    /// `E[N_m]` for every queue `m` at visit end.
    pub end: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub cycles: usize,
    pub converged: bool,
    pub residual_trace: Vec<f64>,
    pub final_residual: f64,
    /// Largest tail mass beyond the truncation box in the last cycle.
    pub tail_mass: f64,
    /// Largest `|gamma(1) - 1|` before projection over all kernel applications.
    pub max_normalization_error: f64,
    pub n_max: usize,
    pub grid: usize,
    /// Per served queue.
    pub means: Vec<EpochMeans>,
}

#[derive(Debug, Error)]
pub enum IterateError {
    #[error("invalid model: {0}")]
    InvalidModel(ValidationReport),
    #[error("{0} queues exceed the supported maximum of {MAX_DIMS}")]
    TooManyQueues(usize),
    #[error("no convergence after {} cycles (residual {:e})", .report.cycles, .report.final_residual)]
    MaxCyclesExceeded { report: Box<ConvergenceReport> },
    #[error("divergence detected after {} cycles: {reason}", .report.cycles)]
    DivergenceDetected {
        reason: String,
        report: Box<ConvergenceReport>,
    },
    #[error("invalid options: {0}")]
    Options(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Pgf(#[from] PgfError),
}

impl IterateError {
    /// The convergence report carried by non-convergence errors.
    pub fn report(&self) -> Option<&ConvergenceReport> {
        match self {
            IterateError::MaxCyclesExceeded { report }
            | IterateError::DivergenceDetected { report, .. } => Some(report),
            _ => None,
        }
    }
}

/// Visit-begin and visit-end PGFs of every queue.
#[derive(Debug, Clone, PartialEq)]
pub struct Stationary {
    pub begin: Vec<CoeffTensor>,
    pub end: Vec<CoeffTensor>,
    pub report: ConvergenceReport,
}

/// Result of one full cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleOutput {
    pub begin: Vec<CoeffTensor>,
    pub end: Vec<CoeffTensor>,
    /// Sup-norm change of each visit-end PGF on the grid.
    pub residuals: Vec<f64>,
    pub tail_mass: f64,
    pub max_normalization_error: f64,
}

enum Failure {
    Error(IterateError),
    Diverged(String),
}

impl From<KernelError> for Failure {
    fn from(e: KernelError) -> Self {
        Failure::Error(e.into())
    }
}

impl From<PgfError> for Failure {
    fn from(e: PgfError) -> Self {
        Failure::Error(e.into())
    }
}

struct StepOut {
    beta: CoeffTensor,
    gamma: CoeffTensor,
    gamma_grid: GridFunction,
    tail: f64,
    norm_err: f64,
}

struct Engine<'a> {
    n_max: usize,
    grid: TorusGrid,
    kernels: Vec<VisitKernel<'a>>,
    /// Switch-over arrival transform feeding queue `i`, on the grid.
    switch: Vec<GridFunction>,
    proj: ProjectionOptions,
    divergence_drift: f64,
}

impl<'a> Engine<'a> {
    fn new(
        model: &'a PollingModel,
        n_max: usize,
        g: usize,
        opts: &SolveOptions,
    ) -> Result<Self, IterateError> {
        let m = model.num_queues();
        if g < n_max + 1 {
            return Err(IterateError::Options(format!(
                "grid size {g} below n_max + 1 = {}",
                n_max + 1
            )));
        }
        let grid = TorusGrid::new(m, g);
        let kernels = (0..m)
            .map(|i| VisitKernel::with_path(model, i, n_max, opts.k_limited_path.into()))
            .collect::<Result<_, _>>()?;
        let lambdas = model.lambdas();
        let switch = (0..m)
            .map(|i| {
                let dist = &model.switchovers[(i + m - 1) % m];
                GridFunction::from_fn(grid, |z| dist.lst(arrival_exponent(&lambdas, z)))
            })
            .collect();
        Ok(Self {
            n_max,
            grid,
            kernels,
            switch,
            proj: ProjectionOptions::default(),
            divergence_drift: opts.divergence_drift,
        })
    }

    fn project(&self, t: &mut CoeffTensor, tail: f64) -> Result<(), Failure> {
        match project_to_probability(t, tail, &self.proj) {
            Ok(_) => Ok(()),
            Err(PgfError::MassDrift(d)) if d > self.divergence_drift => {
                Err(Failure::Diverged(format!("mass drift {d:e}")))
            }
            Err(e) => Err(e.into()),
        }
    }

    /// Serves queue `i` given the previous queue's visit-end PGF on the grid.
    fn step(&self, i: usize, prev_end: &GridFunction) -> Result<StepOut, Failure> {
        let mut beta_grid = prev_end.clone();
        beta_grid.pointwise_mul(&self.switch[i]);
        let (mut beta, beta_tail) = grid_to_tensor_with_tail(&beta_grid, self.n_max)?;
        self.project(&mut beta, beta_tail)?;

        let gamma_raw = self.kernels[i].apply_grid(&beta, self.grid)?;
        let norm_err = (gamma_raw.at_one() - Complex64::new(1.0, 0.0)).norm();
        if !norm_err.is_finite() || norm_err > self.divergence_drift {
            return Err(Failure::Diverged(format!(
                "queue {} kernel normalisation defect {norm_err:e}",
                i + 1
            )));
        }
        let (mut gamma, gamma_tail) = grid_to_tensor_with_tail(&gamma_raw, self.n_max)?;
        self.project(&mut gamma, gamma_tail)?;
        let gamma_grid = tensor_to_grid(&gamma, self.grid)?;
        Ok(StepOut {
            beta: beta.with_tag(i, Epoch::Begin),
            gamma: gamma.with_tag(i, Epoch::End),
            gamma_grid,
            tail: beta_tail.abs().max(gamma_tail.abs()),
            norm_err,
        })
    }
}

fn check_model(model: &PollingModel) -> Result<(), IterateError> {
    let report = model.validate();
    if !report.passed() {
        return Err(IterateError::InvalidModel(report));
    }
    if model.num_queues() > MAX_DIMS {
        return Err(IterateError::TooManyQueues(model.num_queues()));
    }
    Ok(())
}

fn means_of(begin: &[CoeffTensor], end: &[CoeffTensor]) -> Vec<EpochMeans> {
    begin
        .iter()
        .zip(end)
        .map(|(b, e)| EpochMeans {
            begin: (0..b.dims()).map(|m| mean(b, m)).collect(),
            end: (0..e.dims()).map(|m| mean(e, m)).collect(),
        })
        .collect()
}

/// One full cycle (queues `1..M` in order) starting from the given visit-end PGFs.
pub fn cycle_step(
    model: &PollingModel,
    gammas: &[CoeffTensor],
    opts: &SolveOptions,
) -> Result<CycleOutput, IterateError> {
    check_model(model)?;
    let m = model.num_queues();
    if gammas.len() != m {
        return Err(IterateError::Options(format!("expected {m} tensors")));
    }
    let n_max = gammas[0].n_max();
    let engine = Engine::new(model, n_max, opts.grid_for(n_max, n_max), opts)?;
    let mut grids = gammas
        .iter()
        .map(|t| tensor_to_grid(t, engine.grid))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = CycleOutput {
        begin: Vec::with_capacity(m),
        end: Vec::with_capacity(m),
        residuals: Vec::with_capacity(m),
        tail_mass: 0.0,
        max_normalization_error: 0.0,
    };
    for i in 0..m {
        let step = match engine.step(i, &grids[(i + m - 1) % m]) {
            Ok(s) => s,
            Err(Failure::Error(e)) => return Err(e),
            Err(Failure::Diverged(reason)) => {
                return Err(IterateError::DivergenceDetected {
                    reason,
                    report: Box::new(ConvergenceReport {
                        cycles: 1,
                        converged: false,
                        residual_trace: Vec::new(),
                        final_residual: f64::NAN,
                        tail_mass: f64::NAN,
                        max_normalization_error: f64::NAN,
                        n_max,
                        grid: engine.grid.g,
                        means: Vec::new(),
                    }),
                })
            }
        };
        out.residuals.push(step.gamma_grid.sup_distance(&grids[i]));
        grids[i] = step.gamma_grid;
        out.tail_mass = out.tail_mass.max(step.tail);
        out.max_normalization_error = out.max_normalization_error.max(step.norm_err);
        out.begin.push(step.beta);
        out.end.push(step.gamma);
    }
    Ok(out)
}

/// Iterates from an empty system until the visit-end PGFs converge.
pub fn solve_stationary(
    model: &PollingModel,
    opts: &SolveOptions,
) -> Result<Stationary, IterateError> {
    check_model(model)?;
    if !(opts.tol > 0.0) {
        return Err(IterateError::Options("tol must be positive".into()));
    }
    let m = model.num_queues();
    let initial_n_max = opts.n_max.unwrap_or_else(|| SolveOptions::default_n_max(m));
    if initial_n_max == 0 {
        return Err(IterateError::Options("n_max must be positive".into()));
    }
    let cap = opts.n_max_cap.unwrap_or(4 * initial_n_max).max(initial_n_max);
    let mut n_max = initial_n_max;

    let origin = vec![0; m];
    let mut end: Vec<CoeffTensor> = (0..m)
        .map(|i| CoeffTensor::point_mass(m, n_max, &origin).map(|t| t.with_tag(i, Epoch::End)))
        .collect::<Result<_, _>>()?;
    let mut begin = end.clone();
    let mut trace: Vec<f64> = Vec::new();
    let mut cycles = 0;
    let mut max_norm: f64 = 0.0;
    let mut tail: f64 = 0.0;

    let report = |cycles: usize,
                  trace: &[f64],
                  tail: f64,
                  max_norm: f64,
                  n_max: usize,
                  g: usize,
                  converged: bool,
                  begin: &[CoeffTensor],
                  end: &[CoeffTensor]| ConvergenceReport {
        cycles,
        converged,
        residual_trace: trace.to_vec(),
        final_residual: trace.last().copied().unwrap_or(f64::NAN),
        tail_mass: tail,
        max_normalization_error: max_norm,
        n_max,
        grid: g,
        means: means_of(begin, end),
    };

    'grow: loop {
        let g = opts.grid_for(n_max, initial_n_max);
        let engine = Engine::new(model, n_max, g, opts)?;
        let mut grids = end
            .iter()
            .map(|t| tensor_to_grid(t, engine.grid))
            .collect::<Result<Vec<_>, _>>()?;
        loop {
            if cycles >= opts.max_cycles {
                return Err(IterateError::MaxCyclesExceeded {
                    report: Box::new(report(
                        cycles, &trace, tail, max_norm, n_max, g, false, &begin, &end,
                    )),
                });
            }
            cycles += 1;
            let mut residual: f64 = 0.0;
            tail = 0.0;
            for i in 0..m {
                let step = match engine.step(i, &grids[(i + m - 1) % m]) {
                    Ok(s) => s,
                    Err(Failure::Error(e)) => return Err(e),
                    Err(Failure::Diverged(reason)) => {
                        return Err(IterateError::DivergenceDetected {
                            reason,
                            report: Box::new(report(
                                cycles, &trace, tail, max_norm, n_max, g, false, &begin, &end,
                            )),
                        })
                    }
                };
                residual = residual.max(step.gamma_grid.sup_distance(&grids[i]));
                grids[i] = step.gamma_grid;
                tail = tail.max(step.tail);
                max_norm = max_norm.max(step.norm_err);
                begin[i] = step.beta;
                end[i] = step.gamma;
            }
            trace.push(residual);

            let can_grow = n_max * 2 <= cap;
            if tail > opts.divergence_tail || (residual <= opts.tol && tail > opts.tail_tol) {
                if can_grow {
                    n_max *= 2;
                    end = end.iter().map(|t| t.resized(n_max)).collect();
                    begin = begin.iter().map(|t| t.resized(n_max)).collect();
                    continue 'grow;
                }
                if tail > opts.divergence_tail || residual <= opts.tol {
                    return Err(IterateError::DivergenceDetected {
                        reason: format!("tail mass {tail:e} at the truncation cap {n_max}"),
                        report: Box::new(report(
                            cycles, &trace, tail, max_norm, n_max, g, false, &begin, &end,
                        )),
                    });
                }
            }
            if !residual.is_finite() {
                return Err(IterateError::DivergenceDetected {
                    reason: "non-finite residual".into(),
                    report: Box::new(report(
                        cycles, &trace, tail, max_norm, n_max, g, false, &begin, &end,
                    )),
                });
            }
            if residual <= opts.tol {
                let report = report(cycles, &trace, tail, max_norm, n_max, g, true, &begin, &end);
                return Ok(Stationary { begin, end, report });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Discipline, QueueSpec, Routing, SwitchoverDist};
    use crate::pgf::marginal;

    fn opts(n_max: usize) -> SolveOptions {
        SolveOptions {
            n_max: Some(n_max),
            ..SolveOptions::default()
        }
    }

    #[test]
    fn zero_arrivals_stay_at_origin() {
        let model = PollingModel::symmetric(
            2,
            QueueSpec::new(0.0, 1.0, Discipline::TimeLimited { alpha: 1.0 }),
            SwitchoverDist::Deterministic { c: 0.5 },
        );
        let st = solve_stationary(&model, &opts(8)).unwrap();
        for t in st.begin.iter().chain(&st.end) {
            assert!((t.get(&[0, 0]).unwrap().re - 1.0).abs() < 1e-12);
        }
        assert!(st.report.cycles <= 3);
    }

    #[test]
    fn symmetric_model_has_symmetric_fixed_point() {
        let model = PollingModel::symmetric(
            2,
            QueueSpec::new(0.3, 1.0, Discipline::TimeLimited { alpha: 1.0 }),
            SwitchoverDist::Deterministic { c: 0.2 },
        );
        let st = solve_stationary(&model, &opts(32)).unwrap();
        let a = &st.end[0];
        let b = &st.end[1];
        for n1 in 0..=32 {
            for n2 in 0..=32 {
                let x = a.get(&[n1, n2]).unwrap();
                let y = b.get(&[n2, n1]).unwrap();
                assert!((x - y).norm() < 1e-8);
            }
        }
        assert!(st.report.max_normalization_error < 1e-9);
    }

    #[test]
    fn exhaustive_queues_end_empty_and_fixed_point_holds() {
        let model = PollingModel::new(
            vec![
                QueueSpec::new(0.3, 1.0, Discipline::Exhaustive),
                QueueSpec::new(0.2, 1.0, Discipline::Exhaustive),
            ],
            vec![SwitchoverDist::Exponential { mean: 0.5 }; 2],
            Routing::CyclicPoisson,
        );
        let o = opts(32);
        let st = solve_stationary(&model, &o).unwrap();
        for (i, t) in st.end.iter().enumerate() {
            let beyond: f64 = marginal(t, i)[1..].iter().sum();
            assert!(beyond <= 1e-9);
        }
        let again = cycle_step(&model, &st.end, &o).unwrap();
        assert!(again.residuals.iter().all(|&r| r <= 2.0 * o.tol));
    }

    #[test]
    fn unstable_one_limited_is_rejected() {
        let model = PollingModel::symmetric(
            2,
            QueueSpec::new(0.6, 1.0, Discipline::KLimited { k: 1 }),
            SwitchoverDist::Deterministic { c: 0.1 },
        );
        let o = SolveOptions {
            n_max: Some(16),
            n_max_cap: Some(32),
            max_cycles: 2000,
            ..SolveOptions::default()
        };
        let err = solve_stationary(&model, &o).unwrap_err();
        assert!(matches!(
            err,
            IterateError::DivergenceDetected { .. } | IterateError::MaxCyclesExceeded { .. }
        ));
        let report = err.report().unwrap();
        assert!(report.tail_mass > 1e-6);
    }

    #[test]
    fn invalid_model_rejected() {
        let model = PollingModel::symmetric(
            2,
            QueueSpec::new(0.3, 1.0, Discipline::Exhaustive),
            SwitchoverDist::Zero,
        );
        assert!(matches!(
            solve_stationary(&model, &opts(8)),
            Err(IterateError::InvalidModel(_))
        ));
    }

    #[test]
    fn residual_mostly_non_increasing() {
        let model = PollingModel::new(
            vec![
                QueueSpec::new(0.4, 1.0, Discipline::Exhaustive),
                QueueSpec::new(0.2, 1.0, Discipline::KLimited { k: 1 }),
            ],
            vec![SwitchoverDist::Exponential { mean: 0.3 }; 2],
            Routing::CyclicPoisson,
        );
        let st = solve_stationary(&model, &opts(48)).unwrap();
        let tail = &st.report.residual_trace[10.min(st.report.residual_trace.len())..];
        if tail.len() > 1 {
            let ok = tail.windows(2).filter(|w| w[1] <= w[0]).count();
            assert!(ok as f64 >= 0.9 * (tail.len() - 1) as f64);
        }
    }
}

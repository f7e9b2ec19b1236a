//! Oracle battery: closed forms against dense solves, brute-force counts and
//! the absorbing-chain oracle.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::amc::{adaptive_exit_distribution, sm_corrected_entry, toeplitz_inverse_entry, Corrections, ToeplitzParams};
use crate::kernels::{quad_roots, visit_exhaustive, KLimitedPath, RootVariant, VisitKernel};
use crate::lattice::{c_bruteforce, c_closed_form, c_recurrence};
use crate::model::{Discipline, PollingModel, QueueSpec, Routing, SwitchoverDist};
use crate::pgf::{grid_to_tensor, CoeffTensor, TorusGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    Toeplitz,
    Lattice,
    KernelAmc,
    DualPath,
    Normalization,
    Exhaustive,
}

impl CheckKind {
    pub const ALL: [CheckKind; 6] = [
        CheckKind::Toeplitz,
        CheckKind::Lattice,
        CheckKind::KernelAmc,
        CheckKind::DualPath,
        CheckKind::Normalization,
        CheckKind::Exhaustive,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Normwise relative error of structured inverses against dense LU.
    pub toeplitz: f64,
    pub kernel_amc: f64,
    pub dual_path: f64,
    pub normalization: f64,
    /// Mass of the exhaustive output on the served axis beyond 0.
    pub exhaustive_mass: f64,
    /// `|y_1 - 1|` at `z_{-i} = 1` under `lambda_i b_i < 1`.
    pub root_one: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            toeplitz: 1e-10,
            kernel_amc: 1e-5,
            dual_path: 1e-9,
            normalization: 1e-9,
            exhaustive_mass: 1e-9,
            root_one: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyOptions {
    /// Checks to run; `None` runs all of them.
    pub checks: Option<Vec<CheckKind>>,
    pub tolerances: Tolerances,
    pub seed: u64,
    /// Random parameter draws for the Toeplitz check.
    pub draws: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            checks: None,
            tolerances: Tolerances::default(),
            seed: 7,
            draws: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub cases: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Set when a case could not be evaluated at all.
    pub failure: Option<String>,
}

impl CheckResult {
    fn from_errors(name: &str, errors: Result<Vec<f64>, String>, tolerance: f64) -> Self {
        match errors {
            Ok(errs) => {
                let max_error = errs.iter().copied().fold(0.0, f64::max);
                let finite = errs.iter().all(|e| e.is_finite());
                Self {
                    name: name.into(),
                    cases: errs.len(),
                    max_error,
                    tolerance,
                    passed: finite && max_error <= tolerance,
                    failure: None,
                }
            }
            Err(msg) => Self {
                name: name.into(),
                cases: 0,
                max_error: f64::INFINITY,
                tolerance,
                passed: false,
                failure: Some(msg),
            },
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub fn run_battery(opts: &VerifyOptions) -> VerifyReport {
    let kinds: Vec<CheckKind> = match &opts.checks {
        Some(list) => {
            let mut l = list.clone();
            l.sort();
            l.dedup();
            l
        }
        None => CheckKind::ALL.to_vec(),
    };
    let tol = &opts.tolerances;
    let checks = kinds
        .into_iter()
        .map(|k| match k {
            CheckKind::Toeplitz => check_toeplitz(opts.draws, opts.seed, tol.toeplitz),
            CheckKind::Lattice => check_lattice(6, 12),
            CheckKind::KernelAmc => check_kernel_amc(opts.seed, tol.kernel_amc),
            CheckKind::DualPath => check_dual_path(opts.seed, tol.dual_path),
            CheckKind::Normalization => check_normalization(opts.seed, tol.normalization),
            CheckKind::Exhaustive => check_exhaustive(tol.exhaustive_mass, tol.root_one),
        })
        .collect();
    VerifyReport { checks }
}

fn dense_matrix(l: usize, p: &ToeplitzParams, corr: Corrections) -> DMatrix<Complex64> {
    let mut a = DMatrix::from_element(l, l, Complex64::new(0.0, 0.0));
    for r in 0..l {
        a[(r, r)] = -p.s;
        if r + 1 < l {
            a[(r, r + 1)] = Complex64::new(p.lambda, 0.0);
            a[(r + 1, r)] = Complex64::new(1.0 / p.b, 0.0);
        }
    }
    if corr.first {
        a[(0, 0)] += 1.0 / p.b;
    }
    if corr.last {
        a[(l - 1, l - 1)] += p.lambda;
    }
    a
}

/// Largest entrywise deviation of the structured inverse from the dense LU
/// inverse, relative to the largest entry of the latter.
pub fn structured_inverse_error(
    l: usize,
    p: &ToeplitzParams,
    corr: Corrections,
) -> Result<f64, String> {
    let dense = dense_matrix(l, p, corr)
        .lu()
        .try_inverse()
        .ok_or_else(|| format!("dense matrix singular for {p:?}"))?;
    let scale = dense.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let mut worst: f64 = 0.0;
    for i in 1..=l {
        for j in 1..=l {
            let v = if corr == Corrections::default() {
                toeplitz_inverse_entry(i, j, l, p)
            } else {
                sm_corrected_entry(i, j, l, p, corr)
            }
            .map_err(|e| e.to_string())?;
            worst = worst.max((v - dense[(i - 1, j - 1)]).norm());
        }
    }
    Ok(worst / scale)
}

/// Random parameters of the visit generator block: diagonal
/// `-(lambda + 1/b + alpha + w)` with `Re w >= 0`.
pub fn random_toeplitz_params(rng: &mut impl Rng) -> ToeplitzParams {
    let lambda = rng.random_range(0.05..2.0);
    let b = rng.random_range(0.2..3.0);
    let alpha = rng.random_range(0.05..2.0);
    let mu_other = rng.random_range(0.0..1.5);
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    let w = (Complex64::new(1.0, 0.0) - Complex64::from_polar(1.0, theta)) * mu_other;
    ToeplitzParams {
        lambda,
        b,
        s: w + lambda + 1.0 / b + alpha,
    }
}

pub fn check_toeplitz(draws: usize, seed: u64, tol: f64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes = [2, 5, 10, 25, 50];
    let errors = (0..draws)
        .flat_map(|d| sizes.iter().map(move |&l| (d, l)))
        .map(|(d, l)| {
            let p = random_toeplitz_params(&mut rng);
            let corr = Corrections {
                first: d % 2 == 1,
                last: d % 4 >= 2,
            };
            let plain = structured_inverse_error(l, &p, Corrections::default())?;
            let bumped = structured_inverse_error(l, &p, corr)?;
            Ok(plain.max(bumped))
        })
        .collect();
    CheckResult::from_errors("toeplitz_sm_vs_dense", errors, tol)
}

/// Counts of disagreeing entries among recurrence, closed form and brute force.
pub fn check_lattice(n_max: usize, ij_max: usize) -> CheckResult {
    let mut errors = Vec::new();
    for n in 1..=n_max {
        let table = match c_recurrence(n, ij_max, ij_max) {
            Ok(t) => t,
            Err(e) => return CheckResult::from_errors("lattice_triple", Err(e.to_string()), 0.0),
        };
        for i in 1..=ij_max {
            for j in 1..=ij_max {
                let r = table.get(i, j);
                let agree = r == c_closed_form(n, i, j) && r == c_bruteforce(n, i, j, i + j + 2 * n);
                errors.push(if agree { 0.0 } else { 1.0 });
            }
        }
    }
    CheckResult::from_errors("lattice_triple", Ok(errors), 0.0)
}

fn torus_point(rng: &mut impl Rng, m: usize) -> Vec<Complex64> {
    (0..m)
        .map(|_| Complex64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU)))
        .collect()
}

fn two_queue(d: Discipline, lambdas: [f64; 2]) -> PollingModel {
    PollingModel::new(
        lambdas.iter().map(|&l| QueueSpec::new(l, 1.0, d)).collect(),
        vec![SwitchoverDist::Deterministic { c: 0.1 }; 2],
        Routing::CyclicPoisson,
    )
}

/// Kernel against the absorbing-chain oracle for point-mass starts `(i1, 0)`.
pub fn check_kernel_amc(seed: u64, tol: f64) -> CheckResult {
    let cases = [
        (Discipline::Autonomous { alpha: 1.0 }, KLimitedPath::Auto),
        (Discipline::TimeLimited { alpha: 1.0 }, KLimitedPath::Auto),
        (Discipline::KLimited { k: 1 }, KLimitedPath::ClosedForm),
        (Discipline::KLimited { k: 2 }, KLimitedPath::ClosedForm),
        (Discipline::KLimited { k: 3 }, KLimitedPath::GeneralS),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut errors = Vec::new();
    for (d, path) in cases {
        let model = two_queue(d, [0.5, 0.5]);
        for i1 in [0usize, 1, 2, 5] {
            let start = [i1, 0];
            let mut run = || -> Result<Vec<f64>, String> {
                let beta = CoeffTensor::point_mass(2, i1 + 1, &start).map_err(|e| e.to_string())?;
                let kernel = VisitKernel::with_path(&model, 0, i1 + 1, path).map_err(|e| e.to_string())?;
                let (dist, _) = adaptive_exit_distribution(&model, 0, &start, 1e-10).map_err(|e| e.to_string())?;
                let pts: Vec<Vec<Complex64>> = (0..10).map(|_| torus_point(&mut rng, 2)).collect();
                pts.iter()
                    .map(|z| {
                        let g = kernel.gamma_at(&beta, z).map_err(|e| e.to_string())?;
                        Ok((g - dist.pgf(z)).norm())
                    })
                    .collect()
            };
            match run() {
                Ok(e) => errors.extend(e),
                Err(msg) => {
                    return CheckResult::from_errors(
                        "kernel_vs_amc",
                        Err(format!("{} i1={i1}: {msg}", d.name())),
                        tol,
                    )
                }
            }
        }
    }
    CheckResult::from_errors("kernel_vs_amc", Ok(errors), tol)
}

/// A random probability tensor with geometric decay.
pub fn random_beta(rng: &mut impl Rng, dims: usize, n_max: usize) -> CoeffTensor {
    let side = n_max + 1;
    let len = side.pow(dims as u32);
    let decay = rng.random_range(0.2..0.7);
    let mut coeffs: Vec<Complex64> = (0..len)
        .map(|flat| {
            let mut rest = flat;
            let mut total = 0;
            for _ in 0..dims {
                total += rest % side;
                rest /= side;
            }
            Complex64::new(rng.random::<f64>() * f64::powi(decay, total as i32), 0.0)
        })
        .collect();
    let sum: f64 = coeffs.iter().map(|c| c.re).sum();
    coeffs.iter_mut().for_each(|c| *c /= sum);
    CoeffTensor::new(dims, n_max, coeffs).expect("shape is consistent")
}

/// Closed-form 2-limited kernel against the lattice series with `k = 2`.
pub fn check_dual_path(seed: u64, tol: f64) -> CheckResult {
    let model = two_queue(Discipline::KLimited { k: 2 }, [0.5, 0.5]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x2);
    let n_max = 8;
    let mut run = || -> Result<Vec<f64>, String> {
        let closed = VisitKernel::with_path(&model, 0, n_max, KLimitedPath::ClosedForm).map_err(|e| e.to_string())?;
        let series = VisitKernel::with_path(&model, 0, n_max, KLimitedPath::GeneralS).map_err(|e| e.to_string())?;
        let mut errs = Vec::new();
        for _ in 0..10 {
            let beta = random_beta(&mut rng, 2, n_max);
            for _ in 0..10 {
                let z = torus_point(&mut rng, 2);
                let a = closed.gamma_at(&beta, &z).map_err(|e| e.to_string())?;
                let b = series.gamma_at(&beta, &z).map_err(|e| e.to_string())?;
                errs.push((a - b).norm());
            }
        }
        Ok(errs)
    };
    CheckResult::from_errors("k2_dual_path", run(), tol)
}

/// Models covering every kernel route, used by the normalisation check.
pub fn kernel_catalogue() -> Vec<(PollingModel, KLimitedPath)> {
    let mut out = Vec::new();
    for d in [
        Discipline::Autonomous { alpha: 1.0 },
        Discipline::TimeLimited { alpha: 0.7 },
        Discipline::KLimited { k: 1 },
        Discipline::KLimited { k: 2 },
        Discipline::Exhaustive,
    ] {
        out.push((two_queue(d, [0.5, 0.3]), KLimitedPath::Auto));
        out.push((two_queue(d, [0.0, 0.3]), KLimitedPath::Auto));
    }
    for k in [2, 3, 5] {
        out.push((two_queue(Discipline::KLimited { k }, [0.4, 0.4]), KLimitedPath::GeneralS));
    }
    for d in [Discipline::Autonomous { alpha: 1.0 }, Discipline::TimeLimited { alpha: 1.0 }] {
        out.push((
            PollingModel::new(
                vec![QueueSpec::new(0.3, 1.0, d), QueueSpec::new(0.0, 1.0, d)],
                vec![SwitchoverDist::Deterministic { c: 0.1 }; 2],
                Routing::Tandem,
            ),
            KLimitedPath::Auto,
        ));
    }
    out.push((
        PollingModel::new(
            vec![
                QueueSpec::new(0.2, 1.0, Discipline::TimeLimited { alpha: 1.0 }),
                QueueSpec::new(0.2, 1.0, Discipline::KLimited { k: 3 }),
                QueueSpec::new(0.2, 1.0, Discipline::Exhaustive),
            ],
            vec![SwitchoverDist::Exponential { mean: 0.2 }; 3],
            Routing::CyclicPoisson,
        ),
        KLimitedPath::Auto,
    ));
    out
}

/// `|gamma(1, ..., 1) - 1|` for normalised random inputs to every kernel route.
pub fn check_normalization(seed: u64, tol: f64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4);
    let mut errs = Vec::new();
    for (model, path) in kernel_catalogue() {
        let m = model.num_queues();
        let n_max = if m <= 2 { 12 } else { 5 };
        for i in 0..m {
            let kernel = match VisitKernel::with_path(&model, i, n_max, path) {
                Ok(k) => k,
                Err(e) => return CheckResult::from_errors("normalization", Err(e.to_string()), tol),
            };
            for _ in 0..3 {
                let beta = random_beta(&mut rng, m, n_max);
                match kernel.gamma_at(&beta, &vec![Complex64::new(1.0, 0.0); m]) {
                    Ok(g) => errs.push((g - 1.0).norm()),
                    Err(e) => return CheckResult::from_errors("normalization", Err(e.to_string()), tol),
                }
            }
        }
    }
    CheckResult::from_errors("normalization", Ok(errs), tol)
}

/// Served-axis mass of the exhaustive output, and the busy-period root at
/// `z_{-i} = 1`. The reported error is the worse of the two ratios to their
/// tolerances, rescaled to the mass tolerance.
pub fn check_exhaustive(mass_tol: f64, root_tol: f64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(0xE);
    let mut run = || -> Result<Vec<f64>, String> {
        let mut errs = Vec::new();
        for lambdas in [[0.4, 0.2], [0.8, 0.5], [0.1, 0.9]] {
            let model = PollingModel::new(
                vec![
                    QueueSpec::new(lambdas[0], 1.0, Discipline::Exhaustive),
                    QueueSpec::new(lambdas[1], 1.0, Discipline::KLimited { k: 1 }),
                ],
                vec![SwitchoverDist::Exponential { mean: 0.3 }; 2],
                Routing::CyclicPoisson,
            );
            let n_max = 12;
            let beta = random_beta(&mut rng, 2, n_max);
            let grid = TorusGrid::new(2, TorusGrid::default_size(n_max));
            let gamma = visit_exhaustive(&model, 0, &beta, grid).map_err(|e| e.to_string())?;
            let t = grid_to_tensor(&gamma, n_max).map_err(|e| e.to_string())?;
            let side = n_max + 1;
            let served_mass: f64 = t
                .coeffs()
                .iter()
                .enumerate()
                .filter(|(flat, _)| flat / side != 0)
                .map(|(_, c)| c.norm())
                .sum();
            errs.push(served_mass);
            let one = vec![Complex64::new(1.0, 0.0); 2];
            let roots = quad_roots(&model, 0, &one, RootVariant::NoTimer).map_err(|e| e.to_string())?;
            errs.push((roots.r1 - 1.0).norm() * mass_tol / root_tol);
        }
        Ok(errs)
    };
    CheckResult::from_errors("exhaustive_structure", run(), mass_tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_battery_passes() {
        let report = run_battery(&VerifyOptions {
            draws: 10,
            ..VerifyOptions::default()
        });
        for c in &report.checks {
            assert!(c.passed, "{c:?}");
        }
        assert_eq!(report.checks.len(), CheckKind::ALL.len());
    }

    #[test]
    fn empty_selection_is_noop() {
        let report = run_battery(&VerifyOptions {
            checks: Some(vec![]),
            ..VerifyOptions::default()
        });
        assert!(report.checks.is_empty());
        assert!(report.passed());
    }

    #[test]
    fn corrupted_tolerance_fails() {
        let report = run_battery(&VerifyOptions {
            checks: Some(vec![CheckKind::DualPath]),
            tolerances: Tolerances {
                dual_path: 0.0,
                ..Tolerances::default()
            },
            ..VerifyOptions::default()
        });
        assert!(!report.passed());
    }

    #[test]
    fn dense_matrix_matches_hand_inverse() {
        let p = ToeplitzParams {
            lambda: 0.5,
            b: 1.0,
            s: Complex64::new(2.0, 0.0),
        };
        let a = dense_matrix(2, &p, Corrections::default());
        // [[-2, 0.5], [1, -2]]^{-1} = [[-2, -0.5], [-1, -2]] / 3.5
        let inv = a.try_inverse().unwrap();
        assert!((inv[(0, 1)] - Complex64::new(-0.5 / 3.5, 0.0)).norm() < 1e-15);
        assert!(structured_inverse_error(2, &p, Corrections::default()).unwrap() < 1e-14);
    }
}

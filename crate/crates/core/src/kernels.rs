//! Visit kernels: the map from the joint PGF `beta` at the start of a visit
//! to the joint PGF `gamma` at its end.
//!
//! Every kernel works on sections. Fixing the other coordinates `z_{-i}` at
//! a point of the reduced torus turns `beta` into a power series in `z_i`
//! whose coefficients we obtain exactly (FFT over the other axes); the
//! kernel then maps that one-variable series to `gamma(., z_i)`.

use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::fft::{fft_axis, unravel, Direction};
use crate::lattice::{c_table_f64, CTable, LatticeError};
use crate::model::{Discipline, PollingModel, POLYDISC_TOL};
use crate::pgf::{CoeffTensor, GridFunction, PgfError, TorusGrid};

const DISCRIMINANT_TOL: f64 = 1e-14;
const ROOT_GAP_TOL: f64 = 1e-10;
const POLE_TOL: f64 = 1e-12;
const SERIES_TOL: f64 = 1e-14;
const MAX_SERIES_TERMS: usize = 1 << 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("queue {}: roots not separated (gap {gap:e})", .queue + 1)]
    DegenerateRoots { queue: usize, gap: f64 },
    #[error("queue {}: |P(z)| = {modulus:e} vanishes at an evaluation node", .queue + 1)]
    PoleOnGrid { queue: usize, modulus: f64 },
    #[error("queue {}: geometric series ratio {ratio} is not below one", .queue + 1)]
    SeriesDivergence { queue: usize, ratio: f64 },
    #[error("queue {}: kernel expects {expected} discipline, model has {found}", .queue + 1)]
    DisciplineMismatch {
        queue: usize,
        expected: &'static str,
        found: &'static str,
    },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Pgf(#[from] PgfError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

/// Which quadratic to solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RootVariant {
    /// `P_i` including the timer rate `alpha`.
    Timer(f64),
    /// The busy-period quadratic without a timer.
    NoTimer,
}

/// Kernel scalars at a fixed reduced-torus point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadParams {
    pub lambda: f64,
    pub mean_service: f64,
    /// Linear coefficient (with sign flipped): `P(r) = lambda r^2 - s r + constant`.
    pub s: Complex64,
    /// `1/b_i`, or `z_{i+1}/b_i` for a tandem stage.
    pub constant: Complex64,
    /// Root inside the unit disc.
    pub r1: Complex64,
    /// Root outside the unit disc; `None` when `lambda = 0` and `P` is linear.
    pub r2: Option<Complex64>,
    /// `(lambda_i + sum_{m != i} lambda_m (1 - z_m) + 1/b_i) / lambda_i`, when `lambda_i > 0`.
    pub x: Option<Complex64>,
}

impl QuadParams {
    pub fn p(&self, z: Complex64) -> Complex64 {
        z * z * self.lambda - self.s * z + self.constant
    }

    /// `x - 1`.
    pub fn x0(&self) -> Option<Complex64> {
        self.x.map(|x| x - 1.0)
    }
}

fn one() -> Complex64 {
    Complex64::new(1.0, 0.0)
}

fn check_point(z: &[Complex64], m: usize) -> Result<(), KernelError> {
    if z.len() != m {
        return Err(PgfError::SizeMismatch(format!("expected {m} coordinates, got {}", z.len())).into());
    }
    for (index, zm) in z.iter().enumerate() {
        let modulus = zm.norm();
        if !(modulus <= 1.0 + POLYDISC_TOL) {
            return Err(PgfError::OutsidePolydisc { index, modulus }.into());
        }
    }
    Ok(())
}

/// `sum_{m != i} lambda_m (1 - z_m)`.
fn others_load(model: &PollingModel, i: usize, z: &[Complex64]) -> Complex64 {
    model
        .queues
        .iter()
        .zip(z)
        .enumerate()
        .filter(|&(m, _)| m != i)
        .map(|(_, (q, &zm))| (one() - zm) * q.lambda)
        .sum()
}

/// The coordinate fed by departures of queue `i`: `z_{i+1}` in a tandem, 1 otherwise.
fn downstream_z(model: &PollingModel, i: usize, z: &[Complex64]) -> Complex64 {
    model.downstream(i).map_or(one(), |d| z[d])
}

/// Roots of `lambda r^2 - s r + c`, ordered by modulus.
fn solve_quadratic(
    queue: usize,
    lambda: f64,
    s: Complex64,
    c: Complex64,
) -> Result<(Complex64, Option<Complex64>), KernelError> {
    if lambda == 0.0 {
        if s.norm() < POLE_TOL {
            return Err(KernelError::DegenerateRoots { queue, gap: s.norm() });
        }
        return Ok((c / s, None));
    }
    let disc = s * s - c * (4.0 * lambda);
    if disc.norm() < DISCRIMINANT_TOL * s.norm_sqr().max(1.0) {
        return Err(KernelError::DegenerateRoots {
            queue,
            gap: disc.norm(),
        });
    }
    let mut sq = disc.sqrt();
    if (s.conj() * sq).re < 0.0 {
        sq = -sq;
    }
    // The larger root from the non-cancelling sum, the smaller from Vieta.
    let q = (s + sq) * 0.5;
    let big = q / lambda;
    let small = c / q;
    let (a, b) = if small.norm() <= big.norm() {
        (small, big)
    } else {
        (big, small)
    };
    if b.norm() - a.norm() < ROOT_GAP_TOL {
        return Err(KernelError::DegenerateRoots {
            queue,
            gap: b.norm() - a.norm(),
        });
    }
    Ok((a, Some(b)))
}

/// Kernel scalars of queue `i` at the point `z` (the entry `z[i]` is ignored).
pub fn quad_roots(
    model: &PollingModel,
    i: usize,
    z: &[Complex64],
    variant: RootVariant,
) -> Result<QuadParams, KernelError> {
    check_point(z, model.num_queues())?;
    quad_roots_unchecked(model, i, z, variant)
}

fn quad_roots_unchecked(
    model: &PollingModel,
    i: usize,
    z: &[Complex64],
    variant: RootVariant,
) -> Result<QuadParams, KernelError> {
    let q = &model.queues[i];
    let mu = q.service_rate();
    let load = others_load(model, i, z);
    let alpha = match variant {
        RootVariant::Timer(a) => a,
        RootVariant::NoTimer => 0.0,
    };
    let s = load + q.lambda + mu + alpha;
    let constant = downstream_z(model, i, z) * mu;
    let (r1, r2) = solve_quadratic(i, q.lambda, s, constant)?;
    let x = (q.lambda > 0.0).then(|| (load + q.lambda + mu) / q.lambda);
    Ok(QuadParams {
        lambda: q.lambda,
        mean_service: q.mean_service,
        s,
        constant,
        r1,
        r2,
        x,
    })
}

fn horner(coeffs: &[Complex64], z: Complex64) -> Complex64 {
    coeffs.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c)
}

/// Evaluation route for k-limited queues.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KLimitedPath {
    /// Closed forms for `k <= 2`, lattice series otherwise.
    #[default]
    Auto,
    /// Closed forms; only `k <= 2`.
    ClosedForm,
    /// Lattice series; only `k >= 2`.
    GeneralS,
}

#[derive(Debug, Clone)]
enum Method {
    Autonomous { alpha: f64 },
    TimeLimited { alpha: f64 },
    KClosed { k: usize },
    KSeries(Box<SeriesTables>),
    KNoArrivals { k: usize },
    Exhaustive,
}

#[derive(Debug, Clone)]
struct SeriesTables {
    k: usize,
    terms: usize,
    c_k: CTable<f64>,
    c_km1: CTable<f64>,
}

/// Number of series terms past the first nonzero column so that the bound
/// `C(2k + t, k) q^t` drops below `1e-14 (1 - q)`.
fn series_length(queue: usize, k: usize, q: f64) -> Result<usize, KernelError> {
    if !(q < 1.0) {
        return Err(KernelError::SeriesDivergence { queue, ratio: q });
    }
    let target = SERIES_TOL * (1.0 - q);
    let mut term: f64 = (1..=k).map(|t| (k + t) as f64 / t as f64).product();
    for t in 0..MAX_SERIES_TERMS {
        let ratio = (2 * k + t + 1) as f64 / (t + k + 1) as f64 * q;
        if term < target && ratio < 1.0 {
            return Ok(t + 1);
        }
        term *= ratio;
    }
    Err(KernelError::SeriesDivergence { queue, ratio: q })
}

/// The visit kernel of one queue.
#[derive(Debug, Clone)]
pub struct VisitKernel<'a> {
    model: &'a PollingModel,
    i: usize,
    n_max: usize,
    method: Method,
}

impl<'a> VisitKernel<'a> {
    /// Kernel for queue `i` acting on tensors of truncation order `n_max`.
    pub fn new(model: &'a PollingModel, i: usize, n_max: usize) -> Result<Self, KernelError> {
        Self::with_path(model, i, n_max, KLimitedPath::Auto)
    }

    pub fn with_path(
        model: &'a PollingModel,
        i: usize,
        n_max: usize,
        path: KLimitedPath,
    ) -> Result<Self, KernelError> {
        let q = model
            .queues
            .get(i)
            .ok_or_else(|| KernelError::Unsupported(format!("no queue with index {i}")))?;
        let method = match q.discipline {
            Discipline::Autonomous { alpha } => Method::Autonomous { alpha },
            Discipline::TimeLimited { alpha } => Method::TimeLimited { alpha },
            Discipline::KLimited { .. } | Discipline::Exhaustive if model.is_tandem() => {
                return Err(KernelError::Unsupported(format!(
                    "{} discipline in a tandem",
                    q.discipline.name()
                )))
            }
            Discipline::Exhaustive => Method::Exhaustive,
            Discipline::KLimited { k } => {
                let general = match path {
                    KLimitedPath::Auto => k >= 3,
                    KLimitedPath::ClosedForm if k <= 2 => false,
                    KLimitedPath::GeneralS if k >= 2 => true,
                    _ => {
                        return Err(KernelError::Unsupported(format!(
                            "{path:?} evaluation for k = {k}"
                        )))
                    }
                };
                if q.lambda == 0.0 {
                    Method::KNoArrivals { k }
                } else if general {
                    // |x| >= 1 + 1/(lambda b) on the closed polydisc.
                    let lb = q.lambda * q.mean_service;
                    let terms = series_length(i, k, lb / (1.0 + lb))?;
                    let width = n_max + terms + 1;
                    Method::KSeries(Box::new(SeriesTables {
                        k,
                        terms,
                        c_k: c_table_f64(k, n_max.max(1), width)?,
                        c_km1: c_table_f64(k - 1, n_max.max(1), width)?,
                    }))
                } else {
                    Method::KClosed { k }
                }
            }
        };
        Ok(Self {
            model,
            i,
            n_max,
            method,
        })
    }

    pub fn queue(&self) -> usize {
        self.i
    }

    /// `gamma` on the full torus grid.
    pub fn apply_grid(
        &self,
        beta: &CoeffTensor,
        grid: TorusGrid,
    ) -> Result<GridFunction, KernelError> {
        let m = self.model.num_queues();
        self.check_tensor(beta)?;
        if grid.dims != m || grid.g < self.n_max + 1 {
            return Err(PgfError::SizeMismatch(format!(
                "grid {}^{} cannot hold order {} in {m} dimensions",
                grid.g, grid.dims, self.n_max
            ))
            .into());
        }
        let g = grid.g;
        let side = self.n_max + 1;
        let i = self.i;

        // Sections: FFT over every axis except the served one.
        let pshape: Vec<usize> = (0..m).map(|a| if a == i { side } else { g }).collect();
        let pstrides = crate::fft::strides(&pshape);
        let mut data = vec![Complex64::new(0.0, 0.0); pshape.iter().product()];
        let tshape = beta.shape();
        let mut idx = vec![0; m];
        for (flat, &c) in beta.coeffs().iter().enumerate() {
            unravel(flat, &tshape, &mut idx);
            let t: usize = idx.iter().zip(&pstrides).map(|(n, s)| n * s).sum();
            data[t] = c;
        }
        for axis in (0..m).filter(|&a| a != i) {
            fft_axis(&mut data, &pshape, axis, Direction::Inverse);
        }

        let nodes = grid.nodes();
        let rshape = vec![g; m - 1];
        let n_reduced = g.pow((m - 1) as u32);
        let sections: Vec<Vec<Complex64>> = (0..n_reduced)
            .into_par_iter()
            .map(|r| {
                let mut ridx = vec![0; m - 1];
                unravel(r, &rshape, &mut ridx);
                let mut z = vec![one(); m];
                let mut base = 0;
                for (a, zr) in z.iter_mut().enumerate() {
                    if a == i {
                        continue;
                    }
                    let k = ridx[if a < i { a } else { a - 1 }];
                    *zr = nodes[k];
                    base += k * pstrides[a];
                }
                let coeffs: Vec<Complex64> =
                    (0..side).map(|n| data[base + n * pstrides[i]]).collect();
                self.section(&z, &coeffs, &nodes)
            })
            .collect::<Result<_, _>>()?;

        let gstrides = crate::fft::strides(&grid.shape());
        let mut values = vec![Complex64::new(0.0, 0.0); grid.len()];
        let mut ridx = vec![0; m - 1];
        for (r, sec) in sections.iter().enumerate() {
            unravel(r, &rshape, &mut ridx);
            let mut base = 0;
            for a in (0..m).filter(|&a| a != i) {
                base += ridx[if a < i { a } else { a - 1 }] * gstrides[a];
            }
            for (k, &v) in sec.iter().enumerate() {
                values[base + k * gstrides[i]] = v;
            }
        }
        Ok(GridFunction { grid, values })
    }

    /// `gamma(z)` at a single point of the closed unit polydisc.
    pub fn gamma_at(&self, beta: &CoeffTensor, z: &[Complex64]) -> Result<Complex64, KernelError> {
        let m = self.model.num_queues();
        self.check_tensor(beta)?;
        check_point(z, m)?;
        let side = self.n_max + 1;
        let powers: Vec<Vec<Complex64>> = z
            .iter()
            .map(|&zm| {
                std::iter::successors(Some(one()), |p| Some(p * zm))
                    .take(side)
                    .collect()
            })
            .collect();
        let mut sec = vec![Complex64::new(0.0, 0.0); side];
        let shape = beta.shape();
        let mut idx = vec![0; m];
        for (flat, &c) in beta.coeffs().iter().enumerate() {
            unravel(flat, &shape, &mut idx);
            let w: Complex64 = (0..m)
                .filter(|&a| a != self.i)
                .map(|a| powers[a][idx[a]])
                .product();
            sec[idx[self.i]] += c * w;
        }
        Ok(self.section(z, &sec, &[z[self.i]])?[0])
    }

    fn check_tensor(&self, beta: &CoeffTensor) -> Result<(), KernelError> {
        if beta.dims() != self.model.num_queues() || beta.n_max() != self.n_max {
            return Err(PgfError::SizeMismatch(format!(
                "kernel built for order {} in {} dimensions, tensor has order {} in {}",
                self.n_max,
                self.model.num_queues(),
                beta.n_max(),
                beta.dims()
            ))
            .into());
        }
        Ok(())
    }

    /// Maps the section `coeffs` (powers of `z_i` at fixed `z_{-i}`) to `gamma`
    /// at each of `zetas`.
    fn section(
        &self,
        z: &[Complex64],
        coeffs: &[Complex64],
        zetas: &[Complex64],
    ) -> Result<Vec<Complex64>, KernelError> {
        let i = self.i;
        let q = &self.model.queues[i];
        let mu = q.service_rate();
        match &self.method {
            Method::Autonomous { alpha } => {
                let p = quad_roots_unchecked(self.model, i, z, RootVariant::Timer(*alpha))?;
                let r = p.r1;
                let beta_star = horner(coeffs, r);
                let znext = downstream_z(self.model, i, z);
                // r / (z_{i+1} - r) through the ratio rho = r / z_{i+1}, which
                // stays finite as z_{i+1} -> 0.
                let rho = if znext.norm() < POLE_TOL {
                    Complex64::new(mu, 0.0) / p.s
                } else {
                    r / znext
                };
                let lead = rho / (one() - rho) * beta_star;
                zetas
                    .iter()
                    .map(|&zeta| {
                        let pz = self.pole_checked(&p, zeta)?;
                        Ok(pz.inv() * *alpha * ((znext - zeta) * lead - zeta * horner(coeffs, zeta)))
                    })
                    .collect()
            }
            Method::TimeLimited { alpha } => {
                let p = quad_roots_unchecked(self.model, i, z, RootVariant::Timer(*alpha))?;
                let beta_star = horner(coeffs, p.r1);
                zetas
                    .iter()
                    .map(|&zeta| {
                        let pz = self.pole_checked(&p, zeta)?;
                        let w = zeta * *alpha / pz;
                        Ok((one() + w) * beta_star - w * horner(coeffs, zeta))
                    })
                    .collect()
            }
            Method::Exhaustive => {
                let p = quad_roots_unchecked(self.model, i, z, RootVariant::NoTimer)?;
                let v = horner(coeffs, p.r1);
                Ok(vec![v; zetas.len()])
            }
            Method::KNoArrivals { k } => {
                let phi0 = Complex64::new(mu, 0.0) / (others_load(self.model, i, z) + mu);
                Ok(zetas
                    .iter()
                    .map(|&zeta| {
                        coeffs
                            .iter()
                            .enumerate()
                            .map(|(n, &c)| {
                                let served = n.min(*k);
                                c * zeta.powu((n - served) as u32) * phi0.powu(served as u32)
                            })
                            .sum()
                    })
                    .collect())
            }
            Method::KClosed { k } => {
                let load = others_load(self.model, i, z);
                // phi(zeta) = 1 / (lambda b (x - zeta)), the arrivals to all
                // queues during one service.
                let phi = |zeta: Complex64| {
                    Complex64::new(mu, 0.0) / (load + (one() - zeta) * q.lambda + mu)
                };
                let c0 = coeffs[0];
                if *k == 1 {
                    let rest = &coeffs[1.min(coeffs.len())..];
                    Ok(zetas
                        .iter()
                        .map(|&zeta| c0 + phi(zeta) * horner(rest, zeta))
                        .collect())
                } else {
                    let c1 = coeffs.get(1).copied().unwrap_or_default();
                    let rest = &coeffs[2.min(coeffs.len())..];
                    let phi0 = phi(Complex64::new(0.0, 0.0));
                    let lb = q.lambda * q.mean_service;
                    Ok(zetas
                        .iter()
                        .map(|&zeta| {
                            let f2 = phi(zeta) * phi(zeta);
                            c0 + c1 * phi0 * (one() + f2 * lb) + f2 * horner(rest, zeta)
                        })
                        .collect())
                }
            }
            Method::KSeries(tables) => self.section_series(tables, z, coeffs, zetas),
        }
    }

    fn pole_checked(&self, p: &QuadParams, zeta: Complex64) -> Result<Complex64, KernelError> {
        let pz = p.p(zeta);
        if pz.norm() < POLE_TOL {
            return Err(KernelError::PoleOnGrid {
                queue: self.i,
                modulus: pz.norm(),
            });
        }
        Ok(pz)
    }

    /// General-k kernel through the lattice coefficients.
    ///
    /// With `kappa = (lambda b)^{-k}`, the conditional transform given `i1 >= 1`
    /// jobs is
    /// `y^{i1} - kappa c^{k-1}(i1,1) x^{i1-2k} - kappa sum_j c^k(i1,j) x^{i1-2k-j} y^j
    ///  + kappa/(x - z) sum_j c^{k-1}(i1,j) x^{i1-2k+2-j} z^{j-1}`.
    /// Summing against the section gives a constant plus one rational term.
    fn section_series(
        &self,
        t: &SeriesTables,
        z: &[Complex64],
        coeffs: &[Complex64],
        zetas: &[Complex64],
    ) -> Result<Vec<Complex64>, KernelError> {
        let i = self.i;
        let q = &self.model.queues[i];
        let p = quad_roots_unchecked(self.model, i, z, RootVariant::NoTimer)?;
        let x = p.x.expect("positive arrival rate");
        let y = p.r1;
        let ratio = 1.0 / x.norm();
        if !(ratio < 1.0) || !(y.norm() * ratio < 1.0) {
            return Err(KernelError::SeriesDivergence { queue: i, ratio });
        }
        let k = t.k;
        let ki = k as i32;
        let kappa = (q.lambda * q.mean_service).powi(-ki);
        let xinv = x.inv();
        let y_over_x = y * xinv;

        let n_top = coeffs.len() - 1;
        let mut constant = Complex64::new(0.0, 0.0);
        let mut w = vec![Complex64::new(0.0, 0.0); n_top + t.terms + 1];
        let mut y_pow = one();
        for (i1, &c) in coeffs.iter().enumerate().skip(1) {
            y_pow *= y;
            if c == Complex64::new(0.0, 0.0) {
                continue;
            }
            let ci = i1 as i32;
            let ck = c * kappa;
            let mut acc = y_pow;
            if i1 <= k {
                acc -= x.powi(ci - 2 * ki) * (kappa * t.c_km1.get(i1, 1));
            }
            let j0 = i1.saturating_sub(k).max(1);
            let mut pw = x.powi(ci - 2 * ki - j0 as i32) * y.powi(j0 as i32);
            let mut sum = Complex64::new(0.0, 0.0);
            for j in j0..j0 + t.terms {
                sum += pw * t.c_k.get(i1, j);
                pw *= y_over_x;
            }
            acc -= sum * kappa;
            constant += c * acc;

            let j0 = (i1 + 1).saturating_sub(k).max(1);
            let mut pw = x.powi(ci - 2 * ki + 2 - j0 as i32);
            for j in j0..j0 + t.terms {
                w[j - 1] += ck * pw * t.c_km1.get(i1, j);
                pw *= xinv;
            }
        }
        let c0 = coeffs[0] + constant;
        Ok(zetas
            .iter()
            .map(|&zeta| c0 + horner(&w, zeta) / (x - zeta))
            .collect())
    }
}

fn expect_discipline(
    model: &PollingModel,
    i: usize,
    expected: &'static str,
    ok: impl Fn(&Discipline) -> bool,
) -> Result<(), KernelError> {
    let q = model
        .queues
        .get(i)
        .ok_or_else(|| KernelError::Unsupported(format!("no queue with index {i}")))?;
    if ok(&q.discipline) {
        Ok(())
    } else {
        Err(KernelError::DisciplineMismatch {
            queue: i,
            expected,
            found: q.discipline.name(),
        })
    }
}

/// Autonomous-server kernel of a cyclic queue on the full grid.
pub fn visit_autonomous(
    model: &PollingModel,
    i: usize,
    beta: &CoeffTensor,
    grid: TorusGrid,
) -> Result<GridFunction, KernelError> {
    expect_discipline(model, i, "autonomous", |d| matches!(d, Discipline::Autonomous { .. }))?;
    VisitKernel::new(model, i, beta.n_max())?.apply_grid(beta, grid)
}

/// Time-limited kernel of a cyclic queue on the full grid.
pub fn visit_time_limited(
    model: &PollingModel,
    i: usize,
    beta: &CoeffTensor,
    grid: TorusGrid,
) -> Result<GridFunction, KernelError> {
    expect_discipline(model, i, "time_limited", |d| matches!(d, Discipline::TimeLimited { .. }))?;
    VisitKernel::new(model, i, beta.n_max())?.apply_grid(beta, grid)
}

/// k-limited kernel on the full grid, through the chosen evaluation route.
pub fn visit_k_limited(
    model: &PollingModel,
    i: usize,
    beta: &CoeffTensor,
    grid: TorusGrid,
    path: KLimitedPath,
) -> Result<GridFunction, KernelError> {
    expect_discipline(model, i, "k_limited", |d| matches!(d, Discipline::KLimited { .. }))?;
    VisitKernel::with_path(model, i, beta.n_max(), path)?.apply_grid(beta, grid)
}

/// Exhaustive kernel on the full grid.
pub fn visit_exhaustive(
    model: &PollingModel,
    i: usize,
    beta: &CoeffTensor,
    grid: TorusGrid,
) -> Result<GridFunction, KernelError> {
    expect_discipline(model, i, "exhaustive", |d| matches!(d, Discipline::Exhaustive))?;
    VisitKernel::new(model, i, beta.n_max())?.apply_grid(beta, grid)
}

/// Kernel of a tandem stage (autonomous or time-limited) on the full grid.
pub fn tandem_visit(
    model: &PollingModel,
    i: usize,
    beta: &CoeffTensor,
    grid: TorusGrid,
) -> Result<GridFunction, KernelError> {
    if !model.is_tandem() {
        return Err(KernelError::Unsupported("tandem kernel on a cyclic model".into()));
    }
    expect_discipline(model, i, "autonomous or time_limited", |d| {
        matches!(d, Discipline::Autonomous { .. } | Discipline::TimeLimited { .. })
    })?;
    VisitKernel::new(model, i, beta.n_max())?.apply_grid(beta, grid)
}

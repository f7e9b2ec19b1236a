//! Finite absorbing-Markov-chain oracle for a single visit, plus the
//! structured inverses of its tridiagonal blocks.

use std::collections::BTreeMap;

use num_complex::Complex64;
use thiserror::Error;

use crate::model::{Discipline, PollingModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AmcError {
    #[error("roots of the tridiagonal symbol are not separated (gap {0:e})")]
    DegenerateRoots(f64),
    #[error("Sherman-Morrison denominator {0:e} is numerically zero")]
    SingularUpdate(f64),
    #[error("index ({i}, {j}) outside 1..={l}")]
    IndexOutOfRange { i: usize, j: usize, l: usize },
    #[error("invalid bounds: {0}")]
    Bounds(String),
    #[error("chain with {states} states and band {band} exceeds the memory budget")]
    ChainTooLarge { states: usize, band: usize },
    #[error("linear solve failed: zero pivot at row {0}")]
    SingularSystem(usize),
    #[error("overflow mass {overflow:e} still above {tol:e} at bounds {bounds:?}")]
    TruncationBudget {
        overflow: f64,
        tol: f64,
        bounds: Vec<usize>,
    },
    #[error("unsupported: {0}")]
    Unsupported(String),
}

/// Parameters of the tridiagonal Toeplitz matrix with diagonal `-s`,
/// superdiagonal `lambda` and subdiagonal `1/b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToeplitzParams {
    pub lambda: f64,
    pub s: Complex64,
    pub b: f64,
}

/// Rank-one diagonal bumps applied before inversion.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Corrections {
    /// Adds `1/b` to the first diagonal entry.
    pub first: bool,
    /// Adds `lambda` to the last diagonal entry.
    pub last: bool,
}

fn symbol_roots(p: &ToeplitzParams) -> Result<(Complex64, Complex64), AmcError> {
    let c = Complex64::new(1.0 / p.b, 0.0);
    let disc = p.s * p.s - c * (4.0 * p.lambda);
    if disc.norm() < 1e-14 * p.s.norm_sqr().max(1.0) {
        return Err(AmcError::DegenerateRoots(disc.norm()));
    }
    let mut sq = disc.sqrt();
    if (p.s.conj() * sq).re < 0.0 {
        sq = -sq;
    }
    let q = (p.s + sq) * 0.5;
    let big = q / p.lambda;
    let small = c / q;
    Ok(if small.norm() <= big.norm() {
        (small, big)
    } else {
        (big, small)
    })
}

/// Entry `(i, j)` (one-based) of the inverse of the `l x l` tridiagonal
/// Toeplitz matrix, in the closed form through the roots `r1`, `r2` of
/// `lambda r^2 - s r + 1/b`, rescaled by `rho = r1 / r2` to avoid overflow.
pub fn toeplitz_inverse_entry(
    i: usize,
    j: usize,
    l: usize,
    p: &ToeplitzParams,
) -> Result<Complex64, AmcError> {
    if i == 0 || j == 0 || i > l || j > l {
        return Err(AmcError::IndexOutOfRange { i, j, l });
    }
    if l == 1 {
        return Ok(-p.s.inv());
    }
    let (r1, r2) = symbol_roots(p)?;
    let rho = r1 / r2;
    let one = Complex64::new(1.0, 0.0);
    let lp1 = (l + 1) as u32;
    let denom = (r1 - r2) * p.lambda * (one - rho.powu(lp1));
    if denom.norm() < 1e-300 {
        return Err(AmcError::DegenerateRoots(denom.norm()));
    }
    let v = if i <= j {
        r2.powi(i as i32 - j as i32) * (one - rho.powu(i as u32)) * (one - rho.powu((l + 1 - j) as u32))
    } else {
        r1.powu((i - j) as u32) * (one - rho.powu(j as u32)) * (one - rho.powu((l + 1 - i) as u32))
    };
    Ok(v / denom)
}

/// Entry `(i, j)` of the inverse of `T + (1/b) e_1 e_1^T + lambda e_l e_l^T`
/// (each bump optional) by two Sherman-Morrison steps.
pub fn sm_corrected_entry(
    i: usize,
    j: usize,
    l: usize,
    p: &ToeplitzParams,
    corr: Corrections,
) -> Result<Complex64, AmcError> {
    let t = |a, c| toeplitz_inverse_entry(a, c, l, p);
    let m = |a: usize, c: usize| -> Result<Complex64, AmcError> {
        if !corr.first {
            return t(a, c);
        }
        let den = t(1, 1)? + p.b;
        if den.norm() < 1e-14 {
            return Err(AmcError::SingularUpdate(den.norm()));
        }
        Ok(t(a, c)? - t(a, 1)? * t(1, c)? / den)
    };
    if !corr.last {
        return m(i, j);
    }
    let den = m(l, l)? * p.lambda + 1.0;
    if den.norm() < 1e-14 {
        return Err(AmcError::SingularUpdate(den.norm()));
    }
    Ok(m(i, j)? - m(i, l)? * m(l, j)? * p.lambda / den)
}

/// Why the visit ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ExitCause {
    Timer,
    Empty,
    KthDeparture,
    /// Left the truncation box; not a model event.
    Overflow,
}

#[derive(Debug, Clone, PartialEq)]
struct ExitRate {
    rate: f64,
    cause: ExitCause,
    /// Exit state; empty for overflow.
    target: Vec<usize>,
}

/// Generator of one visit's absorbing chain restricted to a truncation box.
///
/// States are ordered lexicographically by `(n_M, ..., [j,] n_i)` with the
/// served queue `i` fastest and the departure counter `j` (k-limited only)
/// next.
#[derive(Debug, Clone)]
pub struct TruncatedChain {
    pub served: usize,
    pub discipline: Discipline,
    /// Number of levels per queue: queue `m` ranges over `0..bounds[m]`.
    pub bounds: Vec<usize>,
    k: usize,
    n_lo: usize,
    strides: Vec<usize>,
    stride_j: usize,
    n_states: usize,
    rows: Vec<Vec<(usize, f64)>>,
    diag: Vec<f64>,
    exits: Vec<Vec<ExitRate>>,
}

/// Largest number of band entries the solver will allocate.
pub const MAX_BAND_ENTRIES: usize = 60_000_000;

impl TruncatedChain {
    pub fn num_states(&self) -> usize {
        self.n_states
    }

    /// Index of the transient state with queue lengths `n` and counter `j`.
    pub fn state_index(&self, n: &[usize], j: usize) -> Option<usize> {
        if n.len() != self.bounds.len() || j >= self.k {
            return None;
        }
        let i = self.served;
        if n[i] < self.n_lo || n.iter().zip(&self.bounds).any(|(&a, &b)| a >= b) {
            return None;
        }
        let mut idx = (n[i] - self.n_lo) + j * self.stride_j;
        for (m, &nm) in n.iter().enumerate() {
            if m != i {
                idx += nm * self.strides[m];
            }
        }
        Some(idx)
    }

    fn decode(&self, idx: usize) -> (Vec<usize>, usize) {
        let i = self.served;
        let side = self.bounds[i] - self.n_lo;
        let mut n = vec![0; self.bounds.len()];
        n[i] = idx % side + self.n_lo;
        let j = (idx / self.stride_j) % self.k;
        for m in 0..self.bounds.len() {
            if m != i {
                n[m] = (idx / self.strides[m]) % self.bounds[m];
            }
        }
        (n, j)
    }

    /// Total rate into model exits (timer, empty, k-th departure) from a state.
    pub fn absorption_rate(&self, state: usize) -> f64 {
        self.exits[state]
            .iter()
            .filter(|e| e.cause != ExitCause::Overflow)
            .map(|e| e.rate)
            .sum()
    }

    /// Off-diagonal transition rates out of a state.
    pub fn transitions(&self, state: usize) -> &[(usize, f64)] {
        &self.rows[state]
    }

    pub fn diagonal(&self, state: usize) -> f64 {
        self.diag[state]
    }

    /// Sum of off-diagonal, diagonal, and all exit rates (should vanish).
    pub fn row_defect(&self, state: usize) -> f64 {
        let off: f64 = self.rows[state].iter().map(|&(_, r)| r).sum();
        let ex: f64 = self.exits[state].iter().map(|e| e.rate).sum();
        off + self.diag[state] + ex
    }

    fn bandwidths(&self) -> (usize, usize) {
        let (mut lower, mut upper) = (0, 0);
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, _) in row {
                if c > r {
                    upper = upper.max(c - r);
                } else {
                    lower = lower.max(r - c);
                }
            }
        }
        (lower, upper)
    }

    /// Prepares repeated exit-distribution solves: a banded LU of the
    /// transposed transient generator when the band fits in memory, a
    /// Gauss-Seidel iteration otherwise.
    pub fn solver(&self) -> Result<ChainSolver<'_>, AmcError> {
        // Solving x Q = -c means Q^T x^T = -c^T; Q^T swaps the bandwidths.
        let (q_lower, q_upper) = self.bandwidths();
        let method = match BandedMatrix::new(self.n_states, q_upper, q_lower) {
            Ok(mut lu) => {
                for (r, row) in self.rows.iter().enumerate() {
                    lu.set(r, r, self.diag[r]);
                    for &(c, v) in row {
                        lu.add(c, r, v);
                    }
                }
                lu.factor()?;
                SolveMethod::Banded(lu)
            }
            Err(AmcError::ChainTooLarge { .. }) => {
                let mut incoming = vec![Vec::new(); self.n_states];
                for (r, row) in self.rows.iter().enumerate() {
                    for &(c, v) in row {
                        incoming[c].push((r, v));
                    }
                }
                SolveMethod::GaussSeidel(incoming)
            }
            Err(e) => return Err(e),
        };
        Ok(ChainSolver {
            chain: self,
            method,
        })
    }
}

/// Builds the chain for a visit to queue `i` with the given per-queue level counts.
pub fn build_chain(
    model: &PollingModel,
    i: usize,
    bounds: &[usize],
) -> Result<TruncatedChain, AmcError> {
    let m = model.num_queues();
    if i >= m || bounds.len() != m {
        return Err(AmcError::Bounds(format!(
            "need {m} bounds and a served index below {m}"
        )));
    }
    if bounds.iter().any(|&b| b < 2) {
        return Err(AmcError::Bounds("every bound must be at least 2".into()));
    }
    let q = &model.queues[i];
    let discipline = q.discipline.clone();
    let (k, n_lo) = match discipline {
        Discipline::Autonomous { .. } => (1, 0),
        Discipline::TimeLimited { .. } | Discipline::Exhaustive => (1, 1),
        Discipline::KLimited { k } => (k, 1),
    };
    let alpha = discipline.timer_rate().unwrap_or(0.0);
    let mu = q.service_rate();
    let downstream = model.downstream(i);

    let side = bounds[i] - n_lo;
    let stride_j = side;
    let mut strides = vec![0; m];
    let mut acc = side * k;
    for mm in 0..m {
        if mm != i {
            strides[mm] = acc;
            acc = acc
                .checked_mul(bounds[mm])
                .ok_or_else(|| AmcError::Bounds("state count overflows".into()))?;
        }
    }
    let n_states = acc;

    let mut chain = TruncatedChain {
        served: i,
        discipline: discipline.clone(),
        bounds: bounds.to_vec(),
        k,
        n_lo,
        strides,
        stride_j,
        n_states,
        rows: vec![Vec::new(); n_states],
        diag: vec![0.0; n_states],
        exits: vec![Vec::new(); n_states],
    };

    for s in 0..n_states {
        let (n, j) = chain.decode(s);
        let mut row = Vec::new();
        let mut exits = Vec::new();
        let mut total = 0.0;

        // Arrivals to every queue.
        for (mm, qm) in model.queues.iter().enumerate() {
            if qm.lambda <= 0.0 {
                continue;
            }
            total += qm.lambda;
            let mut t = n.clone();
            t[mm] += 1;
            match chain.state_index(&t, j) {
                Some(ti) => row.push((ti, qm.lambda)),
                None => exits.push(ExitRate {
                    rate: qm.lambda,
                    cause: ExitCause::Overflow,
                    target: Vec::new(),
                }),
            }
        }

        // Service completion.
        if n[i] >= 1 {
            total += mu;
            let mut t = n.clone();
            t[i] -= 1;
            let overflow = match downstream {
                Some(d) => {
                    t[d] += 1;
                    t[d] >= bounds[d]
                }
                None => false,
            };
            let leaves = match discipline {
                Discipline::Autonomous { .. } => None,
                Discipline::TimeLimited { .. } | Discipline::Exhaustive => {
                    (n[i] == 1).then_some(ExitCause::Empty)
                }
                Discipline::KLimited { k } => {
                    if n[i] == 1 {
                        Some(ExitCause::Empty)
                    } else if j == k - 1 {
                        Some(ExitCause::KthDeparture)
                    } else {
                        None
                    }
                }
            };
            if overflow {
                exits.push(ExitRate {
                    rate: mu,
                    cause: ExitCause::Overflow,
                    target: Vec::new(),
                });
            } else if let Some(cause) = leaves {
                exits.push(ExitRate {
                    rate: mu,
                    cause,
                    target: t,
                });
            } else {
                let nj = if k > 1 { j + 1 } else { j };
                let ti = chain
                    .state_index(&t, nj)
                    .expect("service keeps the state inside the box");
                row.push((ti, mu));
            }
        }

        if alpha > 0.0 {
            total += alpha;
            exits.push(ExitRate {
                rate: alpha,
                cause: ExitCause::Timer,
                target: n.clone(),
            });
        }

        chain.rows[s] = row;
        chain.exits[s] = exits;
        chain.diag[s] = -total;
    }
    Ok(chain)
}

/// Probability of leaving through each (exit state, cause).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExitDistribution {
    pub entries: BTreeMap<(Vec<usize>, ExitCause), f64>,
}

impl ExitDistribution {
    pub fn total(&self) -> f64 {
        self.entries.values().sum()
    }

    pub fn overflow(&self) -> f64 {
        self.cause_total(ExitCause::Overflow)
    }

    pub fn cause_total(&self, cause: ExitCause) -> f64 {
        self.entries
            .iter()
            .filter(|((_, c), _)| *c == cause)
            .map(|(_, p)| p)
            .sum()
    }

    /// `E[z^{N^e}]` over the non-overflow exits.
    pub fn pgf(&self, z: &[Complex64]) -> Complex64 {
        self.entries
            .iter()
            .filter(|((_, c), _)| *c != ExitCause::Overflow)
            .map(|((n, _), &p)| {
                n.iter()
                    .zip(z)
                    .map(|(&e, &zm)| zm.powu(e as u32))
                    .product::<Complex64>()
                    * p
            })
            .sum()
    }
}

enum SolveMethod {
    Banded(BandedMatrix),
    /// Incoming transitions per state.
    GaussSeidel(Vec<Vec<(usize, f64)>>),
}

const GS_TOL: f64 = 1e-15;
const GS_MAX_SWEEPS: usize = 100_000;

/// A prepared chain ready for repeated exit-distribution solves.
pub struct ChainSolver<'a> {
    chain: &'a TruncatedChain,
    method: SolveMethod,
}

impl ChainSolver<'_> {
    pub fn exit_distribution(&self, initial: &[usize]) -> Result<ExitDistribution, AmcError> {
        let chain = self.chain;
        if initial.len() != chain.bounds.len()
            || initial.iter().zip(&chain.bounds).any(|(&a, &b)| a >= b)
        {
            return Err(AmcError::Bounds(format!(
                "initial state {initial:?} outside bounds {:?}",
                chain.bounds
            )));
        }
        let mut dist = ExitDistribution::default();
        let Some(start) = chain.state_index(initial, 0) else {
            // Empty served queue under a discipline that leaves at once.
            dist.entries.insert((initial.to_vec(), ExitCause::Empty), 1.0);
            return Ok(dist);
        };
        let x = self.occupancy(start)?;
        for (s, &occupancy) in x.iter().enumerate() {
            if occupancy == 0.0 {
                continue;
            }
            for e in &chain.exits[s] {
                *dist.entries.entry((e.target.clone(), e.cause)).or_default() += occupancy * e.rate;
            }
        }
        Ok(dist)
    }
}

impl ChainSolver<'_> {
    /// Expected time spent in each transient state from `start`.
    fn occupancy(&self, start: usize) -> Result<Vec<f64>, AmcError> {
        let chain = self.chain;
        match &self.method {
            SolveMethod::Banded(lu) => {
                let mut x = vec![0.0; chain.n_states];
                x[start] = -1.0;
                lu.solve(&mut x);
                Ok(x)
            }
            SolveMethod::GaussSeidel(incoming) => {
                // x_s (-q_ss) = 1{s = start} + sum_r x_r q_rs, swept forward
                // and backward until the total occupancy settles.
                let mut x = vec![0.0; chain.n_states];
                let update = |x: &mut Vec<f64>, s: usize| {
                    let mut acc = if s == start { 1.0 } else { 0.0 };
                    for &(r, v) in &incoming[s] {
                        acc += x[r] * v;
                    }
                    let new = acc / -chain.diag[s];
                    let delta = (new - x[s]).abs();
                    x[s] = new;
                    delta
                };
                for _ in 0..GS_MAX_SWEEPS {
                    let mut change = 0.0;
                    for s in 0..chain.n_states {
                        change += update(&mut x, s);
                    }
                    for s in (0..chain.n_states).rev() {
                        change += update(&mut x, s);
                    }
                    let total: f64 = x.iter().sum();
                    if change <= GS_TOL * total.max(1.0) {
                        return Ok(x);
                    }
                }
                Err(AmcError::SingularSystem(start))
            }
        }
    }
}

/// Exit distribution of a visit started in `initial`.
pub fn absorption_exit_distribution(
    chain: &TruncatedChain,
    initial: &[usize],
) -> Result<ExitDistribution, AmcError> {
    chain.solver()?.exit_distribution(initial)
}

/// `E[z^{N^e} | N^b = initial]` from the truncated chain.
pub fn oracle_visit_pgf(
    chain: &TruncatedChain,
    initial: &[usize],
    z: &[Complex64],
) -> Result<Complex64, AmcError> {
    Ok(absorption_exit_distribution(chain, initial)?.pgf(z))
}

/// Solves with bounds doubled from `initial + 16` until the overflow mass is
/// below `tol`.
pub fn adaptive_exit_distribution(
    model: &PollingModel,
    i: usize,
    initial: &[usize],
    tol: f64,
) -> Result<(ExitDistribution, Vec<usize>), AmcError> {
    let mut bounds: Vec<usize> = initial.iter().map(|&n| n + 16).collect();
    loop {
        let chain = build_chain(model, i, &bounds)?;
        let dist = absorption_exit_distribution(&chain, initial)?;
        if dist.overflow() < tol {
            return Ok((dist, bounds));
        }
        let next: Vec<usize> = bounds.iter().map(|&b| b * 2).collect();
        if next.iter().product::<usize>() > 4_000_000 {
            return Err(AmcError::TruncationBudget {
                overflow: dist.overflow(),
                tol,
                bounds,
            });
        }
        bounds = next;
    }
}

/// Square band matrix with in-place LU factorisation without pivoting.
///
/// Adequate for generators of absorbing chains: the transposed transient
/// generator is column diagonally dominant, so elimination is stable.
#[derive(Debug, Clone)]
struct BandedMatrix {
    n: usize,
    lower: usize,
    upper: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandedMatrix {
    fn new(n: usize, lower: usize, upper: usize) -> Result<Self, AmcError> {
        let width = lower + upper + 1;
        let len = n
            .checked_mul(width)
            .filter(|&l| l <= MAX_BAND_ENTRIES)
            .ok_or(AmcError::ChainTooLarge {
                states: n,
                band: width,
            })?;
        Ok(Self {
            n,
            lower,
            upper,
            width,
            data: vec![0.0; len],
        })
    }

    fn slot(&self, r: usize, c: usize) -> usize {
        r * self.width + (c + self.lower - r)
    }

    fn set(&mut self, r: usize, c: usize, v: f64) {
        let s = self.slot(r, c);
        self.data[s] = v;
    }

    fn add(&mut self, r: usize, c: usize, v: f64) {
        let s = self.slot(r, c);
        self.data[s] += v;
    }

    fn factor(&mut self) -> Result<(), AmcError> {
        for p in 0..self.n {
            let pivot = self.data[self.slot(p, p)];
            if pivot == 0.0 || !pivot.is_finite() {
                return Err(AmcError::SingularSystem(p));
            }
            let c_end = (p + self.upper).min(self.n - 1);
            for r in p + 1..=(p + self.lower).min(self.n - 1) {
                let rp = self.slot(r, p);
                if self.data[rp] == 0.0 {
                    continue;
                }
                let f = self.data[rp] / pivot;
                self.data[rp] = f;
                for c in p + 1..=c_end {
                    let upd = f * self.data[self.slot(p, c)];
                    let rc = self.slot(r, c);
                    self.data[rc] -= upd;
                }
            }
        }
        Ok(())
    }

    fn solve(&self, b: &mut [f64]) {
        for r in 0..self.n {
            let start = r.saturating_sub(self.lower);
            let mut acc = b[r];
            for c in start..r {
                acc -= self.data[self.slot(r, c)] * b[c];
            }
            b[r] = acc;
        }
        for r in (0..self.n).rev() {
            let end = (r + self.upper).min(self.n - 1);
            let mut acc = b[r];
            for c in r + 1..=end {
                acc -= self.data[self.slot(r, c)] * b[c];
            }
            b[r] = acc / self.data[self.slot(r, r)];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{QueueSpec, Routing, SwitchoverDist};

    fn model2(d: Discipline, lambdas: (f64, f64)) -> PollingModel {
        PollingModel::new(
            vec![
                QueueSpec::new(lambdas.0, 1.0, d),
                QueueSpec::new(lambdas.1, 1.0, Discipline::Exhaustive),
            ],
            vec![SwitchoverDist::Deterministic { c: 0.1 }; 2],
            Routing::CyclicPoisson,
        )
    }

    #[test]
    fn one_by_one_inverse() {
        let p = ToeplitzParams {
            lambda: 0.7,
            s: Complex64::new(2.5, 0.3),
            b: 1.2,
        };
        let t = toeplitz_inverse_entry(1, 1, 1, &p).unwrap();
        assert!((t + p.s.inv()).norm() < 1e-15);
        assert!(toeplitz_inverse_entry(2, 1, 1, &p).is_err());
    }

    #[test]
    fn two_by_two_inverse() {
        let p = ToeplitzParams {
            lambda: 0.5,
            s: Complex64::new(3.0, -0.4),
            b: 0.8,
        };
        let (a, b, c, d) = (-p.s, Complex64::new(p.lambda, 0.0), Complex64::new(1.0 / p.b, 0.0), -p.s);
        let det = a * d - b * c;
        let inv = [[d / det, -b / det], [-c / det, a / det]];
        for i in 1..=2 {
            for j in 1..=2 {
                let t = toeplitz_inverse_entry(i, j, 2, &p).unwrap();
                let e = inv[i - 1][j - 1];
                assert!((t - e).norm() <= 1e-12 * e.norm());
            }
        }
    }

    #[test]
    fn zero_rank_update_is_plain_inverse() {
        let p = ToeplitzParams {
            lambda: 0.5,
            s: Complex64::new(2.0, 0.1),
            b: 1.0,
        };
        for (i, j) in [(1, 1), (2, 5), (5, 2)] {
            assert_eq!(
                sm_corrected_entry(i, j, 6, &p, Corrections::default()).unwrap(),
                toeplitz_inverse_entry(i, j, 6, &p).unwrap()
            );
        }
    }

    #[test]
    fn generator_rows_balance() {
        for d in [
            Discipline::Autonomous { alpha: 1.0 },
            Discipline::TimeLimited { alpha: 1.0 },
            Discipline::KLimited { k: 3 },
            Discipline::Exhaustive,
        ] {
            let c = build_chain(&model2(d, (0.5, 0.5)), 0, &[6, 5]).unwrap();
            for s in 0..c.num_states() {
                assert!(c.row_defect(s).abs() < 1e-14);
                assert!(c.transitions(s).iter().all(|&(_, r)| r >= 0.0));
            }
        }
    }

    #[test]
    fn rate_tables() {
        let m = model2(Discipline::TimeLimited { alpha: 2.0 }, (0.5, 0.5));
        let c = build_chain(&m, 0, &[3, 2]).unwrap();
        for n2 in 0..2 {
            let s = c.state_index(&[1, n2], 0).unwrap();
            assert_eq!(c.absorption_rate(s), 3.0);
            let s = c.state_index(&[2, n2], 0).unwrap();
            assert_eq!(c.absorption_rate(s), 2.0);
        }

        let m = model2(Discipline::Autonomous { alpha: 1.5 }, (0.5, 0.5));
        let c = build_chain(&m, 0, &[4, 3]).unwrap();
        assert_eq!(c.num_states(), 12);
        assert!((0..12).all(|s| c.absorption_rate(s) == 1.5));

        let m = model2(Discipline::KLimited { k: 2 }, (0.5, 0.5));
        let c = build_chain(&m, 0, &[4, 3]).unwrap();
        assert_eq!(c.num_states(), 3 * 2 * 3);
        for n1 in 1..4 {
            let s = c.state_index(&[n1, 0], 1).unwrap();
            assert_eq!(c.absorption_rate(s), 1.0);
            let s = c.state_index(&[n1, 0], 0).unwrap();
            assert_eq!(c.absorption_rate(s), if n1 == 1 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn ordering_has_served_queue_fastest() {
        let m = model2(Discipline::KLimited { k: 2 }, (0.5, 0.5));
        let c = build_chain(&m, 0, &[4, 3]).unwrap();
        assert_eq!(c.state_index(&[1, 0], 0), Some(0));
        assert_eq!(c.state_index(&[2, 0], 0), Some(1));
        assert_eq!(c.state_index(&[1, 0], 1), Some(3));
        assert_eq!(c.state_index(&[1, 1], 0), Some(6));
        assert_eq!(c.state_index(&[0, 1], 0), None);
    }

    #[test]
    fn competing_exponentials_without_arrivals() {
        let m = model2(Discipline::TimeLimited { alpha: 1.5 }, (0.0, 0.0));
        let c = build_chain(&m, 0, &[3, 3]).unwrap();
        let d = absorption_exit_distribution(&c, &[1, 0]).unwrap();
        let timer = d.entries[&(vec![1, 0], ExitCause::Timer)];
        let empty = d.entries[&(vec![0, 0], ExitCause::Empty)];
        assert!((timer - 0.6).abs() < 1e-14);
        assert!((empty - 0.4).abs() < 1e-14);
        assert!((d.total() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn exit_mass_includes_overflow() {
        let m = model2(Discipline::Autonomous { alpha: 0.2 }, (0.9, 0.9));
        let c = build_chain(&m, 0, &[4, 4]).unwrap();
        let d = absorption_exit_distribution(&c, &[1, 1]).unwrap();
        assert!(d.overflow() > 1e-3);
        assert!((d.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_start_leaves_at_once() {
        let m = model2(Discipline::KLimited { k: 2 }, (0.5, 0.5));
        let c = build_chain(&m, 0, &[4, 4]).unwrap();
        let d = absorption_exit_distribution(&c, &[0, 2]).unwrap();
        assert_eq!(d.entries[&(vec![0, 2], ExitCause::Empty)], 1.0);
    }

    #[test]
    fn kth_departure_with_last_job_counts_as_empty() {
        let m = model2(Discipline::KLimited { k: 2 }, (0.0, 0.0));
        let c = build_chain(&m, 0, &[4, 2]).unwrap();
        let d = absorption_exit_distribution(&c, &[2, 0]).unwrap();
        assert_eq!(d.entries.len(), 1);
        assert!((d.entries[&(vec![0, 0], ExitCause::Empty)] - 1.0).abs() < 1e-15);
        let d = absorption_exit_distribution(&c, &[3, 0]).unwrap();
        assert!((d.entries[&(vec![1, 0], ExitCause::KthDeparture)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn banded_solver_matches_dense() {
        use nalgebra::DMatrix;
        let m = model2(Discipline::KLimited { k: 2 }, (0.5, 0.3));
        let c = build_chain(&m, 0, &[5, 4]).unwrap();
        let n = c.num_states();
        let mut q = DMatrix::<f64>::zeros(n, n);
        for s in 0..n {
            q[(s, s)] = c.diagonal(s);
            for &(t, r) in c.transitions(s) {
                q[(s, t)] += r;
            }
        }
        let solver = c.solver().unwrap();
        assert!(matches!(solver.method, SolveMethod::Banded(_)));
        let x = solver.occupancy(3).unwrap();
        let mut rhs = nalgebra::DVector::<f64>::zeros(n);
        rhs[3] = -1.0;
        let dense = q.transpose().lu().solve(&rhs).unwrap();
        for s in 0..n {
            assert!((x[s] - dense[s]).abs() < 1e-12);
        }
    }

    #[test]
    fn iterative_solver_matches_banded() {
        let m = model2(Discipline::TimeLimited { alpha: 0.7 }, (0.5, 0.3));
        let c = build_chain(&m, 0, &[8, 6]).unwrap();
        let banded = c.solver().unwrap();
        let mut incoming = vec![Vec::new(); c.num_states()];
        for s in 0..c.num_states() {
            for &(t, r) in c.transitions(s) {
                incoming[t].push((s, r));
            }
        }
        let gs = ChainSolver {
            chain: &c,
            method: SolveMethod::GaussSeidel(incoming),
        };
        let a = banded.exit_distribution(&[3, 2]).unwrap();
        let b = gs.exit_distribution(&[3, 2]).unwrap();
        for (key, p) in &a.entries {
            assert!((p - b.entries[key]).abs() < 1e-13);
        }
    }

    #[test]
    fn adaptive_bounds_reach_tolerance() {
        let m = model2(Discipline::TimeLimited { alpha: 1.0 }, (0.5, 0.5));
        let (d, bounds) = adaptive_exit_distribution(&m, 0, &[2, 0], 1e-10).unwrap();
        assert!(d.overflow() < 1e-10);
        assert!(bounds.iter().all(|&b| b >= 16));
    }
}

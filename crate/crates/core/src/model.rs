//! Polling and tandem system description.
//!
//! A [`PollingModel`] is a ring of `M` queues visited cyclically by one
//! server. Each queue has Poisson arrivals, exponential service, and a
//! service discipline that decides when the server leaves. Between visits
//! the server incurs a switch-over time whose Poisson-arrival transform
//! links the visit-end distribution of one queue to the visit-begin
//! distribution of the next.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rand::RngCore;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used when checking that a point lies in the closed unit polydisc.
pub const POLYDISC_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("point outside the closed unit polydisc: |z[{index}]| = {modulus}")]
    OutsidePolydisc { index: usize, modulus: f64 },
    #[error("expected {expected} coordinates, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Routing {
    /// Every queue has its own Poisson arrival stream.
    #[default]
    CyclicPoisson,
    /// Only the first queue receives external arrivals; a departure from
    /// queue `i` joins queue `i + 1`, and departures from the last queue leave.
    Tandem,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Discipline {
    /// Server stays an exponential(`alpha`) time, even if the queue empties.
    Autonomous { alpha: f64 },
    /// Server leaves when the queue empties or an exponential(`alpha`) timer expires.
    TimeLimited { alpha: f64 },
    /// Server leaves after `k` service completions or when the queue empties.
    KLimited { k: usize },
    /// Server leaves when the queue empties.
    Exhaustive,
}

impl Discipline {
    pub fn timer_rate(&self) -> Option<f64> {
        match *self {
            Discipline::Autonomous { alpha } | Discipline::TimeLimited { alpha } => Some(alpha),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Discipline::Autonomous { .. } => "autonomous",
            Discipline::TimeLimited { .. } => "time_limited",
            Discipline::KLimited { .. } => "k_limited",
            Discipline::Exhaustive => "exhaustive",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueueSpec {
    /// Poisson arrival rate.
    pub lambda: f64,
    /// Mean of the exponential service requirement.
    pub mean_service: f64,
    pub discipline: Discipline,
}

impl QueueSpec {
    pub fn new(lambda: f64, mean_service: f64, discipline: Discipline) -> Self {
        Self {
            lambda,
            mean_service,
            discipline,
        }
    }

    pub fn service_rate(&self) -> f64 {
        1.0 / self.mean_service
    }
}

/// A switch-over law supplied by the caller.
///
/// Only the Laplace-Stieltjes transform is needed by the analytic solver;
/// the simulator additionally needs to draw samples.
pub trait SwitchoverLaw: Send + Sync + fmt::Debug {
    /// `E[exp(-s C)]` for `Re(s) >= 0`.
    fn lst(&self, s: Complex64) -> Complex64;
    fn mean(&self) -> f64;
    fn sample(&self, rng: &mut dyn RngCore) -> f64;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SwitchoverDist {
    Zero,
    Deterministic {
        c: f64,
    },
    Exponential {
        mean: f64,
    },
    #[serde(skip)]
    Custom(Arc<dyn SwitchoverLaw>),
}

impl PartialEq for SwitchoverDist {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (SwitchoverDist::Zero, SwitchoverDist::Zero) => true,
            (SwitchoverDist::Deterministic { c: a }, SwitchoverDist::Deterministic { c: b }) => {
                a == b
            }
            (SwitchoverDist::Exponential { mean: a }, SwitchoverDist::Exponential { mean: b }) => {
                a == b
            }
            (SwitchoverDist::Custom(a), SwitchoverDist::Custom(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

impl SwitchoverDist {
    pub fn lst(&self, s: Complex64) -> Complex64 {
        match self {
            SwitchoverDist::Zero => Complex64::new(1.0, 0.0),
            SwitchoverDist::Deterministic { c } => (-s * *c).exp(),
            SwitchoverDist::Exponential { mean } => {
                if *mean == 0.0 {
                    Complex64::new(1.0, 0.0)
                } else {
                    Complex64::new(1.0, 0.0) / (s * *mean + 1.0)
                }
            }
            SwitchoverDist::Custom(law) => law.lst(s),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            SwitchoverDist::Zero => 0.0,
            SwitchoverDist::Deterministic { c } => *c,
            SwitchoverDist::Exponential { mean } => *mean,
            SwitchoverDist::Custom(law) => law.mean(),
        }
    }

    pub fn sample(&self, rng: &mut dyn RngCore) -> f64 {
        match self {
            SwitchoverDist::Zero => 0.0,
            SwitchoverDist::Deterministic { c } => *c,
            SwitchoverDist::Exponential { mean } => {
                if *mean <= 0.0 {
                    0.0
                } else {
                    Exp::new(1.0 / *mean).expect("positive rate").sample(rng)
                }
            }
            SwitchoverDist::Custom(law) => law.sample(rng),
        }
    }

    fn parameter_ok(&self) -> bool {
        match self {
            SwitchoverDist::Zero => true,
            SwitchoverDist::Deterministic { c } => c.is_finite() && *c >= 0.0,
            SwitchoverDist::Exponential { mean } => mean.is_finite() && *mean >= 0.0,
            SwitchoverDist::Custom(law) => law.mean().is_finite() && law.mean() >= 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PollingModel {
    pub queues: Vec<QueueSpec>,
    /// Entry `i` is the switch-over from queue `i` to queue `i + 1 (mod M)`.
    pub switchovers: Vec<SwitchoverDist>,
    #[serde(default)]
    pub routing: Routing,
}

impl PollingModel {
    pub fn new(queues: Vec<QueueSpec>, switchovers: Vec<SwitchoverDist>, routing: Routing) -> Self {
        Self {
            queues,
            switchovers,
            routing,
        }
    }

    /// `M` identical queues with identical switch-overs.
    pub fn symmetric(m: usize, queue: QueueSpec, switchover: SwitchoverDist) -> Self {
        Self::new(vec![queue; m], vec![switchover; m], Routing::CyclicPoisson)
    }

    pub fn num_queues(&self) -> usize {
        self.queues.len()
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.queues.iter().map(|q| q.lambda).collect()
    }

    pub fn is_tandem(&self) -> bool {
        self.routing == Routing::Tandem
    }

    /// Index of the queue that receives departures from queue `i`, if any.
    pub fn downstream(&self, i: usize) -> Option<usize> {
        match self.routing {
            Routing::Tandem if i + 1 < self.num_queues() => Some(i + 1),
            _ => None,
        }
    }

    pub fn validate(&self) -> ValidationReport {
        validate_model(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    /// Zero-based queue index the violation refers to, if any.
    pub queue: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, queue: Option<usize>, message: impl Into<String>) {
        self.violations.push(Violation {
            queue,
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.passed() {
            return write!(f, "model valid");
        }
        for (n, v) in self.violations.iter().enumerate() {
            if n > 0 {
                writeln!(f)?;
            }
            match v.queue {
                Some(q) => write!(f, "queue {}: {}", q + 1, v.message)?,
                None => write!(f, "{}", v.message)?,
            }
        }
        Ok(())
    }
}

/// Checks every structural invariant of the model and lists the violations.
pub fn validate_model(model: &PollingModel) -> ValidationReport {
    let mut report = ValidationReport::default();
    let m = model.queues.len();
    if m == 0 {
        report.push(None, "at least one queue is required");
        return report;
    }
    if model.switchovers.len() != m {
        report.push(
            None,
            format!(
                "expected {m} switch-over distributions, got {}",
                model.switchovers.len()
            ),
        );
    }
    for (i, q) in model.queues.iter().enumerate() {
        if !(q.mean_service.is_finite() && q.mean_service > 0.0) {
            report.push(Some(i), "mean service time must be positive");
        }
        if !(q.lambda.is_finite() && q.lambda >= 0.0) {
            report.push(Some(i), "arrival rate must be nonnegative");
        }
        match q.discipline {
            Discipline::Autonomous { alpha } | Discipline::TimeLimited { alpha } => {
                if !(alpha.is_finite() && alpha > 0.0) {
                    report.push(Some(i), "timer rate alpha must be positive");
                }
            }
            Discipline::KLimited { k } => {
                if k == 0 {
                    report.push(Some(i), "k must be at least 1");
                }
            }
            Discipline::Exhaustive => {}
        }
    }
    for (i, c) in model.switchovers.iter().enumerate() {
        if !c.parameter_ok() {
            report.push(Some(i), "switch-over parameters must be nonnegative");
        }
    }
    if !model.switchovers.iter().any(|c| c.mean() > 0.0) {
        report.push(
            None,
            "at least one switch-over must have a strictly positive mean (at least one c^i>0)",
        );
    }
    if model.routing == Routing::Tandem {
        if model.queues[0].lambda <= 0.0 {
            report.push(Some(0), "tandem routing needs external arrivals at the first queue");
        }
        for (i, q) in model.queues.iter().enumerate().skip(1) {
            if q.lambda != 0.0 {
                report.push(
                    Some(i),
                    "tandem routing allows external arrivals only at the first queue",
                );
            }
        }
        for (i, q) in model.queues.iter().enumerate() {
            if !matches!(
                q.discipline,
                Discipline::Autonomous { .. } | Discipline::TimeLimited { .. }
            ) {
                report.push(
                    Some(i),
                    "tandem routing supports only autonomous and time-limited disciplines",
                );
            }
        }
    }
    report
}

fn check_polydisc(z: &[Complex64]) -> Result<(), ModelError> {
    for (index, zm) in z.iter().enumerate() {
        let modulus = zm.norm();
        if !(modulus <= 1.0 + POLYDISC_TOL) {
            return Err(ModelError::OutsidePolydisc { index, modulus });
        }
    }
    Ok(())
}

/// Laplace exponent `sum_m lambda_m (1 - z_m)` of the arrival streams.
pub fn arrival_exponent(lambdas: &[f64], z: &[Complex64]) -> Complex64 {
    lambdas
        .iter()
        .zip(z)
        .map(|(&l, &zm)| (Complex64::new(1.0, 0.0) - zm) * l)
        .sum()
}

/// Joint PGF of the Poisson arrival counts to all queues during one
/// switch-over: `C(z) = LST(sum_m lambda_m (1 - z_m))`.
pub fn switchover_arrival_pgf(
    dist: &SwitchoverDist,
    lambdas: &[f64],
    z: &[Complex64],
) -> Result<Complex64, ModelError> {
    if lambdas.len() != z.len() {
        return Err(ModelError::DimensionMismatch {
            expected: lambdas.len(),
            got: z.len(),
        });
    }
    check_polydisc(z)?;
    Ok(dist.lst(arrival_exponent(lambdas, z)))
}

//! Discrete-event simulation of the polling system, recording the joint
//! queue lengths at every visit-begin and visit-end epoch.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::amc::ExitCause;
use crate::model::{Discipline, PollingModel, ValidationReport};
use crate::pgf::{CoeffTensor, Epoch, PgfError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid model: {0}")]
    InvalidModel(ValidationReport),
    #[error("invalid options: {0}")]
    Options(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimOptions {
    pub n_cycles: u64,
    pub seed: u64,
    pub warmup_cycles: u64,
    /// Batches for the batch-means standard errors (at least 20).
    pub batches: usize,
    /// Joint states with any coordinate at or above this are only counted, not stored.
    pub joint_cap: u32,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            n_cycles: 100_000,
            seed: 1,
            warmup_cycles: 1_000,
            batches: 20,
            joint_cap: 1024,
        }
    }
}

/// Samples at one queue's visit-begin or visit-end epochs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpochSample {
    pub samples: u64,
    /// Sparse joint counts.
    pub joint: BTreeMap<Vec<u32>, u64>,
    /// Samples not stored in `joint` because a coordinate reached the cap.
    pub joint_overflow: u64,
    /// `marginals[m][n]`: samples with `N_m = n`.
    pub marginals: Vec<Vec<u64>>,
    /// `batch_sums[b][m]`: sum of `N_m` over batch `b`.
    batch_sums: Vec<Vec<f64>>,
    batch_counts: Vec<u64>,
}

impl EpochSample {
    fn new(m: usize, batches: usize) -> Self {
        Self {
            marginals: vec![Vec::new(); m],
            batch_sums: vec![vec![0.0; m]; batches],
            batch_counts: vec![0; batches],
            ..Self::default()
        }
    }

    fn record(&mut self, n: &[u32], batch: usize, cap: u32) {
        self.samples += 1;
        if n.iter().all(|&v| v < cap) {
            *self.joint.entry(n.to_vec()).or_default() += 1;
        } else {
            self.joint_overflow += 1;
        }
        for (m, &v) in n.iter().enumerate() {
            let hist = &mut self.marginals[m];
            if hist.len() <= v as usize {
                hist.resize(v as usize + 1, 0);
            }
            hist[v as usize] += 1;
            self.batch_sums[batch][m] += v as f64;
        }
        self.batch_counts[batch] += 1;
    }

    /// Empirical distribution of `N_m`.
    pub fn marginal_probs(&self, m: usize) -> Vec<f64> {
        let total = self.samples.max(1) as f64;
        self.marginals[m].iter().map(|&c| c as f64 / total).collect()
    }

    pub fn mean(&self, m: usize) -> f64 {
        let total: f64 = self.batch_sums.iter().map(|b| b[m]).sum();
        total / self.samples.max(1) as f64
    }

    /// Batch-means standard error of [`EpochSample::mean`]; NaN with fewer than two batches.
    pub fn standard_error(&self, m: usize) -> f64 {
        let means: Vec<f64> = self
            .batch_sums
            .iter()
            .zip(&self.batch_counts)
            .filter(|(_, &c)| c > 0)
            .map(|(s, &c)| s[m] / c as f64)
            .collect();
        let b = means.len();
        if b < 2 {
            return f64::NAN;
        }
        let avg = means.iter().sum::<f64>() / b as f64;
        let var = means.iter().map(|x| (x - avg).powi(2)).sum::<f64>() / (b - 1) as f64;
        (var / b as f64).sqrt()
    }

    /// Empirical joint distribution as a coefficient tensor (states beyond
    /// `n_max` in some coordinate are dropped).
    pub fn to_tensor(&self, n_max: usize) -> Result<CoeffTensor, PgfError> {
        let m = self.marginals.len();
        let mut t = CoeffTensor::zeros(m, n_max);
        let total = self.samples.max(1) as f64;
        for (n, &count) in &self.joint {
            let idx: Vec<usize> = n.iter().map(|&v| v as usize).collect();
            if idx.iter().all(|&v| v <= n_max) {
                t.set(&idx, Complex64::new(count as f64 / total, 0.0))?;
            }
        }
        Ok(t)
    }
}

/// Per-queue visit statistics.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VisitStats {
    pub visits: u64,
    pub duration_sum: f64,
    pub duration_sumsq: f64,
    pub causes: BTreeMap<ExitCause, u64>,
    pub max_services: u64,
    /// k-limited visits that ended with fewer than `k` services while the
    /// served queue was still nonempty (always zero for a correct engine).
    pub early_nonempty_exits: u64,
}

impl VisitStats {
    pub fn mean_duration(&self) -> f64 {
        self.duration_sum / self.visits.max(1) as f64
    }

    /// Standard error of the mean visit duration (visits treated as independent).
    pub fn duration_se(&self) -> f64 {
        let n = self.visits as f64;
        if n < 2.0 {
            return f64::NAN;
        }
        let mean = self.mean_duration();
        let var = (self.duration_sumsq - n * mean * mean) / (n - 1.0);
        (var.max(0.0) / n).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimEstimate {
    pub seed: u64,
    pub n_cycles: u64,
    pub warmup_cycles: u64,
    /// `epochs[i][0]` at visit begin, `epochs[i][1]` at visit end of queue `i`.
    pub epochs: Vec<[EpochSample; 2]>,
    pub visits: Vec<VisitStats>,
    pub final_state: Vec<u32>,
    pub elapsed_time: f64,
}

impl SimEstimate {
    pub fn epoch(&self, i: usize, epoch: Epoch) -> &EpochSample {
        &self.epochs[i][match epoch {
            Epoch::Begin => 0,
            Epoch::End => 1,
        }]
    }
}

struct Streams {
    queue: Vec<ChaCha8Rng>,
    switch: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64, m: usize) -> Self {
        let stream = |s: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s);
            rng
        };
        Self {
            queue: (0..m as u64).map(stream).collect(),
            switch: stream(m as u64),
        }
    }
}

struct World<'a> {
    model: &'a PollingModel,
    n: Vec<u32>,
    t: f64,
    next_arrival: Vec<f64>,
    arrival: Vec<Option<Exp<f64>>>,
    service: Vec<Exp<f64>>,
    rng: Streams,
}

impl World<'_> {
    fn next_arrival(&self) -> (f64, usize) {
        self.next_arrival
            .iter()
            .enumerate()
            .fold((f64::INFINITY, 0), |acc, (m, &t)| if t < acc.0 { (t, m) } else { acc })
    }

    fn arrive(&mut self, m: usize) {
        self.t = self.next_arrival[m];
        self.n[m] += 1;
        let gap = self.arrival[m]
            .as_ref()
            .expect("arrivals only on queues with positive rate")
            .sample(&mut self.rng.queue[m]);
        self.next_arrival[m] += gap;
    }

    /// Processes arrivals up to `until` and moves the clock there.
    fn advance(&mut self, until: f64) {
        loop {
            let (ta, m) = self.next_arrival();
            if ta > until {
                break;
            }
            self.arrive(m);
        }
        self.t = until;
    }

    /// Runs one visit to queue `i`; returns (duration, cause, services).
    fn visit(&mut self, i: usize) -> (f64, ExitCause, u64) {
        let start = self.t;
        let disc = self.model.queues[i].discipline.clone();
        let downstream = self.model.downstream(i);
        let k_limit = match disc {
            Discipline::KLimited { k } => k as u64,
            _ => u64::MAX,
        };
        let leaves_when_empty = !matches!(disc, Discipline::Autonomous { .. });
        if leaves_when_empty && self.n[i] == 0 {
            return (0.0, ExitCause::Empty, 0);
        }
        let timer_end = match disc.timer_rate() {
            Some(alpha) => self.t + Exp::new(alpha).expect("positive rate").sample(&mut self.rng.queue[i]),
            None => f64::INFINITY,
        };
        let mut services = 0;
        loop {
            let completion = if self.n[i] > 0 {
                self.t + self.service[i].sample(&mut self.rng.queue[i])
            } else {
                f64::INFINITY
            };
            loop {
                let (ta, m) = self.next_arrival();
                if timer_end <= ta && timer_end <= completion {
                    // Any service in progress is lost.
                    self.t = timer_end;
                    return (self.t - start, ExitCause::Timer, services);
                }
                if completion <= ta {
                    self.t = completion;
                    self.n[i] -= 1;
                    if let Some(d) = downstream {
                        self.n[d] += 1;
                    }
                    services += 1;
                    if leaves_when_empty && self.n[i] == 0 {
                        return (self.t - start, ExitCause::Empty, services);
                    }
                    if services == k_limit {
                        return (self.t - start, ExitCause::KthDeparture, services);
                    }
                    break;
                }
                let idle = self.n[i] == 0;
                self.arrive(m);
                if m == i && idle {
                    break;
                }
            }
        }
    }
}

/// Simulates `n_cycles` cycles after `warmup_cycles`, with default batching.
pub fn simulate(
    model: &PollingModel,
    n_cycles: u64,
    seed: u64,
    warmup_cycles: u64,
) -> Result<SimEstimate, SimError> {
    simulate_with(
        model,
        &SimOptions {
            n_cycles,
            seed,
            warmup_cycles,
            ..SimOptions::default()
        },
    )
}

pub fn simulate_with(model: &PollingModel, opts: &SimOptions) -> Result<SimEstimate, SimError> {
    let report = model.validate();
    if !report.passed() {
        return Err(SimError::InvalidModel(report));
    }
    if opts.n_cycles == 0 {
        return Err(SimError::Options("n_cycles must be at least 1".into()));
    }
    let m = model.num_queues();
    let batches = opts.batches.max(20).min(opts.n_cycles as usize);
    let mut rng = Streams::new(opts.seed, m);
    let arrival: Vec<Option<Exp<f64>>> = model
        .queues
        .iter()
        .map(|q| (q.lambda > 0.0).then(|| Exp::new(q.lambda).expect("positive rate")))
        .collect();
    let next_arrival = arrival
        .iter()
        .enumerate()
        .map(|(mm, a)| a.as_ref().map_or(f64::INFINITY, |e| e.sample(&mut rng.queue[mm])))
        .collect();
    let mut world = World {
        model,
        n: vec![0; m],
        t: 0.0,
        next_arrival,
        arrival,
        service: model
            .queues
            .iter()
            .map(|q| Exp::new(q.service_rate()).expect("positive rate"))
            .collect(),
        rng,
    };

    let mut epochs: Vec<[EpochSample; 2]> = (0..m)
        .map(|_| [EpochSample::new(m, batches), EpochSample::new(m, batches)])
        .collect();
    let mut visits = vec![VisitStats::default(); m];
    let total = opts.warmup_cycles + opts.n_cycles;
    let mut measured_start = 0.0;
    for cycle in 0..total {
        let measuring = cycle >= opts.warmup_cycles;
        if cycle == opts.warmup_cycles {
            measured_start = world.t;
        }
        let batch = if measuring {
            ((cycle - opts.warmup_cycles) as u128 * batches as u128 / opts.n_cycles as u128) as usize
        } else {
            0
        };
        for i in 0..m {
            if measuring {
                epochs[i][0].record(&world.n, batch, opts.joint_cap);
            }
            let (duration, cause, services) = world.visit(i);
            if measuring {
                epochs[i][1].record(&world.n, batch, opts.joint_cap);
                let v = &mut visits[i];
                v.visits += 1;
                v.duration_sum += duration;
                v.duration_sumsq += duration * duration;
                *v.causes.entry(cause).or_default() += 1;
                v.max_services = v.max_services.max(services);
                if let Discipline::KLimited { k } = model.queues[i].discipline {
                    if services < k as u64 && world.n[i] > 0 {
                        v.early_nonempty_exits += 1;
                    }
                }
            }
            let c = model.switchovers[i].sample(&mut world.rng.switch);
            world.advance(world.t + c);
        }
    }
    Ok(SimEstimate {
        seed: opts.seed,
        n_cycles: opts.n_cycles,
        warmup_cycles: opts.warmup_cycles,
        epochs,
        visits,
        final_state: world.n.clone(),
        elapsed_time: world.t - measured_start,
    })
}

/// Independent replications, one per seed, run in parallel.
pub fn simulate_replications(
    model: &PollingModel,
    opts: &SimOptions,
    seeds: &[u64],
) -> Result<Vec<SimEstimate>, SimError> {
    use rayon::prelude::*;
    seeds
        .par_iter()
        .map(|&seed| simulate_with(model, &SimOptions { seed, ..opts.clone() }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{QueueSpec, Routing, SwitchoverDist};

    fn sym(d: Discipline, lambda: f64) -> PollingModel {
        PollingModel::symmetric(
            2,
            QueueSpec::new(lambda, 1.0, d),
            SwitchoverDist::Deterministic { c: 0.2 },
        )
    }

    #[test]
    fn no_arrivals_means_empty_samples() {
        let est = simulate(&sym(Discipline::Autonomous { alpha: 1.0 }, 0.0), 500, 3, 10).unwrap();
        for e in est.epochs.iter().flatten() {
            assert_eq!(e.samples, 500);
            assert_eq!(e.joint.get(&vec![0, 0]), Some(&500));
        }
    }

    #[test]
    fn exhaustive_ends_empty() {
        let m = PollingModel::new(
            vec![
                QueueSpec::new(0.4, 1.0, Discipline::Exhaustive),
                QueueSpec::new(0.3, 1.0, Discipline::KLimited { k: 2 }),
            ],
            vec![SwitchoverDist::Exponential { mean: 0.3 }; 2],
            Routing::CyclicPoisson,
        );
        let est = simulate(&m, 20_000, 5, 100).unwrap();
        let end = est.epoch(0, Epoch::End);
        assert_eq!(end.marginals[0][0], end.samples);
    }

    #[test]
    fn deterministic_per_seed() {
        let m = sym(Discipline::TimeLimited { alpha: 1.0 }, 0.3);
        let a = simulate(&m, 5_000, 42, 100).unwrap();
        let b = simulate(&m, 5_000, 42, 100).unwrap();
        assert_eq!(a, b);
        let c = simulate(&m, 5_000, 43, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn symmetric_queues_agree() {
        let est = simulate(&sym(Discipline::Autonomous { alpha: 1.0 }, 0.3), 100_000, 9, 1000).unwrap();
        let (a, b) = (est.epoch(0, Epoch::End), est.epoch(1, Epoch::End));
        let z = (a.mean(0) - b.mean(1)) / (a.standard_error(0).hypot(b.standard_error(1)));
        assert!(z.abs() <= 3.0, "z = {z}");
    }

    #[test]
    fn autonomous_visit_lengths_are_timer_draws() {
        let est = simulate(&sym(Discipline::Autonomous { alpha: 2.0 }, 0.4), 50_000, 1, 100).unwrap();
        for v in &est.visits {
            assert!((v.mean_duration() - 0.5).abs() <= 3.0 * v.duration_se());
            assert_eq!(v.causes.get(&ExitCause::Timer), Some(&v.visits));
        }
    }

    #[test]
    fn k_limited_visit_rules() {
        let est = simulate(&sym(Discipline::KLimited { k: 2 }, 0.35), 30_000, 8, 100).unwrap();
        for v in &est.visits {
            assert!(v.max_services <= 2);
            assert_eq!(v.early_nonempty_exits, 0);
            assert!(v.causes.contains_key(&ExitCause::KthDeparture));
        }
    }

    #[test]
    fn tandem_moves_jobs_downstream() {
        let m = PollingModel::new(
            vec![
                QueueSpec::new(0.3, 1.0, Discipline::TimeLimited { alpha: 1.0 }),
                QueueSpec::new(0.0, 1.0, Discipline::TimeLimited { alpha: 1.0 }),
            ],
            vec![SwitchoverDist::Deterministic { c: 0.1 }; 2],
            Routing::Tandem,
        );
        let est = simulate(&m, 20_000, 2, 100).unwrap();
        assert!(est.epoch(1, Epoch::Begin).mean(1) > 0.0);
        assert!(est.epoch(0, Epoch::End).mean(1) >= 0.0);
    }

    #[test]
    fn replications_agree_across_seeds() {
        let m = sym(Discipline::TimeLimited { alpha: 1.0 }, 0.3);
        let opts = SimOptions { n_cycles: 40_000, warmup_cycles: 500, ..SimOptions::default() };
        let reps = simulate_replications(&m, &opts, &[11, 12]).unwrap();
        let (a, b) = (reps[0].epoch(0, Epoch::End), reps[1].epoch(0, Epoch::End));
        let z = (a.mean(0) - b.mean(0)) / a.standard_error(0).hypot(b.standard_error(0));
        assert!(z.abs() <= 4.0, "z = {z}");
        assert_eq!(reps[0], simulate_with(&m, &SimOptions { seed: 11, ..opts }).unwrap());
    }

    #[test]
    fn batch_standard_errors_exist() {
        let est = simulate(&sym(Discipline::TimeLimited { alpha: 1.0 }, 0.3), 2_000, 4, 10).unwrap();
        let e = est.epoch(0, Epoch::Begin);
        assert!(e.standard_error(0).is_finite());
        let probs: f64 = e.marginal_probs(0).iter().sum();
        assert!((probs - 1.0).abs() < 1e-12);
        let t = e.to_tensor(64).unwrap();
        assert!((t.total_mass().re - 1.0).abs() < 1e-9);
    }
}

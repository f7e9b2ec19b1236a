use num_complex::Complex64;
use polling::amc::adaptive_exit_distribution;
use polling::kernels::VisitKernel;
use polling::model::{Discipline, PollingModel, QueueSpec, Routing, SwitchoverDist};
use polling::pgf::CoeffTensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn torus_point(rng: &mut ChaCha8Rng, m: usize) -> Vec<Complex64> {
    (0..m)
        .map(|_| Complex64::from_polar(1.0, rng.random::<f64>() * std::f64::consts::TAU))
        .collect()
}

/// Largest kernel-vs-oracle gap over random torus points for a point-mass start.
fn max_gap(model: &PollingModel, i: usize, start: &[usize], points: usize, seed: u64) -> f64 {
    let m = model.num_queues();
    let n_max = start.iter().copied().max().unwrap() + 1;
    let beta = CoeffTensor::point_mass(m, n_max, start).unwrap();
    let kernel = VisitKernel::new(model, i, n_max).unwrap();
    let (dist, _) = adaptive_exit_distribution(model, i, start, 1e-10).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..points)
        .map(|_| {
            let z = torus_point(&mut rng, m);
            (kernel.gamma_at(&beta, &z).unwrap() - dist.pgf(&z)).norm()
        })
        .fold(0.0, f64::max)
}

fn cyclic(d: Discipline, lambdas: &[f64]) -> PollingModel {
    PollingModel::new(
        lambdas
            .iter()
            .map(|&l| QueueSpec::new(l, 1.0, d.clone()))
            .collect(),
        vec![SwitchoverDist::Deterministic { c: 0.1 }; lambdas.len()],
        Routing::CyclicPoisson,
    )
}

#[test]
fn cyclic_disciplines_match_oracle() {
    for d in [
        Discipline::Autonomous { alpha: 1.0 },
        Discipline::TimeLimited { alpha: 1.0 },
        Discipline::KLimited { k: 1 },
        Discipline::KLimited { k: 2 },
        Discipline::KLimited { k: 3 },
        Discipline::KLimited { k: 4 },
    ] {
        let model = cyclic(d.clone(), &[0.5, 0.5]);
        for i1 in [0, 1, 2, 5] {
            let gap = max_gap(&model, 0, &[i1, 0], 10, i1 as u64);
            assert!(gap < 1e-6, "{d:?} i1={i1}: {gap:e}");
        }
        let gap = max_gap(&model, 1, &[2, 3], 5, 99);
        assert!(gap < 1e-6, "{d:?} served queue 2: {gap:e}");
    }
}

#[test]
fn zero_arrival_served_queue_matches_oracle() {
    for d in [
        Discipline::Autonomous { alpha: 0.8 },
        Discipline::TimeLimited { alpha: 0.8 },
        Discipline::KLimited { k: 1 },
        Discipline::KLimited { k: 3 },
    ] {
        let model = cyclic(d.clone(), &[0.0, 0.4]);
        let gap = max_gap(&model, 0, &[3, 1], 6, 4);
        assert!(gap < 1e-6, "{d:?}: {gap:e}");
    }
}

#[test]
fn three_queue_kernels_match_oracle() {
    for d in [
        Discipline::Autonomous { alpha: 1.2 },
        Discipline::TimeLimited { alpha: 0.9 },
        Discipline::KLimited { k: 2 },
        Discipline::KLimited { k: 3 },
    ] {
        let model = cyclic(d.clone(), &[0.3, 0.2, 0.25]);
        let gap = max_gap(&model, 1, &[1, 2, 1], 4, 7);
        assert!(gap < 1e-6, "{d:?}: {gap:e}");
    }
}

#[test]
fn tandem_stages_match_oracle() {
    for d in [
        Discipline::Autonomous { alpha: 1.0 },
        Discipline::TimeLimited { alpha: 1.0 },
    ] {
        let model = PollingModel::new(
            vec![
                QueueSpec::new(0.5, 1.0, d.clone()),
                QueueSpec::new(0.0, 1.0, d.clone()),
            ],
            vec![SwitchoverDist::Deterministic { c: 0.1 }; 2],
            Routing::Tandem,
        );
        for start in [[0, 0], [1, 0], [2, 1], [5, 2], [0, 3]] {
            for i in 0..2 {
                let gap = max_gap(&model, i, &start, 6, 11);
                assert!(gap < 1e-6, "{d:?} stage {} start {start:?}: {gap:e}", i + 1);
            }
        }
    }
}

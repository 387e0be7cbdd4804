use coxq::arrivals::{conditional_mean_measure, sample_arrivals, IntensitySpec, RateFunction};
use coxq::env::{sample_path, MarkovEnvironment};
use coxq::experiments::{simulate, EnvironmentSpec, ExperimentConfig, Regime, RunOptions};
use coxq::rng::{Role, StreamKey};
use coxq::service::ServiceLaw;
use coxq::stats::{batch_se, covariance, mean, moments, DEFAULT_BATCHES};

fn two_state_spec() -> EnvironmentSpec {
    EnvironmentSpec {
        states: 2,
        rates: vec![-1.0, 1.0, 1.0, -1.0],
        psi: vec![0.0, 1.0],
        initial_law: vec![0.5, 0.5],
        allow_zero_psi: true,
    }
}

fn config(regime: Regime, epsilons: Vec<f64>, beta: f64, replications: usize, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        regime,
        epsilons,
        beta,
        alpha: 1.0,
        lambda: RateFunction::Constant { a: 1.0 },
        environment: two_state_spec(),
        grid: vec![1.0, 2.0],
        pairs: vec![(1.0, 2.0)],
        replications,
        seed,
        include_sigma_psi: true,
        checks: Default::default(),
    }
}

/// Given the path, the count in system is Poisson with mean `m^eps(t)`.
#[test]
fn conditionally_poisson_on_a_frozen_path() {
    let cfg = config(Regime::Quenched, vec![1e-2], 0.5, 4000, 21);
    let sim = simulate(&cfg, RunOptions::default()).unwrap();
    let s = &sim.samples[0];
    let speedup = 1e-2f64.powf(-0.5);
    for (i, &t) in cfg.grid.iter().enumerate() {
        let xs: Vec<f64> = s.counts.iter().map(|c| c[i] as f64).collect();
        let m = moments(&xs);
        let target = s.m_eps0[0][i] * speedup;
        let se = (target / xs.len() as f64).sqrt();
        assert!((m.mean - target).abs() <= 3.0 * se, "t={t}: mean {} vs {target}", m.mean);
        let disp = m.variance / m.mean;
        let disp_se = batch_se(xs.len(), DEFAULT_BATCHES, |r| {
            let b = moments(&xs[r]);
            b.variance / b.mean
        });
        assert!((disp - 1.0).abs() <= 3.0 * disp_se, "t={t}: dispersion {disp} (se {disp_se})");
    }
}

/// Arrival counts on disjoint intervals are uncorrelated given the path.
#[test]
fn disjoint_arrival_counts_uncorrelated() {
    let env = MarkovEnvironment::with_nonnegative_psi(vec![-1.0, 1.0, 1.0, -1.0], vec![0.0, 1.0], vec![0.5, 0.5]).unwrap();
    let spec = IntensitySpec::new(RateFunction::Sinusoidal { a: 1.0, b: 0.5, omega: 3.0 }, 1e-2, 0.5, 2.0).unwrap();
    let path = sample_path(&env, spec.fast_horizon(), &mut StreamKey::new(22, 0, Role::Environment).stream(0)).unwrap();
    let key = StreamKey::new(22, 0, Role::Arrivals);
    let n = 4000;
    let (mut first, mut second) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for k in 0..n as u64 {
        let arrivals = sample_arrivals(&spec, &env, &path, 2.0, &mut key.stream(k)).unwrap();
        let split = arrivals.partition_point(|&a| a <= 1.0);
        first.push(split as f64);
        second.push((arrivals.len() - split) as f64);
    }
    let c = covariance(&first, &second);
    let sd = (moments(&first).variance * moments(&second).variance / n as f64).sqrt();
    assert!(c.abs() <= 3.0 * sd, "cov {c} (sd {sd})");
}

/// On a frozen path the counts in A1 and A3 are independent Poisson.
#[test]
fn quenched_region_counts_independent() {
    let cfg = config(Regime::Quenched, vec![1e-2], 0.5, 4000, 23);
    let sim = simulate(&cfg, RunOptions::default()).unwrap();
    let s = &sim.samples[0];
    let a1: Vec<f64> = s.regions.iter().map(|r| r[0].a1 as f64).collect();
    let a3: Vec<f64> = s.regions.iter().map(|r| r[0].a3 as f64).collect();
    let n = a1.len() as f64;
    let c = covariance(&a1, &a3);
    let sd = (moments(&a1).variance * moments(&a3).variance / n).sqrt();
    assert!(c.abs() <= 3.0 * sd, "cov {c} (sd {sd})");
    for xs in [&a1, &a3] {
        let m = moments(xs);
        let disp = m.variance / m.mean;
        let disp_se = batch_se(xs.len(), DEFAULT_BATCHES, |r| {
            let b = moments(&xs[r]);
            b.variance / b.mean
        });
        assert!((disp - 1.0).abs() <= 3.0 * disp_se, "dispersion {disp} (se {disp_se})");
    }
    assert_eq!(s.identity_violations, 0);
}

/// The weighted time average `m^eps_0(t)` converges to its limit, and fast
/// enough that the error survives multiplication by `eps^{-beta/2}`.
#[test]
fn weighted_ergodic_average_converges() {
    let env = MarkovEnvironment::with_nonnegative_psi(vec![-1.0, 1.0, 1.0, -1.0], vec![0.0, 1.0], vec![0.5, 0.5]).unwrap();
    let law = ServiceLaw::new(1.0).unwrap();
    let beta = 0.5;
    let m_bar = 0.375;
    let rms: Vec<f64> = [1e-1, 1e-2, 1e-3]
        .iter()
        .enumerate()
        .map(|(g, &eps)| {
            let spec = IntensitySpec::new(RateFunction::Constant { a: 1.0 }, eps, beta, 1.0).unwrap();
            let key = StreamKey::new(24, g as u64, Role::Environment);
            let sq: Vec<f64> = (0..400u64)
                .map(|k| {
                    let path = sample_path(&env, spec.fast_horizon(), &mut key.stream(k)).unwrap();
                    let m0 = conditional_mean_measure(&spec, &env, &law, &path, 1.0).unwrap().base;
                    (m0 - m_bar).powi(2)
                })
                .collect();
            mean(&sq).sqrt()
        })
        .collect();
    let weighted: Vec<f64> = rms.iter().zip([1e-1f64, 1e-2, 1e-3]).map(|(r, e)| r * e.powf(-beta / 2.0)).collect();
    for w in rms.windows(2).chain(weighted.windows(2)) {
        assert!(w[1] < w[0], "rms {rms:?}, weighted {weighted:?}");
    }
}

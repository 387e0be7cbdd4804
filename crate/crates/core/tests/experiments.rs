use coxq::arrivals::RateFunction;
use coxq::experiments::{annealed_run, quenched_run, EnvironmentSpec, ExperimentConfig, Regime, RunOptions};

fn config(regime: Regime, epsilon: f64, beta: f64, replications: usize, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        regime,
        epsilons: vec![epsilon],
        beta,
        alpha: 1.0,
        lambda: RateFunction::Constant { a: 1.0 },
        environment: EnvironmentSpec {
            states: 2,
            rates: vec![-1.0, 1.0, 1.0, -1.0],
            psi: vec![0.0, 1.0],
            initial_law: vec![0.5, 0.5],
            allow_zero_psi: true,
        },
        grid: vec![0.5, 1.0],
        pairs: vec![(0.5, 1.0)],
        replications,
        seed,
        include_sigma_psi: true,
        checks: Default::default(),
    }
}

/// In the subcritical regime the environment averages out, so quenched and
/// annealed fluctuation variances agree. The tolerance adds the spread of
/// the frozen path's mean, `eps sigma_psi^2 ∫h²`, to the sampling errors.
#[test]
fn quenched_and_annealed_variances_agree_subcritically() {
    let eps = 1e-3;
    let q = quenched_run(&config(Regime::Quenched, eps, 0.5, 10_000, 41), RunOptions::default()).unwrap();
    let a = annealed_run(&config(Regime::Annealed, eps, 0.5, 10_000, 42), RunOptions::default()).unwrap();
    // eps * white-noise variance at t = 1 for this environment
    let path_var = eps * 0.25 * 7.0 / 12.0;
    for (tq, ta) in q.per_time.iter().zip(&a.per_time) {
        let fq = tq.fluctuation.as_ref().unwrap();
        let fa = ta.fluctuation.as_ref().unwrap();
        let tol = 3.0 * (fq.variance_se.powi(2) + fa.variance_se.powi(2) + path_var).sqrt();
        assert!(
            (fq.variance - fa.variance).abs() <= tol,
            "t={}: quenched {} vs annealed {} (tol {tol})",
            tq.t,
            fq.variance,
            fa.variance
        );
    }
}

#[test]
fn annealed_counts_overdispersed_supercritically() {
    let r = annealed_run(&config(Regime::Annealed, 1e-2, 1.5, 2000, 43), RunOptions::default()).unwrap();
    for t in &r.per_time {
        assert!(t.dispersion_index > 1.0 + 3.0 * t.dispersion_se, "t={}: {} (se {})", t.t, t.dispersion_index, t.dispersion_se);
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let cfg = config(Regime::Annealed, 1e-2, 0.5, 500, 44);
    let one = annealed_run(&cfg, RunOptions { threads: Some(1) }).unwrap();
    let four = annealed_run(&cfg, RunOptions { threads: Some(4) }).unwrap();
    assert_eq!(one, four);
    let q = config(Regime::Quenched, 1e-2, 0.5, 500, 44);
    assert_eq!(quenched_run(&q, RunOptions { threads: Some(1) }).unwrap(), quenched_run(&q, RunOptions { threads: Some(3) }).unwrap());
}

#[test]
fn regime_mismatch_is_rejected() {
    let cfg = config(Regime::Quenched, 1e-2, 0.5, 200, 45);
    assert!(annealed_run(&cfg, RunOptions::default()).is_err());
}

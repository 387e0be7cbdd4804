//! Quenched and annealed Monte Carlo harnesses.
//!
//! A run simulates `replications` independent copies of the queue for each
//! `epsilon` in the configuration and summarizes the number in system, its
//! rescaled fluctuations and the region counts against the limit oracles.
//!
//! Replication `k` draws from streams indexed by `k` only, and the summary
//! is a sequential fold over replications in index order, so results do not
//! depend on the number of worker threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::{rescale_subcritical, rescale_supercritical, LimitOracle, RegionOracle};
use crate::arrivals::{conditional_mean_measure, sample_arrivals, IntensitySpec, RateFunction};
use crate::env::{environment_fclt_probe, green_kubo_sigma_sq, psi_bar, sample_path, time_average_psi, EnvPath, MarkovEnvironment};
use crate::error::{Error, Result};
use crate::queue::{Job, PointMeasure, RegionCounts};
use crate::rng::{Role, StreamKey};
use crate::service::ServiceLaw;
use crate::stats::{
    batch_se, covariance, fit_exponent, gaussianity_check, log_grid, mean, moments, ExponentFit, GaussianityCheck,
    DEFAULT_BATCHES,
};

pub const MIN_REPLICATIONS: usize = 100;
const QUENCHED_PATH_INDEX: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Quenched,
    Annealed,
}

/// Environment as written in a configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSpec {
    pub states: usize,
    /// Row-major generator.
    pub rates: Vec<f64>,
    pub psi: Vec<f64>,
    pub initial_law: Vec<f64>,
    /// Admit `psi = 0` in some states (indicator observables).
    #[serde(default)]
    pub allow_zero_psi: bool,
}

impl EnvironmentSpec {
    pub fn build(&self) -> Result<MarkovEnvironment> {
        if self.psi.len() != self.states {
            return Err(Error::InvalidEnvironment(format!(
                "states = {} but psi has {} entries",
                self.states,
                self.psi.len()
            )));
        }
        if self.allow_zero_psi {
            MarkovEnvironment::with_nonnegative_psi(self.rates.clone(), self.psi.clone(), self.initial_law.clone())
        } else {
            MarkovEnvironment::new(self.rates.clone(), self.psi.clone(), self.initial_law.clone())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSettings {
    /// Largest admissible |z| for variance and covariance comparisons.
    #[serde(default = "default_z_max")]
    pub z_max: f64,
    /// Per-epsilon bound on `|eps^beta mean N / m_bar0 - 1|`; when absent the
    /// bound is `z_max` standard errors.
    #[serde(default)]
    pub lln_relative: Option<Vec<f64>>,
    /// Band for `Var(G_S) / (factor sigma_bar^2)` in the supercritical regime.
    #[serde(default = "default_ratio_band")]
    pub ratio_band: [f64; 2],
    /// Grid times at which to run the normality check.
    #[serde(default)]
    pub gaussian_times: Vec<f64>,
}

fn default_z_max() -> f64 {
    3.0
}

fn default_ratio_band() -> [f64; 2] {
    [0.85, 1.15]
}

impl Default for CheckSettings {
    fn default() -> Self {
        CheckSettings { z_max: default_z_max(), lln_relative: None, ratio_band: default_ratio_band(), gaussian_times: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub regime: Regime,
    pub epsilons: Vec<f64>,
    pub beta: f64,
    pub alpha: f64,
    pub lambda: RateFunction,
    pub environment: EnvironmentSpec,
    /// Observation times; the last one is the simulation horizon.
    pub grid: Vec<f64>,
    /// Time pairs `(t1, t2)` for covariances and region counts.
    #[serde(default)]
    pub pairs: Vec<(f64, f64)>,
    pub replications: usize,
    pub seed: u64,
    #[serde(default = "default_true")]
    pub include_sigma_psi: bool,
    #[serde(default)]
    pub checks: CheckSettings,
}

fn default_true() -> bool {
    true
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications < MIN_REPLICATIONS {
            return Err(Error::arg(format!(
                "replications = {} is below the minimum {MIN_REPLICATIONS}",
                self.replications
            )));
        }
        if self.epsilons.is_empty() {
            return Err(Error::arg("epsilon list is empty"));
        }
        if self.epsilons.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::arg("epsilon list must be strictly decreasing"));
        }
        if let Some(&e) = self.epsilons.iter().find(|&&e| !(e > 0.0 && e <= 1.0)) {
            return Err(Error::OutOfRange { what: "epsilon", value: e, range: "(0, 1]".into() });
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::OutOfRange { what: "beta", value: self.beta, range: "[0, inf)".into() });
        }
        ServiceLaw::new(self.alpha)?;
        self.lambda.validate()?;
        self.environment.build()?;
        if self.grid.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
            return Err(Error::arg("grid times must be positive and finite"));
        }
        if self.grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::arg("grid must be strictly increasing"));
        }
        for &(a, b) in &self.pairs {
            if !(a < b) {
                return Err(Error::arg(format!("pair ({a}, {b}) must satisfy t1 < t2")));
            }
            if !self.grid.contains(&a) || !self.grid.contains(&b) {
                return Err(Error::arg(format!("pair ({a}, {b}) is not on the grid")));
            }
        }
        if let Some(tols) = &self.checks.lln_relative {
            if tols.len() != self.epsilons.len() {
                return Err(Error::arg("checks.lln_relative needs one entry per epsilon"));
            }
        }
        for t in &self.checks.gaussian_times {
            if !self.grid.contains(t) {
                return Err(Error::arg(format!("gaussian time {t} is not on the grid")));
            }
        }
        Ok(())
    }

    pub fn horizon(&self) -> f64 {
        self.grid.last().copied().unwrap_or(0.0)
    }

    fn grid_index(&self, t: f64) -> usize {
        self.grid.iter().position(|&g| g == t).expect("validated grid time")
    }
}

/// Execution knobs that never affect results.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub threads: Option<usize>,
}

impl RunOptions {
    fn install<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T> {
        match self.threads {
            Some(n) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(n.max(1))
                    .build()
                    .map_err(|e| Error::arg(format!("cannot build thread pool: {e}")))?;
                Ok(pool.install(f))
            }
            None => Ok(f()),
        }
    }
}

/// Raw per-replication output for one epsilon.
#[derive(Debug, Clone)]
pub struct EpsilonSamples {
    pub epsilon: f64,
    /// `counts[k][i]` is `N(grid[i])` in replication `k`.
    pub counts: Vec<Vec<u64>>,
    /// `m_eps0[k][i]` is `m^eps_0(grid[i])` on the path of replication `k`.
    pub m_eps0: Vec<Vec<f64>>,
    /// `regions[k][p]` are the region counts for `pairs[p]`.
    pub regions: Vec<Vec<RegionCounts>>,
    /// Replications where `N(t2) - N(t1) != A3 - A1` for some pair.
    pub identity_violations: usize,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub config: ExperimentConfig,
    pub samples: Vec<EpsilonSamples>,
}

struct Replication {
    counts: Vec<u64>,
    m_eps0: Vec<f64>,
    regions: Vec<RegionCounts>,
    identity_ok: bool,
}

#[allow(clippy::too_many_arguments)]
fn replicate(
    cfg: &ExperimentConfig,
    spec: &IntensitySpec,
    env: &MarkovEnvironment,
    law: &ServiceLaw,
    path: &EnvPath,
    quenched_m0: Option<&[f64]>,
    group: u64,
    k: u64,
) -> Result<Replication> {
    let horizon = cfg.horizon();
    let mut arrival_rng = StreamKey::new(cfg.seed, group, Role::Arrivals).stream(k);
    let mut service_rng = StreamKey::new(cfg.seed, group, Role::Service).stream(k);
    let arrivals = sample_arrivals(spec, env, path, horizon, &mut arrival_rng)?;
    let jobs = arrivals.into_iter().map(|arrival| Job { arrival, service: law.sample(&mut service_rng) }).collect();
    let measure = PointMeasure::new(jobs)?;
    let counts = measure.trajectory(&cfg.grid)?;
    let m_eps0 = match quenched_m0 {
        Some(m) => m.to_vec(),
        None => cfg
            .grid
            .iter()
            .map(|&t| conditional_mean_measure(spec, env, law, path, t).map(|m| m.base))
            .collect::<Result<_>>()?,
    };
    let mut regions = Vec::with_capacity(cfg.pairs.len());
    let mut identity_ok = true;
    for &(t1, t2) in &cfg.pairs {
        let r = measure.region_count(t1, t2)?;
        let diff = counts[cfg.grid_index(t2)] as i64 - counts[cfg.grid_index(t1)] as i64;
        identity_ok &= diff == r.a3 as i64 - r.a1 as i64;
        regions.push(r);
    }
    Ok(Replication { counts, m_eps0, regions, identity_ok })
}

/// Runs all replications for every epsilon without summarizing.
pub fn simulate(cfg: &ExperimentConfig, opts: RunOptions) -> Result<Simulation> {
    cfg.validate()?;
    let env = cfg.environment.build()?;
    let law = ServiceLaw::new(cfg.alpha)?;
    let horizon = cfg.horizon();
    let mut samples = Vec::with_capacity(cfg.epsilons.len());
    for (group, &epsilon) in cfg.epsilons.iter().enumerate() {
        let group = group as u64;
        let spec = IntensitySpec::new(cfg.lambda, epsilon, cfg.beta, horizon)?;
        let env_key = StreamKey::new(cfg.seed, group, Role::Environment);
        let shared = match cfg.regime {
            Regime::Quenched => {
                let path = sample_path(&env, spec.fast_horizon(), &mut env_key.stream(QUENCHED_PATH_INDEX))?;
                let m0: Vec<f64> = cfg
                    .grid
                    .iter()
                    .map(|&t| conditional_mean_measure(&spec, &env, &law, &path, t).map(|m| m.base))
                    .collect::<Result<_>>()?;
                Some((path, m0))
            }
            Regime::Annealed => None,
        };
        let reps: Vec<Replication> = opts.install(|| {
            (0..cfg.replications as u64)
                .into_par_iter()
                .map(|k| match &shared {
                    Some((path, m0)) => replicate(cfg, &spec, &env, &law, path, Some(m0), group, k),
                    None => {
                        let path = sample_path(&env, spec.fast_horizon(), &mut env_key.stream(k))?;
                        replicate(cfg, &spec, &env, &law, &path, None, group, k)
                    }
                })
                .collect::<Result<Vec<_>>>()
        })??;
        let identity_violations = reps.iter().filter(|r| !r.identity_ok).count();
        let (mut counts, mut m_eps0, mut regions) = (Vec::new(), Vec::new(), Vec::new());
        for r in reps {
            counts.push(r.counts);
            m_eps0.push(r.m_eps0);
            regions.push(r.regions);
        }
        samples.push(EpsilonSamples { epsilon, counts, m_eps0, regions, identity_violations });
    }
    Ok(Simulation { config: cfg.clone(), samples })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluctuationStats {
    pub mean: f64,
    pub mean_se: f64,
    pub variance: f64,
    pub variance_se: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub oracle_variance: f64,
    pub z: f64,
    /// Exact or leading-order variance at this epsilon: the path's
    /// `m^eps_0(t)` (quenched), `E m^eps_0(t) + eps^{1-beta} W(t,t)`
    /// (annealed subcritical) or `W(t,t) + eps^{beta-1} E m^eps_0(t)`
    /// (supercritical), where `W` is [`LimitOracle::white_noise_cov`].
    pub finite_eps_variance: f64,
    pub finite_eps_z: f64,
    /// Sample variances of the service and environment parts.
    pub service_variance: f64,
    pub environment_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupercriticalStats {
    pub sigma_bar_sq: f64,
    pub sigma_psi_sq: f64,
    /// `Var(G_S) / (sigma_psi^2 sigma_bar^2)`
    pub ratio_with_sigma_psi: f64,
    pub ratio_with_sigma_psi_se: f64,
    /// `Var(G_S) / sigma_bar^2`
    pub ratio_without_sigma_psi: f64,
    pub ratio_without_sigma_psi_se: f64,
    /// `sigma_psi^2 ∫₀ᵗ h(s,t)² ds` and `Var(G_S) / ` that value.
    pub white_noise_variance: f64,
    pub ratio_white_noise: f64,
    pub ratio_white_noise_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeStats {
    pub epsilon: f64,
    pub t: f64,
    pub mean_count: f64,
    pub count_variance: f64,
    pub dispersion_index: f64,
    pub dispersion_se: f64,
    /// `eps^beta mean N(t)`
    pub scaled_mean: f64,
    pub scaled_mean_se: f64,
    pub m_bar0: f64,
    /// `scaled_mean / m_bar0 - 1`
    pub lln_relative_error: f64,
    /// Average of `m^eps_0(t)` over the sampled paths.
    pub mean_m_eps0: f64,
    pub fluctuation: Option<FluctuationStats>,
    pub supercritical: Option<SupercriticalStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub epsilon: f64,
    pub t_i: f64,
    pub t_j: f64,
    pub covariance: f64,
    pub se: f64,
    pub oracle: f64,
    pub z: f64,
    /// Supercritical only: `W(t_i,t_j) + eps^{beta-1} Gamma(t_i,t_j)`.
    pub diagnostic_oracle: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionStats {
    pub epsilon: f64,
    pub t1: f64,
    pub t2: f64,
    /// `eps^beta` times the mean counts of A1, A2, A3.
    pub scaled_means: [f64; 3],
    pub scaled_means_se: [f64; 3],
    pub oracle: [f64; 3],
    /// `eps^beta Cov(A1 + A2, A2 + A3)` against the A2 oracle.
    pub scaled_mixing_cov: f64,
    pub scaled_mixing_cov_se: f64,
    pub identity_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentRecord {
    pub quantity: String,
    pub t_min: f64,
    pub t_max: f64,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub expected: f64,
    pub tolerance: f64,
}

impl ExponentRecord {
    pub fn new(quantity: impl Into<String>, series: &[(f64, f64)], expected: f64, tolerance: f64) -> Result<Self> {
        let fit: ExponentFit = fit_exponent(series)?;
        Ok(ExponentRecord {
            quantity: quantity.into(),
            t_min: series.first().map_or(0.0, |p| p.0),
            t_max: series.last().map_or(0.0, |p| p.0),
            slope: fit.slope,
            intercept: fit.intercept,
            r_squared: fit.r_squared,
            expected,
            tolerance,
        })
    }

    pub fn passed(&self) -> bool {
        (self.slope - self.expected).abs() <= self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckRecord {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        CheckRecord { name: name.into(), passed, detail: detail.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub config: ExperimentConfig,
    pub psi_bar: f64,
    pub sigma_psi_sq: f64,
    pub per_time: Vec<TimeStats>,
    pub per_pair: Vec<PairStats>,
    pub regions: Vec<RegionStats>,
    pub exponents: Vec<ExponentRecord>,
    pub checks: Vec<CheckRecord>,
    pub gaussianity: Vec<GaussianityRecord>,
    /// Convention for the supercritical variance that the data supports:
    /// `"with_sigma_psi"`, `"without_sigma_psi"`, or `None`.
    pub supported_convention: Option<String>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianityRecord {
    pub epsilon: f64,
    pub t: f64,
    pub result: GaussianityCheck,
}

impl MomentReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed) && self.exponents.iter().all(ExponentRecord::passed)
    }
}

/// Which scaling the fluctuations of a run follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scaling {
    Subcritical,
    Supercritical,
    LlnOnly,
}

fn scaling_for(cfg: &ExperimentConfig) -> Scaling {
    match cfg.regime {
        Regime::Quenched if cfg.beta < 1.0 && cfg.beta > 0.0 => Scaling::Subcritical,
        Regime::Quenched => Scaling::LlnOnly,
        Regime::Annealed if cfg.beta > 0.0 && cfg.beta < 1.0 => Scaling::Subcritical,
        Regime::Annealed if cfg.beta > 1.0 => Scaling::Supercritical,
        Regime::Annealed => Scaling::LlnOnly,
    }
}

/// Per-pair covariance of fluctuation samples against an oracle, with
/// `z = (estimate - oracle) / SE` and batch-means SE.
pub fn covariance_check(
    epsilon: f64,
    samples: &[Vec<f64>],
    grid: &[f64],
    pairs: &[(f64, f64)],
    oracle: impl Fn(f64, f64) -> Result<f64>,
) -> Result<Vec<PairStats>> {
    pairs
        .iter()
        .map(|&(ti, tj)| {
            let i = grid.iter().position(|&g| g == ti).ok_or_else(|| Error::arg(format!("{ti} not on grid")))?;
            let j = grid.iter().position(|&g| g == tj).ok_or_else(|| Error::arg(format!("{tj} not on grid")))?;
            let x: Vec<f64> = samples.iter().map(|r| r[i]).collect();
            let y: Vec<f64> = samples.iter().map(|r| r[j]).collect();
            let cov = covariance(&x, &y);
            let se = batch_se(x.len(), DEFAULT_BATCHES, |r| covariance(&x[r.clone()], &y[r]));
            let target = oracle(ti, tj)?;
            Ok(PairStats {
                epsilon,
                t_i: ti,
                t_j: tj,
                covariance: cov,
                se,
                oracle: target,
                z: (cov - target) / se,
                diagnostic_oracle: None,
            })
        })
        .collect()
}

fn column<T: Copy>(rows: &[Vec<T>], i: usize) -> Vec<T> {
    rows.iter().map(|r| r[i]).collect()
}

fn variance_of(xs: &[f64]) -> f64 {
    moments(xs).variance
}

/// Summarizes a simulation against the limit oracles.
pub fn summarize(sim: &Simulation) -> Result<MomentReport> {
    let cfg = &sim.config;
    let env = cfg.environment.build()?;
    let law = ServiceLaw::new(cfg.alpha)?;
    let oracle = LimitOracle::from_environment(law, cfg.lambda, &env)?.with_sigma_psi(cfg.include_sigma_psi);
    let scaling = scaling_for(cfg);
    let z_max = cfg.checks.z_max;
    let mut report = MomentReport {
        config: cfg.clone(),
        psi_bar: oracle.psi_bar,
        sigma_psi_sq: oracle.sigma_psi_sq,
        per_time: Vec::new(),
        per_pair: Vec::new(),
        regions: Vec::new(),
        exponents: Vec::new(),
        checks: Vec::new(),
        gaussianity: Vec::new(),
        supported_convention: None,
        notes: Vec::new(),
    };
    match scaling {
        Scaling::LlnOnly if cfg.regime == Regime::Quenched && cfg.beta >= 1.0 => report.notes.push(format!(
            "beta = {} >= 1: a quenched CLT exists only in the subcritical regime; reporting LLN statistics only",
            cfg.beta
        )),
        Scaling::LlnOnly => report.notes.push(format!(
            "beta = {}: no CLT scaling is asserted for this regime; reporting LLN statistics only",
            cfg.beta
        )),
        _ => {}
    }
    let m_bar: Vec<f64> = cfg.grid.iter().map(|&t| oracle.m_bar0(t)).collect::<Result<_>>()?;
    let mut ratio_hits = [true, true];

    for (e, s) in sim.samples.iter().enumerate() {
        let eps = s.epsilon;
        let eb = eps.powf(cfg.beta);
        let n = s.counts.len();
        let fluct: Option<Vec<Vec<f64>>> = match scaling {
            Scaling::LlnOnly => None,
            _ => Some(
                s.counts
                    .iter()
                    .zip(&s.m_eps0)
                    .map(|(c, m0)| {
                        (0..cfg.grid.len())
                            .map(|i| {
                                let f = if scaling == Scaling::Subcritical {
                                    rescale_subcritical(c[i] as f64, m_bar[i], m0[i], eps, cfg.beta)
                                } else {
                                    rescale_supercritical(c[i] as f64, m_bar[i], m0[i], eps, cfg.beta)
                                };
                                f.map(|f| [f.total, f.service, f.environment])
                            })
                            .collect::<Result<Vec<[f64; 3]>>>()
                    })
                    .collect::<Result<Vec<_>>>()?
                    .into_iter()
                    .map(|row| row.into_iter().flatten().collect())
                    .collect(),
            ),
        };
        let totals: Option<Vec<Vec<f64>>> =
            fluct.as_ref().map(|f| f.iter().map(|r| r.chunks(3).map(|c| c[0]).collect()).collect());

        for (i, &t) in cfg.grid.iter().enumerate() {
            let counts: Vec<f64> = s.counts.iter().map(|c| c[i] as f64).collect();
            let cm = moments(&counts);
            let dispersion = |xs: &[f64]| {
                let m = moments(xs);
                if m.mean > 0.0 {
                    m.variance / m.mean
                } else {
                    1.0
                }
            };
            let dispersion_index = dispersion(&counts);
            let dispersion_se = batch_se(n, DEFAULT_BATCHES, |r| dispersion(&counts[r]));
            let scaled: Vec<f64> = counts.iter().map(|c| eb * c).collect();
            let scaled_mean = mean(&scaled);
            let scaled_mean_se = batch_se(n, DEFAULT_BATCHES, |r| mean(&scaled[r]));
            let mean_m_eps0 = mean(&column(&s.m_eps0, i));
            let fluctuation = match &fluct {
                None => None,
                Some(f) => {
                    let total: Vec<f64> = f.iter().map(|r| r[3 * i]).collect();
                    let service: Vec<f64> = f.iter().map(|r| r[3 * i + 1]).collect();
                    let environment: Vec<f64> = f.iter().map(|r| r[3 * i + 2]).collect();
                    let m = moments(&total);
                    let oracle_variance = match scaling {
                        Scaling::Subcritical => oracle.gamma_cov(t, t)?,
                        _ => oracle.annealed_super_variance(t)?,
                    };
                    let variance_se = batch_se(n, DEFAULT_BATCHES, |r| variance_of(&total[r]));
                    let finite_eps_variance = match (scaling, cfg.regime) {
                        (Scaling::Subcritical, Regime::Quenched) => mean_m_eps0,
                        (Scaling::Subcritical, Regime::Annealed) => {
                            mean_m_eps0 + eps.powf(1.0 - cfg.beta) * oracle.white_noise_cov(t, t)?
                        }
                        _ => oracle.white_noise_cov(t, t)? + eps.powf(cfg.beta - 1.0) * mean_m_eps0,
                    };
                    Some(FluctuationStats {
                        mean: m.mean,
                        mean_se: batch_se(n, DEFAULT_BATCHES, |r| mean(&total[r])),
                        variance: m.variance,
                        variance_se,
                        skewness: m.skewness,
                        excess_kurtosis: m.excess_kurtosis,
                        oracle_variance,
                        z: (m.variance - oracle_variance) / variance_se,
                        finite_eps_variance,
                        finite_eps_z: (m.variance - finite_eps_variance) / variance_se,
                        service_variance: variance_of(&service),
                        environment_variance: variance_of(&environment),
                    })
                }
            };
            let supercritical = match (&fluctuation, scaling) {
                (Some(fs), Scaling::Supercritical) => {
                    let sbs = oracle.sigma_bar_sq(t)?;
                    let with = oracle.sigma_psi_sq * sbs;
                    let white = oracle.white_noise_cov(t, t)?;
                    Some(SupercriticalStats {
                        sigma_bar_sq: sbs,
                        sigma_psi_sq: oracle.sigma_psi_sq,
                        ratio_with_sigma_psi: fs.variance / with,
                        ratio_with_sigma_psi_se: fs.variance_se / with,
                        ratio_without_sigma_psi: fs.variance / sbs,
                        ratio_without_sigma_psi_se: fs.variance_se / sbs,
                        white_noise_variance: white,
                        ratio_white_noise: fs.variance / white,
                        ratio_white_noise_se: fs.variance_se / white,
                    })
                }
                _ => None,
            };
            let lln_relative_error = scaled_mean / m_bar[i] - 1.0;
            report.per_time.push(TimeStats {
                epsilon: eps,
                t,
                mean_count: cm.mean,
                count_variance: cm.variance,
                dispersion_index,
                dispersion_se,
                scaled_mean,
                scaled_mean_se,
                m_bar0: m_bar[i],
                lln_relative_error,
                mean_m_eps0,
                fluctuation,
                supercritical,
            });

            let lln_bound = match &cfg.checks.lln_relative {
                Some(tols) => tols[e],
                None => z_max * scaled_mean_se / m_bar[i],
            };
            report.checks.push(CheckRecord::new(
                format!("lln eps={eps} t={t}"),
                lln_relative_error.abs() <= lln_bound,
                format!("relative error {lln_relative_error:.5} (bound {lln_bound:.5})"),
            ));
            let last = report.per_time.last().unwrap();
            if let Some(fs) = &last.fluctuation {
                match scaling {
                    Scaling::Subcritical => report.checks.push(CheckRecord::new(
                        format!("variance eps={eps} t={t}"),
                        fs.z.abs() <= z_max,
                        format!("Var(G) = {:.5} vs {:.5}, z = {:.2}", fs.variance, fs.oracle_variance, fs.z),
                    )),
                    Scaling::Supercritical => {
                        let sc = last.supercritical.as_ref().unwrap();
                        let [lo, hi] = cfg.checks.ratio_band;
                        ratio_hits[0] &= (lo..=hi).contains(&sc.ratio_with_sigma_psi);
                        ratio_hits[1] &= (lo..=hi).contains(&sc.ratio_without_sigma_psi);
                        report.notes.push(format!(
                            "eps={eps} t={t}: Var(G_S) = {:.5}; ratio with sigma_psi^2 = {:.4}, without = {:.4}, \
                             against the white-noise variance {:.5} = {:.4}; finite-eps prediction {:.5} (z = {:.2}); \
                             service part variance {:.5}, environment part variance {:.5}",
                            fs.variance,
                            sc.ratio_with_sigma_psi,
                            sc.ratio_without_sigma_psi,
                            sc.white_noise_variance,
                            sc.ratio_white_noise,
                            fs.finite_eps_variance,
                            fs.finite_eps_z,
                            fs.service_variance,
                            fs.environment_variance
                        ));
                    }
                    Scaling::LlnOnly => {}
                }
            }
        }

        if let Some(tot) = &totals {
            let pair_oracle = |a: f64, b: f64| match scaling {
                Scaling::Subcritical => oracle.gamma_cov(a, b),
                _ => oracle.annealed_super_cov(a, b),
            };
            let mut pairs = covariance_check(eps, tot, &cfg.grid, &cfg.pairs, pair_oracle)?;
            if scaling == Scaling::Supercritical {
                for p in &mut pairs {
                    let w = oracle.white_noise_cov(p.t_i, p.t_j)?;
                    p.diagnostic_oracle = Some(w + eps.powf(cfg.beta - 1.0) * oracle.gamma_cov(p.t_i, p.t_j)?);
                }
            }
            for p in &pairs {
                report.checks.push(CheckRecord::new(
                    format!("covariance eps={eps} ({}, {})", p.t_i, p.t_j),
                    p.z.abs() <= z_max,
                    format!("Cov = {:.5} vs {:.5}, z = {:.2}", p.covariance, p.oracle, p.z),
                ));
            }
            report.per_pair.extend(pairs);
            for &t in &cfg.checks.gaussian_times {
                let i = cfg.grid_index(t);
                let target = report.per_time[report.per_time.len() - cfg.grid.len() + i]
                    .fluctuation
                    .as_ref()
                    .map(|f| f.oracle_variance)
                    .unwrap_or(1.0);
                let result = gaussianity_check(&column(tot, i), target)?;
                report.checks.push(CheckRecord::new(
                    format!("gaussianity eps={eps} t={t}"),
                    result.passed,
                    format!(
                        "mean {:.4} (se {:.4}), skewness {:.4} (bound {:.4}), excess kurtosis {:.4} (bound {:.4})",
                        result.mean, result.mean_se, result.skewness, result.skewness_bound,
                        result.excess_kurtosis, result.kurtosis_bound
                    ),
                ));
                report.gaussianity.push(GaussianityRecord { epsilon: eps, t, result });
            }
        }

        for (p, &(t1, t2)) in cfg.pairs.iter().enumerate() {
            let ro: RegionOracle = oracle.xi_and_region_means(t1, t2)?;
            let region_series = |f: fn(&RegionCounts) -> u64| -> Vec<f64> {
                s.regions.iter().map(|r| eb * f(&r[p]) as f64).collect()
            };
            let series = [region_series(|r| r.a1), region_series(|r| r.a2), region_series(|r| r.a3)];
            let scaled_means = [mean(&series[0]), mean(&series[1]), mean(&series[2])];
            let scaled_means_se = [0, 1, 2].map(|q| batch_se(n, DEFAULT_BATCHES, |r| mean(&series[q][r])));
            let left: Vec<f64> = (0..n).map(|k| series[0][k] + series[1][k]).collect();
            let right: Vec<f64> = (0..n).map(|k| series[1][k] + series[2][k]).collect();
            // eps^beta Cov(X, Y) from the eps^beta-scaled series
            let mixing = |r: std::ops::Range<usize>| covariance(&left[r.clone()], &right[r]) / eb;
            let scaled_mixing_cov = mixing(0..n);
            let scaled_mixing_cov_se = batch_se(n, DEFAULT_BATCHES, mixing);
            let oracle_means = [ro.a1, ro.a2, ro.a3];
            report.checks.push(CheckRecord::new(
                format!("region identity eps={eps} ({t1}, {t2})"),
                s.identity_violations == 0,
                format!("{} of {n} replications violate N(t2) - N(t1) = A3 - A1", s.identity_violations),
            ));
            for q in 0..3 {
                let z = (scaled_means[q] - oracle_means[q]) / scaled_means_se[q];
                report.checks.push(CheckRecord::new(
                    format!("region mean A{} eps={eps} ({t1}, {t2})", q + 1),
                    z.abs() <= z_max,
                    format!("{:.5} vs {:.5}, z = {z:.2}", scaled_means[q], oracle_means[q]),
                ));
            }
            if scaling == Scaling::Subcritical {
                let z = (scaled_mixing_cov - ro.a2) / scaled_mixing_cov_se;
                report.checks.push(CheckRecord::new(
                    format!("mixing covariance eps={eps} ({t1}, {t2})"),
                    z.abs() <= z_max,
                    format!("{scaled_mixing_cov:.5} vs {:.5}, z = {z:.2}", ro.a2),
                ));
            }
            report.regions.push(RegionStats {
                epsilon: eps,
                t1,
                t2,
                scaled_means,
                scaled_means_se,
                oracle: oracle_means,
                scaled_mixing_cov,
                scaled_mixing_cov_se,
                identity_violations: s.identity_violations,
            });
        }
    }

    // Refinement: the LLN error should not grow as epsilon decreases, up to
    // two standard errors of the finer estimate.
    let g = cfg.grid.len();
    for e in 1..sim.samples.len() {
        for i in 0..g {
            let (coarse, fine) = (&report.per_time[(e - 1) * g + i], &report.per_time[e * g + i]);
            let slack = 2.0 * fine.scaled_mean_se / fine.m_bar0;
            report.checks.push(CheckRecord::new(
                format!("lln refinement eps={} t={}", fine.epsilon, fine.t),
                fine.lln_relative_error.abs() <= coarse.lln_relative_error.abs() + slack,
                format!(
                    "|error| {:.5} at eps={} vs {:.5} at eps={} (slack {slack:.5})",
                    fine.lln_relative_error.abs(),
                    fine.epsilon,
                    coarse.lln_relative_error.abs(),
                    coarse.epsilon
                ),
            ));
        }
    }

    if scaling == Scaling::Supercritical {
        let verdict = match ratio_hits {
            [true, false] => Some("with_sigma_psi"),
            [false, true] => Some("without_sigma_psi"),
            _ => None,
        };
        let [lo, hi] = cfg.checks.ratio_band;
        report.checks.push(CheckRecord::new(
            "supercritical variance convention",
            verdict.is_some(),
            match verdict {
                Some(v) => format!("exactly one convention ({v}) keeps Var(G_S)/limit in [{lo}, {hi}] at every grid time"),
                None => format!(
                    "ratio band [{lo}, {hi}] met by with_sigma_psi: {}, without_sigma_psi: {}",
                    ratio_hits[0], ratio_hits[1]
                ),
            },
        ));
        report.supported_convention = verdict.map(str::to_owned);
    }
    Ok(report)
}

/// Quenched run: one environment path per epsilon, shared by all replications.
pub fn quenched_run(cfg: &ExperimentConfig, opts: RunOptions) -> Result<MomentReport> {
    if cfg.regime != Regime::Quenched {
        return Err(Error::Regime("quenched_run needs regime = quenched".into()));
    }
    summarize(&simulate(cfg, opts)?)
}

/// Annealed run: a fresh environment path for every replication.
pub fn annealed_run(cfg: &ExperimentConfig, opts: RunOptions) -> Result<MomentReport> {
    if cfg.regime != Regime::Annealed {
        return Err(Error::Regime("annealed_run needs regime = annealed".into()));
    }
    summarize(&simulate(cfg, opts)?)
}

/// Summary of `Y^eps(t)` draws and of the ergodic-rate regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvProbeReport {
    pub epsilon: f64,
    pub t: f64,
    pub replications: usize,
    pub mean: f64,
    pub mean_se: f64,
    pub variance: f64,
    pub variance_se: f64,
    pub green_kubo: f64,
    pub z: f64,
    /// `(t, RMS |t⁻¹∫₀ᵗ psi(Z) - psi_bar|)`
    pub ergodic_rms: Vec<(f64, f64)>,
    pub ergodic_rate: ExponentRecord,
}

/// Environment-side checks: variance of `Y^eps(t)` against Green–Kubo and
/// the decay rate of time averages over `t ∈ [1e2, 1e4]`.
pub fn environment_probe(
    env: &MarkovEnvironment,
    epsilon: f64,
    t: f64,
    replications: usize,
    rate_replications: usize,
    seed: u64,
    opts: RunOptions,
) -> Result<EnvProbeReport> {
    let sigma = green_kubo_sigma_sq(env)?;
    let mean_psi = psi_bar(env)?;
    let ys = opts.install(|| environment_fclt_probe(env, epsilon, t, replications, seed))??;
    let n = ys.len();
    let m = moments(&ys);
    let variance_se = batch_se(n, DEFAULT_BATCHES, |r| variance_of(&ys[r]));
    let times = log_grid(1e2, 1e4, 5);
    let key = StreamKey::new(seed, 1, Role::Probe);
    let ergodic_rms = opts.install(|| {
        times
            .iter()
            .enumerate()
            .map(|(g, &horizon)| {
                let sq: Vec<f64> = (0..rate_replications as u64)
                    .into_par_iter()
                    .map(|k| {
                        let mut rng = key.stream(((g as u64) << 40) | k);
                        let path = sample_path(env, horizon, &mut rng)?;
                        Ok((time_average_psi(&path, env, horizon)? - mean_psi).powi(2))
                    })
                    .collect::<Result<Vec<f64>>>()?;
                Ok((horizon, mean(&sq).sqrt()))
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let ergodic_rate = ExponentRecord::new("ergodic_rms", &ergodic_rms, -0.5, 0.1)?;
    Ok(EnvProbeReport {
        epsilon,
        t,
        replications: n,
        mean: m.mean,
        mean_se: batch_se(n, DEFAULT_BATCHES, |r| mean(&ys[r])),
        variance: m.variance,
        variance_se,
        green_kubo: sigma,
        z: (m.variance - sigma) / variance_se,
        ergodic_rms,
        ergodic_rate,
    })
}

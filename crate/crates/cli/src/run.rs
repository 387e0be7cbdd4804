//! Subcommand orchestration.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use coxq::analytics::{oracle_table, LimitOracle};
use coxq::env::{green_kubo_sigma_sq, psi_bar, MarkovEnvironment};
use coxq::experiments::{
    annealed_run, environment_probe, quenched_run, CheckRecord, ExperimentConfig, ExponentRecord, Regime, RunOptions,
};
use coxq::service::ServiceLaw;
use coxq::stats::log_grid;
use coxq::Error;

use crate::config::{load, ConfigError, LoadedConfig};
use crate::report::{emit_report, EmitError, RunManifest, RunReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    /// Law of large numbers for the scaled number in system.
    Lln,
    /// Quenched central limit theorem (0 < beta < 1).
    CltQuenched,
    /// Annealed central limit theorem, subcritical (0 < beta < 1).
    CltAnnealedSub,
    /// Annealed central limit theorem, supercritical (beta > 1).
    CltAnnealedSuper,
    /// Deterministic limit quantities and their scaling exponents.
    Oracles,
    /// Functional CLT and ergodic rate of the environment alone.
    EnvProbe,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Lln => "lln",
            Command::CltQuenched => "clt-quenched",
            Command::CltAnnealedSub => "clt-annealed-sub",
            Command::CltAnnealedSuper => "clt-annealed-super",
            Command::Oracles => "oracles",
            Command::EnvProbe => "env-probe",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Invocation {
    pub command: Command,
    pub config: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub set: Vec<String>,
    pub threads: Option<usize>,
}

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Emit(EmitError),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "configuration error: {e}"),
            CliError::Emit(e) => write!(f, "output error: {e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        EXIT_CONFIG
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<EmitError> for CliError {
    fn from(e: EmitError) -> Self {
        CliError::Emit(e)
    }
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_STATISTICAL: i32 = 2;

#[derive(Debug)]
pub struct Outcome {
    pub report: RunReport,
    pub manifest: RunManifest,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.report.passed() {
            EXIT_OK
        } else {
            EXIT_STATISTICAL
        }
    }
}

/// Best-effort key for a core validation error.
fn key_for(e: &Error) -> &'static str {
    let msg = e.to_string();
    let has = |w: &str| msg.contains(w);
    if has("replications") {
        "run.replications"
    } else if has("lln_relative") {
        "checks.lln_relative"
    } else if has("gaussian") {
        "checks.gaussian_times"
    } else if has("epsilon") {
        "run.epsilons"
    } else if has("beta") {
        "arrivals.beta"
    } else if has("alpha") {
        "service.alpha"
    } else if has("lambda") {
        "arrivals.lambda"
    } else if has("pair") {
        "grid.pairs"
    } else if has("grid") {
        "grid.times"
    } else {
        "environment"
    }
}

fn core_error(cfg: &LoadedConfig, e: Error) -> ConfigError {
    cfg.error_at(key_for(&e), e.to_string())
}

fn require<'a, T>(cfg: &LoadedConfig, value: Option<&'a T>, key: &str) -> Result<&'a T, ConfigError> {
    value.ok_or_else(|| {
        let section = key.split('.').next().unwrap_or(key);
        cfg.error_at(section, format!("missing key `{key}`"))
    })
}

fn environment(cfg: &LoadedConfig) -> Result<MarkovEnvironment, ConfigError> {
    cfg.config.environment.build().map_err(|e| cfg.error_at("environment", e.to_string()))
}

fn seed(cfg: &LoadedConfig, inv: &Invocation) -> Result<u64, ConfigError> {
    inv.seed.or(cfg.config.run.seed).ok_or_else(|| cfg.error_at("run", "missing key `run.seed` (or pass --seed)"))
}

fn experiment(cfg: &LoadedConfig, inv: &Invocation, regime: Regime) -> Result<ExperimentConfig, ConfigError> {
    let c = &cfg.config;
    let service = require(cfg, c.service.as_ref(), "service.alpha")?;
    let arrivals = require(cfg, c.arrivals.as_ref(), "arrivals.lambda")?;
    let grid = require(cfg, c.grid.as_ref(), "grid.times")?;
    let exp = ExperimentConfig {
        regime,
        epsilons: require(cfg, c.run.epsilons.as_ref(), "run.epsilons")?.clone(),
        beta: *require(cfg, arrivals.beta.as_ref(), "arrivals.beta")?,
        alpha: service.alpha,
        lambda: arrivals.lambda,
        environment: c.environment.clone(),
        grid: grid.times.clone(),
        pairs: grid.pairs.clone(),
        replications: *require(cfg, c.run.replications.as_ref(), "run.replications")?,
        seed: seed(cfg, inv)?,
        include_sigma_psi: c.run.include_sigma_psi,
        checks: c.checks.clone(),
    };
    exp.validate().map_err(|e| core_error(cfg, e))?;
    Ok(exp)
}

const REGIME_TABLE: &str = "regime table: quenched CLT only for 0 < beta < 1; annealed CLT for 0 < beta < 1 \
                            (subcritical) and beta > 1 (supercritical); no CLT scaling at beta = 1";

fn check_regime(cfg: &LoadedConfig, command: Command, beta: f64) -> Result<(), ConfigError> {
    let ok = match command {
        Command::CltQuenched | Command::CltAnnealedSub => beta > 0.0 && beta < 1.0,
        Command::CltAnnealedSuper => beta > 1.0,
        _ => true,
    };
    if ok {
        Ok(())
    } else {
        Err(cfg.error_at(
            "arrivals.beta",
            format!("`{}` does not apply at beta = {beta} ({REGIME_TABLE})", command.name()),
        ))
    }
}

fn options(inv: &Invocation) -> RunOptions {
    RunOptions { threads: inv.threads }
}

fn simulate(cfg: &LoadedConfig, inv: &Invocation, report: &mut RunReport) -> Result<(), ConfigError> {
    let regime = match inv.command {
        Command::Lln => cfg.config.run.regime.unwrap_or(Regime::Quenched),
        Command::CltQuenched => Regime::Quenched,
        _ => Regime::Annealed,
    };
    let exp = experiment(cfg, inv, regime)?;
    check_regime(cfg, inv.command, exp.beta)?;
    let m = match regime {
        Regime::Quenched => quenched_run(&exp, options(inv)),
        Regime::Annealed => annealed_run(&exp, options(inv)),
    }
    .map_err(|e| core_error(cfg, e))?;
    report.absorb(m);
    // `lln` asserts first-order statements only; the CLT subcommands assert
    // the second-order ones and keep first-order numbers as data.
    let first_order = |name: &str| name.starts_with("lln") || name.starts_with("region mean");
    if inv.command == Command::Lln {
        report.checks.retain(|c| first_order(&c.name) || c.name.starts_with("region identity"));
    } else {
        report.checks.retain(|c| !first_order(&c.name));
    }
    Ok(())
}

fn expected_lambda_slope(alpha: f64) -> f64 {
    (1.0 - alpha).max(0.0)
}

fn expected_sigma_slope(alpha: f64) -> f64 {
    if alpha < 1.0 {
        3.0 - 2.0 * alpha
    } else {
        1.0
    }
}

fn oracles(cfg: &LoadedConfig, report: &mut RunReport) -> Result<(), ConfigError> {
    let c = &cfg.config;
    let service = require(cfg, c.service.as_ref(), "service.alpha")?;
    let arrivals = require(cfg, c.arrivals.as_ref(), "arrivals.lambda")?;
    let law = ServiceLaw::new(service.alpha).map_err(|e| cfg.error_at("service.alpha", e.to_string()))?;
    let env = environment(cfg)?;
    let oracle = LimitOracle::from_environment(law, arrivals.lambda, &env)
        .map_err(|e| core_error(cfg, e))?
        .with_sigma_psi(c.run.include_sigma_psi);
    let section = c.oracles.as_ref();
    let times = match section.and_then(|o| o.times.as_ref()) {
        Some(t) => t.clone(),
        None => c.grid.as_ref().map(|g| g.times.clone()).unwrap_or_default(),
    };
    if times.iter().any(|&t| t.is_nan() || t <= 0.0) {
        return Err(cfg.error_at("oracles.times", "oracle times must be positive"));
    }
    report.oracles = oracle_table(&oracle, &times).map_err(|e| cfg.error_at("oracles.times", e.to_string()))?;
    if let Some(o) = section {
        let fit = |range: [f64; 2], key: &str, f: &dyn Fn(f64) -> coxq::Result<f64>| {
            if !(range[0] > 0.0 && range[1] > range[0]) || o.fit_points < 5 {
                return Err(cfg.error_at(key, "fit range needs 0 < lo < hi and fit_points >= 5"));
            }
            log_grid(range[0], range[1], o.fit_points)
                .into_iter()
                .map(|t| f(t).map(|v| (t, v)))
                .collect::<coxq::Result<Vec<_>>>()
                .map_err(|e| cfg.error_at(key, e.to_string()))
        };
        if let Some(r) = o.lambda_fit {
            let series = fit(r, "oracles.lambda_fit", &|t| oracle.big_lambda(t))?;
            report.exponents.push(
                ExponentRecord::new("Lambda", &series, expected_lambda_slope(service.alpha), o.slope_tolerance)
                    .map_err(|e| cfg.error_at("oracles.lambda_fit", e.to_string()))?,
            );
        }
        if let Some(r) = o.sigma_fit {
            let series = fit(r, "oracles.sigma_fit", &|t| oracle.sigma_bar_sq(t))?;
            report.exponents.push(
                ExponentRecord::new("sigma_bar_sq", &series, expected_sigma_slope(service.alpha), o.slope_tolerance)
                    .map_err(|e| cfg.error_at("oracles.sigma_fit", e.to_string()))?,
            );
        }
    }
    Ok(())
}

fn env_probe(cfg: &LoadedConfig, inv: &Invocation, report: &mut RunReport) -> Result<(), ConfigError> {
    let env = environment(cfg)?;
    let probe = require(cfg, cfg.config.probe.as_ref(), "probe.epsilon")?;
    if !(probe.epsilon > 0.0 && probe.epsilon <= 1.0) {
        return Err(cfg.error_at("probe.epsilon", "probe.epsilon must lie in (0, 1]"));
    }
    if probe.t.is_nan() || probe.t <= 0.0 {
        return Err(cfg.error_at("probe.t", "probe.t must be positive"));
    }
    if probe.replications < coxq::experiments::MIN_REPLICATIONS || probe.rate_replications < 2 {
        return Err(cfg.error_at("probe.replications", "too few replications"));
    }
    let seed = seed(cfg, inv)?;
    let r = environment_probe(&env, probe.epsilon, probe.t, probe.replications, probe.rate_replications, seed, options(inv))
        .map_err(|e| core_error(cfg, e))?;
    let z_max = cfg.config.checks.z_max;
    report.checks.push(CheckRecord::new(
        format!("probe variance eps={} t={}", r.epsilon, r.t),
        r.z.abs() <= z_max,
        format!("Var(Y) = {:.5} vs {:.5}, z = {:.2}", r.variance, r.green_kubo, r.z),
    ));
    let zm = r.mean / r.mean_se;
    report.checks.push(CheckRecord::new(
        format!("probe centering eps={} t={}", r.epsilon, r.t),
        zm.abs() <= z_max,
        format!("mean(Y) = {:.5}, z = {zm:.2}", r.mean),
    ));
    report.exponents.push(r.ergodic_rate.clone());
    report.probe = Some(r);
    Ok(())
}

/// Loads the configuration, runs the subcommand and writes all outputs.
pub fn execute(inv: &Invocation) -> Result<Outcome, CliError> {
    let mut timings = BTreeMap::new();
    let clock = Instant::now();
    let mut sets = inv.set.clone();
    if let Some(s) = inv.seed {
        sets.push(format!("run.seed={s}"));
    }
    let cfg = load(&inv.config, &sets)?;
    let env = environment(&cfg)?;
    let (pb, sigma) = (
        psi_bar(&env).map_err(|e| cfg.error_at("environment", e.to_string()))?,
        green_kubo_sigma_sq(&env).map_err(|e| cfg.error_at("environment", e.to_string()))?,
    );
    let mut report = RunReport::new(inv.command.name(), cfg.hash(), cfg.config.clone(), pb, sigma);
    timings.insert("load".to_owned(), clock.elapsed().as_secs_f64());

    let clock = Instant::now();
    match inv.command {
        Command::Oracles => oracles(&cfg, &mut report)?,
        Command::EnvProbe => env_probe(&cfg, inv, &mut report)?,
        _ => simulate(&cfg, inv, &mut report)?,
    }
    timings.insert("run".to_owned(), clock.elapsed().as_secs_f64());

    let mut manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_owned(),
        subcommand: inv.command.name().to_owned(),
        config_path: inv.config.clone(),
        config_hash: report.config_hash.clone(),
        output_dir: inv.out.clone(),
        threads: inv.threads,
        timings,
        files: Vec::new(),
    };
    let clock = Instant::now();
    emit_report(&report, &mut manifest, &inv.out)?;
    manifest.timings.insert("emit".to_owned(), clock.elapsed().as_secs_f64());
    // rewrite the manifest so it carries the emit timing too
    let path = inv.out.join("manifest.json");
    let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    bytes.push(b'\n');
    std::fs::write(&path, bytes).map_err(|e| EmitError { path, message: e.to_string() })?;
    Ok(Outcome { report, manifest })
}

/// Runs an invocation, printing a summary to stdout and errors to stderr,
/// and returns the process exit code.
pub fn run(inv: &Invocation) -> i32 {
    match execute(inv) {
        Ok(outcome) => {
            for c in &outcome.report.checks {
                println!("[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            for e in &outcome.report.exponents {
                println!(
                    "[{}] exponent {} over [{}, {}]: slope {:.4} (expected {} ± {})",
                    if e.passed() { "PASS" } else { "FAIL" },
                    e.quantity,
                    e.t_min,
                    e.t_max,
                    e.slope,
                    e.expected,
                    e.tolerance
                );
            }
            for n in &outcome.report.notes {
                println!("note: {n}");
            }
            println!("wrote {}", inv.out.display());
            outcome.exit_code()
        }
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

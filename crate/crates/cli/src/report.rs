//! Output files of a run.
//!
//! | file            | content                                              |
//! |-----------------|------------------------------------------------------|
//! | report.json     | [`RunReport`]; deterministic, no timings             |
//! | moments.csv     | one row per (epsilon, t), header [`MOMENTS_HEADER`]  |
//! | covariances.csv | one row per (epsilon, pair), header [`COVARIANCES_HEADER`] |
//! | exponents.csv   | one row per log-log fit, header [`EXPONENTS_HEADER`] |
//! | manifest.json   | [`RunManifest`]: paths, hash, version, timings       |
//! | oracles.csv     | `oracles` only: the oracle table                     |

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use coxq::analytics::{write_oracle_csv, OracleRow};
use coxq::experiments::{
    CheckRecord, EnvProbeReport, ExponentRecord, GaussianityRecord, MomentReport, PairStats, RegionStats, TimeStats,
};
use serde::{Deserialize, Serialize};

use crate::config::FileConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub subcommand: String,
    pub config_hash: String,
    pub config: FileConfig,
    pub psi_bar: f64,
    pub sigma_psi_sq: f64,
    pub per_time: Vec<TimeStats>,
    pub per_pair: Vec<PairStats>,
    pub regions: Vec<RegionStats>,
    pub exponents: Vec<ExponentRecord>,
    pub checks: Vec<CheckRecord>,
    pub gaussianity: Vec<GaussianityRecord>,
    pub supported_convention: Option<String>,
    pub probe: Option<EnvProbeReport>,
    pub oracles: Vec<OracleRow>,
    pub notes: Vec<String>,
}

impl RunReport {
    pub fn new(subcommand: &str, config_hash: String, config: FileConfig, psi_bar: f64, sigma_psi_sq: f64) -> Self {
        RunReport {
            subcommand: subcommand.to_owned(),
            config_hash,
            config,
            psi_bar,
            sigma_psi_sq,
            per_time: Vec::new(),
            per_pair: Vec::new(),
            regions: Vec::new(),
            exponents: Vec::new(),
            checks: Vec::new(),
            gaussianity: Vec::new(),
            supported_convention: None,
            probe: None,
            oracles: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn absorb(&mut self, m: MomentReport) {
        self.psi_bar = m.psi_bar;
        self.sigma_psi_sq = m.sigma_psi_sq;
        self.per_time = m.per_time;
        self.per_pair = m.per_pair;
        self.regions = m.regions;
        self.exponents.extend(m.exponents);
        self.checks.extend(m.checks);
        self.gaussianity = m.gaussianity;
        self.supported_convention = m.supported_convention;
        self.notes.extend(m.notes);
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed) && self.exponents.iter().all(ExponentRecord::passed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub subcommand: String,
    pub config_path: PathBuf,
    pub config_hash: String,
    pub output_dir: PathBuf,
    pub threads: Option<usize>,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
    pub files: Vec<String>,
}

pub const MOMENTS_HEADER: [&str; 21] = [
    "epsilon",
    "t",
    "mean_count",
    "count_variance",
    "dispersion_index",
    "dispersion_se",
    "scaled_mean",
    "scaled_mean_se",
    "m_bar0",
    "lln_relative_error",
    "mean_m_eps0",
    "fluct_variance",
    "fluct_variance_se",
    "oracle_variance",
    "z",
    "skewness",
    "excess_kurtosis",
    "service_variance",
    "environment_variance",
    "ratio_with_sigma_psi",
    "ratio_without_sigma_psi",
];

pub const COVARIANCES_HEADER: [&str; 7] = ["epsilon", "t_i", "t_j", "covariance", "se", "oracle", "z"];

pub const EXPONENTS_HEADER: [&str; 9] =
    ["quantity", "t_min", "t_max", "slope", "intercept", "r_squared", "expected", "tolerance", "passed"];

#[derive(Serialize)]
struct MomentRow {
    epsilon: f64,
    t: f64,
    mean_count: f64,
    count_variance: f64,
    dispersion_index: f64,
    dispersion_se: f64,
    scaled_mean: f64,
    scaled_mean_se: f64,
    m_bar0: f64,
    lln_relative_error: f64,
    mean_m_eps0: f64,
    fluct_variance: Option<f64>,
    fluct_variance_se: Option<f64>,
    oracle_variance: Option<f64>,
    z: Option<f64>,
    skewness: Option<f64>,
    excess_kurtosis: Option<f64>,
    service_variance: Option<f64>,
    environment_variance: Option<f64>,
    ratio_with_sigma_psi: Option<f64>,
    ratio_without_sigma_psi: Option<f64>,
}

impl From<&TimeStats> for MomentRow {
    fn from(s: &TimeStats) -> Self {
        let f = s.fluctuation.as_ref();
        let sc = s.supercritical.as_ref();
        MomentRow {
            epsilon: s.epsilon,
            t: s.t,
            mean_count: s.mean_count,
            count_variance: s.count_variance,
            dispersion_index: s.dispersion_index,
            dispersion_se: s.dispersion_se,
            scaled_mean: s.scaled_mean,
            scaled_mean_se: s.scaled_mean_se,
            m_bar0: s.m_bar0,
            lln_relative_error: s.lln_relative_error,
            mean_m_eps0: s.mean_m_eps0,
            fluct_variance: f.map(|f| f.variance),
            fluct_variance_se: f.map(|f| f.variance_se),
            oracle_variance: f.map(|f| f.oracle_variance),
            z: f.map(|f| f.z),
            skewness: f.map(|f| f.skewness),
            excess_kurtosis: f.map(|f| f.excess_kurtosis),
            service_variance: f.map(|f| f.service_variance),
            environment_variance: f.map(|f| f.environment_variance),
            ratio_with_sigma_psi: sc.map(|s| s.ratio_with_sigma_psi),
            ratio_without_sigma_psi: sc.map(|s| s.ratio_without_sigma_psi),
        }
    }
}

#[derive(Serialize)]
struct ExponentRow<'a> {
    quantity: &'a str,
    t_min: f64,
    t_max: f64,
    slope: f64,
    intercept: f64,
    r_squared: f64,
    expected: f64,
    tolerance: f64,
    passed: bool,
}

#[derive(Debug)]
pub struct EmitError {
    pub path: PathBuf,
    pub message: String,
}

impl std::fmt::Display for EmitError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path.display(), self.message)
    }
}

impl std::error::Error for EmitError {}

fn io_err(path: &Path, e: impl std::fmt::Display) -> EmitError {
    EmitError { path: path.to_owned(), message: e.to_string() }
}

fn write_csv<R: Serialize>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = R>) -> Result<(), EmitError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(BufWriter::new(file));
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), EmitError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| io_err(path, e))?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

/// Writes every output file into `dir` (created if needed) and returns the
/// file names written. The manifest's `files` list is filled in here.
pub fn emit_report(report: &RunReport, manifest: &mut RunManifest, dir: &Path) -> Result<Vec<String>, EmitError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut files = vec!["report.json".to_owned(), "moments.csv".to_owned(), "covariances.csv".to_owned(), "exponents.csv".to_owned()];
    write_json(&dir.join("report.json"), report)?;
    write_csv(&dir.join("moments.csv"), &MOMENTS_HEADER, report.per_time.iter().map(MomentRow::from))?;
    write_csv(
        &dir.join("covariances.csv"),
        &COVARIANCES_HEADER,
        report.per_pair.iter().map(|p| (p.epsilon, p.t_i, p.t_j, p.covariance, p.se, p.oracle, p.z)),
    )?;
    write_csv(
        &dir.join("exponents.csv"),
        &EXPONENTS_HEADER,
        report.exponents.iter().map(|e| ExponentRow {
            quantity: &e.quantity,
            t_min: e.t_min,
            t_max: e.t_max,
            slope: e.slope,
            intercept: e.intercept,
            r_squared: e.r_squared,
            expected: e.expected,
            tolerance: e.tolerance,
            passed: e.passed(),
        }),
    )?;
    if report.subcommand == "oracles" {
        let path = dir.join("oracles.csv");
        let file = File::create(&path).map_err(|e| io_err(&path, e))?;
        let mut w = BufWriter::new(file);
        write_oracle_csv(&report.oracles, &mut w).and_then(|_| w.flush()).map_err(|e| io_err(&path, e))?;
        files.push("oracles.csv".to_owned());
    }
    files.push("manifest.json".to_owned());
    manifest.files = files.clone();
    write_json(&dir.join("manifest.json"), manifest)?;
    Ok(files)
}

pub fn read_report(path: &Path) -> Result<RunReport, EmitError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| io_err(path, e))
}

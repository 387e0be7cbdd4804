//! Experiment configuration files.
//!
//! A configuration is a TOML document with the sections `[run]`,
//! `[environment]`, `[service]`, `[arrivals]`, `[grid]`, `[checks]`,
//! `[probe]` and `[oracles]`. Overrides of the form `section.key=value` are
//! applied to the document before it is decoded, so every diagnostic can
//! point at a line of the resolved text.

use std::fmt;
use std::path::{Path, PathBuf};

use coxq::arrivals::RateFunction;
use coxq::experiments::{CheckSettings, EnvironmentSpec, Regime};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml_edit::{DocumentMut, ImDocument, Item, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub run: RunSection,
    pub environment: EnvironmentSpec,
    pub service: Option<ServiceSection>,
    pub arrivals: Option<ArrivalsSection>,
    pub grid: Option<GridSection>,
    #[serde(default)]
    pub checks: CheckSettings,
    pub probe: Option<ProbeSection>,
    pub oracles: Option<OracleSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seed: Option<u64>,
    pub replications: Option<usize>,
    pub epsilons: Option<Vec<f64>>,
    #[serde(default = "default_true")]
    pub include_sigma_psi: bool,
    /// Only read by `lln`; the CLT subcommands fix the regime themselves.
    pub regime: Option<Regime>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection { seed: None, replications: None, epsilons: None, include_sigma_psi: true, regime: None }
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceSection {
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrivalsSection {
    pub beta: Option<f64>,
    pub lambda: RateFunction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub times: Vec<f64>,
    #[serde(default)]
    pub pairs: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSection {
    pub epsilon: f64,
    pub t: f64,
    pub replications: usize,
    #[serde(default = "default_rate_replications")]
    pub rate_replications: usize,
}

fn default_rate_replications() -> usize {
    400
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    /// Times for the oracle table; defaults to `grid.times`.
    pub times: Option<Vec<f64>>,
    /// `[lo, hi]` range for the log-log fit of `Lambda(t)`.
    pub lambda_fit: Option<[f64; 2]>,
    /// `[lo, hi]` range for the log-log fit of `sigma_bar^2(t)`.
    pub sigma_fit: Option<[f64; 2]>,
    #[serde(default = "default_fit_points")]
    pub fit_points: usize,
    #[serde(default = "default_slope_tolerance")]
    pub slope_tolerance: f64,
}

fn default_fit_points() -> usize {
    25
}

fn default_slope_tolerance() -> f64 {
    0.05
}

/// A configuration error, anchored to a line of the resolved document when
/// one can be identified.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: PathBuf,
    pub line: Option<usize>,
    pub message: String,
    pub source_line: Option<String>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "{}:{l}: {}", self.path.display(), self.message)?,
            None => write!(f, "{}: {}", self.path.display(), self.message)?,
        }
        if let Some(src) = &self.source_line {
            write!(f, "\n    | {src}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub path: PathBuf,
    /// Document text after overrides.
    pub text: String,
    pub config: FileConfig,
}

impl LoadedConfig {
    /// Error anchored at `section.key` (or the section header, or nothing).
    pub fn error_at(&self, key: &str, message: impl Into<String>) -> ConfigError {
        let line = locate(&self.text, key);
        ConfigError {
            path: self.path.clone(),
            line,
            message: message.into(),
            source_line: line.and_then(|l| self.text.lines().nth(l - 1)).map(str::to_owned),
        }
    }

    pub fn hash(&self) -> String {
        config_hash(&self.config)
    }
}

/// SHA-256 of the canonical JSON form of the decoded configuration. Object
/// keys are emitted in sorted order, so the hash does not depend on how the
/// file orders its keys or sections.
pub fn config_hash(config: &FileConfig) -> String {
    let value = serde_json::to_value(config).expect("configuration serializes");
    let canonical = serde_json::to_vec(&value).expect("json value serializes");
    format!("{:x}", Sha256::digest(&canonical))
}

pub fn load(path: &Path, overrides: &[String]) -> Result<LoadedConfig, ConfigError> {
    let raw = std::fs::read_to_string(path).map_err(|e| ConfigError {
        path: path.to_owned(),
        line: None,
        message: format!("cannot read configuration: {e}"),
        source_line: None,
    })?;
    parse(path, &raw, overrides)
}

pub fn parse(path: &Path, raw: &str, overrides: &[String]) -> Result<LoadedConfig, ConfigError> {
    let text = if overrides.is_empty() {
        raw.to_owned()
    } else {
        let mut doc: DocumentMut = raw.parse().map_err(|e: toml_edit::TomlError| toml_error(path, raw, &e))?;
        for o in overrides {
            apply_override(&mut doc, o).map_err(|message| ConfigError {
                path: path.to_owned(),
                line: None,
                message,
                source_line: None,
            })?;
        }
        doc.to_string()
    };
    let config: FileConfig = toml::from_str(&text).map_err(|e| {
        let line = e.span().map(|s| line_of(&text, s.start));
        ConfigError {
            path: path.to_owned(),
            line,
            message: e.message().trim().to_owned(),
            source_line: line.and_then(|l| text.lines().nth(l - 1)).map(str::to_owned),
        }
    })?;
    Ok(LoadedConfig { path: path.to_owned(), text, config })
}

fn toml_error(path: &Path, text: &str, e: &toml_edit::TomlError) -> ConfigError {
    let line = e.span().map(|s| line_of(text, s.start));
    ConfigError {
        path: path.to_owned(),
        line,
        message: e.message().trim().to_owned(),
        source_line: line.and_then(|l| text.lines().nth(l - 1)).map(str::to_owned),
    }
}

/// Applies `a.b.c=value`; the value is read as a TOML value when it parses
/// as one and as a bare string otherwise.
pub fn apply_override(doc: &mut DocumentMut, spec: &str) -> Result<(), String> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| format!("override `{spec}` is not of the form section.key=value"))?;
    let parts: Vec<&str> = key.trim().split('.').map(str::trim).collect();
    if parts.len() < 2 || parts.iter().any(|p| p.is_empty()) {
        return Err(format!("override key `{}` must look like section.key", key.trim()));
    }
    let value: Value = raw.trim().parse().unwrap_or_else(|_| Value::from(raw.trim()));
    let mut item: &mut Item = doc.as_item_mut();
    for part in &parts[..parts.len() - 1] {
        if item.get(part).is_none() {
            match item {
                Item::Table(t) => {
                    t.insert(part, Item::Table(toml_edit::Table::new()));
                }
                Item::Value(Value::InlineTable(t)) => {
                    t.insert(*part, Value::InlineTable(toml_edit::InlineTable::new()));
                }
                _ => return Err(format!("override `{key}`: `{part}` is not a table")),
            }
        }
        item = &mut item[part];
    }
    let last = parts[parts.len() - 1];
    match item {
        Item::Table(t) => {
            t.insert(last, Item::Value(value));
        }
        Item::Value(Value::InlineTable(t)) => {
            t.insert(last, value);
        }
        _ => return Err(format!("override `{key}`: parent is not a table")),
    }
    Ok(())
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of `section.key` (or of the innermost existing prefix) in `text`.
pub fn locate(text: &str, key: &str) -> Option<usize> {
    let doc = ImDocument::parse(text.to_owned()).ok()?;
    let mut item = doc.as_item();
    let mut best = None;
    for part in key.split('.') {
        let table = item.as_table_like()?;
        let (k, next) = table.get_key_value(part)?;
        let span = next.span().or_else(|| k.span());
        if let Some(s) = span {
            best = Some(line_of(text, s.start));
        } else if let Some(t) = next.as_table() {
            best = t.span().map(|s| line_of(text, s.start)).or(best);
        }
        item = next;
    }
    best
}

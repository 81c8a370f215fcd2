//! Scenario files: a TOML description of the network, the initial state and
//! the settings of each pipeline.
//!
//! ```toml
//! [model]
//! h = 1.0
//! labels = ["A", "B"]
//!
//! [[model.virus]]
//! name = "v1"
//! beta = [[0.1, 0.2], [0.2, 0.1]]
//! gamma = [0.2, 0.3]
//! c = [0.5, 0.5]
//!
//! [initial]
//! x = [[0.01, 0.0]]      # one row per virus
//! # r = [0.0, 0.0]
//!
//! [observer]             # optional
//! x_hat = [[0.0, 0.0]]
//! gains = [[0.1, 0.1]]   # optional; synthesized when absent
//! threshold = 0.01
//! sweep_base_gain = 1.0
//! eta_sweep = { start = 0.0, step = 0.5, stop = 4.0 }
//!
//! [synthesis]            # optional
//! tau = [0.1]
//! lipschitz = [0.3]
//! structure = "diagonal" # or "full"
//!
//! [control]              # optional
//! mode = "true-state"    # or "estimated-state"
//! horizon = 200
//!
//! [run]
//! horizon = 500
//! out = "out"
//! pipelines = ["simulate", "analyze", "observe", "synthesize", "control"]
//! ```
//!
//! Unknown keys are rejected. Loading also checks the model assumptions and
//! reports the first failing field.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{EstimatorError, ObserverGain, ObserverState, DEFAULT_THRESHOLD};
use crate::model::{validate, Assumption, EpidemicState, ModelError, NetworkModel, ValidationReport, Violation};
use crate::numerics::DenseMatrix;
use crate::synthesis::{GainStructure, DEFAULT_MARGIN, DEFAULT_MAX_ITERATIONS};

const EUROPE: &str = include_str!("../scenarios/europe.toml");
const SCALAR_TOY: &str = include_str!("../scenarios/scalar_toy.toml");

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: cannot read: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: parse error: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: field `{field}`: {message}")]
    Invalid {
        path: PathBuf,
        field: String,
        message: String,
    },
    #[error("{path}: field `{field}`: {violation}\n{report}")]
    Assumption {
        path: PathBuf,
        field: String,
        violation: String,
        report: ValidationReport,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VirusConfig {
    pub name: String,
    pub beta: Vec<Vec<f64>>,
    pub gamma: Vec<f64>,
    pub c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_h")]
    pub h: f64,
    pub labels: Vec<String>,
    pub virus: Vec<VirusConfig>,
}

fn default_h() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub x: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EtaRange {
    pub start: f64,
    pub step: f64,
    pub stop: f64,
}

impl EtaRange {
    /// `start, start + step, ...` up to `stop` inclusive (with a small
    /// tolerance so that decimal steps land on `stop`).
    pub fn values(&self) -> Vec<f64> {
        if !(self.step > 0.0) || self.stop < self.start {
            return vec![self.start];
        }
        let count = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        (0..=count).map(|i| self.start + i as f64 * self.step).collect()
    }
}

impl std::str::FromStr for EtaRange {
    type Err = String;

    /// `start:step:stop`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let [start, step, stop] = parts.as_slice() else {
            return Err(format!("expected start:step:stop, got `{s}`"));
        };
        let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
        let range = Self {
            start: parse(start)?,
            step: parse(step)?,
            stop: parse(stop)?,
        };
        if !(range.step > 0.0) || range.stop < range.start {
            return Err(format!("need step > 0 and stop >= start, got `{s}`"));
        }
        Ok(range)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverConfig {
    pub x_hat: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_hat: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gains: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_base_gain")]
    pub sweep_base_gain: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_sweep: Option<EtaRange>,
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

fn default_base_gain() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StructureConfig {
    #[default]
    Diagonal,
    Full,
}

impl From<StructureConfig> for GainStructure {
    fn from(s: StructureConfig) -> Self {
        match s {
            StructureConfig::Diagonal => GainStructure::Diagonal,
            StructureConfig::Full => GainStructure::Full,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisConfig {
    /// One value per virus.
    pub tau: Vec<f64>,
    /// One value per virus.
    pub lipschitz: Vec<f64>,
    #[serde(default)]
    pub structure: StructureConfig,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
}

fn default_margin() -> f64 {
    DEFAULT_MARGIN
}

fn default_max_iterations() -> usize {
    DEFAULT_MAX_ITERATIONS
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlModeConfig {
    #[default]
    TrueState,
    EstimatedState,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    #[serde(default)]
    pub mode: ControlModeConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enabled: Option<Vec<bool>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    Simulate,
    Analyze,
    Observe,
    Synthesize,
    Control,
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Pipeline::Simulate => "simulate",
            Pipeline::Analyze => "analyze",
            Pipeline::Observe => "observe",
            Pipeline::Synthesize => "synthesize",
            Pipeline::Control => "control",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default = "all_pipelines")]
    pub pipelines: Vec<Pipeline>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            horizon: default_horizon(),
            out: None,
            pipelines: all_pipelines(),
        }
    }
}

fn default_horizon() -> usize {
    500
}

fn all_pipelines() -> Vec<Pipeline> {
    vec![
        Pipeline::Simulate,
        Pipeline::Analyze,
        Pipeline::Observe,
        Pipeline::Synthesize,
        Pipeline::Control,
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub model: ModelConfig,
    pub initial: InitialConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observer: Option<ObserverConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthesis: Option<SynthesisConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control: Option<ControlConfig>,
    #[serde(default)]
    pub run: RunConfig,
}

/// A loaded, validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub model: NetworkModel,
    pub initial: EpidemicState,
    pub source: PathBuf,
}

impl Scenario {
    pub fn observer_initial(&self) -> Option<ObserverState> {
        self.config
            .observer
            .as_ref()
            .map(|o| ObserverState::new(o.x_hat.clone(), o.r_hat.clone()))
    }

    /// Gains given in the file, if any.
    pub fn observer_gain(&self) -> Option<Result<ObserverGain, EstimatorError>> {
        self.config
            .observer
            .as_ref()
            .and_then(|o| o.gains.clone())
            .map(ObserverGain::new)
    }

    pub fn virus_name(&self, k: usize) -> &str {
        &self.config.model.virus[k].name
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_scenario(&text, path)
}

/// Parses and validates scenario text; `path` is only used in diagnostics.
pub fn parse_scenario(text: &str, path: &Path) -> Result<Scenario, ConfigError> {
    let config: ScenarioConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    build(config, path)
}

/// The shipped two-variant Europe scenario.
pub fn europe() -> Scenario {
    parse_scenario(EUROPE, Path::new("europe.toml")).expect("shipped scenario is valid")
}

/// The shipped single-node, single-virus scenario.
pub fn scalar_toy() -> Scenario {
    parse_scenario(SCALAR_TOY, Path::new("scalar_toy.toml")).expect("shipped scenario is valid")
}

pub fn dump_scenario(config: &ScenarioConfig) -> String {
    toml::to_string_pretty(config).expect("scenario config is serializable")
}

fn build(config: ScenarioConfig, path: &Path) -> Result<Scenario, ConfigError> {
    let invalid = |field: String, message: String| ConfigError::Invalid {
        path: path.to_path_buf(),
        field,
        message,
    };
    let mc = &config.model;
    let n = mc.labels.len();
    let m = mc.virus.len();
    if n == 0 {
        return Err(invalid("model.labels".into(), "at least one node is required".into()));
    }
    if m == 0 {
        return Err(invalid("model.virus".into(), "at least one virus is required".into()));
    }
    if !(mc.h > 0.0 && mc.h.is_finite()) {
        return Err(invalid("model.h".into(), format!("must be positive, got {}", mc.h)));
    }
    let check_len = |field: String, len: usize, expected: usize| {
        if len == expected {
            Ok(())
        } else {
            Err(invalid(field, format!("expected {expected} entries, got {len}")))
        }
    };
    let mut beta = Vec::with_capacity(m);
    for (k, v) in mc.virus.iter().enumerate() {
        check_len(format!("model.virus[{k}].beta"), v.beta.len(), n)?;
        for (i, row) in v.beta.iter().enumerate() {
            check_len(format!("model.virus[{k}].beta[{i}]"), row.len(), n)?;
        }
        check_len(format!("model.virus[{k}].gamma"), v.gamma.len(), n)?;
        check_len(format!("model.virus[{k}].c"), v.c.len(), n)?;
        beta.push(
            DenseMatrix::from_rows(&v.beta)
                .map_err(|e| invalid(format!("model.virus[{k}].beta"), e.to_string()))?,
        );
    }
    check_len("initial.x".into(), config.initial.x.len(), m)?;
    for (k, row) in config.initial.x.iter().enumerate() {
        check_len(format!("initial.x[{k}]"), row.len(), n)?;
    }
    if let Some(r) = &config.initial.r {
        check_len("initial.r".into(), r.len(), n)?;
    }
    if let Some(o) = &config.observer {
        check_len("observer.x_hat".into(), o.x_hat.len(), m)?;
        for (k, row) in o.x_hat.iter().enumerate() {
            check_len(format!("observer.x_hat[{k}]"), row.len(), n)?;
        }
        if let Some(r) = &o.r_hat {
            check_len("observer.r_hat".into(), r.len(), n)?;
        }
        if let Some(g) = &o.gains {
            check_len("observer.gains".into(), g.len(), m)?;
            for (k, row) in g.iter().enumerate() {
                check_len(format!("observer.gains[{k}]"), row.len(), n)?;
                if row.iter().any(|v| !v.is_finite()) {
                    return Err(invalid(format!("observer.gains[{k}]"), "gains must be finite".into()));
                }
            }
        }
        if !(o.threshold > 0.0) {
            return Err(invalid("observer.threshold".into(), "must be positive".into()));
        }
        if let Some(range) = &o.eta_sweep {
            if !(range.step > 0.0) || range.stop < range.start {
                return Err(invalid(
                    "observer.eta_sweep".into(),
                    "need step > 0 and stop >= start".into(),
                ));
            }
        }
    }
    if let Some(s) = &config.synthesis {
        check_len("synthesis.tau".into(), s.tau.len(), m)?;
        check_len("synthesis.lipschitz".into(), s.lipschitz.len(), m)?;
        if let Some(k) = s.tau.iter().position(|t| !(*t > 0.0 && *t <= 1.0)) {
            return Err(invalid(format!("synthesis.tau[{k}]"), "must lie in (0, 1]".into()));
        }
        if let Some(k) = s.lipschitz.iter().position(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(invalid(format!("synthesis.lipschitz[{k}]"), "must be finite and >= 0".into()));
        }
        if !(s.margin > 0.0) {
            return Err(invalid("synthesis.margin".into(), "must be positive".into()));
        }
    }
    if let Some(c) = &config.control {
        if let Some(e) = &c.enabled {
            check_len("control.enabled".into(), e.len(), m)?;
        }
        if c.mode == ControlModeConfig::EstimatedState && config.observer.is_none() {
            return Err(invalid(
                "control.mode".into(),
                "estimated-state control needs an [observer] section".into(),
            ));
        }
    }

    let gamma = mc.virus.iter().map(|v| v.gamma.clone()).collect();
    let c = mc.virus.iter().map(|v| v.c.clone()).collect();
    let model = NetworkModel::new(beta, gamma, c, mc.h, mc.labels.clone()).map_err(|e| model_error(path, e))?;
    let initial = EpidemicState::from_infections(config.initial.x.clone(), config.initial.r.clone());
    let report = validate(&model, &initial).map_err(|e| model_error(path, e))?;
    if let Some(first) = report.violations.first() {
        return Err(ConfigError::Assumption {
            path: path.to_path_buf(),
            field: violation_field(first),
            violation: first.to_string(),
            report,
        });
    }
    Ok(Scenario {
        config,
        model,
        initial,
        source: path.to_path_buf(),
    })
}

fn model_error(path: &Path, e: ModelError) -> ConfigError {
    ConfigError::Invalid {
        path: path.to_path_buf(),
        field: "model".into(),
        message: e.to_string(),
    }
}

fn violation_field(v: &Violation) -> String {
    let i = v.node;
    match (v.assumption, v.virus) {
        (Assumption::InitialSimplex, Some(k)) => format!("initial.x[{k}][{i}]"),
        (Assumption::InitialSimplex, None) => format!("initial (node {i})"),
        (Assumption::RateSigns, Some(k)) if v.detail.starts_with("beta") => format!("model.virus[{k}].beta[{i}]"),
        (Assumption::RateSigns, Some(k)) => format!("model.virus[{k}].gamma[{i}]"),
        (Assumption::SamplingStep, _) if v.detail.contains("infection") => format!("model.virus[*].beta[{i}]"),
        (Assumption::SamplingStep, _) => format!("model.virus[*].gamma[{i}]"),
        (Assumption::MeasurementCoefficients, Some(k)) => format!("model.virus[{k}].c[{i}]"),
        (_, _) => format!("node {i}"),
    }
}

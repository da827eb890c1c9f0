//! Experiment configuration: a JSON file, flag overrides, then validation.

use std::path::{Path, PathBuf};

use nhgrem::field::{SizeParams, DEFAULT_WINDOW_FLOOR};
use nhgrem::model::{ModelDraft, ModelError};
use nhgrem::{builtin_model, validate_model, ModelSpec};
use serde::{Deserialize, Serialize};

pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_REPLICAS: usize = 100;
pub const DEFAULT_EPS: f64 = 0.1;
pub const DEFAULT_TRIPLES: usize = 10_000;
pub const DEFAULT_CONSTANT_SAMPLES: usize = 100_000;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("PARSE_ERROR: {field}: {message}")]
    Parse { field: String, message: String },
    #[error("PARSE_ERROR: {path} line {line}, column {column}: {message}")]
    ParseAt { path: String, line: usize, column: usize, message: String },
    #[error("INVALID_N: {0}")]
    InvalidN(String),
    #[error("{0}")]
    Model(String),
}

impl ConfigError {
    fn field(field: &str, message: impl Into<String>) -> Self {
        ConfigError::Parse { field: field.to_string(), message: message.into() }
    }
}

/// Everything a run can be configured with; every field optional so flags
/// and file layer cleanly.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub model: Option<String>,
    pub beta: Option<f64>,
    #[serde(rename = "N")]
    pub n_list: Option<Vec<u32>>,
    pub seed: Option<u64>,
    pub replicas: Option<usize>,
    pub tol: Option<f64>,
    pub eps1: Option<f64>,
    pub eps2: Option<f64>,
    pub coverage: Option<f64>,
    pub out: Option<PathBuf>,
    pub oracle: Option<bool>,
    pub window_floor: Option<f64>,
    pub points_per_branch: Option<f64>,
    pub triples: Option<usize>,
}

impl RawConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::field("config", format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| ConfigError::ParseAt {
            path: path.display().to_string(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    /// Fields set in `over` win.
    pub fn overlay(self, over: RawConfig) -> RawConfig {
        RawConfig {
            model: over.model.or(self.model),
            beta: over.beta.or(self.beta),
            n_list: over.n_list.or(self.n_list),
            seed: over.seed.or(self.seed),
            replicas: over.replicas.or(self.replicas),
            tol: over.tol.or(self.tol),
            eps1: over.eps1.or(self.eps1),
            eps2: over.eps2.or(self.eps2),
            coverage: over.coverage.or(self.coverage),
            out: over.out.or(self.out),
            oracle: over.oracle.or(self.oracle),
            window_floor: over.window_floor.or(self.window_floor),
            points_per_branch: over.points_per_branch.or(self.points_per_branch),
            triples: over.triples.or(self.triples),
        }
    }
}

/// Fully resolved configuration, echoed into every artifact.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub command: String,
    pub model: String,
    pub model_name: String,
    pub beta: Option<f64>,
    #[serde(rename = "N")]
    pub n_list: Vec<u32>,
    pub seed: u64,
    pub replicas: usize,
    pub tol: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub coverage: f64,
    pub out: PathBuf,
    pub oracle: bool,
    pub window_floor: f64,
    pub points_per_branch: f64,
    pub triples: usize,
    pub resolved_model: ModelDraft,
    #[serde(skip)]
    pub spec: ModelSpec,
}

/// Parses `16,20` into `[16, 20]`.
pub fn parse_n_list(text: &str) -> Result<Vec<u32>, ConfigError> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<u32>().map_err(|e| ConfigError::field("N", format!("{s:?}: {e}"))))
        .collect()
}

fn model_error(source: &str, e: ModelError) -> ConfigError {
    match e {
        ModelError::Parse(p) => ConfigError::ParseAt {
            path: source.to_string(),
            line: p.line(),
            column: p.column(),
            message: p.to_string(),
        },
        other => ConfigError::Model(format!("{source}: {other}")),
    }
}

/// `builtin:NAME` or a path to a model JSON file; returns the spec and a
/// short name for artifact file names.
pub fn resolve_model(source: &str) -> Result<(ModelSpec, String), ConfigError> {
    if let Some(name) = source.strip_prefix("builtin:") {
        let b = builtin_model(name).map_err(|e| ConfigError::field("model", e.to_string()))?;
        return Ok((b.spec, b.name.to_string()));
    }
    let path = Path::new(source);
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::field("model", format!("{source}: {e}")))?;
    let draft = ModelDraft::from_json(&text).map_err(|e| model_error(source, e))?;
    let spec = validate_model(&draft).map_err(|e| model_error(source, e))?;
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into());
    Ok((spec, name))
}

fn positive(field: &str, v: f64) -> Result<f64, ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(ConfigError::field(field, format!("must be a positive number, got {v}")))
    }
}

/// Fills defaults and validates; the N list is checked against `γ_i N`
/// integrality before any work starts.
pub fn load_config(command: &str, raw: RawConfig) -> Result<ExperimentConfig, ConfigError> {
    let needs_model = command != "models";
    let source = match raw.model {
        Some(m) => m,
        None if needs_model => {
            return Err(ConfigError::field("model", "missing (use --model builtin:NAME or a file path)"))
        }
        None => "builtin:REM".to_string(),
    };
    let (spec, model_name) = resolve_model(&source)?;
    let n_list = raw.n_list.unwrap_or_default();
    let mut bad = Vec::new();
    for &n in &n_list {
        match SizeParams::new(&spec, n) {
            Ok(_) => {}
            Err(nhgrem::field::FieldError::InvalidN { n_spins, offending }) => {
                let list: Vec<String> = offending.iter().map(|(i, v)| format!("gamma_{i}*{n_spins} = {v}")).collect();
                bad.push(format!("N = {n_spins}: {}", list.join(", ")));
            }
            Err(e) => bad.push(format!("N = {n}: {e}")),
        }
    }
    if !bad.is_empty() {
        return Err(ConfigError::InvalidN(bad.join("; ")));
    }
    if let Some(b) = raw.beta {
        if !(b.is_finite() && b >= 0.0) {
            return Err(ConfigError::field("beta", format!("must be finite and nonnegative, got {b}")));
        }
    }
    let coverage = raw.coverage.unwrap_or(nhgrem::gibbs::DEFAULT_COVERAGE);
    if !(coverage > 0.0 && coverage <= 1.0) {
        return Err(ConfigError::field("coverage", format!("must lie in (0, 1], got {coverage}")));
    }
    let replicas = raw.replicas.unwrap_or(DEFAULT_REPLICAS);
    if replicas == 0 {
        return Err(ConfigError::field("replicas", "must be at least 1"));
    }
    let window_floor = raw.window_floor.unwrap_or(DEFAULT_WINDOW_FLOOR);
    if !window_floor.is_finite() {
        return Err(ConfigError::field("window_floor", "must be finite"));
    }
    Ok(ExperimentConfig {
        command: command.to_string(),
        model: source,
        model_name,
        beta: raw.beta,
        n_list,
        seed: raw.seed.unwrap_or(DEFAULT_SEED),
        replicas,
        tol: positive("tol", raw.tol.unwrap_or(nhgrem::chain::DEFAULT_TOL))?,
        eps1: positive("eps1", raw.eps1.unwrap_or(DEFAULT_EPS))?,
        eps2: positive("eps2", raw.eps2.unwrap_or(DEFAULT_EPS))?,
        coverage,
        out: raw.out.unwrap_or_else(|| PathBuf::from("out")),
        oracle: raw.oracle.unwrap_or(false),
        window_floor,
        points_per_branch: positive(
            "points_per_branch",
            raw.points_per_branch.unwrap_or(nhgrem::cascade::DEFAULT_POINTS_PER_BRANCH),
        )?,
        triples: raw.triples.unwrap_or(DEFAULT_TRIPLES),
        resolved_model: spec.to_draft(),
        spec,
    })
}

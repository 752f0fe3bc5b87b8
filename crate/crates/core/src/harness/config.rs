//! Experiment configuration files.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{FitConfig, GaussianMixture, GridSpec};
use crate::metrics::{AxisRange, DEFAULT_LOG_FLOOR, DEFAULT_MC_SAMPLES};
use crate::pipeline::PipelineConfig;
use crate::token::TokenFitConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    GmmRepro,
    BetaSweep,
    TokenSweep,
    DensityExport,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::GmmRepro => "gmm-repro",
            ExperimentKind::BetaSweep => "beta-sweep",
            ExperimentKind::TokenSweep => "token-sweep",
            ExperimentKind::DensityExport => "density-export",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Explicit mixture parameters for a custom ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<Vec<f64>>>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundTruthSpec {
    Grid(GridSpec),
    Mixture(MixtureSpec),
}

impl Default for GroundTruthSpec {
    fn default() -> Self {
        GroundTruthSpec::Grid(GridSpec::default())
    }
}

impl GroundTruthSpec {
    pub fn to_mixture(&self) -> Result<GaussianMixture> {
        match self {
            GroundTruthSpec::Grid(g) => g.to_mixture(),
            GroundTruthSpec::Mixture(m) => {
                GaussianMixture::from_parts(&m.means, &m.covariances, &m.weights)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub ground_truth: GroundTruthSpec,
    pub n_teacher_train: usize,
    pub k_teacher: usize,
    pub n_student_train: usize,
    pub k_student: usize,
    /// Weight exponent for `gmm-repro` and `density-export`.
    pub beta: f64,
    pub epsilon: f64,
    pub fit: FitConfig,
}

impl Default for PipelineSection {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self {
            ground_truth: GroundTruthSpec::default(),
            n_teacher_train: p.n_teacher_train,
            k_teacher: p.k_teacher,
            n_student_train: p.n_student_train,
            k_student: p.k_student,
            beta: p.beta,
            epsilon: p.epsilon,
            fit: p.fit,
        }
    }
}

impl PipelineSection {
    pub fn to_pipeline_config(&self) -> Result<PipelineConfig> {
        let ground_truth = self.ground_truth.to_mixture().map_err(|e| Error::Config {
            field: "pipeline.ground_truth".into(),
            message: e.to_string(),
        })?;
        let cfg = PipelineConfig {
            ground_truth,
            n_teacher_train: self.n_teacher_train,
            k_teacher: self.k_teacher,
            n_student_train: self.n_student_train,
            k_student: self.k_student,
            beta: self.beta,
            fit: self.fit.clone(),
            epsilon: self.epsilon,
        };
        cfg.validate().map_err(|e| Error::Config {
            field: "pipeline".into(),
            message: e.to_string(),
        })?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenSection {
    pub vocab_size: usize,
    /// Symmetric Dirichlet concentration of the ground-truth rows.
    pub concentration: f64,
    pub seq_len: usize,
    pub n_train: usize,
    /// Sequences drawn for each precision or recall estimate.
    pub n_eval: usize,
    pub fit: TokenFitConfig,
}

impl Default for TokenSection {
    fn default() -> Self {
        Self {
            vocab_size: 50,
            concentration: 0.5,
            seq_len: 32,
            n_train: 100_000,
            n_eval: 100_000,
            fit: TokenFitConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub n_samples: usize,
    pub log_floor: f64,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            n_samples: DEFAULT_MC_SAMPLES,
            log_floor: DEFAULT_LOG_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensitySection {
    /// `[lo, hi, steps]`
    pub x_range: AxisRange,
    pub y_range: AxisRange,
}

impl Default for DensitySection {
    fn default() -> Self {
        Self {
            x_range: (-7.0, 7.0, 141),
            y_range: (-3.0, 3.0, 61),
        }
    }
}

fn default_seeds() -> usize {
    5
}

fn default_beta_list() -> Vec<f64> {
    vec![1.0, 2.0, 5.0, 10.0, 100.0]
}

fn default_tau_list() -> Vec<f64> {
    vec![0.8, 0.875, 0.95, 1.0]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub master_seed: u64,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default = "default_beta_list")]
    pub beta_list: Vec<f64>,
    #[serde(default = "default_tau_list")]
    pub tau_list: Vec<f64>,
    #[serde(default)]
    pub pipeline: PipelineSection,
    #[serde(default)]
    pub token: TokenSection,
    #[serde(default)]
    pub metrics: MetricsSection,
    #[serde(default)]
    pub density: DensitySection,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn field_error(field: &str, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.to_string(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    /// A config of the given kind with every other field at its default.
    pub fn with_defaults(kind: ExperimentKind, master_seed: u64) -> Self {
        Self {
            kind,
            master_seed,
            seeds: default_seeds(),
            beta_list: default_beta_list(),
            tau_list: default_tau_list(),
            pipeline: PipelineSection::default(),
            token: TokenSection::default(),
            metrics: MetricsSection::default(),
            density: DensitySection::default(),
            output_dir: default_output_dir(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds < 1 {
            return Err(field_error("seeds", "must be ≥ 1"));
        }
        if self.beta_list.is_empty() {
            return Err(field_error("beta_list", "must not be empty"));
        }
        if let Some(b) = self.beta_list.iter().find(|b| !(**b >= 1.0)) {
            return Err(field_error(
                "beta_list",
                format!("every entry must be ≥ 1, got {b}"),
            ));
        }
        if self.tau_list.is_empty() {
            return Err(field_error("tau_list", "must not be empty"));
        }
        if let Some(t) = self.tau_list.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
            return Err(field_error(
                "tau_list",
                format!("every entry must lie in (0, 1], got {t}"),
            ));
        }
        if self.metrics.n_samples < 2 {
            return Err(field_error("metrics.n_samples", "must be ≥ 2"));
        }
        if !self.metrics.log_floor.is_finite() {
            return Err(field_error("metrics.log_floor", "must be finite"));
        }
        for (name, (lo, hi, steps)) in [
            ("density.x_range", self.density.x_range),
            ("density.y_range", self.density.y_range),
        ] {
            if steps < 2 || !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
                return Err(field_error(name, "needs finite lo < hi and steps ≥ 2"));
            }
        }
        let t = &self.token;
        if t.vocab_size < 2 {
            return Err(field_error("token.vocab_size", "must be ≥ 2"));
        }
        if !(t.concentration > 0.0) || !t.concentration.is_finite() {
            return Err(field_error(
                "token.concentration",
                "must be positive and finite",
            ));
        }
        if t.seq_len < 2 {
            return Err(field_error("token.seq_len", "must be ≥ 2"));
        }
        if t.n_train < 1 {
            return Err(field_error("token.n_train", "must be ≥ 1"));
        }
        if t.n_eval < 2 {
            return Err(field_error("token.n_eval", "must be ≥ 2"));
        }
        if t.fit.rank > t.vocab_size {
            return Err(field_error(
                "token.fit.rank",
                "must not exceed token.vocab_size",
            ));
        }
        t.fit.validate().map_err(|e| match e {
            Error::Config { field, message } => field_error(&format!("token.fit.{field}"), message),
            other => other,
        })?;
        let pipeline = self.pipeline.to_pipeline_config()?;
        if self.kind == ExperimentKind::DensityExport && pipeline.ground_truth.dim() != 2 {
            return Err(field_error(
                "pipeline.ground_truth",
                "density-export needs a 2-D ground truth",
            ));
        }
        Ok(())
    }
}

/// Reads and validates a JSON experiment config.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    ExperimentConfig::from_json(&text)
}

fn flatten(prefix: &str, value: &serde_json::Value, out: &mut Vec<String>) {
    match value {
        serde_json::Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        other => out.push(format!("  {prefix} = {other}")),
    }
}

/// One `key = value` line per config field at its default.
pub fn defaults_help() -> String {
    let mut value =
        serde_json::to_value(ExperimentConfig::with_defaults(ExperimentKind::GmmRepro, 0))
            .expect("default config serializes");
    if let serde_json::Value::Object(map) = &mut value {
        map.remove("kind");
        map.remove("master_seed");
    }
    let mut lines = vec![
        "Config defaults (JSON; `kind` and `master_seed` are required, unknown keys are rejected):"
            .to_string(),
    ];
    flatten("", &value, &mut lines);
    lines.join("\n")
}

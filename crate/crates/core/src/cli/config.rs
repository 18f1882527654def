//! TOML run configuration.
//!
//! Every section rejects unknown keys. Seeds not given explicitly are
//! derived from the top-level `seed`, so one number fixes a whole run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::estimators::{SmoothingConfig, Variant};
use crate::evalbench::{EstimatorStudyConfig, EvalSettings, Experiment, OracleSettings, TimingConfig, MIN_REPLICATES};
use crate::netcore::{Activation, NetworkSpec};
use crate::problems::{ProblemKind, ProblemSpec, ReferenceSettings, SquaredGradient};
use crate::rng::{self, domain};
use crate::trainer::{AdversarialConfig, AscentGradient, LrSchedule, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; all cores when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    pub problem: ProblemSection,
    pub model: ModelSection,
    pub smoothing: SmoothingSection,
    pub training: TrainingSection,
    pub batch: BatchSection,
    pub weights: WeightsSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adversarial: Option<AdversarialSection>,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub ablate: AblateSection,
    #[serde(default)]
    pub bench: BenchSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub kind: ProblemKind,
    /// Spatial dimension; fixed at 2 for `poisson2d`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    /// Final time `T` (hjb).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    /// Gradient-term coefficient `μ` (hjb).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default)]
    pub squared_gradient: SquaredGradient,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Affine layers.
    pub layers: usize,
    pub hidden_dim: usize,
    /// Hidden activation; only `tanh` is supported.
    pub activation: Activation,
    #[serde(default = "identity")]
    pub output_activation: Activation,
}

fn identity() -> Activation {
    Activation::Identity
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothingSection {
    pub sigma: f64,
    pub samples: usize,
    #[serde(default = "cv_antithetic")]
    pub variant: Variant,
}

fn cv_antithetic() -> Variant {
    Variant::CvAntithetic
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Linear,
    Constant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub iterations: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default = "beta1")]
    pub adam_beta1: f64,
    #[serde(default = "beta2")]
    pub adam_beta2: f64,
    #[serde(default = "epsilon")]
    pub adam_epsilon: f64,
    #[serde(default = "checkpoint_every")]
    pub checkpoint_every: usize,
    /// Stop cleanly after this much wall-clock time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_budget_seconds: Option<f64>,
    #[serde(default = "log_every")]
    pub log_every: usize,
}

fn beta1() -> f64 {
    0.9
}
fn beta2() -> f64 {
    0.999
}
fn epsilon() -> f64 {
    1e-8
}
fn checkpoint_every() -> usize {
    100
}
fn log_every() -> usize {
    50
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchSection {
    /// Interior points.
    pub n1: usize,
    /// Boundary points (Poisson, HJB) or initial-condition points (Heat).
    pub n2: usize,
    /// Spatial boundary points (Heat).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n3: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsSection {
    /// Boundary weight (Poisson, HJB).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Initial-condition weight (Heat).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda2: Option<f64>,
    /// Spatial boundary weight (Heat).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda3: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AscentMethod {
    #[default]
    FiniteDifference,
    Backprop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarialSection {
    pub inner_iterations: usize,
    pub step_size: f64,
    #[serde(default)]
    pub gradient: AscentMethod,
    #[serde(default = "fd_step")]
    pub fd_step: f64,
}

fn fd_step() -> f64 {
    1e-3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub points: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Antithetic samples per point for the smoothed prediction.
    pub samples: usize,
    pub smoothed: bool,
    /// Per-point standard error target of Monte Carlo references.
    pub reference_target_se: f64,
    pub reference_max_samples: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        let e = EvalSettings::default();
        EvalSection {
            points: e.points,
            seed: None,
            samples: e.samples,
            smoothed: e.smoothed,
            reference_target_se: e.reference.target_se,
            reference_max_samples: e.reference.max_samples,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateSection {
    pub sigma: Vec<f64>,
    pub samples: Vec<usize>,
    pub estimators: EstimatorSection,
}

impl Default for AblateSection {
    fn default() -> Self {
        AblateSection {
            sigma: vec![1.0, 1e-1, 1e-2, 1e-3],
            samples: vec![256, 512, 1024, 2048],
            estimators: EstimatorSection::default(),
        }
    }
}

/// Estimator-error study on a fixed random network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorSection {
    pub dim: usize,
    pub layers: usize,
    pub hidden_dim: usize,
    pub sigma: f64,
    pub grid: Vec<usize>,
    pub points: usize,
    pub oracle_max_samples: usize,
    pub oracle_target_variance: f64,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        let o = OracleSettings::default();
        EstimatorSection {
            dim: 100,
            layers: 4,
            hidden_dim: 64,
            sigma: 0.1,
            grid: (3..=15).map(|e| 1usize << e).collect(),
            points: 20,
            oracle_max_samples: o.max_samples,
            oracle_target_variance: o.target_variance,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub dims: Vec<usize>,
    pub width: usize,
    pub layers: usize,
    pub samples: usize,
    pub points: usize,
    pub replicates: usize,
    pub variant: Variant,
}

impl Default for BenchSection {
    fn default() -> Self {
        let t = TimingConfig::default();
        BenchSection {
            dims: t.dims,
            width: t.width,
            layers: t.layers,
            samples: t.samples,
            points: t.points,
            replicates: t.replicates,
            variant: t.variant,
        }
    }
}

/// Reads a TOML config, or the config embedded in a run manifest when the
/// file is JSON. Errors name the offending field, e.g. `smoothing.sigma`.
pub fn load(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg = parse_text(&text, path)?;
    cfg.validate()?;
    Ok(cfg)
}

fn parse_text(text: &str, path: &Path) -> Result<RunConfig> {
    let schema_err = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    if text.trim_start().starts_with('{') {
        let manifest: serde_json::Value = serde_json::from_str(text).map_err(|e| schema_err(e.to_string()))?;
        let embedded = manifest
            .get("config")
            .cloned()
            .ok_or_else(|| schema_err("manifest has no `config` field".to_string()))?;
        return serde_path_to_error::deserialize(embedded).map_err(|e| schema_err(describe(e.path(), e.inner())));
    }
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| schema_err(e.to_string()))?;
    serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| schema_err(describe(e.path(), e.inner())))
}

/// `smoothing.sigma: missing field` rather than `smoothing: missing field
/// `sigma``.
fn describe(path: &serde_path_to_error::Path, inner: &impl std::fmt::Display) -> String {
    let message = inner.to_string();
    let message = message.trim();
    let mut field = path.to_string();
    if field == "." {
        field.clear();
    }
    if let Some(name) = message.strip_prefix("missing field `").and_then(|m| m.split('`').next()) {
        if !field.is_empty() {
            field.push('.');
        }
        field.push_str(name);
        return format!("{field}: missing field");
    }
    if field.is_empty() {
        message.to_string()
    } else {
        format!("{field}: {message}")
    }
}

fn require<T: Copy>(value: Option<T>, field: &str, kind: ProblemKind) -> Result<T> {
    value.ok_or_else(|| Error::Config(format!("{field}: required for {}", kind.name())))
}

fn forbid<T>(value: &Option<T>, field: &str, kind: ProblemKind) -> Result<()> {
    ensure(value.is_none(), || format!("{field}: not used by {}", kind.name()))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg = parse_text(text, Path::new("<config>"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let e = self.experiment()?;
        e.problem.validate()?;
        e.network.validate()?;
        e.train.validate()?;
        e.eval.validate()?;
        if let Some(t) = self.threads {
            ensure(t >= 1, || "threads: must be at least 1".to_string())?;
        }
        if let Some(b) = self.training.time_budget_seconds {
            ensure(b.is_finite() && b >= 0.0, || {
                "training.time_budget_seconds: must be nonnegative".to_string()
            })?;
        }
        self.timing()?.validate().map_err(|err| match err {
            Error::Config(m) if self.bench.replicates < MIN_REPLICATES => Error::Config(format!("bench.replicates: {m}")),
            Error::Config(m) => Error::Config(format!("bench: {m}")),
            other => other,
        })?;
        self.estimator_study()?.validate()?;
        for &s in &self.ablate.sigma {
            ensure(s.is_finite() && s > 0.0, || format!("ablate.sigma: {s} is not positive"))?;
        }
        ensure(self.ablate.samples.iter().all(|&k| k >= 1), || {
            "ablate.samples: entries must be positive".to_string()
        })
    }

    pub fn problem(&self) -> Result<ProblemSpec> {
        let p = &self.problem;
        let kind = p.kind;
        let b = &self.batch;
        let w = &self.weights;
        let mut spec = match kind {
            ProblemKind::Poisson2d => {
                ensure(p.dim.is_none_or(|d| d == 2), || "problem.dim: poisson2d has dimension 2".to_string())?;
                forbid(&p.horizon, "problem.horizon", kind)?;
                forbid(&p.mu, "problem.mu", kind)?;
                forbid(&b.n3, "batch.n3", kind)?;
                forbid(&w.lambda2, "weights.lambda2", kind)?;
                forbid(&w.lambda3, "weights.lambda3", kind)?;
                ProblemSpec::poisson2d(b.n1, b.n2, require(w.lambda, "weights.lambda", kind)?)
            }
            ProblemKind::Heat => {
                ensure(p.horizon.is_none_or(|t| t == 1.0), || "problem.horizon: heat uses T = 1".to_string())?;
                forbid(&p.mu, "problem.mu", kind)?;
                forbid(&w.lambda, "weights.lambda", kind)?;
                ProblemSpec::heat(
                    require(p.dim, "problem.dim", kind)?,
                    b.n1,
                    b.n2,
                    require(b.n3, "batch.n3", kind)?,
                    require(w.lambda2, "weights.lambda2", kind)?,
                    require(w.lambda3, "weights.lambda3", kind)?,
                )
            }
            ProblemKind::Hjb => {
                forbid(&b.n3, "batch.n3", kind)?;
                forbid(&w.lambda2, "weights.lambda2", kind)?;
                forbid(&w.lambda3, "weights.lambda3", kind)?;
                ProblemSpec::hjb(
                    require(p.dim, "problem.dim", kind)?,
                    p.horizon.unwrap_or(1.0),
                    p.mu.unwrap_or(1.0),
                    b.n1,
                    b.n2,
                    require(w.lambda, "weights.lambda", kind)?,
                )
            }
        };
        spec.squared_gradient = p.squared_gradient;
        Ok(spec)
    }

    pub fn network(&self, problem: &ProblemSpec) -> NetworkSpec {
        let m = &self.model;
        NetworkSpec {
            hidden_activation: m.activation,
            ..NetworkSpec::mlp(problem.input_dim(), m.hidden_dim, m.layers, m.output_activation)
        }
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let s = &self.smoothing;
        let smoothing = SmoothingConfig {
            sigma: s.sigma,
            samples: s.samples,
            variant: s.variant,
            seed: rng::derive(self.seed, &[domain::NOISE]),
        };
        let t = &self.training;
        let mut cfg = TrainConfig::new(t.iterations, t.learning_rate, smoothing, self.seed);
        cfg.lr_schedule = match t.schedule {
            Schedule::Linear => LrSchedule::LinearToZero,
            Schedule::Constant => LrSchedule::Constant,
        };
        cfg.adam_beta1 = t.adam_beta1;
        cfg.adam_beta2 = t.adam_beta2;
        cfg.adam_epsilon = t.adam_epsilon;
        cfg.checkpoint_every = t.checkpoint_every;
        cfg.adversarial = self.adversarial.as_ref().map(|a| AdversarialConfig {
            inner_iterations: a.inner_iterations,
            step_size: a.step_size,
            gradient: match a.gradient {
                AscentMethod::FiniteDifference => AscentGradient::FiniteDifference { step: a.fd_step },
                AscentMethod::Backprop => AscentGradient::Backprop,
            },
        });
        Ok(cfg)
    }

    pub fn eval(&self) -> EvalSettings {
        let e = &self.eval;
        EvalSettings {
            points: e.points,
            seed: e.seed.unwrap_or_else(|| rng::derive(self.seed, &[domain::EVAL])),
            samples: e.samples,
            smoothed: e.smoothed,
            reference: ReferenceSettings {
                target_se: e.reference_target_se,
                max_samples: e.reference_max_samples,
                ..ReferenceSettings::default()
            },
        }
    }

    pub fn experiment(&self) -> Result<Experiment> {
        let problem = self.problem()?;
        Ok(Experiment {
            network: self.network(&problem),
            train: self.train()?,
            eval: self.eval(),
            problem,
        })
    }

    pub fn timing(&self) -> Result<TimingConfig> {
        let b = &self.bench;
        Ok(TimingConfig {
            dims: b.dims.clone(),
            width: b.width,
            layers: b.layers,
            samples: b.samples,
            points: b.points,
            replicates: b.replicates,
            variant: b.variant,
            seed: rng::derive(self.seed, &[domain::STUDY]),
        })
    }

    pub fn estimator_study(&self) -> Result<EstimatorStudyConfig> {
        let e = &self.ablate.estimators;
        Ok(EstimatorStudyConfig {
            sigma: e.sigma,
            grid: e.grid.clone(),
            variants: Variant::ALL.to_vec(),
            points: e.points,
            seed: rng::derive(self.seed, &[domain::STUDY]),
            oracle: OracleSettings {
                max_samples: e.oracle_max_samples,
                target_variance: e.oracle_target_variance,
                ..OracleSettings::default()
            },
        })
    }

    /// Base network of the estimator study.
    pub fn estimator_network(&self) -> NetworkSpec {
        let e = &self.ablate.estimators;
        NetworkSpec::mlp(e.dim, e.hidden_dim, e.layers, Activation::Identity)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }
}

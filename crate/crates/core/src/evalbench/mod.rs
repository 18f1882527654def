//! Accuracy metrics, estimator studies, ablation drivers and timing
//! benchmarks.

mod ablation;
mod study;
mod timing;

pub use ablation::{
    ablation, ablation_samples, ablation_sigma, run_experiment, AblationAxis, AblationRow, EvalSettings, Experiment,
};
pub use study::{
    estimator_error_study, fit_loglog_slope, lipschitz_study, network_oracle, study_points, variance_law_study,
    DerivativeKind, EstimatorStudyConfig, EstimatorStudyRow, LipschitzReport, Oracle, OracleSettings, StudyBase,
    VarianceRow,
};
pub use timing::{timing_benchmark, TimingConfig, TimingMethod, TimingRow, MIN_REPLICATES};

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::estimators::{smoothed_value, BaseFunction, NoiseBatch};
use crate::netcore::Network;
use crate::problems::{ProblemSpec, ReferenceKind, ReferenceSettings, Term};
use crate::rng::{self, domain};

pub const SCHEMA_VERSION: u32 = 1;

/// Relative errors of a model against the reference solution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    /// `Σ|u − u*| / Σ|u*|`.
    pub l1_relative: f64,
    /// `√(Σ(u − u*)² / Σu*²)`.
    pub l2_relative: f64,
    /// Delta-method standard errors from the reference's own Monte Carlo
    /// error; zero for closed-form references.
    pub l1_standard_error: f64,
    pub l2_standard_error: f64,
    /// Standard errors from the random choice of hold-out points, i.e. how
    /// much the metrics move under a different evaluation seed.
    #[serde(default)]
    pub l1_sampling_se: f64,
    #[serde(default)]
    pub l2_sampling_se: f64,
    pub num_eval_points: usize,
    pub reference_kind: ReferenceKind,
    /// False when some reference value missed its standard-error target.
    pub reference_converged: bool,
}

impl ErrorReport {
    /// `l1 ± 2 SE`, clipped at zero.
    pub fn l1_band(&self) -> (f64, f64) {
        let w = 2.0 * self.l1_standard_error;
        ((self.l1_relative - w).max(0.0), self.l1_relative + w)
    }

    pub fn l2_band(&self) -> (f64, f64) {
        let w = 2.0 * self.l2_standard_error;
        ((self.l2_relative - w).max(0.0), self.l2_relative + w)
    }
}

/// Hold-out points with reference values.
#[derive(Clone, Debug, PartialEq)]
pub struct HoldoutSet {
    pub points: Array2<f64>,
    pub reference: Vec<f64>,
    pub reference_se: Vec<f64>,
    pub kind: ReferenceKind,
    pub converged: bool,
}

impl HoldoutSet {
    /// `count` interior points from the substream `(seed, EVAL)`; Monte
    /// Carlo references use `(derive(seed, REFERENCE), REFERENCE, i)`.
    pub fn sample(problem: &ProblemSpec, seed: u64, count: usize, settings: &ReferenceSettings) -> Result<Self> {
        problem.validate()?;
        ensure(count >= 1, || "hold-out set needs at least one point".to_string())?;
        let mut r = rng::stream(seed, &[domain::EVAL]);
        let points = problem.sample_points(Term::Interior, count, &mut r);
        let settings = ReferenceSettings {
            seed: rng::derive(seed, &[domain::REFERENCE]),
            ..*settings
        };
        let refs = (0..count)
            .into_par_iter()
            .map(|i| problem.reference_value_with(points.row(i), &settings, i as u64))
            .collect::<Result<Vec<_>>>()?;
        Ok(HoldoutSet {
            reference: refs.iter().map(|r| r.value).collect(),
            reference_se: refs.iter().map(|r| r.standard_error).collect(),
            kind: problem.reference_kind(),
            converged: refs.iter().all(|r| r.converged),
            points,
        })
    }

    pub fn len(&self) -> usize {
        self.reference.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reference.is_empty()
    }

    pub fn evaluate<F: BaseFunction + ?Sized>(&self, model: &F) -> Result<ErrorReport> {
        let pred = model.eval_rows(self.points.view())?;
        self.errors_of(pred.as_slice().expect("contiguous"))
    }

    /// Errors of precomputed predictions, one per hold-out point.
    pub fn errors_of(&self, pred: &[f64]) -> Result<ErrorReport> {
        ensure(pred.len() == self.len(), || {
            format!("expected {} predictions, got {}", self.len(), pred.len())
        })?;
        if let Some(i) = pred.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("prediction {i} is not finite ({})", pred[i])));
        }
        let u = &self.reference;
        let abs_ref: f64 = u.iter().map(|v| v.abs()).sum();
        let sq_ref: f64 = u.iter().map(|v| v * v).sum();
        if abs_ref == 0.0 || sq_ref == 0.0 {
            return Err(Error::numeric("reference vanishes on the hold-out set; relative error is undefined"));
        }
        let err: Vec<f64> = pred.iter().zip(u).map(|(p, r)| p - r).collect();
        let l1 = err.iter().map(|e| e.abs()).sum::<f64>() / abs_ref;
        let l2 = (err.iter().map(|e| e * e).sum::<f64>() / sq_ref).sqrt();
        // Derivatives of both metrics with respect to each u*_i.
        let (mut v1, mut v2) = (0.0, 0.0);
        for ((e, r), s) in err.iter().zip(u).zip(&self.reference_se) {
            let d1 = (-e.signum() - l1 * r.signum()) / abs_ref;
            v1 += (d1 * s).powi(2);
            if l2 > 0.0 {
                let d2 = -(e + l2 * l2 * r) / (l2 * sq_ref);
                v2 += (d2 * s).powi(2);
            }
        }
        let abs_err: Vec<f64> = err.iter().map(|e| e.abs()).collect();
        let abs_u: Vec<f64> = u.iter().map(|v| v.abs()).collect();
        let sq_err: Vec<f64> = err.iter().map(|e| e * e).collect();
        let sq_u: Vec<f64> = u.iter().map(|v| v * v).collect();
        let r2_se = ratio_se(&sq_err, &sq_u, l2 * l2);
        Ok(ErrorReport {
            l1_relative: l1,
            l2_relative: l2,
            l1_standard_error: v1.sqrt(),
            l2_standard_error: v2.sqrt(),
            l1_sampling_se: ratio_se(&abs_err, &abs_u, l1),
            l2_sampling_se: if l2 > 0.0 { r2_se / (2.0 * l2) } else { 0.0 },
            num_eval_points: self.len(),
            reference_kind: self.kind,
            reference_converged: self.converged,
        })
    }
}

/// Linearized standard error of the ratio estimator `r = Σa / Σb` over
/// i.i.d. pairs `(aᵢ, bᵢ)`.
fn ratio_se(a: &[f64], b: &[f64], r: f64) -> f64 {
    let n = a.len() as f64;
    if a.len() < 2 {
        return 0.0;
    }
    let mean_b = b.iter().sum::<f64>() / n;
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - r * y).powi(2)).sum();
    (ss / (n - 1.0) / n).sqrt() / mean_b
}

/// Errors of `model` on a fresh hold-out sample.
pub fn relative_errors<F: BaseFunction + ?Sized>(
    model: &F,
    problem: &ProblemSpec,
    eval_seed: u64,
    num_points: usize,
) -> Result<ErrorReport> {
    HoldoutSet::sample(problem, eval_seed, num_points, &ReferenceSettings::default())?.evaluate(model)
}

/// Monte Carlo estimate of the smoothed model `u(x) = E f(x + δ)`.
///
/// Row `i` of a batch uses antithetic noise from `(seed, EVAL, i)`, so a
/// point's prediction depends on its position in the batch but not on the
/// other rows.
pub struct SmoothedModel<'a> {
    pub net: &'a Network,
    pub sigma: f64,
    pub samples: usize,
    pub seed: u64,
}

impl BaseFunction for SmoothedModel<'_> {
    fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    fn eval_rows(&self, points: ArrayView2<f64>) -> Result<Array1<f64>> {
        ensure(self.samples >= 2 && self.samples.is_multiple_of(2), || {
            format!("smoothed evaluation needs an even sample count, got {}", self.samples)
        })?;
        let d = self.net.input_dim();
        let vals = (0..points.nrows())
            .into_par_iter()
            .map(|i| {
                let mut r = rng::stream(self.seed, &[domain::EVAL, i as u64]);
                let noise = NoiseBatch::sample(&mut r, self.sigma, self.samples, d, true)?;
                smoothed_value(self.net, points.row(i), &noise)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Array1::from(vals))
    }
}

/// Ratio of the mean loss over the first `window` iterations to the mean
/// over the last `window`.
pub fn windowed_loss_drop(losses: &[f64], window: usize) -> Result<f64> {
    ensure(window >= 1 && losses.len() >= window, || {
        format!("need at least {window} losses, got {}", losses.len())
    })?;
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    Ok(mean(&losses[..window]) / mean(&losses[losses.len() - window..]))
}

/// RFC 4180 CSV with a header row.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let format_err = |e: csv::Error| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(format_err)?;
    for row in rows {
        w.serialize(row).map_err(format_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// JSON document `{"schema_version": 1, "kind": …, "rows": […]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StudySummary<T> {
    pub schema_version: u32,
    pub kind: String,
    pub rows: Vec<T>,
}

impl<T> StudySummary<T> {
    pub fn new(kind: &str, rows: Vec<T>) -> Self {
        StudySummary {
            schema_version: SCHEMA_VERSION,
            kind: kind.to_string(),
            rows,
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

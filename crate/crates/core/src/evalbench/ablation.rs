//! Train-and-evaluate drivers and hyperparameter sweeps.

use serde::{Deserialize, Serialize};

use super::{windowed_loss_drop, ErrorReport, HoldoutSet, SmoothedModel};
use crate::error::{ensure, Result};
use crate::netcore::{Network, NetworkSpec};
use crate::problems::{ProblemSpec, ReferenceSettings};
use crate::trainer::{train_with, RunControl, RunStatus, TrainConfig, TrainOutcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub points: usize,
    pub seed: u64,
    /// Antithetic samples per point for the smoothed prediction.
    pub samples: usize,
    /// Predict with the smoothed model `u`; with `false` the base network.
    pub smoothed: bool,
    pub reference: ReferenceSettings,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            points: 1000,
            seed: 0,
            samples: 1024,
            smoothed: true,
            reference: ReferenceSettings::default(),
        }
    }
}

impl EvalSettings {
    pub fn validate(&self) -> Result<()> {
        ensure(self.points >= 1, || "eval points must be at least 1".to_string())?;
        ensure(!self.smoothed || (self.samples >= 2 && self.samples.is_multiple_of(2)), || {
            format!("eval samples must be even and at least 2, got {}", self.samples)
        })
    }

    pub fn holdout(&self, problem: &ProblemSpec) -> Result<HoldoutSet> {
        self.validate()?;
        HoldoutSet::sample(problem, self.seed, self.points, &self.reference)
    }

    /// Errors of `net` trained with noise level `sigma`.
    pub fn evaluate(&self, net: &Network, sigma: f64, holdout: &HoldoutSet) -> Result<ErrorReport> {
        if self.smoothed {
            let model = SmoothedModel {
                net,
                sigma,
                samples: self.samples,
                seed: self.seed,
            };
            holdout.evaluate(&model)
        } else {
            holdout.evaluate(net)
        }
    }
}

/// Everything needed to train and score one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub problem: ProblemSpec,
    pub network: NetworkSpec,
    pub train: TrainConfig,
    pub eval: EvalSettings,
}

/// Train, then score the final parameters on `holdout` (sampled from
/// `exp.eval` when `None`). The errors are stored in the report.
pub fn run_experiment(exp: &Experiment, control: RunControl, holdout: Option<&HoldoutSet>) -> Result<TrainOutcome> {
    exp.eval.validate()?;
    let mut out = train_with(&exp.problem, &exp.network, &exp.train, control)?;
    let owned;
    let holdout = match holdout {
        Some(h) => h,
        None => {
            owned = exp.eval.holdout(&exp.problem)?;
            &owned
        }
    };
    let net = Network::new(exp.network.clone(), out.params.clone())?;
    out.report.final_errors = Some(exp.eval.evaluate(&net, exp.train.smoothing.sigma, holdout)?);
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    Sigma,
    Samples,
}

/// One run of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub axis: AblationAxis,
    pub value: f64,
    pub l1_relative: f64,
    pub l2_relative: f64,
    pub l1_standard_error: f64,
    /// Mean loss over the final window.
    pub final_loss: f64,
    /// First-window over last-window mean loss.
    pub loss_drop: f64,
    pub median_iteration_seconds: f64,
    pub train_seconds: f64,
    pub iterations: usize,
    pub status: String,
}

const LOSS_WINDOW: usize = 50;

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// One full training run per grid value, all scored on the same hold-out
/// set.
pub fn ablation(exp: &Experiment, axis: AblationAxis, grid: &[f64], control: &RunControl) -> Result<Vec<AblationRow>> {
    ensure(!grid.is_empty(), || "ablation grid is empty".to_string())?;
    ensure(control.resume.is_none(), || "ablations start from scratch".to_string())?;
    let holdout = exp.eval.holdout(&exp.problem)?;
    let mut rows = Vec::with_capacity(grid.len());
    for &value in grid {
        let mut run = exp.clone();
        match axis {
            AblationAxis::Sigma => run.train.smoothing.sigma = value,
            AblationAxis::Samples => {
                ensure(value >= 1.0 && value.fract() == 0.0, || {
                    format!("sample size must be a positive integer, got {value}")
                })?;
                run.train.smoothing.samples = value as usize;
            }
        }
        log::info!("ablation {axis:?} = {value}");
        let out = run_experiment(&run, control.clone(), Some(&holdout))?;
        let report = &out.report;
        let errors = report.final_errors.expect("set by run_experiment");
        let losses = report.total_losses();
        let window = LOSS_WINDOW.min(losses.len());
        let tail = &losses[losses.len() - window..];
        rows.push(AblationRow {
            axis,
            value,
            l1_relative: errors.l1_relative,
            l2_relative: errors.l2_relative,
            l1_standard_error: errors.l1_standard_error,
            final_loss: tail.iter().sum::<f64>() / window.max(1) as f64,
            loss_drop: windowed_loss_drop(&losses, window.max(1)).unwrap_or(f64::NAN),
            median_iteration_seconds: median(report.records.iter().map(|r| r.seconds).collect()),
            train_seconds: report.train_seconds,
            iterations: report.records.len(),
            status: match &report.status {
                RunStatus::Completed => "completed".to_string(),
                RunStatus::TimeBudgetExhausted { .. } => "time_budget".to_string(),
                RunStatus::Aborted { reason } => format!("aborted: {reason}"),
            },
        });
    }
    Ok(rows)
}

pub fn ablation_sigma(exp: &Experiment, sigmas: &[f64], control: &RunControl) -> Result<Vec<AblationRow>> {
    ablation(exp, AblationAxis::Sigma, sigmas, control)
}

pub fn ablation_samples(exp: &Experiment, samples: &[usize], control: &RunControl) -> Result<Vec<AblationRow>> {
    let grid: Vec<f64> = samples.iter().map(|&k| k as f64).collect();
    ablation(exp, AblationAxis::Samples, &grid, control)
}

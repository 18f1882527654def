//! Training loop: the smoothed physics-informed loss is assembled from
//! forward passes at perturbed points, its parameter gradient comes from one
//! reverse pass per point through the estimator adjoint, and Adam applies
//! the update.

mod adam;
mod adversarial;
mod checkpoint;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use adversarial::{adversarial_refine, AdversarialConfig, AdversarialStats, AscentGradient};
pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};

use std::ops::Range;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use ndarray::{s, Array1, Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::estimators::{
    estimate_from_values, evaluation_points, pullback, DerivativeEstimate, EstimateCotangent,
    EstimateOptions, NoiseBatch, SmoothingConfig, Variant,
};
use crate::evalbench::ErrorReport;
use crate::netcore::{ForwardTrace, Network, NetworkSpec, ParamGradient, ParamSet};
use crate::problems::{tag_point, BoundaryResiduals, CollocationBatch, LossBreakdown, ProblemSpec, Term};
use crate::rng::{self, domain};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Points per parallel work item. Fixed so that the summation order of the
/// parameter gradient does not depend on the number of threads.
const CHUNK_POINTS: usize = 8;
/// Work items whose partial gradients are alive at once.
const CHUNK_GROUP: usize = 16;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    LinearToZero,
    Constant,
}

impl LrSchedule {
    /// Learning rate for iteration `i` of `total`.
    pub fn rate(self, lr0: f64, i: usize, total: usize) -> f64 {
        match self {
            LrSchedule::LinearToZero => lr0 * (1.0 - i as f64 / total as f64),
            LrSchedule::Constant => lr0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub lr_schedule: LrSchedule,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub smoothing: SmoothingConfig,
    #[serde(default)]
    pub adversarial: Option<AdversarialConfig>,
    pub seed: u64,
    pub checkpoint_every: usize,
}

impl TrainConfig {
    /// Defaults for everything but the iteration count, rate and smoothing.
    pub fn new(iterations: usize, learning_rate: f64, smoothing: SmoothingConfig, seed: u64) -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            iterations,
            learning_rate,
            lr_schedule: LrSchedule::LinearToZero,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_epsilon: adam.epsilon,
            smoothing,
            adversarial: None,
            seed,
            checkpoint_every: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.iterations >= 1, || "iterations must be at least 1".to_string())?;
        ensure(self.learning_rate.is_finite() && self.learning_rate >= 0.0, || {
            format!("learning rate must be nonnegative, got {}", self.learning_rate)
        })?;
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            ensure(b > 0.0 && b < 1.0, || format!("{name} must lie in (0, 1), got {b}"))?;
        }
        ensure(self.adam_epsilon.is_finite() && self.adam_epsilon > 0.0, || {
            format!("adam_epsilon must be positive, got {}", self.adam_epsilon)
        })?;
        ensure(self.checkpoint_every >= 1, || "checkpoint_every must be at least 1".to_string())?;
        self.smoothing.validate()?;
        if let Some(adv) = &self.adversarial {
            adv.validate()?;
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
        }
    }

    /// Smoothing with the noise seed of iteration `it`.
    pub fn iteration_smoothing(&self, it: usize) -> SmoothingConfig {
        SmoothingConfig {
            seed: rng::derive(self.smoothing.seed, &[domain::NOISE, it as u64]),
            ..self.smoothing.clone()
        }
    }

    pub fn iteration_batch_seed(&self, it: usize) -> u64 {
        rng::derive(self.seed, &[domain::BATCH, it as u64])
    }
}

/// Forward pass at one collocation point.
pub(crate) struct PointEval {
    pub points: Array2<f64>,
    pub trace: ForwardTrace,
    pub estimate: DerivativeEstimate,
    pub residual: f64,
}

fn term_options(problem: &ProblemSpec, term: Term) -> EstimateOptions {
    if term == Term::Interior {
        problem.estimate_options()
    } else {
        EstimateOptions::default()
    }
}

pub(crate) fn eval_point(
    net: &Network,
    problem: &ProblemSpec,
    term: Term,
    p: ArrayView1<f64>,
    noise: &NoiseBatch,
    variant: Variant,
) -> Result<PointEval> {
    ensure(p.iter().all(|v| v.is_finite()), || format!("{term:?} point is not finite"))?;
    let points = evaluation_points(p, noise, variant);
    let trace = net.forward_trace(points.view());
    let out = trace.output();
    let (center, values) = if variant.uses_center() {
        (Some(out[0]), out.slice(s![1..]).to_vec())
    } else {
        (None, out.to_vec())
    };
    let estimate = estimate_from_values(noise, variant, center, &values, &term_options(problem, term))?;
    let residual = match term {
        Term::Interior => problem.interior_residual(p, &estimate),
        _ => estimate.value - problem.boundary_target(term, p),
    };
    Ok(PointEval {
        points,
        trace,
        estimate,
        residual,
    })
}

/// Cotangents of `upstream · r` for each row of `ev.points`.
pub(crate) fn row_cotangents(
    problem: &ProblemSpec,
    term: Term,
    ev: &PointEval,
    noise: &NoiseBatch,
    variant: Variant,
    upstream: f64,
) -> Result<Array1<f64>> {
    let cot = match term {
        Term::Interior => problem.interior_cotangent(&ev.estimate, upstream),
        _ => EstimateCotangent {
            value: upstream,
            ..EstimateCotangent::zeros(problem.input_dim())
        },
    };
    let opts = term_options(problem, term);
    Ok(pullback(noise, variant, opts.laplacian_coords.as_ref(), &cot)?.to_point_order(variant))
}

fn chunks(n: usize) -> Vec<Range<usize>> {
    (0..n).step_by(CHUNK_POINTS).map(|s| s..(s + CHUNK_POINTS).min(n)).collect()
}

pub(crate) fn check_dims(problem: &ProblemSpec, net: &Network) -> Result<()> {
    ensure(net.input_dim() == problem.input_dim(), || {
        format!(
            "network input width {} does not match problem input width {}",
            net.input_dim(),
            problem.input_dim()
        )
    })
}

/// Loss of `net` on `batch` and its exact gradient with respect to the
/// parameters, with the noise of `smoothing` held fixed.
pub fn loss_and_param_grad(
    problem: &ProblemSpec,
    net: &Network,
    batch: &CollocationBatch,
    smoothing: &SmoothingConfig,
) -> Result<(LossBreakdown, ParamGradient)> {
    check_dims(problem, net)?;
    smoothing.validate()?;
    let mut grad = ParamGradient::zeros(net.spec());
    let mut interior = Vec::new();
    let mut boundary = Vec::new();
    let mut initial = None;
    for term in problem.terms() {
        let pts = batch
            .points(term)
            .ok_or_else(|| Error::config(format!("batch has no {term:?} points")))?;
        ensure(pts.ncols() == problem.input_dim(), || {
            format!("{term:?} points have width {}, expected {}", pts.ncols(), problem.input_dim())
        })?;
        let n = pts.nrows();
        let scale = 2.0 * problem.weight(term) / n.max(1) as f64;
        let variant = problem.term_variant(term, smoothing);
        let mut residuals = Vec::with_capacity(n);
        for group in chunks(n).chunks(CHUNK_GROUP) {
            let parts: Vec<Result<(Vec<f64>, ParamGradient)>> = group
                .par_iter()
                .map(|range| {
                    let mut g = ParamGradient::zeros(net.spec());
                    let mut r = Vec::with_capacity(range.len());
                    for i in range.clone() {
                        let noise = problem.term_noise(smoothing, term, i)?;
                        let ev = eval_point(net, problem, term, pts.row(i), &noise, variant)
                            .map_err(|e| tag_point(e, term, i))?;
                        if !ev.residual.is_finite() {
                            return Err(Error::numeric(format!(
                                "{term:?} point {i}: residual is not finite ({})",
                                ev.residual
                            )));
                        }
                        let c = row_cotangents(problem, term, &ev, &noise, variant, scale * ev.residual)?;
                        net.backward(ev.points.view(), &ev.trace, c.view(), Some(&mut g), None);
                        r.push(ev.residual);
                    }
                    Ok((r, g))
                })
                .collect();
            for part in parts {
                let (r, g) = part?;
                residuals.extend(r);
                grad.add_assign(&g);
            }
        }
        match term {
            Term::Interior => interior = residuals,
            Term::Boundary => boundary = residuals,
            Term::Initial => initial = Some(residuals),
        }
    }
    let loss = problem.loss_from_residuals(&interior, &BoundaryResiduals { boundary, initial });
    let parts = [
        ("interior", Some(loss.interior)),
        ("boundary", Some(loss.boundary)),
        ("initial", loss.initial),
    ];
    if let Some((name, v)) = parts.iter().find(|(_, v)| v.is_some_and(|v| !v.is_finite())) {
        return Err(Error::numeric(format!("{name} loss is not finite ({v:?})")));
    }
    if !loss.total.is_finite() {
        return Err(Error::numeric(format!("total loss is not finite ({})", loss.total)));
    }
    if !grad.is_finite() {
        return Err(Error::numeric("parameter gradient is not finite"));
    }
    Ok((loss, grad))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub learning_rate: f64,
    pub loss: LossBreakdown,
    /// Wall-clock time of the iteration.
    pub seconds: f64,
    #[serde(default)]
    pub adversarial: Option<AdversarialStats>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    /// Stopped at the wall-clock budget.
    TimeBudgetExhausted { budget_seconds: f64 },
    /// Stopped by a numeric failure; parameters are the last good ones.
    Aborted { reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub problem: ProblemSpec,
    pub network: NetworkSpec,
    pub config: TrainConfig,
    pub seed: u64,
    pub status: RunStatus,
    pub records: Vec<IterationRecord>,
    pub train_seconds: f64,
    #[serde(default)]
    pub final_errors: Option<ErrorReport>,
}

impl RunReport {
    pub fn total_losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss.total).collect()
    }

    pub fn completed_iterations(&self) -> usize {
        self.records.len()
    }
}

/// Run-time settings that do not affect the numbers produced.
#[derive(Clone, Debug, Default)]
pub struct RunControl {
    /// Checkpoint destination, written every `checkpoint_every` iterations,
    /// at the end of the run and on abort.
    pub checkpoint_path: Option<PathBuf>,
    pub time_budget: Option<Duration>,
    /// Worker threads; the global pool when `None`.
    pub threads: Option<usize>,
    /// Log a progress line every this many iterations (0: never).
    pub log_every: usize,
    /// Continue from a checkpoint of the same configuration.
    pub resume: Option<Checkpoint>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ParamSet,
    pub adam: AdamState,
    pub report: RunReport,
    /// State after the last completed iteration.
    pub checkpoint: Checkpoint,
}

/// Train from a fresh initialization; numeric failures are errors.
pub fn train(problem: &ProblemSpec, net_spec: &NetworkSpec, config: &TrainConfig) -> Result<(ParamSet, RunReport)> {
    let out = train_with(problem, net_spec, config, RunControl::default())?;
    if let RunStatus::Aborted { reason } = &out.report.status {
        return Err(Error::numeric(reason.clone()));
    }
    Ok((out.params, out.report))
}

/// Train with checkpointing, budgets and resumption. Numeric failures end
/// the run with [`RunStatus::Aborted`] and the last good state.
pub fn train_with(
    problem: &ProblemSpec,
    net_spec: &NetworkSpec,
    config: &TrainConfig,
    control: RunControl,
) -> Result<TrainOutcome> {
    problem.validate()?;
    net_spec.validate()?;
    config.validate()?;
    ensure(net_spec.input_dim() == problem.input_dim(), || {
        format!(
            "network input width {} does not match problem input width {}",
            net_spec.input_dim(),
            problem.input_dim()
        )
    })?;
    ensure(net_spec.output_dim() == 1, || "the model must have a scalar output".to_string())?;
    match control.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::config(format!("cannot build a pool of {n} threads: {e}")))?;
            pool.install(|| run(problem, net_spec, config, &control))
        }
        None => run(problem, net_spec, config, &control),
    }
}

fn run(problem: &ProblemSpec, net_spec: &NetworkSpec, config: &TrainConfig, control: &RunControl) -> Result<TrainOutcome> {
    let (start, params, mut adam) = match &control.resume {
        Some(ck) => {
            ensure(&ck.network == net_spec, || "checkpoint network differs from the configuration".to_string())?;
            ensure(ck.seed == config.seed, || "checkpoint seed differs from the configuration".to_string())?;
            ensure(ck.iteration <= config.iterations, || "checkpoint is past the final iteration".to_string())?;
            (ck.iteration, ck.params.clone(), ck.adam.clone())
        }
        None => (0, ParamSet::init_uniform(net_spec, config.seed), AdamState::new(net_spec)),
    };
    let mut net = Network::new(net_spec.clone(), params)?;
    let adam_cfg = config.adam();
    let mut report = RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        problem: problem.clone(),
        network: net_spec.clone(),
        config: config.clone(),
        seed: config.seed,
        status: RunStatus::Completed,
        records: Vec::with_capacity(config.iterations - start),
        train_seconds: 0.0,
        final_errors: None,
    };
    let snapshot = |net: &Network, adam: &AdamState, done: usize| {
        Checkpoint::new(done, config.seed, net_spec.clone(), net.params().clone(), adam.clone())
    };
    let save = |ck: &Checkpoint| -> Result<()> {
        match &control.checkpoint_path {
            Some(path) => ck.save(path),
            None => Ok(()),
        }
    };
    let clock = Instant::now();
    for it in start..config.iterations {
        let t0 = Instant::now();
        let step = iteration(problem, &net, config, it);
        let (batch_stats, loss, grad) = match step {
            Ok(v) => v,
            Err(Error::Numeric(reason)) => {
                let reason = format!("iteration {it}: {reason}");
                log::error!("training aborted at {reason}");
                report.status = RunStatus::Aborted { reason };
                break;
            }
            Err(e) => return Err(e),
        };
        let lr = config.lr_schedule.rate(config.learning_rate, it, config.iterations);
        let delta = adam_step(&mut adam, &grad, lr, &adam_cfg);
        net.params_mut().apply(&delta, 1.0);
        report.records.push(IterationRecord {
            iteration: it,
            learning_rate: lr,
            loss,
            seconds: t0.elapsed().as_secs_f64(),
            adversarial: batch_stats,
        });
        let done = it + 1;
        if control.log_every > 0 && (done % control.log_every == 0 || done == config.iterations) {
            log::info!("iteration {done}/{} loss {:.4e}", config.iterations, loss.total);
        }
        if done % config.checkpoint_every == 0 && done < config.iterations {
            save(&snapshot(&net, &adam, done))?;
        }
        if let Some(budget) = control.time_budget {
            if clock.elapsed() >= budget && done < config.iterations {
                log::warn!("time budget of {:.0} s reached after {done} iterations", budget.as_secs_f64());
                report.status = RunStatus::TimeBudgetExhausted {
                    budget_seconds: budget.as_secs_f64(),
                };
                break;
            }
        }
    }
    report.train_seconds = clock.elapsed().as_secs_f64();
    let done = start + report.records.len();
    let checkpoint = snapshot(&net, &adam, done);
    save(&checkpoint)?;
    let (_, params) = net.into_parts();
    Ok(TrainOutcome {
        params,
        adam,
        report,
        checkpoint,
    })
}

type IterationResult = (Option<AdversarialStats>, LossBreakdown, ParamGradient);

fn iteration(problem: &ProblemSpec, net: &Network, config: &TrainConfig, it: usize) -> Result<IterationResult> {
    let mut batch = problem.sample_batch(config.iteration_batch_seed(it));
    let mut stats = None;
    if let Some(adv) = &config.adversarial {
        let adv_smoothing = SmoothingConfig {
            seed: rng::derive(config.smoothing.seed, &[domain::ADVERSARIAL, it as u64]),
            ..config.smoothing.clone()
        };
        let resample_seed = rng::derive(config.seed, &[domain::RESAMPLE, it as u64]);
        let (refined, s) = adversarial_refine(problem, net, &batch, &adv_smoothing, adv, resample_seed)?;
        batch = refined;
        stats = Some(s);
    }
    let (loss, grad) = loss_and_param_grad(problem, net, &batch, &config.iteration_smoothing(it))?;
    Ok((stats, loss, grad))
}

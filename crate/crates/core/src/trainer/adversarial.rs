//! Adversarial refinement of interior collocation points: a few steps of
//! gradient ascent on the squared estimated residual with the noise frozen.

use ndarray::{Array1, Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_dims, eval_point, row_cotangents};
use crate::error::{ensure, Result};
use crate::estimators::{NoiseBatch, SmoothingConfig, Variant};
use crate::netcore::Network;
use crate::problems::{mean_square, tag_point, CollocationBatch, ProblemSpec, Term};
use crate::rng::{self, domain};

/// Points farther than this from the origin are replaced by fresh samples.
pub const DIVERGENCE_RADIUS: f64 = 1e3;

/// How the ascent direction `∇_p r(p)²` is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum AscentGradient {
    /// Central differences of the estimated residual.
    FiniteDifference { step: f64 },
    /// Reverse mode through the network inputs.
    Backprop,
}

impl Default for AscentGradient {
    fn default() -> Self {
        AscentGradient::FiniteDifference { step: 1e-3 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversarialConfig {
    pub inner_iterations: usize,
    pub step_size: f64,
    #[serde(default)]
    pub gradient: AscentGradient,
}

impl AdversarialConfig {
    pub fn new(inner_iterations: usize, step_size: f64) -> Self {
        AdversarialConfig {
            inner_iterations,
            step_size,
            gradient: AscentGradient::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.step_size.is_finite() && self.step_size > 0.0, || {
            format!("adversarial step size must be positive, got {}", self.step_size)
        })?;
        if let AscentGradient::FiniteDifference { step } = self.gradient {
            ensure(step.is_finite() && step > 0.0, || {
                format!("finite-difference step must be positive, got {step}")
            })?;
        }
        Ok(())
    }
}

/// Mean squared interior residual before and after refinement.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversarialStats {
    pub mean_sq_before: f64,
    pub mean_sq_after: f64,
    pub resampled: usize,
}

struct Refined {
    point: Array1<f64>,
    before: f64,
    after: f64,
    resampled: bool,
}

fn residual_at(
    net: &Network,
    problem: &ProblemSpec,
    p: ArrayView1<f64>,
    noise: &NoiseBatch,
    variant: Variant,
) -> Result<f64> {
    Ok(eval_point(net, problem, Term::Interior, p, noise, variant)?.residual)
}

/// `(r(p), ∇_p r(p))` with the noise held fixed.
fn residual_and_gradient(
    net: &Network,
    problem: &ProblemSpec,
    p: ArrayView1<f64>,
    noise: &NoiseBatch,
    variant: Variant,
    method: AscentGradient,
) -> Result<(f64, Array1<f64>)> {
    match method {
        AscentGradient::Backprop => {
            let ev = eval_point(net, problem, Term::Interior, p, noise, variant)?;
            let c = row_cotangents(problem, Term::Interior, &ev, noise, variant, 1.0)?;
            let mut rows = Array2::zeros(ev.points.dim());
            net.backward(ev.points.view(), &ev.trace, c.view(), None, Some(&mut rows));
            // Every evaluation point moves with p.
            let grad = rows.sum_axis(ndarray::Axis(0)) + problem.residual_point_gradient(p);
            Ok((ev.residual, grad))
        }
        AscentGradient::FiniteDifference { step } => {
            let r = residual_at(net, problem, p, noise, variant)?;
            let mut grad = Array1::zeros(p.len());
            let mut q = p.to_owned();
            for j in 0..p.len() {
                q[j] = p[j] + step;
                let plus = residual_at(net, problem, q.view(), noise, variant)?;
                q[j] = p[j] - step;
                let minus = residual_at(net, problem, q.view(), noise, variant)?;
                q[j] = p[j];
                grad[j] = (plus - minus) / (2.0 * step);
            }
            Ok((r, grad))
        }
    }
}

fn refine_point(
    net: &Network,
    problem: &ProblemSpec,
    start: ArrayView1<f64>,
    noise: &NoiseBatch,
    variant: Variant,
    cfg: &AdversarialConfig,
    resample: impl FnOnce() -> Array1<f64>,
) -> Result<Refined> {
    let mut p = start.to_owned();
    let mut before = None;
    let mut resampled = false;
    for _ in 0..cfg.inner_iterations {
        let (r, g) = residual_and_gradient(net, problem, p.view(), noise, variant, cfg.gradient)?;
        before.get_or_insert(r);
        let next = &p + &(g * (cfg.step_size * 2.0 * r));
        let norm = next.dot(&next).sqrt();
        if !norm.is_finite() || norm > DIVERGENCE_RADIUS {
            log::warn!("adversarial point diverged (norm {norm:.3e}); resampling");
            p = resample();
            resampled = true;
            break;
        }
        p = next;
        problem.project_interior(&mut p);
    }
    let after = residual_at(net, problem, p.view(), noise, variant)?;
    let before = match before {
        Some(b) => b,
        None => after,
    };
    Ok(Refined {
        point: p,
        before,
        after,
        resampled,
    })
}

/// Move each interior point of `batch` by `cfg.inner_iterations` ascent
/// steps on its squared residual. Point `i` keeps the noise
/// `problem.term_noise(smoothing, Interior, i)` throughout; diverging points
/// are resampled from `(resample_seed, RESAMPLE, i)`. Other terms are
/// returned unchanged.
pub fn adversarial_refine(
    problem: &ProblemSpec,
    net: &Network,
    batch: &CollocationBatch,
    smoothing: &SmoothingConfig,
    cfg: &AdversarialConfig,
    resample_seed: u64,
) -> Result<(CollocationBatch, AdversarialStats)> {
    check_dims(problem, net)?;
    cfg.validate()?;
    smoothing.validate()?;
    let variant = problem.term_variant(Term::Interior, smoothing);
    let pts = &batch.interior;
    let refined: Vec<Refined> = (0..pts.nrows())
        .into_par_iter()
        .map(|i| {
            let noise = problem.term_noise(smoothing, Term::Interior, i)?;
            let resample = || {
                let mut r = rng::stream(resample_seed, &[domain::RESAMPLE, i as u64]);
                problem.sample_points(Term::Interior, 1, &mut r).row(0).to_owned()
            };
            refine_point(net, problem, pts.row(i), &noise, variant, cfg, resample)
                .map_err(|e| tag_point(e, Term::Interior, i))
        })
        .collect::<Result<_>>()?;
    let mut out = batch.clone();
    for (mut row, r) in out.interior.rows_mut().into_iter().zip(&refined) {
        row.assign(&r.point);
    }
    let before: Vec<f64> = refined.iter().map(|r| r.before).collect();
    let after: Vec<f64> = refined.iter().map(|r| r.after).collect();
    let stats = AdversarialStats {
        mean_sq_before: mean_square(&before),
        mean_sq_after: mean_square(&after),
        resampled: refined.iter().filter(|r| r.resampled).count(),
    };
    Ok((out, stats))
}

//! Estimator accuracy against oracles, variance scaling in σ, and the
//! Lipschitz bound of smoothed models.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::estimators::{
    analytic::AnalyticBase, estimate_from_values, estimator_stats, evaluation_points, lipschitz_bound,
    BaseFunction, EstimateOptions, NoiseBatch, SmoothingConfig, Variant,
};
use crate::netcore::Network;
use crate::rng::{self, domain};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeKind {
    Gradient,
    Laplacian,
}

/// Function whose smoothed derivatives are studied.
#[derive(Clone, Copy, Debug)]
pub enum StudyBase<'a> {
    Analytic(&'a AnalyticBase),
    Network(&'a Network),
}

impl BaseFunction for StudyBase<'_> {
    fn input_dim(&self) -> usize {
        match self {
            StudyBase::Analytic(b) => b.dim(),
            StudyBase::Network(n) => n.input_dim(),
        }
    }

    fn eval_rows(&self, points: ArrayView2<f64>) -> Result<Array1<f64>> {
        match self {
            StudyBase::Analytic(b) => b.eval_rows(points),
            StudyBase::Network(n) => n.eval_rows(points),
        }
    }
}

impl StudyBase<'_> {
    /// Exact `(∇f, Δf)` at every row.
    fn exact_jets(&self, points: ArrayView2<f64>) -> Result<Vec<(Array1<f64>, f64)>> {
        match self {
            StudyBase::Analytic(b) => Ok(points
                .rows()
                .into_iter()
                .map(|p| {
                    let j = b.smoothed(p, 0.0);
                    let lap = j.laplacian();
                    (j.gradient, lap)
                })
                .collect()),
            StudyBase::Network(n) => Ok(n
                .exact_input_laplacian_batch(points)?
                .into_iter()
                .map(|j| (j.input_gradient, j.input_laplacian))
                .collect()),
        }
    }
}

/// Reference derivatives of the smoothed function at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct Oracle {
    pub gradient: Array1<f64>,
    pub laplacian: f64,
    /// Variance of the oracle mean (largest over coordinates for the
    /// gradient); zero for closed forms.
    pub gradient_variance: f64,
    pub laplacian_variance: f64,
    pub samples: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleSettings {
    /// Antithetic pairs per block.
    pub block_pairs: usize,
    pub max_samples: usize,
    /// Stop once every component's variance of the mean is below this.
    pub target_variance: f64,
}

impl Default for OracleSettings {
    fn default() -> Self {
        OracleSettings {
            block_pairs: 256,
            max_samples: 100_000,
            target_variance: 1e-7,
        }
    }
}

/// `E[∇f(x+δ)]` and `E[Δf(x+δ)]` from exact per-sample derivatives at
/// antithetic pairs `x ± δ`, drawn from `(seed, STUDY, 0, stream)`.
pub fn network_oracle(
    base: StudyBase<'_>,
    x: ArrayView1<f64>,
    sigma: f64,
    settings: &OracleSettings,
    seed: u64,
    stream: u64,
) -> Result<Oracle> {
    ensure(settings.block_pairs >= 2 && settings.max_samples >= 4, || {
        "oracle needs block_pairs >= 2 and max_samples >= 4".to_string()
    })?;
    let d = base.input_dim();
    ensure(x.len() == d, || format!("point has length {}, expected {d}", x.len()))?;
    let mut r = rng::stream(seed, &[domain::STUDY, 0, stream]);
    let mut count = 0usize;
    let mut g_mean = Array1::<f64>::zeros(d);
    let mut g_m2 = Array1::<f64>::zeros(d);
    let (mut l_mean, mut l_m2) = (0.0, 0.0);
    let (mut g_var, mut l_var) = (f64::INFINITY, f64::INFINITY);
    while 2 * count < settings.max_samples {
        let pairs = settings.block_pairs.min((settings.max_samples - 2 * count) / 2).max(1);
        let mut pts = Array2::<f64>::zeros((2 * pairs, d));
        for j in 0..pairs {
            for c in 0..d {
                let e = sigma * r.sample::<f64, _>(StandardNormal);
                pts[[2 * j, c]] = x[c] + e;
                pts[[2 * j + 1, c]] = x[c] - e;
            }
        }
        let jets = base.exact_jets(pts.view())?;
        for pair in jets.chunks_exact(2) {
            let g = (&pair[0].0 + &pair[1].0) * 0.5;
            let l = 0.5 * (pair[0].1 + pair[1].1);
            count += 1;
            let n = count as f64;
            let dg = &g - &g_mean;
            g_mean.scaled_add(1.0 / n, &dg);
            g_m2 += &(&dg * &(&g - &g_mean));
            let dl = l - l_mean;
            l_mean += dl / n;
            l_m2 += dl * (l - l_mean);
        }
        let denom = ((count - 1) as f64 * count as f64).max(1.0);
        g_var = g_m2.iter().fold(0.0f64, |m, v| m.max(*v)) / denom;
        l_var = l_m2 / denom;
        if g_var <= settings.target_variance && l_var <= settings.target_variance {
            break;
        }
    }
    if g_var > settings.target_variance || l_var > settings.target_variance {
        log::warn!(
            "oracle variance {:.2e}/{:.2e} above {:.1e} after {} samples",
            g_var,
            l_var,
            settings.target_variance,
            2 * count
        );
    }
    Ok(Oracle {
        gradient: g_mean,
        laplacian: l_mean,
        gradient_variance: g_var,
        laplacian_variance: l_var,
        samples: 2 * count,
    })
}

fn closed_form_oracle(base: &AnalyticBase, x: ArrayView1<f64>, sigma: f64) -> Oracle {
    let j = base.smoothed(x, sigma);
    let laplacian = j.laplacian();
    Oracle {
        gradient: j.gradient,
        laplacian,
        gradient_variance: 0.0,
        laplacian_variance: 0.0,
        samples: 0,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorStudyConfig {
    pub sigma: f64,
    /// Sample sizes, increasing; even when the antithetic variant is used.
    pub grid: Vec<usize>,
    pub variants: Vec<Variant>,
    /// Evaluation points `x ~ N(0, I)`.
    pub points: usize,
    pub seed: u64,
    pub oracle: OracleSettings,
}

impl EstimatorStudyConfig {
    /// `K = 8, 16, …, 32768` at `σ = 0.1` for every variant.
    pub fn geometric(points: usize, seed: u64) -> Self {
        EstimatorStudyConfig {
            sigma: 0.1,
            grid: (3..=15).map(|e| 1usize << e).collect(),
            variants: Variant::ALL.to_vec(),
            points,
            seed,
            oracle: OracleSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.sigma.is_finite() && self.sigma > 0.0, || "sigma must be positive".to_string())?;
        ensure(!self.grid.is_empty() && !self.variants.is_empty() && self.points >= 2, || {
            "study needs a grid, variants and at least two points".to_string()
        })?;
        ensure(self.grid.windows(2).all(|w| w[0] < w[1]) && self.grid[0] >= 2, || {
            "grid must be increasing and start at 2 or more".to_string()
        })?;
        ensure(
            !self.variants.contains(&Variant::CvAntithetic) || self.grid.iter().all(|k| k % 2 == 0),
            || "cv_antithetic needs even sample sizes".to_string(),
        )
    }
}

/// Mean over evaluation points of the L¹ distance between estimate and
/// oracle (summed over coordinates for the gradient).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorStudyRow {
    pub variant: Variant,
    pub kind: DerivativeKind,
    pub samples: usize,
    pub mean_abs_error: f64,
    /// Standard error of the mean over points.
    pub standard_error: f64,
}

/// `count` points `x ~ N(0, I_dim)` from `(seed, STUDY, 4)`.
pub fn study_points(dim: usize, count: usize, seed: u64) -> Array2<f64> {
    let mut r = rng::stream(seed, &[domain::STUDY, 4]);
    Array2::from_shape_simple_fn((count, dim), || r.sample::<f64, _>(StandardNormal))
}

/// Nested-prefix error study: at each point one batch of the largest size
/// is drawn per noise family and every `K` uses its leading rows, so the
/// curves over `K` share randomness.
pub fn estimator_error_study(base: StudyBase<'_>, cfg: &EstimatorStudyConfig) -> Result<Vec<EstimatorStudyRow>> {
    cfg.validate()?;
    let d = base.input_dim();
    let points = study_points(d, cfg.points, cfg.seed);
    let k_max = *cfg.grid.last().expect("nonempty");
    let cells: Vec<(Variant, usize)> = cfg
        .variants
        .iter()
        .flat_map(|&v| cfg.grid.iter().map(move |&k| (v, k)))
        .collect();
    let per_point: Vec<Vec<(f64, f64)>> = (0..cfg.points)
        .into_par_iter()
        .map(|i| {
            let x = points.row(i);
            let oracle = match base {
                StudyBase::Analytic(b) => closed_form_oracle(b, x, cfg.sigma),
                _ => network_oracle(base, x, cfg.sigma, &cfg.oracle, cfg.seed, i as u64)?,
            };
            let plain = SmoothingConfig::new(cfg.sigma, k_max, Variant::Vanilla, cfg.seed)?
                .draw(d, &[domain::STUDY, 1, i as u64])?;
            let anti = SmoothingConfig::new(cfg.sigma, k_max + k_max % 2, Variant::CvAntithetic, cfg.seed)?
                .draw(d, &[domain::STUDY, 2, i as u64])?;
            let needs_anti = cfg.variants.contains(&Variant::CvAntithetic);
            let needs_plain = cfg.variants.iter().any(|v| *v != Variant::CvAntithetic);
            let evaluate = |noise: &NoiseBatch| -> Result<(f64, Vec<f64>)> {
                let pts = evaluation_points(x, noise, Variant::ControlVariate);
                let out = base.eval_rows(pts.view())?;
                Ok((out[0], out.slice(s![1..]).to_vec()))
            };
            let plain_vals = if needs_plain { Some(evaluate(&plain)?) } else { None };
            let anti_vals = if needs_anti { Some(evaluate(&anti)?) } else { None };
            cells
                .iter()
                .map(|&(variant, k)| {
                    let (noise, (center, values)) = match variant {
                        Variant::CvAntithetic => (&anti, anti_vals.as_ref().expect("drawn")),
                        _ => (&plain, plain_vals.as_ref().expect("drawn")),
                    };
                    let sub = noise.prefix(k)?;
                    let e = estimate_from_values(&sub, variant, Some(*center), &values[..k], &EstimateOptions::default())?;
                    let g_err = (&e.gradient - &oracle.gradient).mapv(f64::abs).sum();
                    Ok((g_err, (e.laplacian - oracle.laplacian).abs()))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let n = cfg.points as f64;
    let mut rows = Vec::with_capacity(2 * cells.len());
    for kind in [DerivativeKind::Gradient, DerivativeKind::Laplacian] {
        for (c, &(variant, k)) in cells.iter().enumerate() {
            let errs: Vec<f64> = per_point
                .iter()
                .map(|p| match kind {
                    DerivativeKind::Gradient => p[c].0,
                    DerivativeKind::Laplacian => p[c].1,
                })
                .collect();
            let mean = errs.iter().sum::<f64>() / n;
            let var = errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0);
            rows.push(EstimatorStudyRow {
                variant,
                kind,
                samples: k,
                mean_abs_error: mean,
                standard_error: (var / n).sqrt(),
            });
        }
    }
    Ok(rows)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn fit_loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    ensure(xs.len() == ys.len() && xs.len() >= 2, || "slope needs two or more pairs".to_string())?;
    ensure(xs.iter().chain(ys).all(|v| *v > 0.0 && v.is_finite()), || {
        "log-log fit needs positive finite values".to_string()
    })?;
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

/// Variance of the estimates at one point over repeated batches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub variant: Variant,
    pub sigma: f64,
    pub samples: usize,
    pub repeats: usize,
    pub laplacian_variance: f64,
    /// Mean over coordinates.
    pub gradient_variance: f64,
}

/// Estimator variance at `x` for every (variant, σ). All cells use the
/// same batch seeds so ratios across σ share randomness.
pub fn variance_law_study<F: BaseFunction + ?Sized>(
    f: &F,
    x: ArrayView1<f64>,
    variants: &[Variant],
    sigmas: &[f64],
    samples: usize,
    repeats: usize,
    seed: u64,
) -> Result<Vec<VarianceRow>> {
    let mut rows = Vec::new();
    for &variant in variants {
        for &sigma in sigmas {
            let cfg = SmoothingConfig::new(sigma, samples, variant, seed)?;
            let st = estimator_stats(f, x, &cfg, repeats, &EstimateOptions::default())?;
            let gv = st.gradient.iter().map(|c| c.variance).sum::<f64>() / st.gradient.len() as f64;
            rows.push(VarianceRow {
                variant,
                sigma,
                samples,
                repeats,
                laplacian_variance: st.laplacian.variance,
                gradient_variance: gv,
            });
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub sigma: f64,
    pub bound: f64,
    pub pairs: usize,
    pub samples: usize,
    pub max_quotient: f64,
    /// Standard error of the quotient at the maximizing pair.
    pub max_quotient_se: f64,
    /// Largest `(quotient − bound) / SE` over pairs.
    pub max_excess_in_se: f64,
    /// Pairs whose quotient exceeds the bound by more than 3 SE.
    pub violations: usize,
}

/// Largest difference quotient `|u(x)−u(y)|/‖x−y‖` of the smoothed model
/// over all pairs of `points` uniform draws in `[−half_width, half_width]^d`.
/// Every point shares the same `samples` noise draws, so differences use
/// common random numbers.
pub fn lipschitz_study<F: BaseFunction + ?Sized>(
    f: &F,
    sup_f: f64,
    sigma: f64,
    points: usize,
    half_width: f64,
    samples: usize,
    seed: u64,
) -> Result<LipschitzReport> {
    let bound = lipschitz_bound(sup_f, sigma)?;
    ensure(points >= 2 && samples >= 2, || "need two or more points and samples".to_string())?;
    ensure(half_width > 0.0, || "half width must be positive".to_string())?;
    let d = f.input_dim();
    let mut r = rng::stream(seed, &[domain::STUDY, 3]);
    let noise = NoiseBatch::sample(&mut r, sigma, samples, d, false)?;
    let mut r = rng::stream(seed, &[domain::STUDY, 5]);
    let xs = Array2::from_shape_simple_fn((points, d), || half_width * (2.0 * r.random::<f64>() - 1.0));
    let draws = noise.materialize();
    let values: Vec<Array1<f64>> = (0..points)
        .into_par_iter()
        .map(|i| f.eval_rows((&draws + &xs.row(i)).view()))
        .collect::<Result<_>>()?;
    let k = samples as f64;
    let mut centered = Array2::<f64>::zeros((points, samples));
    let mut u = Array1::<f64>::zeros(points);
    for (i, v) in values.iter().enumerate() {
        u[i] = v.sum() / k;
        centered.row_mut(i).assign(&(v - u[i]));
    }
    let gram = centered.dot(&centered.t());
    let mut report = LipschitzReport {
        sigma,
        bound,
        pairs: points * (points - 1) / 2,
        samples,
        max_quotient: 0.0,
        max_quotient_se: 0.0,
        max_excess_in_se: f64::NEG_INFINITY,
        violations: 0,
    };
    for i in 0..points {
        for j in i + 1..points {
            let dist = (&xs.row(i) - &xs.row(j)).mapv(|v| v * v).sum().sqrt();
            let q = (u[i] - u[j]).abs() / dist;
            let var_diff = ((gram[[i, i]] + gram[[j, j]] - 2.0 * gram[[i, j]]) / (k - 1.0)).max(0.0);
            let se = (var_diff / k).sqrt() / dist;
            if q > report.max_quotient {
                report.max_quotient = q;
                report.max_quotient_se = se;
            }
            let excess = if se > 0.0 {
                (q - bound) / se
            } else if q > bound {
                f64::INFINITY
            } else {
                f64::NEG_INFINITY
            };
            report.max_excess_in_se = report.max_excess_in_se.max(excess);
            if excess > 3.0 {
                report.violations += 1;
            }
        }
    }
    Ok(report)
}

use std::collections::HashSet;

use ndarray::ArrayView1;

use super::{estimate, BaseFunction, DerivativeEstimate, EstimateOptions, SmoothingConfig};
use crate::error::{ensure, Error, Result};
use crate::rng::domain;

/// Mean and unbiased sample variance of one component across repeats.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComponentStats {
    pub mean: f64,
    pub variance: f64,
}

impl ComponentStats {
    fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let variance = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        ComponentStats { mean, variance }
    }

    /// Standard error of the mean.
    pub fn standard_error(&self, repeats: usize) -> f64 {
        (self.variance / repeats as f64).sqrt()
    }
}

/// Spread of the value, gradient and Laplacian estimates over independent
/// noise batches.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorStats {
    pub repeats: usize,
    pub value: ComponentStats,
    pub gradient: Vec<ComponentStats>,
    pub laplacian: ComponentStats,
}

fn summarize(estimates: &[DerivativeEstimate]) -> EstimatorStats {
    let column = |f: &dyn Fn(&DerivativeEstimate) -> f64| {
        ComponentStats::from_samples(&estimates.iter().map(f).collect::<Vec<_>>())
    };
    let d = estimates[0].gradient.len();
    EstimatorStats {
        repeats: estimates.len(),
        value: column(&|e| e.value),
        gradient: (0..d).map(|i| column(&|e| e.gradient[i])).collect(),
        laplacian: column(&|e| e.laplacian),
    }
}

/// Statistics over `repeats` batches drawn from the substreams
/// `(config.seed, REPEAT, r)`.
pub fn estimator_stats<F: BaseFunction + ?Sized>(
    f: &F,
    x: ArrayView1<f64>,
    config: &SmoothingConfig,
    repeats: usize,
    opts: &EstimateOptions,
) -> Result<EstimatorStats> {
    ensure(repeats >= 2, || format!("repeats must be at least 2, got {repeats}"))?;
    let estimates = (0..repeats as u64)
        .map(|r| {
            let noise = config.draw(x.len(), &[domain::REPEAT, r])?;
            estimate(f, x, &noise, config.variant, opts)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(&estimates))
}

/// Statistics with one batch per explicit seed; repeated seeds would give
/// identical batches and are rejected.
pub fn estimator_stats_with_seeds<F: BaseFunction + ?Sized>(
    f: &F,
    x: ArrayView1<f64>,
    config: &SmoothingConfig,
    seeds: &[u64],
    opts: &EstimateOptions,
) -> Result<EstimatorStats> {
    ensure(seeds.len() >= 2, || format!("need at least 2 seeds, got {}", seeds.len()))?;
    let mut seen = HashSet::new();
    if let Some(dup) = seeds.iter().find(|s| !seen.insert(**s)) {
        return Err(Error::config(format!("seed {dup} repeated; repeats would be identical")));
    }
    let estimates = seeds
        .iter()
        .map(|&seed| {
            let cfg = SmoothingConfig { seed, ..config.clone() };
            let noise = cfg.draw(x.len(), &[domain::REPEAT, 0])?;
            estimate(f, x, &noise, cfg.variant, opts)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(&estimates))
}

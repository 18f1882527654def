//! Wall-clock cost of one interior-loss evaluation, Stein estimates versus
//! exact derivative propagation.

use std::time::Instant;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::estimators::{estimate, EstimateOptions, SmoothingConfig, Variant};
use crate::netcore::{Activation, Network, NetworkSpec};
use crate::rng::{self, domain};

pub const MIN_REPLICATES: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimingMethod {
    Stein,
    ExactStacked,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingConfig {
    pub dims: Vec<usize>,
    pub width: usize,
    /// Affine maps in the network.
    pub layers: usize,
    pub samples: usize,
    /// Collocation points per loss evaluation.
    pub points: usize,
    pub replicates: usize,
    pub variant: Variant,
    pub seed: u64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        TimingConfig {
            dims: vec![10, 100, 1000],
            width: 64,
            layers: 4,
            samples: 512,
            points: 16,
            replicates: MIN_REPLICATES,
            variant: Variant::CvAntithetic,
            seed: 0,
        }
    }
}

impl TimingConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(self.replicates >= MIN_REPLICATES, || {
            format!("replicates must be at least {MIN_REPLICATES}, got {}", self.replicates)
        })?;
        ensure(!self.dims.is_empty() && self.dims.iter().all(|&d| d >= 1), || {
            "dims must be nonempty and positive".to_string()
        })?;
        ensure(self.width >= 1 && self.layers >= 2 && self.points >= 1, || {
            "width, points must be positive and layers at least 2".to_string()
        })?;
        SmoothingConfig::new(1.0, self.samples, self.variant, self.seed).map(|_| ())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub method: TimingMethod,
    pub dim: usize,
    pub width: usize,
    pub samples: usize,
    pub points: usize,
    pub median_seconds: f64,
    pub replicates: usize,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// `mean_i (Δu(x_i))²` with Stein estimates; each call draws fresh noise.
fn stein_loss(net: &Network, points: &Array2<f64>, cfg: &TimingConfig, rep: u64) -> Result<f64> {
    let smoothing = SmoothingConfig::new(0.1, cfg.samples, cfg.variant, cfg.seed)?;
    let d = net.input_dim();
    let sq = (0..points.nrows())
        .into_par_iter()
        .map(|i| {
            let noise = smoothing.draw(d, &[domain::STUDY, 6, rep, i as u64])?;
            let e = estimate(net, points.row(i), &noise, cfg.variant, &EstimateOptions::default())?;
            Ok(e.laplacian * e.laplacian)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(sq.iter().sum::<f64>() / sq.len() as f64)
}

fn exact_loss(net: &Network, points: &Array2<f64>) -> Result<f64> {
    let jets = net.exact_input_laplacian_batch(points.view())?;
    Ok(jets.iter().map(|j| j.input_laplacian.powi(2)).sum::<f64>() / jets.len() as f64)
}

/// Median time of one loss evaluation per method and dimension, after one
/// warmup call. Runs in the current thread pool.
pub fn timing_benchmark(cfg: &TimingConfig) -> Result<Vec<TimingRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for &d in &cfg.dims {
        let spec = NetworkSpec::mlp(d, cfg.width, cfg.layers, Activation::Identity);
        let net = Network::init(spec, cfg.seed)?;
        let mut r = rng::stream(cfg.seed, &[domain::STUDY, 7, d as u64]);
        let points = Array2::from_shape_simple_fn((cfg.points, d), || r.sample::<f64, _>(StandardNormal));
        for method in [TimingMethod::Stein, TimingMethod::ExactStacked] {
            let run = |rep: u64| -> Result<f64> {
                let t0 = Instant::now();
                let loss = match method {
                    TimingMethod::Stein => stein_loss(&net, &points, cfg, rep)?,
                    TimingMethod::ExactStacked => exact_loss(&net, &points)?,
                };
                std::hint::black_box(loss);
                Ok(t0.elapsed().as_secs_f64())
            };
            run(0)?;
            let times = (1..=cfg.replicates as u64).map(run).collect::<Result<Vec<_>>>()?;
            rows.push(TimingRow {
                method,
                dim: d,
                width: cfg.width,
                samples: cfg.samples,
                points: cfg.points,
                median_seconds: median(times),
                replicates: cfg.replicates,
            });
        }
    }
    Ok(rows)
}

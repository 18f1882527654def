//! Estimator error against sample size for the three estimator variants,
//! on a closed-form base and on a random network.
//!
//! cargo run --release --example estimator_study

use stein_pinn::estimators::analytic::AnalyticBase;
use stein_pinn::estimators::Variant;
use stein_pinn::evalbench::{
    estimator_error_study, fit_loglog_slope, DerivativeKind, EstimatorStudyConfig, EstimatorStudyRow, StudyBase,
};
use stein_pinn::netcore::{Activation, Network, NetworkSpec};

fn print(rows: &[EstimatorStudyRow], grid: &[usize]) -> stein_pinn::Result<()> {
    let ks: Vec<f64> = grid.iter().map(|&k| k as f64).collect();
    for kind in [DerivativeKind::Gradient, DerivativeKind::Laplacian] {
        for v in Variant::ALL {
            let ys: Vec<f64> = rows
                .iter()
                .filter(|r| r.variant == v && r.kind == kind)
                .map(|r| r.mean_abs_error)
                .collect();
            let cells: Vec<String> = ys.iter().map(|y| format!("{y:.2e}")).collect();
            println!("{kind:?} {v:>14}: slope {:+.2} | {}", fit_loglog_slope(&ks, &ys)?, cells.join(" "));
        }
    }
    Ok(())
}

fn main() -> stein_pinn::Result<()> {
    let grid = vec![16, 64, 256, 1024, 4096];
    let cfg = EstimatorStudyConfig {
        grid: grid.clone(),
        ..EstimatorStudyConfig::geometric(40, 0)
    };
    println!("sin(x1) in 20 dimensions, sigma {}", cfg.sigma);
    let base = AnalyticBase::sin_first(20);
    print(&estimator_error_study(StudyBase::Analytic(&base), &cfg)?, &grid)?;

    println!("random 4-layer network in 20 dimensions");
    let net = Network::init(NetworkSpec::mlp(20, 64, 4, Activation::Identity), 0)?;
    let cfg = EstimatorStudyConfig { points: 8, ..cfg };
    print(&estimator_error_study(StudyBase::Network(&net), &cfg)?, &grid)?;
    Ok(())
}

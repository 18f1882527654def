//! Train a small smoothed network on the 2-D Poisson problem and report the
//! hold-out error.
//!
//! cargo run --release --example poisson2d -- [iterations]

use stein_pinn::estimators::{SmoothingConfig, Variant};
use stein_pinn::evalbench::{run_experiment, EvalSettings, Experiment};
use stein_pinn::netcore::{Activation, NetworkSpec};
use stein_pinn::problems::ProblemSpec;
use stein_pinn::trainer::{RunControl, TrainConfig};

fn main() -> stein_pinn::Result<()> {
    let iterations = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(300);
    let problem = ProblemSpec::poisson2d(64, 64, 100.0);
    let exp = Experiment {
        network: NetworkSpec::mlp(2, 32, 3, Activation::Identity),
        train: TrainConfig::new(iterations, 3e-3, SmoothingConfig::new(0.05, 128, Variant::CvAntithetic, 1)?, 1),
        eval: EvalSettings {
            points: 500,
            ..EvalSettings::default()
        },
        problem,
    };
    let control = RunControl {
        log_every: 50,
        ..RunControl::default()
    };
    let out = run_experiment(&exp, control, None)?;
    let losses = out.report.total_losses();
    let errors = out.report.final_errors.expect("evaluated");
    println!("loss {:.3e} -> {:.3e}", losses[0], losses[losses.len() - 1]);
    println!(
        "L1 relative {:.3}% (band {:.3}..{:.3}%), L2 relative {:.3}%",
        100.0 * errors.l1_relative,
        100.0 * errors.l1_band().0,
        100.0 * errors.l1_band().1,
        100.0 * errors.l2_relative
    );
    Ok(())
}

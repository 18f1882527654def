//! Heat equation on the unit ball in 10 dimensions.
//!
//! cargo run --release --example heat -- [iterations]

use stein_pinn::estimators::{SmoothingConfig, Variant};
use stein_pinn::evalbench::{run_experiment, EvalSettings, Experiment};
use stein_pinn::netcore::{Activation, NetworkSpec};
use stein_pinn::problems::ProblemSpec;
use stein_pinn::trainer::{RunControl, TrainConfig};

fn main() -> stein_pinn::Result<()> {
    let iterations = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(300);
    let problem = ProblemSpec::heat(10, 32, 32, 32, 100.0, 100.0);
    let exp = Experiment {
        network: NetworkSpec::mlp(problem.input_dim(), 64, 3, Activation::Identity),
        train: TrainConfig::new(iterations, 2e-3, SmoothingConfig::new(0.02, 128, Variant::CvAntithetic, 2)?, 2),
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
    let last = out.report.records.last().expect("nonempty");
    let errors = out.report.final_errors.expect("evaluated");
    println!(
        "final loss {:.3e} (interior {:.3e}, boundary {:.3e}, initial {:.3e})",
        last.loss.total,
        last.loss.interior,
        last.loss.boundary,
        last.loss.initial.unwrap_or(0.0)
    );
    println!("L1 relative {:.3}%, L2 relative {:.3}%", 100.0 * errors.l1_relative, 100.0 * errors.l2_relative);
    Ok(())
}

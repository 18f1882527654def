//! HJB in 4 dimensions with adversarial refinement of the interior points,
//! scored against the Monte Carlo reference.
//!
//! cargo run --release --example hjb_adversarial -- [iterations]

use stein_pinn::estimators::{SmoothingConfig, Variant};
use stein_pinn::evalbench::{run_experiment, EvalSettings, Experiment};
use stein_pinn::netcore::{Activation, NetworkSpec};
use stein_pinn::problems::ProblemSpec;
use stein_pinn::trainer::{AdversarialConfig, AscentGradient, RunControl, TrainConfig};

fn main() -> stein_pinn::Result<()> {
    let iterations = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(200);
    let problem = ProblemSpec::hjb(4, 1.0, 1.0, 32, 32, 100.0);
    let mut train = TrainConfig::new(iterations, 2e-3, SmoothingConfig::new(0.01, 128, Variant::CvAntithetic, 3)?, 3);
    train.adversarial = Some(AdversarialConfig {
        gradient: AscentGradient::Backprop,
        ..AdversarialConfig::new(10, 0.05)
    });
    let exp = Experiment {
        network: NetworkSpec::mlp(problem.input_dim(), 32, 3, Activation::Identity),
        train,
        eval: EvalSettings {
            points: 200,
            ..EvalSettings::default()
        },
        problem,
    };
    let control = RunControl {
        log_every: 50,
        ..RunControl::default()
    };
    let out = run_experiment(&exp, control, None)?;
    for r in out.report.records.iter().step_by((iterations / 5).max(1)) {
        let a = r.adversarial.expect("refinement enabled");
        println!(
            "iteration {:4}: loss {:.3e}, interior residual² {:.3e} -> {:.3e}",
            r.iteration, r.loss.total, a.mean_sq_before, a.mean_sq_after
        );
    }
    let e = out.report.final_errors.expect("evaluated");
    println!(
        "L1 relative {:.2}% ± {:.2}%, reference {:?}",
        100.0 * e.l1_relative,
        200.0 * e.l1_standard_error,
        e.reference_kind
    );
    Ok(())
}

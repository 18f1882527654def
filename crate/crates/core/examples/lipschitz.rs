//! Sampled difference quotients of a smoothed tanh-output network against
//! the bound `(1/sigma)·sqrt(2/pi)`.
//!
//! cargo run --release --example lipschitz

use ndarray::Array2;
use stein_pinn::evalbench::lipschitz_study;
use stein_pinn::netcore::{Activation, Network, NetworkSpec};

fn main() -> stein_pinn::Result<()> {
    let mut net = Network::init(NetworkSpec::mlp(2, 32, 3, Activation::Tanh), 7)?;
    // Steepen the first layer so the base is far from Lipschitz-1.
    let w: &mut Array2<f64> = &mut net.params_mut().layers[0].weight;
    w.mapv_inplace(|v| 20.0 * v);
    for sigma in [0.1, 1.0] {
        let r = lipschitz_study(&net, 1.0, sigma, 40, 2.0, 8192, 7)?;
        println!(
            "sigma {sigma}: bound {:.4}, max quotient {:.4} ± {:.4} over {} pairs, {} violations",
            r.bound, r.max_quotient, r.max_quotient_se, r.pairs, r.violations
        );
    }
    Ok(())
}

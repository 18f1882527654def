//! Exact input gradient and Laplacian of a network beside Stein estimates
//! of the smoothed model at a small sigma.
//!
//! cargo run --release --example exact_derivatives

use ndarray::Array1;
use stein_pinn::estimators::{estimate, EstimateOptions, SmoothingConfig, Variant};
use stein_pinn::netcore::{Activation, Network, NetworkSpec};

fn main() -> stein_pinn::Result<()> {
    let d = 8;
    let net = Network::init(NetworkSpec::mlp(d, 32, 3, Activation::Identity), 11)?;
    let x = Array1::linspace(-0.5, 0.5, d);
    let jet = net.exact_input_laplacian(x.view())?;
    println!("exact: f {:.6}, laplacian {:.6}", jet.value, jet.input_laplacian);
    for samples in [256, 4096, 65536] {
        for variant in Variant::ALL {
            let cfg = SmoothingConfig::new(0.01, samples, variant, 11)?;
            let noise = cfg.draw(d, &[0])?;
            let e = estimate(&net, x.view(), &noise, variant, &EstimateOptions::default())?;
            let gerr = (&e.gradient - &jet.input_gradient).mapv(f64::abs).sum();
            println!(
                "K {samples:6} {variant:>14}: laplacian {:+.6} (se {:.1e}), gradient L1 error {:.2e}",
                e.laplacian,
                e.empirical_variance.laplacian.sqrt(),
                gerr
            );
        }
    }
    Ok(())
}

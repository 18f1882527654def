//! How the Laplacian estimator variance scales with sigma for each variant.
//!
//! cargo run --release --example variance_laws

use ndarray::Array1;
use stein_pinn::estimators::Variant;
use stein_pinn::evalbench::variance_law_study;
use stein_pinn::netcore::{Activation, Network, NetworkSpec};

fn main() -> stein_pinn::Result<()> {
    let d = 20;
    let net = Network::init(NetworkSpec::mlp(d, 64, 4, Activation::Identity), 5)?;
    let x = Array1::from_elem(d, 0.1);
    let sigmas = [0.1, 0.01];
    let rows = variance_law_study(&net, x.view(), &Variant::ALL, &sigmas, 256, 200, 5)?;
    for v in Variant::ALL {
        let var = |s: f64| {
            rows.iter()
                .find(|r| r.variant == v && r.sigma == s)
                .map(|r| r.laplacian_variance)
                .expect("row")
        };
        println!(
            "{v:>14}: Var(sigma=0.1) {:.3e}, Var(sigma=0.01) {:.3e}, ratio {:.3e}",
            var(0.1),
            var(0.01),
            var(0.01) / var(0.1)
        );
    }
    Ok(())
}

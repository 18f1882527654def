//! Median time of one Laplacian loss evaluation, Stein estimates against
//! exact forward propagation, as the input dimension grows.
//!
//! cargo run --release --example complexity_bench

use stein_pinn::evalbench::{timing_benchmark, TimingConfig, TimingMethod};

fn main() -> stein_pinn::Result<()> {
    let cfg = TimingConfig {
        dims: vec![10, 100, 300],
        samples: 256,
        points: 8,
        ..TimingConfig::default()
    };
    let rows = timing_benchmark(&cfg)?;
    for r in &rows {
        println!("{:?} d={:5}: {:.4} s", r.method, r.dim, r.median_seconds);
    }
    for m in [TimingMethod::Stein, TimingMethod::ExactStacked] {
        let t: Vec<f64> = rows.iter().filter(|r| r.method == m).map(|r| r.median_seconds).collect();
        println!("{m:?} growth d={} -> d={}: {:.1}x", cfg.dims[0], cfg.dims[cfg.dims.len() - 1], t[t.len() - 1] / t[0]);
    }
    Ok(())
}

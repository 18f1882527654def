//! Acceptance criteria 1-12, one PASS/FAIL line each.
//!
//! Training criteria stop at their wall-clock budgets. Set
//! `STEIN_PINN_ACCEPTANCE_UNCAPPED=1` to let them run to completion, and
//! `STEIN_PINN_ACCEPTANCE_ONLY=2,9` to run a subset. A criterion that fails
//! is reported and does not fail the target; an internal error or panic
//! does.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use rand::Rng;
use stein_pinn::cli::{self, RunConfig};
use stein_pinn::estimators::analytic::AnalyticBase;
use stein_pinn::estimators::{
    estimate, grad_anti, grad_cv, grad_vanilla, laplacian_anti, laplacian_cv, laplacian_vanilla, EstimateOptions,
    SmoothingConfig, Variant,
};
use stein_pinn::evalbench::{
    ablation_samples, ablation_sigma, estimator_error_study, fit_loglog_slope, lipschitz_study, run_experiment,
    timing_benchmark, variance_law_study, AblationRow, DerivativeKind, EstimatorStudyConfig, Experiment,
    OracleSettings, StudyBase, TimingConfig, TimingMethod,
};
use stein_pinn::netcore::{Activation, Network, NetworkSpec};
use stein_pinn::problems::ProblemSpec;
use stein_pinn::rng;
use stein_pinn::trainer::{loss_and_param_grad, RunControl, RunStatus};
use stein_pinn::Result;

// 1
const UNBIASED_SAMPLES: usize = 1_000_000;
const UNBIASED_SE: f64 = 3.0;
// 2
const VAR_RANGE_VANILLA: (f64, f64) = (20.0, 500.0);
const VAR_RANGE_CV: (f64, f64) = (3.0, 30.0);
const VAR_RANGE_ANTI: (f64, f64) = (1.0 / 3.0, 3.0);
// 3
const SLOPE: f64 = -0.5;
const SLOPE_TOL: f64 = 0.15;
const ORDERING_FROM_K: usize = 64;
const ANTI_GAIN_AT_4096: f64 = 10.0;
// 4, 5, 6
const POISSON_L1: f64 = 0.01;
const POISSON_BUDGET: Duration = Duration::from_secs(10 * 60);
const HEAT_L1: f64 = 0.02;
const HEAT_BUDGET: Duration = Duration::from_secs(30 * 60);
const HJB_LOSS_DROP: f64 = 10.0;
const HJB_L1: f64 = 0.10;
const HJB_REFERENCE_SE: f64 = 1e-3;
const HJB_BUDGET: Duration = Duration::from_secs(45 * 60);
// 7, 8
const SIGMA_LARGE_PENALTY: f64 = 5.0;
const SIGMA_SMALL_SPREAD: f64 = 2.0;
const K_NOISE_BAND: f64 = 0.2;
const K_TIME_RANGE: (f64, f64) = (4.0, 12.0);
// 9
const EXACT_GROWTH: f64 = 20.0;
const GROWTH_GAP: f64 = 5.0;
// 10
const LIPSCHITZ_PAIRS: usize = 10_000;
const LIPSCHITZ_SAMPLES: usize = 65_536;
// 11
const GRAD_REL_TOL: f64 = 1e-4;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Result<Verdict> {
    Ok(Verdict {
        pass,
        detail: detail.into(),
    })
}

fn uncapped() -> bool {
    std::env::var("STEIN_PINN_ACCEPTANCE_UNCAPPED").is_ok_and(|v| v == "1")
}

fn budget(b: Duration) -> Option<Duration> {
    (!uncapped()).then_some(b)
}

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("pool").install(f)
}

fn in_range(x: f64, (lo, hi): (f64, f64)) -> bool {
    lo <= x && x <= hi
}

fn status_name(s: &RunStatus) -> String {
    match s {
        RunStatus::Completed => "completed".into(),
        RunStatus::TimeBudgetExhausted { budget_seconds } => format!("stopped at {budget_seconds:.0} s budget"),
        RunStatus::Aborted { reason } => format!("aborted: {reason}"),
    }
}

fn c1_unbiasedness() -> Result<Verdict> {
    let d = 3;
    let sigma = 0.5;
    let a = Array2::from_shape_fn((d, d), |(i, j)| if i == j { 1.0 + i as f64 } else { 0.25 });
    let bases = [
        ("constant", AnalyticBase::constant(d, 1.5)),
        ("linear", AnalyticBase::linear(Array1::from(vec![1.0, -2.0, 0.5]), 0.3)),
        ("quadratic", AnalyticBase::quadratic(a, Array1::from(vec![0.1, 0.2, -0.3]), 0.7)?),
        ("sin(x1)", AnalyticBase::sin_first(d)),
    ];
    let x = Array1::from(vec![0.3, -0.2, 0.4]);
    let (mut checks, mut worst, mut worst_at) = (0, 0.0f64, String::new());
    let mut fails = Vec::new();
    for (bi, (name, base)) in bases.iter().enumerate() {
        let truth = base.smoothed(x.view(), sigma);
        for variant in Variant::ALL {
            let cfg = SmoothingConfig::new(sigma, UNBIASED_SAMPLES, variant, 100 + bi as u64)?;
            let noise = cfg.draw(d, &[variant as u64])?;
            let (g, lap) = match variant {
                Variant::Vanilla => (grad_vanilla(base, x.view(), &noise)?, laplacian_vanilla(base, x.view(), &noise)?),
                Variant::ControlVariate => (grad_cv(base, x.view(), &noise)?, laplacian_cv(base, x.view(), &noise)?),
                Variant::CvAntithetic => (grad_anti(base, x.view(), &noise)?, laplacian_anti(base, x.view(), &noise)?),
            };
            let e = estimate(base, x.view(), &noise, variant, &EstimateOptions::default())?;
            let mut check = |what: String, est: f64, exact: f64, var: f64| {
                checks += 1;
                let se = var.sqrt();
                // Exact estimators (zero variance) are held to rounding error.
                let err = (est - exact).abs();
                let slack = 1e-12 * (1.0 + exact.abs());
                let z = if err <= slack { 0.0 } else if se > 0.0 { err / se } else { f64::INFINITY };
                if z > worst {
                    worst = z;
                    worst_at = what.clone();
                }
                if err > UNBIASED_SE * se + slack {
                    fails.push(format!("{what} z={z:.2}"));
                }
            };
            for i in 0..d {
                check(format!("{name} grad_{variant}[{i}]"), g[i], truth.gradient[i], e.empirical_variance.gradient[i]);
            }
            check(format!("{name} laplacian_{variant}"), lap, truth.laplacian(), e.empirical_variance.laplacian);
        }
    }
    verdict(
        fails.is_empty(),
        format!(
            "{checks} components, worst {worst:.2} SE at {worst_at}{}",
            if fails.is_empty() { String::new() } else { format!("; over {UNBIASED_SE} SE: {}", fails.join(", ")) }
        ),
    )
}

fn c2_variance_laws() -> Result<Verdict> {
    let d = 100;
    let net = Network::init(NetworkSpec::mlp(d, 64, 4, Activation::Identity), 21)?;
    let mut r = rng::stream(21, &[0]);
    let x = Array1::from_shape_simple_fn(d, || r.random::<f64>());
    let sigmas = [0.1, 0.01];
    let rows = variance_law_study(&net, x.view(), &Variant::ALL, &sigmas, 1024, 400, 21)?;
    let ratio = |v: Variant| {
        let var = |s: f64| rows.iter().find(|r| r.variant == v && r.sigma == s).expect("row").laplacian_variance;
        var(0.01) / var(0.1)
    };
    let checks = [
        (Variant::Vanilla, VAR_RANGE_VANILLA),
        (Variant::ControlVariate, VAR_RANGE_CV),
        (Variant::CvAntithetic, VAR_RANGE_ANTI),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (v, range) in checks {
        let q = ratio(v);
        let ok = in_range(q, range);
        pass &= ok;
        parts.push(format!(
            "{v} {q:.3e} in [{}, {}] {} (std ratio {:.3e})",
            range.0,
            range.1,
            if ok { "yes" } else { "no" },
            q.sqrt()
        ));
    }
    verdict(pass, parts.join("; "))
}

fn c3_estimator_study() -> Result<Verdict> {
    let d = 100;
    let net = Network::init(NetworkSpec::mlp(d, 64, 4, Activation::Identity), 31)?;
    let cfg = EstimatorStudyConfig {
        oracle: OracleSettings::default(),
        ..EstimatorStudyConfig::geometric(10, 31)
    };
    let rows = estimator_error_study(StudyBase::Network(&net), &cfg)?;
    let ks: Vec<f64> = cfg.grid.iter().map(|&k| k as f64).collect();
    let curve = |v: Variant, kind: DerivativeKind| -> Vec<f64> {
        rows.iter()
            .filter(|r| r.variant == v && r.kind == kind)
            .map(|r| r.mean_abs_error)
            .collect()
    };
    let mut pass = true;
    let mut slopes = Vec::new();
    for kind in [DerivativeKind::Gradient, DerivativeKind::Laplacian] {
        for v in Variant::ALL {
            let s = fit_loglog_slope(&ks, &curve(v, kind))?;
            pass &= (s - SLOPE).abs() <= SLOPE_TOL;
            slopes.push(format!("{kind:?}/{v} {s:+.3}"));
        }
    }
    let lap = |v| curve(v, DerivativeKind::Laplacian);
    let (van, cv, anti) = (lap(Variant::Vanilla), lap(Variant::ControlVariate), lap(Variant::CvAntithetic));
    let mut order_breaks = Vec::new();
    for (i, &k) in cfg.grid.iter().enumerate() {
        if k >= ORDERING_FROM_K && !(anti[i] < cv[i] && cv[i] < van[i]) {
            order_breaks.push(k);
        }
    }
    pass &= order_breaks.is_empty();
    let i4096 = cfg.grid.iter().position(|&k| k == 4096).expect("grid has 4096");
    let gain = van[i4096] / anti[i4096];
    pass &= gain >= ANTI_GAIN_AT_4096;
    verdict(
        pass,
        format!(
            "slopes [{}]; ordering breaks at K={order_breaks:?}; vanilla/anti at K=4096 {gain:.1}x",
            slopes.join(", ")
        ),
    )
}

fn train_to_spec(cfg_name: &str, l1_max: f64, cap: Duration) -> Result<Verdict> {
    let exp = cli::config::load(&config(cfg_name))?.experiment()?;
    let control = RunControl {
        time_budget: budget(cap),
        log_every: 50,
        ..RunControl::default()
    };
    let out = run_experiment(&exp, control, None)?;
    let r = &out.report;
    let e = r.final_errors.expect("evaluated");
    let done = r.completed_iterations() == exp.train.iterations && r.status == RunStatus::Completed;
    let in_time = r.train_seconds <= cap.as_secs_f64();
    verdict(
        done && in_time && e.l1_relative <= l1_max,
        format!(
            "{} of {} iterations ({}), {:.0} s of {:.0} s, L1 {:.3}% (limit {:.1}%)",
            r.completed_iterations(),
            exp.train.iterations,
            status_name(&r.status),
            r.train_seconds,
            cap.as_secs_f64(),
            100.0 * e.l1_relative,
            100.0 * l1_max
        ),
    )
}

fn c4_poisson() -> Result<Verdict> {
    train_to_spec("poisson2d.toml", POISSON_L1, POISSON_BUDGET)
}

fn c5_heat() -> Result<Verdict> {
    train_to_spec("heat100d.toml", HEAT_L1, HEAT_BUDGET)
}

fn c6_hjb() -> Result<Verdict> {
    let exp = cli::config::load(&config("hjb10d.toml"))?.experiment()?;
    let holdout = exp.eval.holdout(&exp.problem)?;
    let max_se = holdout.reference_se.iter().cloned().fold(0.0, f64::max);
    let control = RunControl {
        time_budget: budget(HJB_BUDGET),
        log_every: 100,
        ..RunControl::default()
    };
    let out = run_experiment(&exp, control, Some(&holdout))?;
    let r = &out.report;
    let e = r.final_errors.expect("evaluated");
    let losses = r.total_losses();
    let tail = &losses[losses.len().saturating_sub(50)..];
    let drop = losses[0] / (tail.iter().sum::<f64>() / tail.len() as f64);
    let done = r.completed_iterations() == exp.train.iterations && r.status == RunStatus::Completed;
    let pass = done
        && r.train_seconds <= HJB_BUDGET.as_secs_f64()
        && drop >= HJB_LOSS_DROP
        && e.l1_relative <= HJB_L1
        && holdout.converged
        && max_se <= HJB_REFERENCE_SE;
    verdict(
        pass,
        format!(
            "{} iterations ({}), {:.0} s, loss drop {drop:.1}x, L1 {:.2}% (SE {:.1e} from references, {:.1e} from sampling), reference SE max {max_se:.1e}",
            r.completed_iterations(),
            status_name(&r.status),
            r.train_seconds,
            100.0 * e.l1_relative,
            e.l1_standard_error,
            e.l1_sampling_se
        ),
    )
}

/// The desk HJB problem used by both sweeps: the desk config without
/// adversarial refinement and with fewer iterations.
fn ablation_experiment() -> Result<Experiment> {
    let mut exp = cli::config::load(&config("hjb10d.toml"))?.experiment()?;
    exp.train.adversarial = None;
    exp.train.iterations = 1000;
    Ok(exp)
}

fn l1_of(rows: &[AblationRow], value: f64) -> f64 {
    rows.iter().find(|r| r.value == value).expect("row").l1_relative
}

fn c7_sigma_ablation() -> Result<Verdict> {
    let exp = ablation_experiment()?;
    let rows = ablation_sigma(&exp, &[1.0, 1e-1, 1e-2, 1e-3], &RunControl::default())?;
    let penalty = l1_of(&rows, 1.0) / l1_of(&rows, 1e-2);
    let small: Vec<f64> = [1e-1, 1e-2, 1e-3].iter().map(|&s| l1_of(&rows, s)).collect();
    let spread = small.iter().cloned().fold(f64::MIN, f64::max) / small.iter().cloned().fold(f64::MAX, f64::min);
    let times: Vec<f64> = rows.iter().map(|r| r.median_iteration_seconds).collect();
    let time_spread = times.iter().cloned().fold(f64::MIN, f64::max) / times.iter().cloned().fold(f64::MAX, f64::min);
    let cells: Vec<String> = rows.iter().map(|r| format!("{}: {:.2}%", r.value, 100.0 * r.l1_relative)).collect();
    verdict(
        penalty >= SIGMA_LARGE_PENALTY && spread <= SIGMA_SMALL_SPREAD,
        format!(
            "L1 [{}]; sigma=1 vs 1e-2 {penalty:.1}x (need {SIGMA_LARGE_PENALTY}x); small-sigma spread {spread:.2}x (limit {SIGMA_SMALL_SPREAD}x); iteration time spread {time_spread:.2}x",
            cells.join(", ")
        ),
    )
}

fn c8_samples_ablation() -> Result<Verdict> {
    let exp = ablation_experiment()?;
    let grid = [256, 512, 1024, 2048];
    let rows = ablation_samples(&exp, &grid, &RunControl::default())?;
    let l1: Vec<f64> = rows.iter().map(|r| r.l1_relative).collect();
    let monotone = l1.windows(2).all(|w| w[1] <= w[0] * (1.0 + K_NOISE_BAND));
    let time_ratio = rows[3].median_iteration_seconds / rows[0].median_iteration_seconds;
    let cells: Vec<String> = rows
        .iter()
        .map(|r| format!("K={}: {:.2}% {:.3} s/it", r.value, 100.0 * r.l1_relative, r.median_iteration_seconds))
        .collect();
    verdict(
        monotone && in_range(time_ratio, K_TIME_RANGE),
        format!(
            "[{}]; non-increasing within {:.0}%: {monotone}; time(2048)/time(256) {time_ratio:.2} in [{}, {}]",
            cells.join(", "),
            100.0 * K_NOISE_BAND,
            K_TIME_RANGE.0,
            K_TIME_RANGE.1
        ),
    )
}

fn c9_complexity() -> Result<Verdict> {
    let cfg = TimingConfig::default();
    let rows = single_threaded(|| timing_benchmark(&cfg))?;
    let growth = |m: TimingMethod| {
        let t = |d: usize| rows.iter().find(|r| r.method == m && r.dim == d).expect("row").median_seconds;
        t(1000) / t(10)
    };
    let exact = growth(TimingMethod::ExactStacked);
    let stein = growth(TimingMethod::Stein);
    verdict(
        exact >= EXACT_GROWTH && exact / stein >= GROWTH_GAP,
        format!(
            "exact d=10->1000 {exact:.1}x (need {EXACT_GROWTH}x), stein {stein:.2}x, gap {:.1}x (need {GROWTH_GAP}x)",
            exact / stein
        ),
    )
}

fn c10_lipschitz() -> Result<Verdict> {
    let mut net = Network::init(NetworkSpec::mlp(2, 32, 3, Activation::Tanh), 41)?;
    // A steep base: far from Lipschitz-1 before smoothing.
    net.params_mut().layers[0].weight.mapv_inplace(|w| 10.0 * w);
    net.params_mut().layers[2].weight.mapv_inplace(|w| 20.0 * w);
    // Smallest point count with at least LIPSCHITZ_PAIRS pairs.
    let points = (2..).find(|m| m * (m - 1) / 2 >= LIPSCHITZ_PAIRS).expect("finite");
    let mut pass = true;
    let mut parts = Vec::new();
    for sigma in [0.1, 1.0] {
        let r = lipschitz_study(&net, 1.0, sigma, points, 1.0, LIPSCHITZ_SAMPLES, 41)?;
        pass &= r.violations == 0;
        parts.push(format!(
            "sigma {sigma}: max {:.4} ± {:.1e} vs bound {:.4}, {} violations in {} pairs",
            r.max_quotient, r.max_quotient_se, r.bound, r.violations, r.pairs
        ));
    }
    verdict(pass, parts.join("; "))
}

fn c11_gradients() -> Result<Verdict> {
    let problems = [
        ProblemSpec::poisson2d(4, 4, 100.0),
        ProblemSpec::heat(6, 3, 3, 3, 10.0, 10.0),
        ProblemSpec::hjb(9, 1.0, 1.0, 3, 3, 20.0),
    ];
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for problem in &problems {
        let net = Network::init(NetworkSpec::mlp(problem.input_dim(), 32, 3, Activation::Identity), 51)?;
        let batch = problem.sample_batch(51);
        for variant in Variant::ALL {
            let s = SmoothingConfig::new(0.2, 8, variant, 51)?;
            let (_, g) = loss_and_param_grad(problem, &net, &batch, &s)?;
            let g: Vec<f64> = g.iter().copied().collect();
            let h = 1e-5;
            let mut probe = net.clone();
            let mut fd = Vec::with_capacity(g.len());
            for k in 0..g.len() {
                let orig = *probe.params_mut().iter_mut().nth(k).expect("index");
                let mut at = |v: f64| -> Result<f64> {
                    *probe.params_mut().iter_mut().nth(k).expect("index") = v;
                    Ok(problem.total_loss(&probe, &batch, &s)?.total)
                };
                let plus = at(orig + h)?;
                let minus = at(orig - h)?;
                at(orig)?;
                fd.push((plus - minus) / (2.0 * h));
            }
            let num = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let den = fd.iter().map(|b| b * b).sum::<f64>().sqrt();
            let rel = num / den;
            worst = worst.max(rel);
            parts.push(format!("{}/{variant} {rel:.1e}", problem.kind.name()));
        }
    }
    verdict(worst <= GRAD_REL_TOL, format!("worst {worst:.2e} (limit {GRAD_REL_TOL:.0e}): {}", parts.join(", ")))
}

fn c12_determinism() -> Result<Verdict> {
    let root = tempfile::tempdir().map_err(|e| stein_pinn::Error::Io {
        path: std::env::temp_dir(),
        source: e,
    })?;
    let mut cfg = RunConfig::parse(&std::fs::read_to_string(config("poisson2d.toml")).expect("config"))?;
    cfg.model.hidden_dim = 16;
    cfg.model.layers = 3;
    cfg.smoothing.samples = 64;
    cfg.smoothing.sigma = 0.1;
    cfg.training.iterations = 40;
    cfg.batch.n1 = 16;
    cfg.batch.n2 = 16;
    cfg.eval.points = 50;
    cfg.eval.samples = 64;
    let path = root.path().join("run.toml");
    std::fs::write(&path, cfg.to_toml()?).expect("write config");
    let run = |config: &std::path::Path| -> Result<PathBuf> {
        let cli = cli::Cli {
            command: cli::Command::Train {
                common: cli::Common {
                    config: config.to_path_buf(),
                    out: root.path().join("runs"),
                    seed: None,
                    threads: Some(1),
                },
                resume: None,
            },
        };
        Ok(cli::run(&cli)?.run_dir)
    };
    let first = run(&path)?;
    let second = run(&first.join("manifest.json"))?;
    let a = std::fs::read(first.join("loss.csv")).expect("csv");
    let b = std::fs::read(second.join("loss.csv")).expect("csv");
    verdict(
        a == b && !a.is_empty(),
        format!(
            "loss.csv {} bytes, hashes {} and {}",
            a.len(),
            &cli::content_hash(&String::from_utf8_lossy(&a))[..12],
            &cli::content_hash(&String::from_utf8_lossy(&b))[..12]
        ),
    )
}

type Criterion = (u32, &'static str, fn() -> Result<Verdict>);

const CRITERIA: [Criterion; 12] = [
    (1, "estimator unbiasedness", c1_unbiasedness),
    (2, "variance-reduction laws", c2_variance_laws),
    (3, "estimator error study", c3_estimator_study),
    (4, "poisson 2-d end to end", c4_poisson),
    (5, "heat 100-d end to end", c5_heat),
    (6, "hjb desk scale", c6_hjb),
    (7, "sigma ablation", c7_sigma_ablation),
    (8, "sample-size ablation", c8_samples_ablation),
    (9, "complexity benchmark", c9_complexity),
    (10, "lipschitz bound", c10_lipschitz),
    (11, "gradient correctness", c11_gradients),
    (12, "determinism", c12_determinism),
];

fn main() {
    let only: Option<Vec<u32>> = std::env::var("STEIN_PINN_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    // `cargo test -- --list` and similar harness probes.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut broken = 0;
    let mut passed = 0;
    let mut ran = 0;
    for (n, name, check) in CRITERIA {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        ran += 1;
        let t0 = Instant::now();
        let result = std::panic::catch_unwind(check);
        let secs = t0.elapsed().as_secs_f64();
        match result {
            Ok(Ok(v)) => {
                passed += v.pass as usize;
                println!(
                    "criterion {n:2} {name}: {} ({}) [{secs:.0} s]",
                    if v.pass { "PASS" } else { "FAIL" },
                    v.detail
                );
            }
            Ok(Err(e)) => {
                broken += 1;
                println!("criterion {n:2} {name}: FAIL (error: {e}) [{secs:.0} s]");
            }
            Err(_) => {
                broken += 1;
                println!("criterion {n:2} {name}: FAIL (panicked) [{secs:.0} s]");
            }
        }
    }
    println!("acceptance: {passed} of {ran} criteria passed");
    if broken > 0 {
        std::process::exit(1);
    }
}

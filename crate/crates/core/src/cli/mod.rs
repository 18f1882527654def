//! Command-line driver: `train`, `ablate`, `bench` and `eval`.
//!
//! Each invocation creates `<out>/<UTC timestamp>-<config hash>/` holding a
//! `manifest.json` and the command's artifacts. The output root is `--out`,
//! else `$STEIN_PINN_OUT`, else `runs`.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid config or artifact,
//! 3 numeric failure (the last good checkpoint is kept).

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::Utc;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ensure, Error, Result};
use crate::evalbench::{
    ablation_samples, ablation_sigma, estimator_error_study, timing_benchmark, write_csv, write_json,
    DerivativeKind, ErrorReport, StudyBase, StudySummary,
};
use crate::estimators::Variant;
use crate::netcore::Network;
use crate::trainer::{Checkpoint, RunControl, RunReport, RunStatus};
pub use config::RunConfig;

pub const OUT_ENV: &str = "STEIN_PINN_OUT";
pub const MANIFEST_FORMAT: &str = "stein-pinn-manifest";
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "stein-pinn", version, about = "Train Gaussian-smoothed PINNs with Stein derivative estimators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML config, or a manifest.json of an earlier run.
    #[arg(long)]
    pub config: PathBuf,
    /// Output root; a fresh run directory is created inside it.
    #[arg(long, env = OUT_ENV, default_value = "runs")]
    pub out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config thread count.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Study {
    Estimators,
    Sigma,
    Samples,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model and score it on the hold-out set.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from a checkpoint of the same config.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run an estimator-error, sigma or sample-size study.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        study: Study,
    },
    /// Time Stein against exact Laplacian losses across dimensions.
    Bench {
        #[command(flatten)]
        common: Common,
    },
    /// Score a checkpoint on the hold-out set.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Train { common, .. }
            | Command::Ablate { common, .. }
            | Command::Bench { common }
            | Command::Eval { common, .. } => common,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Train { .. } => "train",
            Command::Ablate { .. } => "ablate",
            Command::Bench { .. } => "bench",
            Command::Eval { .. } => "eval",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hardware {
    pub os: String,
    pub arch: String,
    pub logical_cpus: usize,
    #[serde(default)]
    pub cpu_model: Option<String>,
    #[serde(default)]
    pub total_memory_bytes: Option<u64>,
}

impl Hardware {
    pub fn detect() -> Self {
        let cpuinfo = fs::read_to_string("/proc/cpuinfo").unwrap_or_default();
        let meminfo = fs::read_to_string("/proc/meminfo").unwrap_or_default();
        let field = |text: &str, key: &str| {
            text.lines()
                .find(|l| l.starts_with(key))
                .and_then(|l| l.split_once(':'))
                .map(|(_, v)| v.trim().to_string())
        };
        Hardware {
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            logical_cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
            cpu_model: field(&cpuinfo, "model name"),
            total_memory_bytes: field(&meminfo, "MemTotal")
                .and_then(|v| v.trim_end_matches("kB").trim().parse::<u64>().ok())
                .map(|kb| kb * 1024),
        }
    }
}

/// Artifact file names relative to the run directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_csv: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub json: Option<String>,
}

/// Written when a run starts and rewritten when it ends. Passing it back
/// as `--config` repeats the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub schema_version: u32,
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub study: Option<Study>,
    pub package_version: String,
    /// Config after command-line overrides.
    pub config: RunConfig,
    /// Hash of the config snapshot in git blob form.
    pub config_hash: String,
    pub seed: u64,
    pub threads: usize,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub hardware: Hardware,
    pub artifacts: Artifacts,
    pub exit_code: Option<i32>,
}

/// `sha256("blob <len>\0" ++ text)` as lowercase hex.
pub fn content_hash(text: &str) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", text.len()).as_bytes());
    h.update(text.as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Format { .. } | Error::Capability(_) => 2,
        Error::Numeric(_) => 3,
        Error::Io { .. } => 1,
    }
}

/// A finished command.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub run_dir: PathBuf,
    pub exit_code: i32,
}

fn create_run_dir(root: &Path, hash: &str) -> Result<PathBuf> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let stem = format!("{}-{}", Utc::now().format("%Y%m%dT%H%M%SZ"), &hash[..12]);
    for n in 0.. {
        let name = if n == 0 { stem.clone() } else { format!("{stem}-{n}") };
        let dir = root.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::io(&dir, e)),
        }
    }
    unreachable!()
}

struct Run {
    dir: PathBuf,
    manifest: RunManifest,
}

impl Run {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write_manifest(&self) -> Result<()> {
        write_json(&self.path("manifest.json"), &self.manifest)
    }
}

#[derive(Serialize)]
struct LossRow {
    iteration: usize,
    learning_rate: f64,
    total: f64,
    interior: f64,
    boundary: f64,
    initial: Option<f64>,
    adversarial_mean_sq_before: Option<f64>,
    adversarial_mean_sq_after: Option<f64>,
    adversarial_resampled: Option<usize>,
}

/// The loss curve as CSV. Holds no timings, so single-threaded reruns are
/// byte-identical.
pub fn write_loss_csv(path: &Path, report: &RunReport) -> Result<()> {
    let rows: Vec<LossRow> = report
        .records
        .iter()
        .map(|r| LossRow {
            iteration: r.iteration,
            learning_rate: r.learning_rate,
            total: r.loss.total,
            interior: r.loss.interior,
            boundary: r.loss.boundary,
            initial: r.loss.initial,
            adversarial_mean_sq_before: r.adversarial.map(|a| a.mean_sq_before),
            adversarial_mean_sq_after: r.adversarial.map(|a| a.mean_sq_after),
            adversarial_resampled: r.adversarial.map(|a| a.resampled),
        })
        .collect();
    write_csv(path, &rows)
}

#[derive(Serialize)]
struct EstimatorCsvRow {
    variant: Variant,
    kind: DerivativeKind,
    #[serde(rename = "K")]
    samples: usize,
    mean_abs_error: f64,
    standard_error: f64,
}

/// Parse arguments, run, and return the process exit code. Errors are
/// reported on stderr.
pub fn main_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(o) => {
            eprintln!("run directory: {}", o.run_dir.display());
            o.exit_code
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    let common = cli.command.common();
    let mut cfg = config::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(t) = common.threads {
        cfg.threads = Some(t);
    }
    cfg.validate()?;
    let threads = cfg.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let snapshot = cfg.to_toml()?;
    let hash = content_hash(&snapshot);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("threads: {e}")))?;
    let mut run = Run {
        dir: create_run_dir(&common.out, &hash)?,
        manifest: RunManifest {
            format: MANIFEST_FORMAT.to_string(),
            schema_version: MANIFEST_SCHEMA_VERSION,
            command: cli.command.name().to_string(),
            study: match &cli.command {
                Command::Ablate { study, .. } => Some(*study),
                _ => None,
            },
            package_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: cfg.seed,
            config: cfg.clone(),
            config_hash: hash,
            threads,
            started_at: Utc::now().to_rfc3339(),
            finished_at: None,
            hardware: Hardware::detect(),
            artifacts: Artifacts::default(),
            exit_code: None,
        },
    };
    run.write_manifest()?;
    log::info!("run directory {}", run.dir.display());
    let result = pool.install(|| match &cli.command {
        Command::Train { resume, .. } => cmd_train(&cfg, &mut run, resume.as_deref()),
        Command::Ablate { study, .. } => cmd_ablate(&cfg, &mut run, *study),
        Command::Bench { .. } => cmd_bench(&cfg, &mut run),
        Command::Eval { checkpoint, .. } => cmd_eval(&cfg, &mut run, checkpoint),
    });
    let code = match &result {
        Ok(code) => *code,
        Err(e) => exit_code(e),
    };
    run.manifest.finished_at = Some(Utc::now().to_rfc3339());
    run.manifest.exit_code = Some(code);
    run.write_manifest()?;
    result.map(|exit_code| Outcome {
        run_dir: run.dir,
        exit_code,
    })
}

fn control(cfg: &RunConfig) -> RunControl {
    RunControl {
        time_budget: cfg.training.time_budget_seconds.map(Duration::from_secs_f64),
        log_every: cfg.training.log_every,
        ..RunControl::default()
    }
}

fn cmd_train(cfg: &RunConfig, run: &mut Run, resume: Option<&Path>) -> Result<i32> {
    let exp = cfg.experiment()?;
    let mut ctl = control(cfg);
    ctl.checkpoint_path = Some(run.path("checkpoint.json"));
    ctl.resume = resume.map(Checkpoint::load).transpose()?;
    run.manifest.artifacts = Artifacts {
        report: Some("report.json".into()),
        loss_csv: Some("loss.csv".into()),
        checkpoint: Some("checkpoint.json".into()),
        ..Artifacts::default()
    };
    let aborted = |report: &RunReport| matches!(report.status, RunStatus::Aborted { .. });
    let mut out = crate::trainer::train_with(&exp.problem, &exp.network, &exp.train, ctl)?;
    if !aborted(&out.report) {
        let holdout = exp.eval.holdout(&exp.problem)?;
        let net = Network::new(exp.network.clone(), out.params.clone())?;
        out.report.final_errors = Some(exp.eval.evaluate(&net, exp.train.smoothing.sigma, &holdout)?);
    }
    out.checkpoint.save(&run.path("checkpoint.json"))?;
    write_json(&run.path("report.json"), &out.report)?;
    write_loss_csv(&run.path("loss.csv"), &out.report)?;
    if let RunStatus::Aborted { reason } = &out.report.status {
        eprintln!("error: training aborted: {reason}");
        return Ok(3);
    }
    if let Some(e) = &out.report.final_errors {
        log::info!("L1 relative {:.4e}, L2 relative {:.4e}", e.l1_relative, e.l2_relative);
    }
    Ok(0)
}

fn cmd_ablate(cfg: &RunConfig, run: &mut Run, study: Study) -> Result<i32> {
    let name = match study {
        Study::Estimators => "estimators",
        Study::Sigma => "sigma",
        Study::Samples => "samples",
    };
    let csv = run.path(&format!("{name}.csv"));
    let json = run.path(&format!("{name}.json"));
    run.manifest.artifacts = Artifacts {
        csv: Some(format!("{name}.csv")),
        json: Some(format!("{name}.json")),
        ..Artifacts::default()
    };
    match study {
        Study::Estimators => {
            let net = Network::init(cfg.estimator_network(), cfg.seed)?;
            let rows = estimator_error_study(StudyBase::Network(&net), &cfg.estimator_study()?)?;
            let csv_rows: Vec<EstimatorCsvRow> = rows
                .iter()
                .map(|r| EstimatorCsvRow {
                    variant: r.variant,
                    kind: r.kind,
                    samples: r.samples,
                    mean_abs_error: r.mean_abs_error,
                    standard_error: r.standard_error,
                })
                .collect();
            write_csv(&csv, &csv_rows)?;
            write_json(&json, &StudySummary::new(name, rows))?;
        }
        Study::Sigma | Study::Samples => {
            let exp = cfg.experiment()?;
            let ctl = control(cfg);
            let rows = if study == Study::Sigma {
                ensure(!cfg.ablate.sigma.is_empty(), || "ablate.sigma: empty grid".to_string())?;
                ablation_sigma(&exp, &cfg.ablate.sigma, &ctl)?
            } else {
                ensure(!cfg.ablate.samples.is_empty(), || "ablate.samples: empty grid".to_string())?;
                ablation_samples(&exp, &cfg.ablate.samples, &ctl)?
            };
            write_csv(&csv, &rows)?;
            write_json(&json, &StudySummary::new(name, rows))?;
        }
    }
    Ok(0)
}

fn cmd_bench(cfg: &RunConfig, run: &mut Run) -> Result<i32> {
    let rows = timing_benchmark(&cfg.timing()?)?;
    run.manifest.artifacts = Artifacts {
        csv: Some("bench.csv".into()),
        json: Some("bench.json".into()),
        ..Artifacts::default()
    };
    write_csv(&run.path("bench.csv"), &rows)?;
    write_json(&run.path("bench.json"), &StudySummary::new("bench", rows))?;
    Ok(0)
}

/// Loads a checkpoint and checks it against the configured network.
pub fn load_checkpoint_for(cfg: &RunConfig, path: &Path) -> Result<Network> {
    let exp = cfg.experiment()?;
    let ckpt = Checkpoint::load(path)?;
    ensure(ckpt.network == exp.network, || {
        format!(
            "checkpoint network {:?} does not match the configured network {:?}",
            ckpt.network.layer_widths, exp.network.layer_widths
        )
    })?;
    ckpt.network()
}

fn cmd_eval(cfg: &RunConfig, run: &mut Run, checkpoint: &Path) -> Result<i32> {
    let net = load_checkpoint_for(cfg, checkpoint)?;
    let exp = cfg.experiment()?;
    let holdout = exp.eval.holdout(&exp.problem)?;
    let errors: ErrorReport = exp.eval.evaluate(&net, exp.train.smoothing.sigma, &holdout)?;
    run.manifest.artifacts = Artifacts {
        json: Some("errors.json".into()),
        ..Artifacts::default()
    };
    write_json(&run.path("errors.json"), &errors)?;
    let text = serde_json::to_string_pretty(&errors).map_err(|e| Error::Config(e.to_string()))?;
    println!("{text}");
    Ok(0)
}

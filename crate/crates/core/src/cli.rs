//! Command-line front end: settings layering, experiment dispatch and output files.
//!
//! Settings resolve in the order command defaults, figure preset, `--config`
//! file, flags; later sources win.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::claims::{
    compare_reduction, run_training_analysis, verify_claim1, verify_claim2,
    verify_claim3_corollary1, verify_momentum_equivalence, ArchChoice, ClaimVerdict, DataSource,
    StepRecord, TrainConfig,
};
use crate::data::parse_class_pair;
use crate::error::{contract, Error, Result};
use crate::optim::OptimizerKind;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;

pub const METRICS_HEADER: &str =
    "step,layer,mean_angle_deg,max_angle_deg,skipped_rows,sigma_ratio,oracle_residual,loss,accuracy";
pub const VELOCITY_HEADER: &str =
    "step,layer,mean_angle_deg,max_angle_deg,skipped_rows,sigma_ratio";

/// Figure ids with a preset configuration.
pub const FIGURES: [u8; 6] = [1, 3, 4, 5, 6, 7];

#[derive(Debug, Parser)]
#[command(
    name = "linrank",
    version,
    about = "Gradient rank experiments on deep linear networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// One-step proportionality checks (C1, C2, C3, COR1).
    VerifyClaims(RunArgs),
    /// Train and record per-step, per-layer angle and rank diagnostics (C4).
    TrainAnalyze(RunArgs),
    /// Train a deep network and a single layer side by side.
    ReduceCompare(RunArgs),
    /// Momentum versus γ-scheduled SGD identity.
    MomentumCheck(RunArgs),
    /// Training analysis with a figure's published settings.
    Figure {
        #[arg(required = true, value_parser = parse_figure_id)]
        ids: Vec<u8>,
        #[command(flatten)]
        run: RunArgs,
    },
}

fn parse_figure_id(s: &str) -> std::result::Result<u8, String> {
    s.parse::<u8>()
        .ok()
        .filter(|id| FIGURES.contains(id))
        .ok_or_else(|| format!("no preset for figure {s}; choose one of 1, 3, 4, 5, 6, 7"))
}

/// Settings that may come from a config file or flags.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct Overrides {
    /// A, B, C, single or dims=n1,k1,...,2
    #[arg(long)]
    arch: Option<String>,
    /// Class pair: a,b ids, names, or presets like cat-dog
    #[arg(long)]
    classes: Option<String>,
    /// cifar:<dir> or synthetic
    #[arg(long)]
    data: Option<String>,
    /// Synthetic data width
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// sgd, momentum or gamma
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Divide preset hidden widths by this factor
    #[arg(long)]
    width_divisor: Option<usize>,
    /// Synthetic samples per class
    #[arg(long)]
    n_per_class: Option<usize>,
    /// Synthetic class separation
    #[arg(long)]
    separation: Option<f64>,
}

#[derive(Debug, Clone, Args)]
struct RunArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// TOML file with the same keys as the flags (flags win)
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "linrank-out")]
    out: PathBuf,
    /// Figure presets to run concurrently
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Write a null timestamp so reruns are byte-identical
    #[arg(long)]
    no_timestamp: bool,
}

/// Fully resolved settings before conversion to a [`TrainConfig`].
#[derive(Debug, Clone)]
struct Settings {
    arch: String,
    classes: String,
    data: String,
    dim: usize,
    batch: usize,
    lr: f64,
    optimizer: String,
    beta: f64,
    steps: usize,
    seed: u64,
    width_divisor: usize,
    n_per_class: usize,
    separation: f64,
}

impl Settings {
    fn base() -> Self {
        Settings {
            arch: "B".into(),
            classes: "cat-dog".into(),
            data: "synthetic".into(),
            dim: crate::data::CIFAR_DIM,
            batch: 128,
            lr: 1e-2,
            optimizer: "sgd".into(),
            beta: 0.9,
            steps: 50,
            seed: 0,
            width_divisor: 1,
            n_per_class: DataSource::DEFAULT_SYNTHETIC_PER_CLASS,
            separation: DataSource::DEFAULT_SEPARATION,
        }
    }

    fn for_command(command: &Command) -> Self {
        let base = Self::base();
        match command {
            Command::VerifyClaims(_) => Settings {
                batch: 30,
                steps: 1,
                ..base
            },
            Command::TrainAnalyze(_) | Command::Figure { .. } => base,
            Command::ReduceCompare(_) => Settings {
                dim: 64,
                batch: 32,
                lr: 5e-2,
                steps: 500,
                ..base
            },
            Command::MomentumCheck(_) => Settings {
                arch: "A".into(),
                optimizer: "momentum".into(),
                ..base
            },
        }
    }

    /// Settings from a figure caption.
    fn for_figure(id: u8) -> Self {
        let base = Self::base();
        let (arch, classes, batch, lr, steps) = match id {
            1 => ("B", "cat-dog", 128, 1e-2, 50),
            3 => ("B", "cat-dog", 128, 1e-2, 500),
            4 => ("A", "ship-truck", 256, 1e-4, 50),
            5 => ("A", "ship-truck", 256, 1e-4, 500),
            6 => ("C", "airplane-automobile", 64, 1e-1, 50),
            7 => ("C", "airplane-automobile", 64, 1e-1, 500),
            _ => unreachable!("figure ids are validated by the parser"),
        };
        Settings {
            arch: arch.into(),
            classes: classes.into(),
            batch,
            lr,
            steps,
            ..base
        }
    }

    fn apply(&mut self, o: &Overrides) {
        macro_rules! take {
            ($($f:ident),*) => { $( if let Some(v) = &o.$f { self.$f = v.clone(); } )* };
        }
        take!(
            arch,
            classes,
            data,
            dim,
            batch,
            lr,
            optimizer,
            beta,
            steps,
            seed,
            width_divisor,
            n_per_class,
            separation
        );
    }

    fn to_config(&self) -> Result<TrainConfig> {
        let Some(arch) = ArchChoice::parse(&self.arch) else {
            contract!("unknown architecture {:?}", self.arch);
        };
        let data = if self.data == "synthetic" {
            DataSource::Synthetic {
                dim: self.dim,
                n_per_class: self.n_per_class,
                separation: self.separation,
            }
        } else if let Some(dir) = self.data.strip_prefix("cifar:") {
            let Some(classes) = parse_class_pair(&self.classes) else {
                contract!("unknown class pair {:?}", self.classes);
            };
            DataSource::Cifar {
                dir: dir.into(),
                classes,
            }
        } else {
            contract!(
                "data source must be cifar:<dir> or synthetic, got {:?}",
                self.data
            );
        };
        let optimizer = match self.optimizer.as_str() {
            "sgd" => OptimizerKind::Sgd,
            "momentum" => OptimizerKind::Momentum { beta: self.beta },
            "gamma" => OptimizerKind::Gamma { beta: self.beta },
            other => contract!("unknown optimizer {other:?}"),
        };
        let cfg = TrainConfig {
            arch,
            width_divisor: self.width_divisor,
            data,
            batch: self.batch,
            learning_rate: self.lr,
            optimizer,
            steps: self.steps,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Provenance block written next to every set of verdicts.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: TrainConfig,
    pub version: String,
    /// Seconds since the Unix epoch; `None` with `--no-timestamp`.
    pub timestamp: Option<u64>,
    pub seed: u64,
    pub shuffle: String,
    /// Files of this run, relative to the output directory.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: &TrainConfig, with_timestamp: bool) -> Self {
        let timestamp = with_timestamp.then(|| {
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs())
        });
        Self {
            command: command.into(),
            config: config.clone(),
            version: env!("CARGO_PKG_VERSION").into(),
            timestamp,
            seed: config.seed,
            shuffle: "seeded reshuffle every epoch, trailing partial batch dropped".into(),
            outputs: Vec::new(),
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Shortest-exact float text: 17 significant digits in scientific notation.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// One row per (step, layer), layers numbered from 0.
pub fn write_metrics_csv(records: &[StepRecord], path: &Path) -> Result<()> {
    if records.is_empty() {
        contract!("no step records to write");
    }
    let mut s = String::with_capacity(records.len() * records[0].layers.len() * 200);
    s.push_str(METRICS_HEADER);
    s.push('\n');
    for r in records {
        for (l, d) in r.layers.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.step,
                l,
                num(d.angles.mean_deg),
                num(d.angles.max_deg),
                d.angles.skipped_rows,
                num(d.rank.sigma_ratio),
                num(d.rank.oracle_residual),
                num(r.loss),
                num(r.accuracy)
            );
        }
    }
    write_file(path, &s)
}

/// Momentum velocity diagnostics; same layout rules as [`write_metrics_csv`].
pub fn write_velocity_csv(records: &[StepRecord], path: &Path) -> Result<()> {
    if records.is_empty() {
        contract!("no step records to write");
    }
    let mut s = String::from(VELOCITY_HEADER);
    s.push('\n');
    for r in records {
        for (l, v) in r.velocities.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.step,
                l,
                num(v.angles.mean_deg),
                num(v.angles.max_deg),
                v.angles.skipped_rows,
                num(v.sigma_ratio)
            );
        }
    }
    write_file(path, &s)
}

#[derive(Serialize)]
struct VerdictDocument<'a> {
    manifest: &'a RunManifest,
    verdicts: &'a [ClaimVerdict],
}

pub fn write_verdicts_json(
    verdicts: &[ClaimVerdict],
    manifest: &RunManifest,
    path: &Path,
) -> Result<()> {
    let doc = VerdictDocument { manifest, verdicts };
    let mut text = serde_json::to_string_pretty(&doc).expect("verdict documents always serialize");
    text.push('\n');
    write_file(path, &text)
}

/// Exit status for a finished run: 0 iff every verdict passed.
pub fn exit_code_for(verdicts: &[ClaimVerdict]) -> i32 {
    if verdicts.iter().all(|v| v.pass) {
        EXIT_PASS
    } else {
        EXIT_FAIL
    }
}

fn error_exit_code(e: &Error) -> i32 {
    match e {
        Error::Contract(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn verdict_line(v: &ClaimVerdict) -> String {
    let mut line = format!(
        "{:<9} {}",
        serde_json::to_value(v.claim_id)
            .unwrap()
            .as_str()
            .unwrap_or(""),
        if v.pass { "PASS" } else { "FAIL" }
    );
    for m in &v.measurements {
        let _ = write!(line, " {}={:.3e}", m.name, m.value);
    }
    line
}

struct Outcome {
    verdicts: Vec<ClaimVerdict>,
    log: Vec<String>,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

/// Runs one experiment and writes its files into `out`.
fn execute(name: &str, cfg: &TrainConfig, out: &Path, with_timestamp: bool) -> Result<Outcome> {
    create_dir(out)?;
    let ds = cfg.load_data()?;
    let mut manifest = RunManifest::new(name, cfg, with_timestamp);
    let mut log = Vec::new();
    let verdicts = match name {
        "verify-claims" => {
            let (c3, cor1) = verify_claim3_corollary1(cfg, &ds)?;
            vec![verify_claim1(cfg, &ds)?, verify_claim2(cfg, &ds)?, c3, cor1]
        }
        "reduce-compare" => {
            let rep = compare_reduction(cfg, &ds)?;
            let mut curves = String::from("step,deep_accuracy,single_accuracy\n");
            for (t, (d, s)) in rep
                .deep_accuracy
                .iter()
                .zip(&rep.single_accuracy)
                .enumerate()
            {
                let _ = writeln!(curves, "{},{},{}", t + 1, num(*d), num(*s));
            }
            write_file(&out.join("reduction.csv"), &curves)?;
            let mut rank = String::from("step,layer,sigma_ratio,oracle_residual\n");
            for (t, layers) in rep.deep_rank.iter().enumerate() {
                for (l, r) in layers.iter().enumerate() {
                    let _ = writeln!(
                        rank,
                        "{},{},{},{}",
                        t + 1,
                        l,
                        num(r.sigma_ratio),
                        num(r.oracle_residual)
                    );
                }
            }
            write_file(&out.join("reduction_rank.csv"), &rank)?;
            manifest
                .outputs
                .extend(["reduction.csv".into(), "reduction_rank.csv".into()]);
            log.push(format!(
                "final accuracy: deep {:.4}, single {:.4}",
                rep.deep_final, rep.single_final
            ));
            vec![rep.verdict]
        }
        "momentum-check" => vec![verify_momentum_equivalence(cfg, &ds)?],
        _ => {
            let (run, verdict) = run_training_analysis(cfg, &ds)?;
            if !run.records.is_empty() {
                write_metrics_csv(&run.records, &out.join("metrics.csv"))?;
                manifest.outputs.push("metrics.csv".into());
                if run.records.iter().any(|r| !r.velocities.is_empty()) {
                    write_velocity_csv(&run.records, &out.join("velocity.csv"))?;
                    manifest.outputs.push("velocity.csv".into());
                }
            }
            if let Some(last) = run.records.last() {
                log.push(format!(
                    "{} steps, final accuracy {:.4}",
                    last.step, last.accuracy
                ));
            }
            vec![verdict]
        }
    };
    manifest.outputs.push("verdicts.json".into());
    write_verdicts_json(&verdicts, &manifest, &out.join("verdicts.json"))?;
    Ok(Outcome { verdicts, log })
}

fn load_overrides(path: &Path) -> Result<Overrides> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    toml::from_str(&text).map_err(|e| Error::Contract(format!("config {}: {e}", path.display())))
}

fn resolve(mut settings: Settings, run: &RunArgs) -> Result<TrainConfig> {
    if let Some(path) = &run.config {
        settings.apply(&load_overrides(path)?);
    }
    settings.apply(&run.overrides);
    settings.to_config()
}

fn report(outcome: &Outcome, label: &str) {
    for line in &outcome.log {
        println!("[{label}] {line}");
    }
    for v in &outcome.verdicts {
        println!("[{label}] {}", verdict_line(v));
    }
}

fn run_figures(ids: &[u8], run: &RunArgs) -> Result<i32> {
    if run.jobs == 0 {
        contract!("--jobs must be at least 1");
    }
    let configs = ids
        .iter()
        .map(|&id| Ok((id, resolve(Settings::for_figure(id), run)?)))
        .collect::<Result<Vec<_>>>()?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<Outcome>>>> =
        Mutex::new((0..ids.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..run.jobs.min(ids.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((id, cfg)) = configs.get(i) else {
                    break;
                };
                let dir = run.out.join(format!("figure-{id}"));
                let r = execute(&format!("figure-{id}"), cfg, &dir, !run.no_timestamp);
                results
                    .lock()
                    .expect("no job panics while holding the lock")[i] = Some(r);
            });
        }
    });
    let mut verdicts = Vec::new();
    let mut first_error = None;
    for ((id, _), r) in configs
        .iter()
        .zip(results.into_inner().expect("jobs finished"))
    {
        match r.expect("every job ran") {
            Ok(o) => {
                report(&o, &format!("figure {id}"));
                verdicts.extend(o.verdicts);
            }
            Err(e) => {
                eprintln!("figure {id}: {e}");
                first_error.get_or_insert(e);
            }
        }
    }
    match first_error {
        Some(e) => Err(e),
        None => Ok(exit_code_for(&verdicts)),
    }
}

fn dispatch(command: Command) -> Result<i32> {
    let defaults = Settings::for_command(&command);
    let (name, run) = match &command {
        Command::Figure { ids, run } => return run_figures(ids, run),
        Command::VerifyClaims(r) => ("verify-claims", r),
        Command::TrainAnalyze(r) => ("train-analyze", r),
        Command::ReduceCompare(r) => ("reduce-compare", r),
        Command::MomentumCheck(r) => ("momentum-check", r),
    };
    let cfg = resolve(defaults, run)?;
    let outcome = execute(name, &cfg, &run.out, !run.no_timestamp)?;
    report(&outcome, name);
    Ok(exit_code_for(&outcome.verdicts))
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                EXIT_USAGE
            } else {
                EXIT_PASS
            };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("linrank: {e}");
            error_exit_code(&e)
        }
    }
}

//! `cpdnet` command-line experiments: synthesize datasets, train and
//! evaluate the registration network, run the iterative baseline, register
//! single pairs and render comparison reports.
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O error,
//! 4 dimension or format error, 5 numeric failure.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod meta;
pub mod spec;
pub mod svg;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use cpdnet_core::cpd::cpd_register;
use cpdnet_core::geometry::io;
use cpdnet_core::model::{checkpoint, NetworkParams};
use cpdnet_core::report::{evaluate_with, EvalOptions, RegistrationReport, REPORT_HEADER};
use cpdnet_core::synth::{build_dataset, load_dataset, write_dataset, Split};
use cpdnet_core::train::{evaluate, train_with};
use cpdnet_core::util::write_atomic;
use cpdnet_core::{Error, Matrix, Params32, PointSet, Result};

use spec::{parse_level_list, parse_noise_list, ExperimentSpec};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_FORMAT: i32 = 4;
pub const EXIT_NUMERIC: i32 = 5;

pub const LEARNED_REPORT: &str = "learned.csv";
pub const BASELINE_REPORT: &str = "cpd.csv";
pub const TRAIN_LOG: &str = "train_log.csv";

#[derive(Debug, Parser)]
#[command(name = "cpdnet", version, about = "Learned and iterative non-rigid point set registration")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct SpecArgs {
    /// Experiment specification (TOML).
    #[arg(long)]
    pub spec: PathBuf,
    /// Output directory; overrides the spec.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed for data, initialization and shuffling; overrides the spec.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated noise-free evaluation levels; overrides the spec.
    #[arg(long)]
    pub levels: Option<String>,
    /// Comma-separated `kind:level` noise cells (kinds gd, po, di); overrides the spec.
    #[arg(long)]
    pub noise: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the training dataset and every evaluation cell to disk.
    Synth(SpecArgs),
    /// Train the network on the synthesized training split.
    Train(SpecArgs),
    /// Score a trained network on every evaluation cell.
    Eval {
        #[command(flatten)]
        spec: SpecArgs,
        /// Checkpoint to evaluate (default: `<out>/model.cpdn`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Worker threads; affects wall time only.
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Score iterative coherent point drift on every evaluation cell.
    Baseline {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Register one source file onto one target file.
    Register {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Directory receiving `transformed.pts` and `drifts.pts`.
        #[arg(long)]
        out: PathBuf,
        /// Register only this many evenly spaced source points.
        #[arg(long)]
        subsample: Option<usize>,
    },
    /// Merge report CSVs into a per-cell summary and a chart.
    Report {
        /// Directory receiving `merged.csv`, `summary.csv` and `chart.svg`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "pre/post registration")]
        title: String,
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
}

/// Maps a failure to its process exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::UnknownShape(_)
        | Error::LevelOutOfRange(_)
        | Error::NonPositiveClip(_)
        | Error::KTooLarge { .. }
        | Error::TooFewPointsLeft { .. }
        | Error::BatchTooSmall(_) => EXIT_CONFIG,
        Error::Io(_) => EXIT_IO,
        Error::DimMismatch(..)
        | Error::UnsupportedDim(_)
        | Error::Format(_)
        | Error::ShapeMismatch { .. }
        | Error::EmptySet
        | Error::EmptyReference
        | Error::NonFiniteCoordinate(_)
        | Error::IndexOutOfRange { .. }
        | Error::NonScalarLoss(..)
        | Error::TapeConsumed => EXIT_FORMAT,
        Error::NonFinite(_) | Error::NonFiniteLoss { .. } | Error::SingularSystem(_) | Error::DegenerateShape => {
            EXIT_NUMERIC
        }
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code. Diagnostics go to standard error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let argv: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(cli.command, &argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn load_spec(a: &SpecArgs) -> Result<(ExperimentSpec, Vec<u8>)> {
    let (mut spec, bytes) = ExperimentSpec::load(&a.spec)?;
    if let Some(out) = &a.out {
        spec.out = out.clone();
    }
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    if let Some(levels) = &a.levels {
        spec.levels = parse_level_list(levels)?;
    }
    if let Some(noise) = &a.noise {
        spec.noise = parse_noise_list(noise)?;
    }
    spec.validate()?;
    Ok((spec, bytes))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    write_atomic(path, contents.as_bytes())
}

fn execute(command: Command, argv: &[String]) -> Result<()> {
    match command {
        Command::Synth(a) => {
            let (spec, bytes) = load_spec(&a)?;
            synth(&spec)?;
            meta::record(&spec.out, "synth", argv, Some(&bytes), Some(spec.seed), None)
        }
        Command::Train(a) => {
            let (spec, bytes) = load_spec(&a)?;
            train(&spec)?;
            meta::record(&spec.out, "train", argv, Some(&bytes), Some(spec.seed), None)
        }
        Command::Eval { spec: a, checkpoint, threads } => {
            let (spec, bytes) = load_spec(&a)?;
            let ckpt = checkpoint.unwrap_or_else(|| spec.model_path());
            eval(&spec, &ckpt, threads)?;
            meta::record(&spec.out, "eval", argv, Some(&bytes), Some(spec.seed), Some(threads))
        }
        Command::Baseline { spec: a, threads } => {
            let (spec, bytes) = load_spec(&a)?;
            baseline(&spec, threads)?;
            meta::record(&spec.out, "baseline", argv, Some(&bytes), Some(spec.seed), Some(threads))
        }
        Command::Register { checkpoint, source, target, out, subsample } => {
            register(&checkpoint, &source, &target, &out, subsample)?;
            meta::record(&out, "register", argv, None, None, None)
        }
        Command::Report { out, title, reports } => {
            report(&reports, &out, &title)?;
            meta::record(&out, "report", argv, None, None, None)
        }
    }
}

pub fn synth(spec: &ExperimentSpec) -> Result<()> {
    let train_cfg = spec.dataset_config(spec.train_level, spec.train_noise, spec.train_pairs);
    let ds = build_dataset(&train_cfg)?;
    create_dir(&spec.train_dir())?;
    write_dataset(&ds, &spec.train_dir())?;
    eprintln!("synth: {} train / {} test pairs -> {}", ds.train.len(), ds.test.len(), spec.train_dir().display());
    for cell in spec.cells() {
        let ds = build_dataset(&spec.dataset_config(cell.level, cell.noise, 0))?;
        let dir = spec.cell_dir(&cell);
        create_dir(&dir)?;
        write_dataset(&ds, &dir)?;
        eprintln!("synth: cell {} ({} pairs)", cell.name, ds.test.len());
    }
    Ok(())
}

pub fn train(spec: &ExperimentSpec) -> Result<()> {
    let ds = load_dataset(&spec.train_dir())?;
    let cfg = spec.train_config();
    if let Some(dir) = &cfg.checkpoint_dir {
        create_dir(dir)?;
    }
    let params = NetworkParams::<f32>::init(spec.dim()?, spec.activation, spec.seed)?;
    let (params, log) = train_with(&ds.train, &ds.test, params, &cfg, |r| {
        eprintln!("train: epoch {} loss {:.6} val {:.6} lr {:.3e}", r.epoch, r.train_loss, r.val_loss, r.lr);
    })?;
    checkpoint::save(&params, &spec.model_path())?;
    write_file(&spec.out.join(TRAIN_LOG), &log.to_csv())
}

/// Every evaluation cell as one split whose ids carry the cell name.
pub fn load_cells(spec: &ExperimentSpec) -> Result<Split> {
    let mut all = Split::default();
    for cell in spec.cells() {
        let dir = spec.cell_dir(&cell);
        let ds = load_dataset(&dir).map_err(|e| match e {
            Error::Io(m) => Error::Io(format!("{m} (run `cpdnet synth` first)")),
            other => other,
        })?;
        for (id, pair) in ds.test.iter() {
            all.ids.push(format!("{}:{id}", cell.name));
            all.pairs.push(pair.clone());
        }
    }
    if all.is_empty() {
        return Err(Error::Config("the spec defines no evaluation cells".into()));
    }
    Ok(all)
}

fn eval_options(spec: &ExperimentSpec, threads: usize) -> EvalOptions {
    EvalOptions { threads: threads.max(1), smoothness_k: spec.smoothness_k, record_timing: spec.train.record_timing }
}

fn write_report(spec: &ExperimentSpec, name: &str, report: &RegistrationReport) -> Result<()> {
    let dir = spec.reports_dir();
    write_file(&dir.join(name), &report.to_csv())?;
    let stem = name.trim_end_matches(".csv");
    write_file(&dir.join(format!("{stem}_summary.csv")), &report.summary_csv())?;
    for c in report.cells() {
        eprintln!(
            "{stem}: level {} {} {}: pre {:.5} post {:.5} ({} pairs)",
            c.level,
            c.noise_kind.as_str(),
            c.noise_level,
            c.pre_cd.mean,
            c.post_cd.mean,
            c.count
        );
    }
    Ok(())
}

pub fn eval(spec: &ExperimentSpec, ckpt: &Path, threads: usize) -> Result<RegistrationReport> {
    let params: Params32 = checkpoint::load(ckpt)?;
    let split = load_cells(spec)?;
    let report = evaluate(&split, &params, &eval_options(spec, threads))?;
    write_report(spec, LEARNED_REPORT, &report)?;
    Ok(report)
}

pub fn baseline(spec: &ExperimentSpec, threads: usize) -> Result<RegistrationReport> {
    let split = load_cells(spec)?;
    let cfg = spec.cpd;
    let report = evaluate_with(&split, &eval_options(spec, threads), |pair| {
        cpd_register(&pair.source, &pair.target, &cfg)?.field(&pair.source)
    })?;
    write_report(spec, BASELINE_REPORT, &report)?;
    Ok(report)
}

/// `count` evenly spaced indices out of `n`.
pub fn subsample_indices(n: usize, count: usize) -> Vec<usize> {
    let count = count.clamp(1, n);
    (0..count).map(|i| i * n / count).collect()
}

pub fn register(ckpt: &Path, source: &Path, target: &Path, out: &Path, subsample: Option<usize>) -> Result<()> {
    let params: Params32 = checkpoint::load(ckpt)?;
    let mut src = io::read(source)?;
    let tgt = io::read(target)?;
    if let Some(k) = subsample {
        src = src.select(&subsample_indices(src.len(), k))?;
    }
    let field = params.register(&src, &tgt)?;
    let drifts = drift_set(&field.drifts)?;
    write_file(&out.join("transformed.pts"), &io::to_text(&field.transformed))?;
    write_file(&out.join("drifts.pts"), &io::to_text(&drifts))?;
    let pre = cpdnet_core::losses::chamfer_per_point(&src, &tgt)?;
    let post = cpdnet_core::losses::chamfer_per_point(&field.transformed, &tgt)?;
    eprintln!("register: {} points, C.D./point {pre:.6} -> {post:.6}", src.len());
    Ok(())
}

fn drift_set(drifts: &Matrix<f64>) -> Result<PointSet> {
    PointSet::new(drifts.cols(), drifts.as_slice().to_vec())
}

pub fn report(inputs: &[PathBuf], out: &Path, title: &str) -> Result<()> {
    let mut named = Vec::with_capacity(inputs.len());
    for path in inputs {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let name = path.file_stem().map_or_else(|| "report".into(), |s| s.to_string_lossy().into_owned());
        named.push((name, RegistrationReport::from_csv(&text)?));
    }
    let mut merged = format!("source,{REPORT_HEADER}\n");
    let mut summary = String::from(
        "source,level,noise_kind,noise_level,count,pre_mean,pre_std,post_mean,post_std,smoothness_mean,ms_mean\n",
    );
    for (name, r) in &named {
        for line in r.to_csv().lines().skip(1) {
            merged.push_str(&format!("{name},{line}\n"));
        }
        for line in r.summary_csv().lines().skip(1) {
            summary.push_str(&format!("{name},{line}\n"));
        }
    }
    write_file(&out.join("merged.csv"), &merged)?;
    write_file(&out.join("summary.csv"), &summary)?;
    write_file(&out.join("chart.svg"), &svg::render(&svg::series_from_reports(&named), title))
}

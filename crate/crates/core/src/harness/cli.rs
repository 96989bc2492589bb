//! `lpf` command line.
//!
//! Every subcommand reads an optional TOML file (`--config`) whose top-level
//! keys mirror the flags (`seed`, `gamma`, `variant`, `lr`, `batch_size`,
//! `epochs`, `out`, `gammas`) plus `[benchmark]` and `[model]` tables.
//! Flags given on the command line win over the file.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error, 3 non-finite loss.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use super::eval::evaluate;
use super::report::{emit_report, read_report, ReportFormat, ReportSet, RunRecord};
use super::sweep::{sweep_gamma, sweep_records, SplitSet};
use super::train::{train, TrainConfig};
use crate::error::{Error, Result};
use crate::model::{read_checkpoint, write_checkpoint, ModelConfig};
use crate::objectives::LossVariant;
use crate::synthbench::{generate_benchmark, read_split, write_split, BenchmarkConfig, Split};

pub const TRAIN_SPLIT: &str = "train.split";
pub const ID_SPLIT: &str = "id-test.split";
pub const OOD_SPLIT: &str = "ood-test.split";
pub const CHECKPOINT: &str = "model.ckpt";
pub const RUN_LOG: &str = "runlog.json";

#[derive(Debug, Parser)]
#[command(name = "lpf", version, about = "Language-prior feedback training on a changing-priors benchmark")]
pub struct Cli {
    /// TOML file with defaults for any flag.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write train, id-test and ood-test split files into `--out`.
    Gen(RunFlags),
    /// Train on a split; writes `model.ckpt` and `runlog.json` into `--out`.
    Train {
        /// Training split file.
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Evaluate a checkpoint on a split; writes a structured report to `--out`.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        split: PathBuf,
        /// Training split, for divergence to the training prior.
        #[arg(long)]
        train_split: Option<PathBuf>,
        #[arg(long)]
        label: Option<String>,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Train one LPF model per γ and report id-test and ood-test accuracy.
    Sweep {
        /// Directory written by `gen`.
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated γ values.
        #[arg(long, value_delimiter = ',')]
        gammas: Vec<f64>,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Merge structured reports and write them as json or csv.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "json")]
        format: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunFlags {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// One of ce, lpf, focal, precomputed.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Contents of a `--config` file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub gamma: Option<f64>,
    pub variant: Option<String>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub out: Option<PathBuf>,
    pub gammas: Option<Vec<f64>>,
    pub benchmark: Option<BenchmarkConfig>,
    pub model: Option<ModelConfig>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.span().map_or(0, |s| 1 + text[..s.start].matches('\n').count()),
            msg: e.message().to_string(),
        })
    }
}

/// Flags merged over the file.
#[derive(Debug, Clone)]
struct Resolved {
    flags: RunFlags,
    file: FileConfig,
}

impl Resolved {
    fn new(flags: RunFlags, file: FileConfig) -> Self {
        Self { flags, file }
    }

    fn seed(&self) -> u64 {
        self.flags.seed.or(self.file.seed).unwrap_or(0)
    }

    fn out(&self) -> Result<PathBuf> {
        self.flags
            .out
            .clone()
            .or_else(|| self.file.out.clone())
            .ok_or_else(|| Error::invalid("out", "an output path is required"))
    }

    fn variant(&self) -> Result<LossVariant> {
        let kind = self.flags.variant.clone().or_else(|| self.file.variant.clone());
        let gamma = self.flags.gamma.or(self.file.gamma);
        let variant = match (kind.as_deref().unwrap_or("lpf"), gamma) {
            ("lpf", g) => LossVariant::lpf(g.unwrap_or(1.0))?,
            (k @ ("ce" | "focal" | "precomputed"), None) => k.parse()?,
            (k @ ("ce" | "focal" | "precomputed"), Some(_)) => {
                return Err(Error::invalid("gamma", format!("`{k}` takes no gamma")));
            }
            (other, _) => return Err(Error::invalid("variant", format!("unknown variant `{other}`"))),
        };
        Ok(variant)
    }

    fn train_config(&self, variant: LossVariant, split: &Split) -> Result<TrainConfig> {
        let seed = self.seed();
        let model = self.file.model.clone().unwrap_or_default().fit_to(split);
        let mut config = TrainConfig::seeded(variant, model, seed);
        config.lr = self.flags.lr.or(self.file.lr).unwrap_or(config.lr);
        config.batch_size = self.flags.batch_size.or(self.file.batch_size).unwrap_or(config.batch_size);
        config.epochs = self.flags.epochs.or(self.file.epochs).unwrap_or(config.epochs);
        config.validate()?;
        Ok(config)
    }
}

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidArgument { .. } => 1,
        Error::NonFinite { .. } => 3,
        Error::Shape { .. }
        | Error::TargetOutOfRange { .. }
        | Error::Parse { .. }
        | Error::VersionMismatch { .. }
        | Error::Io { .. }
        | Error::ConfigMismatch(_) => 2,
    }
}

/// Parses `args` (program name first), runs the command and returns its exit code.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

pub fn run(cli: Cli) -> Result<String> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Gen(flags) => gen(Resolved::new(flags, file)),
        Command::Train { data, flags } => train_cmd(&data, Resolved::new(flags, file)),
        Command::Eval {
            checkpoint,
            split,
            train_split,
            label,
            flags,
        } => eval_cmd(&checkpoint, &split, train_split.as_deref(), label, Resolved::new(flags, file)),
        Command::Sweep { data, gammas, flags } => {
            let gammas = if gammas.is_empty() { file.gammas.clone().unwrap_or_default() } else { gammas };
            sweep_cmd(&data, &gammas, Resolved::new(flags, file))
        }
        Command::Report { inputs, format, out } => report_cmd(&inputs, &format, &out),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn gen(r: Resolved) -> Result<String> {
    let config = BenchmarkConfig {
        seed: r.seed(),
        ..r.file.benchmark.clone().unwrap_or_default()
    };
    let out = r.out()?;
    let bench = generate_benchmark(&config)?;
    create_dir(&out)?;
    write_split(&bench.train, out.join(TRAIN_SPLIT))?;
    write_split(&bench.id_test, out.join(ID_SPLIT))?;
    write_split(&bench.ood_test, out.join(OOD_SPLIT))?;
    Ok(format!(
        "wrote {} / {} / {} samples to {}",
        bench.train.len(),
        bench.id_test.len(),
        bench.ood_test.len(),
        out.display()
    ))
}

fn train_cmd(data: &Path, r: Resolved) -> Result<String> {
    let variant = r.variant()?;
    let out = r.out()?;
    let split = read_split(data)?;
    let config = r.train_config(variant, &split)?;
    let (model, log) = train(&split, &config)?;
    create_dir(&out)?;
    write_checkpoint(&model, out.join(CHECKPOINT))?;
    let log_path = out.join(RUN_LOG);
    let mut text = serde_json::to_string_pretty(&log).expect("run log serializes");
    text.push('\n');
    fs::write(&log_path, text).map_err(|e| Error::io(&log_path, e))?;
    let last = log.epochs.last();
    Ok(format!(
        "trained {variant} for {} epochs; final train accuracy {:.4}",
        config.epochs,
        last.map_or(f64::NAN, |e| e.train_accuracy)
    ))
}

fn eval_cmd(
    checkpoint: &Path,
    split_path: &Path,
    train_split: Option<&Path>,
    label: Option<String>,
    r: Resolved,
) -> Result<String> {
    let out = r.out()?;
    let model = read_checkpoint(checkpoint)?;
    let split = read_split(split_path)?;
    let train_prior = train_split.map(read_split).transpose()?.map(|s| s.prior);
    let report = evaluate(&model, &split, train_prior.as_ref())?;
    let variant = match r.flags.variant.is_some() || r.file.variant.is_some() {
        true => Some(r.variant()?),
        false => None,
    };
    let summary = format!("{} accuracy {:.4}", split.role, report.overall_accuracy);
    let set = ReportSet {
        records: vec![RunRecord {
            label: label.unwrap_or_else(|| checkpoint.display().to_string()),
            variant: variant.map_or_else(|| "unspecified".into(), |v| v.kind().to_string()),
            gamma: variant.map_or(0.0, |v| v.gamma()),
            seed: model.config.seed,
            split: split.role.to_string(),
            report,
        }],
    };
    emit_report(&set, &out, ReportFormat::Structured)?;
    Ok(summary)
}

fn sweep_cmd(data: &Path, gammas: &[f64], r: Resolved) -> Result<String> {
    if r.flags.variant.is_some() || r.flags.gamma.is_some() {
        return Err(Error::invalid("variant", "sweep always trains LPF; pass --gammas instead"));
    }
    let out = r.out()?;
    let train_split = read_split(data.join(TRAIN_SPLIT))?;
    let id_test = read_split(data.join(ID_SPLIT))?;
    let ood_test = read_split(data.join(OOD_SPLIT))?;
    let base = r.train_config(LossVariant::Ce, &train_split)?;
    let splits = SplitSet {
        train: &train_split,
        id_test: &id_test,
        ood_test: &ood_test,
    };
    let rows = sweep_gamma(gammas, &base, splits)?;
    emit_report(&sweep_records(&rows, base.seed), &out, ReportFormat::Structured)?;
    let mut summary = String::from("gamma\tid\tood");
    for row in &rows {
        summary.push_str(&format!(
            "\n{}\t{:.4}\t{:.4}",
            row.gamma, row.id.overall_accuracy, row.ood.overall_accuracy
        ));
    }
    Ok(summary)
}

fn report_cmd(inputs: &[PathBuf], format: &str, out: &Path) -> Result<String> {
    let format: ReportFormat = format.parse()?;
    let sets = inputs.iter().map(read_report).collect::<Result<Vec<_>>>()?;
    let merged = ReportSet::merge(sets);
    emit_report(&merged, out, format)?;
    Ok(format!("wrote {} records to {}", merged.records.len(), out.display()))
}

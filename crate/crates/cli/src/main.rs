//! `exrec`: operator surface for the exercise recommendation pipeline.
//!
//! Subcommands: `synth`, `train-progress`, `train-mastery`, `recommend`,
//! `evaluate`, `bench-ho`. All of them read one TOML configuration file
//! (`--config`); `--seed` and `--out` override the configured values. Exit
//! codes: 0 ok, 2 config/validation error, 3 numeric failure, 4 I/O failure.

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use exrec_core::eval::ReportFormat;

use config::RunConfig;
use run::{EvaluateOptions, HoOverrides, SweepMode};

#[derive(Parser)]
#[command(name = "exrec", version, about = "Exercise recommendation pipeline")]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configured global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Print the effective configuration as TOML and exit.
    #[arg(long, global = true)]
    print_config: bool,
}

#[derive(Args, Clone, Copy)]
struct HoArgs {
    /// Override the optimizer population size N.
    #[arg(long = "ho-n")]
    ho_n: Option<usize>,
    /// Override the optimizer iteration budget T.
    #[arg(long = "ho-t")]
    ho_t: Option<usize>,
    /// Override the seed the optimizer stream is derived from.
    #[arg(long = "ho-seed")]
    ho_seed: Option<u64>,
}

impl From<HoArgs> for HoOverrides {
    fn from(a: HoArgs) -> Self {
        HoOverrides { population: a.ho_n, iterations: a.ho_t, seed: a.ho_seed }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus: bank.csv, log.csv, truth.csv.
    Synth,
    /// Train the learning-progress model; writes a checkpoint and loss_trace.csv.
    TrainProgress {
        /// Continue from the existing checkpoint, keeping the epoch counter.
        #[arg(long)]
        resume: bool,
    },
    /// Train the mastery tracer; writes a checkpoint and loss_trace.csv.
    TrainMastery {
        #[arg(long)]
        resume: bool,
    },
    /// Produce a recommendation list for one student.
    Recommend {
        #[arg(long)]
        student: u32,
        #[command(flatten)]
        ho: HoArgs,
    },
    /// Compute per-student metrics; optional parameter sweeps.
    Evaluate {
        /// Comma-separated student ids; all students when omitted.
        #[arg(long, value_delimiter = ',')]
        students: Option<Vec<u32>>,
        /// Randomly sample this many students (ignored with --students).
        #[arg(long)]
        sample: Option<usize>,
        /// Sweep one report per setting: "list-len" or "population".
        #[arg(long)]
        sweep: Option<String>,
        /// Report format: csv or json.
        #[arg(long, default_value = "csv")]
        format: String,
        #[command(flatten)]
        ho: HoArgs,
    },
    /// Benchmark the optimizer on sphere and Rastrigin.
    BenchHo {
        /// Number of benchmark seeds.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[command(flatten)]
        ho: HoArgs,
    },
}

fn effective_config(common: &CommonArgs) -> exrec_core::Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(out) = &common.out {
        config.out_dir = out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn dispatch(cli: &Cli, config: &RunConfig) -> exrec_core::Result<()> {
    match &cli.command {
        Command::Synth => run::cmd_synth(config),
        Command::TrainProgress { resume } => run::cmd_train_progress(config, *resume),
        Command::TrainMastery { resume } => run::cmd_train_mastery(config, *resume),
        Command::Recommend { student, ho } => run::cmd_recommend(config, *student, (*ho).into()),
        Command::Evaluate { students, sample, sweep, format, ho } => {
            let sweep = match sweep.as_deref() {
                None => SweepMode::None,
                Some("list-len") => SweepMode::ListLen,
                Some("population") => SweepMode::Population,
                Some(other) => {
                    return Err(exrec_core::Error::InvalidConfig(format!(
                        "--sweep must be \"list-len\" or \"population\", got {other:?}"
                    )))
                }
            };
            let format = match format.as_str() {
                "csv" => ReportFormat::Csv,
                "json" => ReportFormat::Json,
                other => {
                    return Err(exrec_core::Error::InvalidConfig(format!(
                        "--format must be \"csv\" or \"json\", got {other:?}"
                    )))
                }
            };
            let opts = EvaluateOptions {
                students: students.clone(),
                sample: *sample,
                sweep,
                overrides: (*ho).into(),
                format,
            };
            run::cmd_evaluate(config, &opts).map(|_| ())
        }
        Command::BenchHo { seeds, ho } => run::cmd_bench_ho(config, (*ho).into(), *seeds).map(|_| ()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match effective_config(&cli.common) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(run::exit_code(&e) as u8);
        }
    };
    if cli.common.print_config {
        return match run::print_config(&config) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(run::exit_code(&e) as u8)
            }
        };
    }
    match dispatch(&cli, &config) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(run::exit_code(&e) as u8)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hat_cli::compress::{cmd_compress, CompressOptions};
use hat_cli::config::ExperimentConfig;
use hat_cli::fetch::{cmd_fetch, FileStatus};
use hat_cli::report::{cmd_report, ReportMode};
use hat_cli::run::{cmd_run, DataStore, RunOptions, SeedOutcome};
use hat_cli::{presets, CliError, Result};
use hat_core::trainer::{EpochRecord, Observer};

#[derive(Parser)]
#[command(name = "hat", version, about = "Hard attention to the task: continual learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every mode, sweep point and seed of a config.
    Run {
        /// Config file, or `preset:NAME`.
        #[arg(long)]
        config: PathBuf,
        /// Seeds to run instead of the config's list.
        #[arg(long = "seed")]
        seeds: Vec<u64>,
        /// Retrain seeds that already completed.
        #[arg(long)]
        force: bool,
        /// Print one line per epoch.
        #[arg(long, short)]
        verbose: bool,
    },
    /// Aggregate completed runs into a table.
    Report {
        #[arg(long, value_enum)]
        mode: ReportMode,
        /// Directories searched for completed runs.
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Also write the table to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Retrain one task for compression and prune it.
    Compress {
        #[arg(long)]
        ckpt: PathBuf,
        /// Task number, starting at 1.
        #[arg(long)]
        task: usize,
        #[arg(long, default_value_t = 1.5)]
        c: f64,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Epoch cap for the compression training.
        #[arg(long)]
        max_epochs: Option<usize>,
        /// MNIST directory, if the run used one.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Output directory for the pruned checkpoint and statistics.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
        #[arg(long, short)]
        verbose: bool,
    },
    /// Download or copy a dataset and verify its checksums.
    FetchData {
        #[arg(long)]
        name: String,
        #[arg(long)]
        dest: PathBuf,
        /// Base URL or local directory holding the files (raw or .gz).
        #[arg(long)]
        source: Option<String>,
    },
    /// List the shipped configs, or print one.
    Presets { name: Option<String> },
}

struct EpochPrinter;

impl Observer for EpochPrinter {
    fn epoch(&mut self, r: &EpochRecord) {
        eprintln!("[compress] epoch {} lr {:.2e} train {:.4} valid {:.4}", r.epoch, r.lr, r.train_loss, r.valid_loss);
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, seeds, force, verbose } => {
            let cfg = ExperimentConfig::load(&config)?;
            let runs = cmd_run(&cfg, &RunOptions { seeds, force, verbose }, &mut DataStore::default())?;
            for r in runs {
                let what = if r.outcome == SeedOutcome::Trained { "trained" } else { "skipped" };
                println!("{what}\t{}", r.dir.display());
            }
            Ok(())
        }
        Command::Report { mode, dirs, out } => {
            print!("{}", cmd_report(mode, &dirs, out.as_deref())?);
            Ok(())
        }
        Command::Compress { ckpt, task, c, threshold, max_epochs, data_dir, out, force, verbose } => {
            let opts = CompressOptions { c, threshold, max_epochs, data_dir, out, force, ..CompressOptions::new(ckpt, task) };
            let stats = if verbose {
                cmd_compress(&opts, &mut DataStore::default(), &mut EpochPrinter)?
            } else {
                cmd_compress(&opts, &mut DataStore::default(), &mut ())?
            };
            print!("{}", stats.tsv());
            Ok(())
        }
        Command::FetchData { name, dest, source } => {
            let report = cmd_fetch(&name, &dest, source.as_deref())?;
            for (file, status) in &report.files {
                let what = if *status == FileStatus::AlreadyValid { "present" } else { "fetched" };
                println!("{what}\t{file}");
            }
            println!("verified\t{} train / {} test samples", report.train_samples, report.test_samples);
            Ok(())
        }
        Command::Presets { name: None } => {
            for name in presets::names() {
                println!("{name}");
            }
            Ok(())
        }
        Command::Presets { name: Some(name) } => {
            let text = presets::get(&name).ok_or_else(|| CliError::Usage(format!("unknown preset {name:?}")))?;
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

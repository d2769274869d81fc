use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use indirect_cli::config::{self, FisherConfig, RunConfig};
use indirect_cli::presets::{self, PRESETS};
use indirect_cli::{exit, pipeline, CliError, Context, Result};

#[derive(Parser)]
#[command(name = "indirectml", version, about = "Learning classifiers from indirect observations")]
struct Cli {
    /// Dataset cache directory.
    #[arg(long, global = true, env = "INDIRECTML_CACHE", default_value = ".indirectml-cache")]
    cache: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Run config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Adult download location.
    #[arg(long)]
    source_url: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic train/test samples and every supervision source.
    Generate(RunArgs),
    /// Train on all configured sources; writes checkpoint, metrics and manifest.
    Train(RunArgs),
    /// Accuracy of a trained run on its held-out sample.
    Eval(RunArgs),
    /// Fisher information report for a class distribution and transition.
    Fisher {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Identifiability of each supervision source of a run config.
    Identify(RunArgs),
    /// SVG plots for a run directory.
    Plot {
        /// Run directory (as written by `train`).
        #[arg(long, alias = "run")]
        out: PathBuf,
    },
    /// Download the Adult files into the cache, or verify the cached copy.
    FetchAdult {
        #[arg(long)]
        source_url: Option<String>,
    },
    /// Run a named experiment end to end.
    Reproduce {
        /// One of synthetic-llp, adult-llp, coarse-combo, fisher-suite.
        experiment: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "reproduce")]
        out: PathBuf,
        #[arg(long)]
        source_url: Option<String>,
    },
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(indirect_core::Error::from)?;
    println!("{text}");
    Ok(())
}

fn run_config(args: &RunArgs) -> Result<RunConfig> {
    config::load::<RunConfig>(&args.config)?.resolve(args.seed, args.out.as_deref())
}

fn context(cache: &Path, source_url: Option<&String>) -> Context {
    Context {
        cache_dir: cache.to_path_buf(),
        source_url: source_url.cloned(),
    }
}

fn run(cli: Cli) -> Result<i32> {
    match &cli.command {
        Command::Generate(args) => {
            let cfg = run_config(args)?;
            for p in pipeline::cmd_generate(&cfg)? {
                println!("{}", p.display());
            }
        }
        Command::Train(args) => {
            let cfg = run_config(args)?;
            let report = pipeline::cmd_train(&cfg, &context(&cli.cache, args.source_url.as_ref()))?;
            print_json(&report.metrics)?;
        }
        Command::Eval(args) => {
            let cfg = run_config(args)?;
            print_json(&pipeline::cmd_eval(&cfg, &context(&cli.cache, args.source_url.as_ref()))?)?;
        }
        Command::Fisher { config: path, out } => {
            let cfg: FisherConfig = config::load(path)?;
            let report = indirect_cli::cmd_fisher(&cfg, out.as_deref())?;
            print!("{}", report.table());
            if !report.identifiable {
                eprintln!("transition is not identifiable: asymptotic variances are infinite");
                return Ok(exit::NOT_IDENTIFIABLE);
            }
        }
        Command::Identify(args) => {
            let cfg = run_config(args)?;
            let report = indirect_cli::cmd_identify(&cfg, &context(&cli.cache, args.source_url.as_ref()))?;
            print_json(&report)?;
            if !report.combined_identifiable {
                return Ok(exit::NOT_IDENTIFIABLE);
            }
        }
        Command::Plot { out } => {
            if let Some(refused) = presets::write_plots(out)? {
                eprintln!("decision plot skipped: {refused}");
            }
            println!("{}", out.join("loss.svg").display());
        }
        Command::FetchAdult { source_url } => {
            let report = indirect_cli::cmd_fetch_adult(&context(&cli.cache, source_url.as_ref()))?;
            if report.records != report.expected_records {
                eprintln!(
                    "warning: {} records found, {} expected",
                    report.records, report.expected_records
                );
            }
            print_json(&report)?;
        }
        Command::Reproduce { experiment, seed, out, source_url } => {
            if !PRESETS.contains(&experiment.as_str()) {
                return Err(CliError::config(
                    "experiment",
                    format!("unknown preset {experiment:?}; choose one of {}", PRESETS.join(", ")),
                ));
            }
            let outcome = indirect_cli::reproduce(experiment, *seed, out, &context(&cli.cache, source_url.as_ref()))?;
            print!("{}", outcome.report);
        }
    }
    Ok(exit::OK)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use prefdyn_cli::config::{Format, Seeds, SweepParam};
use prefdyn_cli::{run, ExperimentConfig, Report};

/// DPO reward-margin dynamics on Gaussian concept clusters.
#[derive(Parser)]
#[command(name = "prefdyn", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration; omitted fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Summary layout on stdout.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate margins, check the envelopes, and write the theory report.
    Simulate {
        /// Also write each training set.
        #[arg(long)]
        export_datasets: bool,
        /// Skip per-seed trajectory tables.
        #[arg(long)]
        no_trajectories: bool,
    },
    /// Repeat the pipeline across values of one parameter.
    Sweep {
        #[arg(long, value_enum)]
        vary: Option<SweepParam>,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Monte Carlo frequency of the inner-product concentration events.
    Concentration {
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Check the multi-token gradient decomposition on random models.
    MultitokenVerify {
        #[arg(long)]
        instances: Option<usize>,
    },
    /// Mean cosine-similarity matrix of a labelled embedding table.
    EmbedAnalyze {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Remove the global mean embedding first.
        #[arg(long)]
        subtract_mean: bool,
    },
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.common.seed {
        cfg.seeds = Seeds::List(vec![seed]);
    }
    if let Some(out) = &cli.common.out {
        cfg.outputs.dir = out.clone();
    }
    if let Some(format) = cli.common.format {
        cfg.outputs.format = format;
    }
    match &cli.command {
        Command::Simulate {
            export_datasets,
            no_trajectories,
        } => {
            cfg.outputs.datasets |= export_datasets;
            cfg.outputs.trajectories &= !no_trajectories;
        }
        Command::Sweep { vary, values } => {
            if let Some(v) = vary {
                cfg.sweep.vary = *v;
            }
            if let Some(v) = values {
                cfg.sweep.values = v.clone();
            }
        }
        Command::Concentration { trials } => {
            if let Some(t) = trials {
                cfg.trials = *t;
            }
        }
        Command::MultitokenVerify { instances } => {
            if let Some(n) = instances {
                cfg.multitoken.instances = *n;
            }
        }
        Command::EmbedAnalyze {
            input,
            output,
            subtract_mean,
        } => {
            if input.is_some() {
                cfg.embed.input = input.clone();
            }
            if output.is_some() {
                cfg.embed.output = output.clone();
            }
            cfg.embed.subtract_mean |= subtract_mean;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<(Report, Format)> {
    prefdyn_cli::init_thread_pool()?;
    let cfg = resolve(cli)?;
    let report = match cli.command {
        Command::Simulate { .. } => run::run_simulate(&cfg)?.report,
        Command::Sweep { .. } => run::run_sweep(&cfg)?.report,
        Command::Concentration { .. } => run::run_concentration(&cfg)?.report,
        Command::MultitokenVerify { .. } => run::run_multitoken_verify(&cfg)?.report,
        Command::EmbedAnalyze { .. } => run::run_embed_analyze(&cfg)?.report,
    };
    Ok((report, cfg.outputs.format))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok((report, format)) => {
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            print!("{}", report.render(format));
            if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

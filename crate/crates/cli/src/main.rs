use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gar::gradcheck::GradcheckConfig;
use gar_cli::commands::{cmd_diagnose, cmd_gradcheck, cmd_run, DiagnoseOptions};
use gar_cli::load_config;

#[derive(Parser)]
#[command(name = "gar", version, about = "Graph-based activity regularization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file of key=value lines
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. --set unsup.b_L=16 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain, then train with the graph regularizer, writing artifacts to output_dir
    Run {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Graph report for a checkpoint on a seeded test-set sample
    Diagnose {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 250)]
        sample: usize,
        /// Where to write the CSVs and report (default: next to the checkpoint)
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Finite-difference check of every analytic gradient
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 20)]
        probes: usize,
        #[arg(long, default_value_t = 0.0, hide = true)]
        perturb: f64,
    },
    /// Print the resolved configuration with all defaults
    PrintConfig {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let mut stdout = io::stdout().lock();
    match cli.command {
        Command::Run { config } => {
            let cfg = load_config(config.config.as_deref(), &config.overrides)?;
            cmd_run(&cfg, &mut io::stderr())?;
            Ok(true)
        }
        Command::Diagnose {
            checkpoint,
            sample,
            output,
            config,
        } => {
            let cfg = load_config(config.config.as_deref(), &config.overrides)?;
            let opts = DiagnoseOptions {
                checkpoint,
                sample,
                output_dir: output,
            };
            cmd_diagnose(&cfg, &opts, &mut stdout)?;
            Ok(true)
        }
        Command::Gradcheck {
            seed,
            trials,
            probes,
            perturb,
        } => {
            let cfg = GradcheckConfig {
                seed,
                trials,
                probes_per_trial: probes,
                perturb,
            };
            cmd_gradcheck(&cfg, &mut stdout)
        }
        Command::PrintConfig { config } => {
            let cfg = load_config(config.config.as_deref(), &config.overrides)?;
            stdout.write_all(cfg.render().as_bytes())?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

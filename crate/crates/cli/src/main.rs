use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use hum_cli::commands::default_checkpoint;
use hum_cli::{cmd_ablate, cmd_eval, cmd_gen, cmd_report, cmd_sweep, cmd_train, exit_code, Overrides, RunConfig, SweepSpec};
use hum_core::eval::Averaging;

#[derive(Parser)]
#[command(name = "hum", version, about = "Multi-domain sequential recommendation experiments")]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "HUM_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON run config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        RunConfig::from_args(
            self.config.as_deref(),
            &Overrides {
                seed: self.seed,
                out: self.out.clone(),
            },
        )
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus.
    Gen(RunArgs),
    /// Train a model.
    Train(RunArgs),
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Defaults to the checkpoint in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and evaluate every ablation variant.
    Ablate(RunArgs),
    /// Train and evaluate along one swept setting.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Inline JSON such as '{"r": [0.1, 0.2]}' or a path to such a file.
        #[arg(long)]
        spec: String,
    },
    /// Print the reports in run directories as tables.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "macro")]
        averaging: AveragingArg,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum AveragingArg {
    Macro,
    Micro,
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Gen(args) => {
            let path = cmd_gen(&args.resolve()?)?;
            println!("{}", path.display());
        }
        Command::Train(args) => {
            let run = cmd_train(&args.resolve()?)?;
            println!("{}", serde_json::to_string_pretty(&run.summary)?);
        }
        Command::Eval { run, checkpoint } => {
            let cfg = run.resolve()?;
            let checkpoint = checkpoint.unwrap_or_else(|| default_checkpoint(&cfg));
            let eval = cmd_eval(&cfg, &checkpoint)?;
            print!("{}", hum_cli::commands::report_table(&eval.report));
        }
        Command::Ablate(args) => {
            let cfg = args.resolve()?;
            cmd_ablate(&cfg)?;
            print!("{}", cmd_report(&cfg.out, cfg.eval.averaging)?);
        }
        Command::Sweep { run, spec } => {
            let cfg = run.resolve()?;
            let spec = SweepSpec::from_arg(&spec)?;
            cmd_sweep(&cfg, &spec)?;
            print!("{}", cmd_report(&cfg.out, cfg.eval.averaging)?);
        }
        Command::Report { dirs, averaging } => {
            let averaging = match averaging {
                AveragingArg::Macro => Averaging::Macro,
                AveragingArg::Micro => Averaging::Micro,
            };
            for dir in dirs {
                println!("== {}", dir.display());
                print!("{}", cmd_report(&dir, averaging)?);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // clap exits with code 2 on usage errors.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}

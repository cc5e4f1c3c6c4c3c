use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use shadow_rating::commands::{
    cmd_evaluate, cmd_explain, cmd_synth, cmd_train, parse_config, read_config, Context, Overrides,
};
use shadow_rating::Result;

/// Shadow credit ratings: synthetic data, cross-validated model comparison,
/// training and Shapley explanations.
#[derive(Parser)]
#[command(version)]
struct Cli {
    /// Worker threads for folds and explanations (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic rating dataset.
    Synth(RunArgs),
    /// Cross-validate the requested model kinds.
    Evaluate(RunArgs),
    /// Fit one model on the full dataset and save its artifacts.
    Train(RunArgs),
    /// Explain rows with a trained model.
    Explain(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load<T: DeserializeOwned>(args: &RunArgs) -> Result<(T, PathBuf)> {
    match &args.config {
        Some(path) => {
            let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
            Ok((read_config(path)?, base))
        }
        None => Ok((parse_config("{}")?, PathBuf::new())),
    }
}

fn run(cli: Cli) -> Result<()> {
    let (Command::Synth(args)
    | Command::Evaluate(args)
    | Command::Train(args)
    | Command::Explain(args)) = &cli.command;
    let overrides = Overrides {
        seed: args.seed,
        out: args.out.clone(),
    };
    macro_rules! ctx {
        ($cfg:expr, $base:expr) => {
            Context::resolve($cfg.seed, $cfg.out.as_deref(), &overrides, &$base)?
        };
    }
    match &cli.command {
        Command::Synth(a) => {
            let (cfg, base) = load::<shadow_rating::commands::SynthConfig>(a)?;
            let ctx = ctx!(cfg, base);
            let m = cmd_synth(cfg, &ctx)?;
            log::info!("wrote {} rows to {}", m.n_rows, ctx.out.display());
        }
        Command::Evaluate(a) => {
            let (cfg, base) = load::<shadow_rating::commands::EvaluateConfig>(a)?;
            let ctx = ctx!(cfg, base);
            cmd_evaluate(cfg, &ctx)?;
            log::info!(
                "report written to {}",
                ctx.out.join("report.json").display()
            );
        }
        Command::Train(a) => {
            let (cfg, base) = load::<shadow_rating::commands::TrainRunConfig>(a)?;
            let ctx = ctx!(cfg, base);
            let t = cmd_train(cfg, &ctx)?;
            log::info!(
                "artifacts written to {} (fingerprint {})",
                ctx.out.display(),
                t.fingerprint
            );
        }
        Command::Explain(a) => {
            let (cfg, base) = load::<shadow_rating::commands::ExplainConfig>(a)?;
            let ctx = ctx!(cfg, base);
            let e = cmd_explain(cfg, &ctx)?;
            log::info!("explained {} rows into {}", e.len(), ctx.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
        {
            eprintln!("error: cannot start {jobs} workers: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = format!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                msg.push_str(&format!("\n  caused by: {s}"));
                src = s.source();
            }
            eprintln!("{msg}");
            ExitCode::from(e.kind().exit_code() as u8)
        }
    }
}

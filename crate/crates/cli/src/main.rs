use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use forcedual_cli::commands::{self, Context};
use forcedual_cli::{CliError, CliResult, SceneConfig};

#[derive(Debug, Parser)]
#[command(name = "forcedual", version, about = "Force-dual subspaces: build, simulate, validate and serve scenes")]
struct Cli {
    /// Scene configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for randomized steps; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for assembly and solves (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More logging; repeat for debug output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build subspace containers, a manifest and a report.
    Build,
    /// Run the scripted simulation and write a trajectory.
    Simulate {
        /// Output directory of a previous `build`; built on the fly otherwise.
        #[arg(long)]
        subspaces: Option<PathBuf>,
        /// Schedule file, overriding the config's.
        #[arg(long)]
        schedule: Option<PathBuf>,
    },
    /// Run the oracle checks; exits with 2 when a threshold is missed.
    Validate {
        /// Only check this subspace container against the scene.
        #[arg(long)]
        subspace: Option<PathBuf>,
    },
    /// Host the live session over WebSocket.
    Serve {
        #[arg(long)]
        subspaces: Option<PathBuf>,
        /// Address to bind, overriding the config.
        #[arg(long)]
        bind: Option<String>,
        /// Stop after this many seconds.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Write per-frame surface meshes from a trajectory.
    ExportObj {
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long)]
        subspaces: Option<PathBuf>,
        /// Keep every n-th frame.
        #[arg(long, default_value_t = 1)]
        every: usize,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::input(format!("cannot configure {n} threads: {e}")))?;
    }
    let config_path = cli.config.ok_or_else(|| CliError::input("--config is required"))?;
    let ctx = Context::new(SceneConfig::load(&config_path)?, cli.seed, cli.out);
    match cli.command {
        Command::Build => {
            let built = commands::build(&ctx)?;
            print!("{}", built.report);
        }
        Command::Simulate { subspaces, schedule } => {
            let sim = commands::simulate(&ctx, subspaces.as_deref(), schedule.as_deref())?;
            println!("wrote {} ({} frames)", sim.trajectory.display(), sim.components.len());
        }
        Command::Validate { subspace } => {
            let outcome = commands::validate(&ctx, subspace.as_deref())?;
            print!("{}", outcome.report());
            outcome.into_result()?;
        }
        Command::Serve { subspaces, bind, duration } => {
            commands::serve(&ctx, subspaces.as_deref(), bind.as_deref(), duration)?;
        }
        Command::ExportObj { trajectory, subspaces, every } => {
            let files = commands::export_obj(&ctx, &trajectory, subspaces.as_deref(), every)?;
            println!("wrote {} files to {}", files.len(), ctx.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use loader_rl_core::Error;

/// Train, evaluate and emulate the loader approach agent.
#[derive(Debug, Parser)]
#[command(name = "loader-rl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Where the acting policy comes from.
#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct PolicyArgs {
    /// Checkpoint with trained parameters (acts greedily).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Built-in policy by name (e.g. `scripted`).
    #[arg(long)]
    policy: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the default configuration file.
    Defaults {
        /// Output path; prints to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a policy with PPO.
    Train {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory for metrics and checkpoints.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        total_timesteps: Option<u64>,
    },
    /// Run greedy evaluation episodes and report statistics.
    Eval {
        #[command(flatten)]
        source: PolicyArgs,
        /// Run config; must match the checkpoint's environment.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report path; prints to stdout when omitted.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Record one simulated episode as a CSV trace.
    Replay {
        #[command(flatten)]
        source: PolicyArgs,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        trace: PathBuf,
        /// Min-max scale every numeric column to [0, 1].
        #[arg(long)]
        normalized: bool,
    },
    /// Record one episode under deployment conditions (sensor delay, slower
    /// control rate, tapered braking, PID speed control).
    Emulate {
        #[command(flatten)]
        source: PolicyArgs,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Position fix age in seconds.
        #[arg(long, allow_negative_numbers = true)]
        delay: Option<f64>,
        /// Control rate as a fraction of the simulation rate.
        #[arg(long)]
        rate_scale: Option<f64>,
        /// `ideal` or `tapered`.
        #[arg(long)]
        brake: Option<String>,
        /// `pid` or `instant`.
        #[arg(long)]
        speed_control: Option<String>,
        /// Distance from start that ends the episode, or `none` for the
        /// training radius.
        #[arg(long)]
        travel_limit: Option<String>,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        normalized: bool,
    },
    /// Render the learning curve of a metrics file as SVG.
    Plot {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io { .. } => 2,
        Error::Numerical(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LOADER_RL_LOG", "info"))
        .format_timestamp(None)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };

    let result = match cli.command {
        Command::Defaults { out } => commands::defaults(out.as_deref()),
        Command::Train {
            config,
            seed,
            out,
            total_timesteps,
        } => commands::train(&config, seed, &out, total_timesteps),
        Command::Eval {
            source,
            config,
            episodes,
            seed,
            report,
        } => commands::eval(&source, config.as_deref(), episodes, seed, report.as_deref()),
        Command::Replay {
            source,
            config,
            seed,
            trace,
            normalized,
        } => commands::replay(&source, config.as_deref(), seed, &trace, normalized),
        Command::Emulate {
            source,
            config,
            seed,
            delay,
            rate_scale,
            brake,
            speed_control,
            travel_limit,
            trace,
            normalized,
        } => commands::emulate(
            &source,
            config.as_deref(),
            seed,
            commands::EmulationOverrides {
                delay,
                rate_scale,
                brake,
                speed_control,
                travel_limit,
            },
            &trace,
            normalized,
        ),
        Command::Plot { metrics, out } => commands::plot(&metrics, &out),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

use std::fs;
use std::path::Path;

use loader_rl_core::emulator::run_emulated_episode;
use loader_rl_core::policy::{policies, run_episode, PolicySource};
use loader_rl_core::train::{read_metrics, RunDirectory};
use loader_rl_core::{evaluate, ApproachEnv, BrakeModel, Checkpoint, Error, EpisodeTrace, Policy, Result, RunConfig, Trainer};

use crate::PolicyArgs;

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn load_config(path: &Path) -> Result<RunConfig> {
    RunConfig::parse(&read_text(path)?).map_err(|e| match e {
        Error::Config { line, message } => Error::Config {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

pub fn defaults(out: Option<&Path>) -> Result<()> {
    let text = RunConfig::default().to_file_string();
    match out {
        Some(path) => write_file(path, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn train(config: &Path, seed: Option<u64>, out: &Path, total_timesteps: Option<u64>) -> Result<()> {
    let mut run = load_config(config)?;
    if let Some(seed) = seed {
        run.seed = seed;
    }
    if let Some(total) = total_timesteps {
        run.train.total_timesteps = total;
    }
    run.validate()?;
    log::info!("training with config digest {}", run.digest());
    let mut directory = RunDirectory::create(out, &run)?;
    write_file(&out.join("config.txt"), run.to_file_string().as_bytes())?;
    let mut trainer = Trainer::new(run)?;
    let summary = trainer.run(&mut directory)?;
    log::info!(
        "finished: {} timesteps, {} updates, {} episodes",
        summary.timesteps,
        summary.updates,
        summary.episodes
    );
    Ok(())
}

/// The run config, acting policy and config digest for a command.
struct Setup {
    run: RunConfig,
    policy: Box<dyn Policy>,
}

fn setup(source: &PolicyArgs, config: Option<&Path>) -> Result<Setup> {
    let explicit = config.map(load_config).transpose()?;
    let checkpoint = match &source.checkpoint {
        Some(path) => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            Some(Checkpoint::from_bytes(&bytes).map_err(|e| match e {
                Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
                other => other,
            })?)
        }
        None => None,
    };
    if let (Some(ckpt), Some(run)) = (&checkpoint, &explicit) {
        if let Some(msg) = ckpt.env_mismatch(run) {
            return Err(Error::Mismatch(msg));
        }
    }
    let run = match (explicit, &checkpoint) {
        (Some(run), _) => run,
        (None, Some(ckpt)) => ckpt.config.clone(),
        (None, None) => RunConfig::default(),
    };
    let (name, params) = match (&source.policy, &checkpoint) {
        (Some(name), _) => (name.as_str(), None),
        (None, ckpt) => ("greedy", ckpt.as_ref().map(|c| &c.params)),
    };
    let policy = policies().get(name)?(&PolicySource { run: &run, params })?;
    Ok(Setup { run, policy })
}

pub fn eval(source: &PolicyArgs, config: Option<&Path>, episodes: usize, seed: u64, report: Option<&Path>) -> Result<()> {
    let Setup { run, mut policy } = setup(source, config)?;
    let env = ApproachEnv::new(run.env, run.vehicle)?;
    let result = evaluate(&env, policy.as_mut(), episodes, seed, &run.digest())?;
    let text = result.to_text();
    match report {
        Some(path) => write_file(path, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn write_trace(trace: &EpisodeTrace, path: &Path, normalized: bool) -> Result<()> {
    let text = trace.to_csv_string(normalized)?;
    write_file(path, text.as_bytes())?;
    log::info!(
        "{} steps, outcome {}, return {:.4}",
        trace.rows.len(),
        trace.outcome().name(),
        trace.total_reward()
    );
    Ok(())
}

pub fn replay(source: &PolicyArgs, config: Option<&Path>, seed: u64, trace: &Path, normalized: bool) -> Result<()> {
    let Setup { run, mut policy } = setup(source, config)?;
    let env = ApproachEnv::new(run.env, run.vehicle)?;
    let episode = run_episode(&env, seed, policy.as_mut(), &run.digest())?;
    write_trace(&episode, trace, normalized)
}

#[derive(Debug, Default)]
pub struct EmulationOverrides {
    pub delay: Option<f64>,
    pub rate_scale: Option<f64>,
    pub brake: Option<String>,
    pub speed_control: Option<String>,
    pub travel_limit: Option<String>,
}

pub fn emulate(
    source: &PolicyArgs,
    config: Option<&Path>,
    seed: u64,
    overrides: EmulationOverrides,
    trace: &Path,
    normalized: bool,
) -> Result<()> {
    let Setup { run, mut policy } = setup(source, config)?;
    let mut emu = run.emulation.clone();
    if let Some(delay) = overrides.delay {
        emu.position_delay = delay;
    }
    if let Some(rate) = overrides.rate_scale {
        emu.rate_scale = rate;
    }
    if let Some(brake) = overrides.brake {
        emu.brake_model = BrakeModel::from_name(&brake)?;
    }
    if let Some(control) = overrides.speed_control {
        emu.speed_control = control;
    }
    if let Some(limit) = overrides.travel_limit {
        emu.travel_limit = match limit.as_str() {
            "none" => None,
            v => Some(
                v.parse()
                    .map_err(|_| Error::invalid(format!("travel limit must be a number or `none`, got `{v}`")))?,
            ),
        };
    }
    emu.validate()?;
    let env = ApproachEnv::new(run.env, run.vehicle)?;
    let episode = run_emulated_episode(&env, &emu, policy.as_mut(), seed, &run.digest())?;
    write_trace(&episode, trace, normalized)
}

pub fn plot(metrics: &Path, out: &Path) -> Result<()> {
    let file = fs::File::open(metrics).map_err(|e| Error::io(metrics, e))?;
    let rows = read_metrics(file).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", metrics.display())),
        other => other,
    })?;
    if rows.is_empty() {
        return Err(Error::format(format!("{}: no metrics rows", metrics.display())));
    }
    let svg = loader_rl_core::plot::learning_curve_svg(&rows)?;
    write_file(out, svg.as_bytes())
}

//! Run configuration as a flat `section.key = value` text file.
//!
//! Blank lines and `#` comments are ignored. Every key must be present
//! exactly once; unknown keys are rejected with their line number. The
//! canonical rendering (sorted keys, shortest round-trip floats) is what the
//! config digest hashes, so formatting differences never change the digest.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use crate::emulator::{EmulationConfig, UtmPosition};
use crate::env::{EnvConfig, LiftTermMode};
use crate::error::{Error, Result};
use crate::oracle::OracleConfig;
use crate::ppo::TrainConfig;
use crate::vehicle::{BrakeModel, VehicleParams};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub seed: u64,
    pub env: EnvConfig,
    pub vehicle: VehicleParams,
    pub train: TrainConfig,
    pub emulation: EmulationConfig,
    pub oracle: OracleConfig,
}

type Getter = fn(&RunConfig) -> String;
type Setter = fn(&mut RunConfig, &str) -> std::result::Result<(), String>;

fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse::<T>().map_err(|_| format!("cannot parse `{v}` as a number"))
}

fn flag(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got `{v}`")),
    }
}

macro_rules! field {
    ($key:literal, $($path:ident).+, number) => {
        (
            $key,
            (|c: &RunConfig| c.$($path).+.to_string()) as Getter,
            (|c: &mut RunConfig, v: &str| {
                c.$($path).+ = num(v)?;
                Ok(())
            }) as Setter,
        )
    };
    ($key:literal, $($path:ident).+, flag) => {
        (
            $key,
            (|c: &RunConfig| c.$($path).+.to_string()) as Getter,
            (|c: &mut RunConfig, v: &str| {
                c.$($path).+ = flag(v)?;
                Ok(())
            }) as Setter,
        )
    };
}

fn fields() -> Vec<(&'static str, Getter, Setter)> {
    vec![
        field!("run.seed", seed, number),
        field!("env.target_distance", env.target_distance, number),
        field!("env.vicinity", env.vicinity, number),
        field!("env.speed_threshold", env.speed_threshold, number),
        field!("env.lift_goal_frac", env.lift_goal_frac, number),
        field!("env.out_of_range_radius", env.out_of_range_radius, number),
        field!("env.max_episode_time", env.max_episode_time, number),
        field!("env.time_penalty", env.time_penalty, number),
        field!("env.lift_reward_scale", env.lift_reward_scale, number),
        (
            "env.lift_term",
            |c| c.env.lift_term.name().to_string(),
            |c, v| {
                c.env.lift_term = LiftTermMode::from_name(v).map_err(|e| e.to_string())?;
                Ok(())
            },
        ),
        field!("env.dt", env.dt, number),
        field!("env.lift_start_mean", env.lift_start_mean, number),
        field!("env.lift_start_jitter", env.lift_start_jitter, number),
        field!("vehicle.cruise_speed", vehicle.cruise_speed, number),
        field!("vehicle.ideal_decel", vehicle.ideal_decel, number),
        field!("vehicle.lift_rate", vehicle.lift_rate, number),
        field!("vehicle.lift_min", vehicle.lift_min, number),
        field!("vehicle.lift_max", vehicle.lift_max, number),
        field!("vehicle.steering_limit", vehicle.steering_limit, number),
        field!("vehicle.taper_initial_pedal", vehicle.taper.initial_pedal, number),
        field!("vehicle.taper_time_constant", vehicle.taper.taper_time_constant, number),
        field!("train.learning_rate", train.learning_rate, number),
        field!("train.n_steps", train.n_steps, number),
        field!("train.batch_size", train.batch_size, number),
        field!("train.n_epochs", train.n_epochs, number),
        field!("train.gamma", train.gamma, number),
        field!("train.gae_lambda", train.gae_lambda, number),
        field!("train.clip_range", train.clip_range, number),
        field!("train.ent_coef", train.ent_coef, number),
        field!("train.vf_coef", train.vf_coef, number),
        field!("train.max_grad_norm", train.max_grad_norm, number),
        field!("train.n_envs", train.n_envs, number),
        field!("train.total_timesteps", train.total_timesteps, number),
        (
            "train.exploration",
            |c| c.train.exploration.clone(),
            |c, v| {
                c.train.exploration = v.to_string();
                Ok(())
            },
        ),
        field!("train.noise_resample_every", train.noise_resample_every, number),
        field!("train.hidden_units", train.hidden_units, number),
        field!("train.normalize_advantage", train.normalize_advantage, flag),
        field!("train.normalize_observations", train.normalize_observations, flag),
        field!("train.eval_every", train.eval_every, number),
        field!("train.eval_episodes", train.eval_episodes, number),
        field!("train.checkpoint_every", train.checkpoint_every, number),
        field!("emu.position_delay", emulation.position_delay, number),
        field!("emu.rate_scale", emulation.rate_scale, number),
        field!("emu.pid_kp", emulation.pid.kp, number),
        field!("emu.pid_ki", emulation.pid.ki, number),
        field!("emu.pid_kd", emulation.pid.kd, number),
        field!("emu.pid_integral_limit", emulation.pid.integral_limit, number),
        field!("emu.accel_limit", emulation.accel_limit, number),
        (
            "emu.brake_model",
            |c| c.emulation.brake_model.name().to_string(),
            |c, v| {
                c.emulation.brake_model = BrakeModel::from_name(v).map_err(|e| e.to_string())?;
                Ok(())
            },
        ),
        (
            "emu.speed_control",
            |c| c.emulation.speed_control.clone(),
            |c, v| {
                c.emulation.speed_control = v.to_string();
                Ok(())
            },
        ),
        field!("emu.utm_easting", emulation.utm_origin.easting, number),
        field!("emu.utm_northing", emulation.utm_origin.northing, number),
        (
            "emu.travel_limit",
            |c| c.emulation.travel_limit.map_or_else(|| "none".to_string(), |v| v.to_string()),
            |c, v| {
                c.emulation.travel_limit = if v == "none" { None } else { Some(num(v)?) };
                Ok(())
            },
        ),
        field!("oracle.brake_margin", oracle.brake_margin, number),
    ]
}

/// Keys hashed into the environment digest: everything that changes what an
/// episode looks like to the agent.
fn is_env_key(key: &str) -> bool {
    key.starts_with("env.") || key.starts_with("vehicle.")
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.vehicle.validate()?;
        self.env.validate(&self.vehicle)?;
        self.train.validate()?;
        crate::distribution::registry().get(&self.train.exploration)?;
        self.emulation.validate()?;
        self.oracle.validate()
    }

    pub fn entries(&self) -> BTreeMap<&'static str, String> {
        fields().into_iter().map(|(k, get, _)| (k, get(self))).collect()
    }

    /// Sorted `key = value` lines.
    pub fn to_canonical_string(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Config file text with section comments, as written by `defaults`.
    pub fn to_file_string(&self) -> String {
        let mut out = String::from("# loader-rl run configuration\n");
        let mut section = "";
        for (key, get, _) in fields() {
            let prefix = key.split('.').next().unwrap_or("");
            if prefix != section {
                section = prefix;
                out.push_str(&format!("\n# [{section}]\n"));
            }
            out.push_str(&format!("{key} = {}\n", get(self)));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let table = fields();
        let mut config = RunConfig::default();
        let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: line_no,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let (name, _, set) = table.iter().find(|(k, _, _)| *k == key).ok_or_else(|| Error::Config {
                line: line_no,
                message: format!("unknown key `{key}`"),
            })?;
            if let Some(first) = seen.insert(name, line_no) {
                return Err(Error::Config {
                    line: line_no,
                    message: format!("duplicate key `{key}` (first set on line {first})"),
                });
            }
            set(&mut config, value).map_err(|message| Error::Config {
                line: line_no,
                message: format!("{key}: {message}"),
            })?;
        }
        if let Some((missing, _, _)) = table.iter().find(|(k, _, _)| !seen.contains_key(k)) {
            return Err(Error::MissingKey(missing.to_string()));
        }
        config.validate()?;
        Ok(config)
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_canonical_string().as_bytes()))
    }

    pub fn env_digest(&self) -> String {
        let text: String = self
            .entries()
            .into_iter()
            .filter(|(k, _)| is_env_key(k))
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect();
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn utm_origin(&self) -> UtmPosition {
        self.emulation.utm_origin
    }
}

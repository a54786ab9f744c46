//! The approach task: start with a random heading, drive toward a point a
//! fixed distance ahead, stop close to it at low speed with the boom raised.

use std::f64::consts::TAU;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng;
use crate::vehicle::{step_vehicle, BrakeModel, Controls, VehicleParams, VehicleState};

/// Agent command: brake engaged, boom moving up.
pub type Action = Controls;

pub const OBS_DIM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LiftTermMode {
    /// `scale * (min(lift, goal) - min(prev_lift, goal))`
    GoalProgress,
    /// `prev_lift - goal * current_lift`, unscaled.
    Literal,
}

impl LiftTermMode {
    pub fn name(self) -> &'static str {
        match self {
            LiftTermMode::GoalProgress => "goal_progress",
            LiftTermMode::Literal => "literal",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "goal_progress" => Ok(LiftTermMode::GoalProgress),
            "literal" => Ok(LiftTermMode::Literal),
            other => Err(Error::invalid(format!(
                "unknown lift term `{other}` (expected goal_progress or literal)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvConfig {
    pub target_distance: f64,
    pub vicinity: f64,
    pub speed_threshold: f64,
    pub lift_goal_frac: f64,
    pub out_of_range_radius: f64,
    pub max_episode_time: f64,
    /// Reward subtracted per accumulated step.
    pub time_penalty: f64,
    pub lift_reward_scale: f64,
    pub lift_term: LiftTermMode,
    pub dt: f64,
    pub lift_start_mean: f64,
    pub lift_start_jitter: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            target_distance: 5.0,
            vicinity: 1.5,
            speed_threshold: 0.1,
            lift_goal_frac: 0.95,
            out_of_range_radius: 10.0,
            max_episode_time: 15.0,
            time_penalty: 1e-4,
            // total lift shaping over 0.5 -> 0.95 equals total distance shaping over 5 m
            lift_reward_scale: 5.0 / 0.45,
            lift_term: LiftTermMode::GoalProgress,
            dt: 1.0 / 50.0,
            lift_start_mean: 0.5,
            lift_start_jitter: 0.03,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self, vehicle: &VehicleParams) -> Result<()> {
        let finite = [
            self.target_distance,
            self.vicinity,
            self.speed_threshold,
            self.lift_goal_frac,
            self.out_of_range_radius,
            self.max_episode_time,
            self.time_penalty,
            self.lift_reward_scale,
            self.dt,
            self.lift_start_mean,
            self.lift_start_jitter,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("env config values must be finite"));
        }
        if !(self.vicinity > 0.0
            && self.vicinity < self.target_distance
            && self.target_distance < self.out_of_range_radius)
        {
            return Err(Error::invalid(
                "env requires 0 < vicinity < target_distance < out_of_range_radius",
            ));
        }
        if !(self.speed_threshold > 0.0 && self.speed_threshold < vehicle.cruise_speed) {
            return Err(Error::invalid("env speed_threshold must be in (0, cruise_speed)"));
        }
        if !(self.lift_goal_frac > 0.0 && self.lift_goal_frac < 1.0) {
            return Err(Error::invalid("env lift_goal_frac must be in (0, 1)"));
        }
        if !(self.dt > 0.0) || !(self.max_episode_time > 0.0) {
            return Err(Error::invalid("env dt and max_episode_time must be positive"));
        }
        if self.time_penalty < 0.0 || self.lift_reward_scale < 0.0 || self.lift_start_jitter < 0.0 {
            return Err(Error::invalid(
                "env time_penalty, lift_reward_scale and lift_start_jitter must be non-negative",
            ));
        }
        let lo = self.lift_start_mean - self.lift_start_jitter;
        let hi = self.lift_start_mean + self.lift_start_jitter;
        if lo < vehicle.lift_min || hi > vehicle.lift_max {
            return Err(Error::invalid("env lift start range must lie within the lift limits"));
        }
        Ok(())
    }

    /// Boom position the success condition must exceed.
    pub fn lift_goal(&self, vehicle: &VehicleParams) -> f64 {
        self.lift_goal_frac * vehicle.lift_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub rel_x: f64,
    pub rel_y: f64,
    pub speed: f64,
    pub lift: f64,
}

impl Observation {
    pub fn to_array(&self) -> [f64; OBS_DIM] {
        [self.rel_x, self.rel_y, self.speed, self.lift]
    }

    pub fn distance(&self) -> f64 {
        self.rel_x.hypot(self.rel_y)
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    Running,
    Success,
    OutOfRange,
    Timeout,
}

impl Outcome {
    pub fn name(self) -> &'static str {
        match self {
            Outcome::Running => "running",
            Outcome::Success => "success",
            Outcome::OutOfRange => "out_of_range",
            Outcome::Timeout => "timeout",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "running" => Ok(Outcome::Running),
            "success" => Ok(Outcome::Success),
            "out_of_range" => Ok(Outcome::OutOfRange),
            "timeout" => Ok(Outcome::Timeout),
            other => Err(Error::format(format!("unknown outcome `{other}`"))),
        }
    }

    pub fn is_terminal(self) -> bool {
        self != Outcome::Running
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardBreakdown {
    pub progress_term: f64,
    pub lift_term: f64,
    pub time_term: f64,
    pub terminal_term: f64,
    pub total: f64,
    pub done: bool,
    pub outcome: Outcome,
}

impl RewardBreakdown {
    fn terminal(outcome: Outcome, value: f64) -> Self {
        Self {
            progress_term: 0.0,
            lift_term: 0.0,
            time_term: 0.0,
            terminal_term: value,
            total: value,
            done: true,
            outcome,
        }
    }
}

/// Termination flags evaluated before the reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TerminationFlags {
    pub out_of_range: bool,
    pub max_time: bool,
}

/// Per-step reward. Failure flags take precedence over success, success
/// over shaping; terminal steps carry no shaping.
#[allow(clippy::too_many_arguments)]
pub fn compute_reward(
    prev_distance: f64,
    curr_distance: f64,
    prev_lift: f64,
    curr_lift: f64,
    speed: f64,
    step_count: u64,
    flags: TerminationFlags,
    config: &EnvConfig,
) -> RewardBreakdown {
    if flags.out_of_range || flags.max_time {
        let outcome = if flags.out_of_range {
            Outcome::OutOfRange
        } else {
            Outcome::Timeout
        };
        return RewardBreakdown::terminal(outcome, -1.0);
    }
    // lift is normalized, so the max lift height is 1
    let goal = config.lift_goal_frac;
    if curr_distance < config.vicinity && speed < config.speed_threshold && curr_lift > goal {
        return RewardBreakdown::terminal(Outcome::Success, 1.0);
    }
    let progress_term = prev_distance - curr_distance;
    let lift_term = match config.lift_term {
        LiftTermMode::GoalProgress => config.lift_reward_scale * (curr_lift.min(goal) - prev_lift.min(goal)),
        LiftTermMode::Literal => prev_lift - goal * curr_lift,
    };
    let time_term = -config.time_penalty * step_count as f64;
    RewardBreakdown {
        progress_term,
        lift_term,
        time_term,
        terminal_term: 0.0,
        total: progress_term + lift_term + time_term,
        done: false,
        outcome: Outcome::Running,
    }
}

/// Point `distance` ahead of `start` along `heading` (clockwise from north).
pub fn target_from_heading(start: (f64, f64), heading: f64, distance: f64) -> (f64, f64) {
    (start.0 + distance * heading.sin(), start.1 + distance * heading.cos())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub vehicle: VehicleState,
    pub target_x: f64,
    pub target_y: f64,
    pub start_x: f64,
    pub start_y: f64,
    pub step_count: u64,
    pub prev_distance: f64,
    pub prev_lift: f64,
    pub done: bool,
    pub outcome: Outcome,
    pub rng: ChaCha8Rng,
}

impl EnvState {
    pub fn distance_to_target(&self) -> f64 {
        (self.target_x - self.vehicle.x).hypot(self.target_y - self.vehicle.y)
    }

    pub fn distance_from_start(&self) -> f64 {
        (self.vehicle.x - self.start_x).hypot(self.vehicle.y - self.start_y)
    }

    /// Signed displacement past the target along the initial heading.
    pub fn overshoot(&self) -> f64 {
        let (dx, dy) = (self.vehicle.x - self.start_x, self.vehicle.y - self.start_y);
        let heading = self.vehicle.heading;
        let target = (self.target_x - self.start_x).hypot(self.target_y - self.start_y);
        dx * heading.sin() + dy * heading.cos() - target
    }
}

/// Absolute offsets to the target plus speed and lift.
pub fn build_observation(env: &EnvState) -> Observation {
    Observation {
        rel_x: (env.target_x - env.vehicle.x).abs(),
        rel_y: (env.target_y - env.vehicle.y).abs(),
        speed: env.vehicle.speed,
        lift: env.vehicle.lift,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: RewardBreakdown,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApproachEnv {
    pub config: EnvConfig,
    pub vehicle: VehicleParams,
}

impl ApproachEnv {
    pub fn new(config: EnvConfig, vehicle: VehicleParams) -> Result<Self> {
        vehicle.validate()?;
        config.validate(&vehicle)?;
        Ok(Self { config, vehicle })
    }

    pub fn reset(&self, seed: u64) -> (EnvState, Observation) {
        self.reset_inner(seed, None)
    }

    /// Like [`reset`](Self::reset) but with a fixed heading; the start lift
    /// is drawn exactly as `reset` would draw it for the same seed.
    pub fn reset_with_heading(&self, seed: u64, heading: f64) -> (EnvState, Observation) {
        self.reset_inner(seed, Some(heading))
    }

    fn reset_inner(&self, seed: u64, heading: Option<f64>) -> (EnvState, Observation) {
        let mut rng = rng::stream(seed, rng::ENV_STREAM);
        let drawn = rng.gen::<f64>() * TAU;
        let heading = heading.unwrap_or(drawn);
        let jitter = self.config.lift_start_jitter;
        let lift = self.config.lift_start_mean + if jitter > 0.0 { rng.gen_range(-jitter..=jitter) } else { 0.0 };
        let vehicle = VehicleState {
            speed: self.vehicle.cruise_speed,
            ..VehicleState::at_rest(0.0, 0.0, heading, lift)
        };
        let (target_x, target_y) = target_from_heading((0.0, 0.0), heading, self.config.target_distance);
        let state = EnvState {
            vehicle,
            target_x,
            target_y,
            start_x: 0.0,
            start_y: 0.0,
            step_count: 0,
            prev_distance: self.config.target_distance,
            prev_lift: lift,
            done: false,
            outcome: Outcome::Running,
            rng,
        };
        let obs = build_observation(&state);
        (state, obs)
    }

    /// Applies `action` through the simulated vehicle with ideal braking.
    pub fn step(&self, env: &mut EnvState, action: Action) -> Result<StepResult> {
        if env.done {
            return Err(Error::IllegalState("step called on a finished episode".into()));
        }
        let next = step_vehicle(&env.vehicle, action, self.config.dt, &self.vehicle, BrakeModel::Ideal)?;
        self.advance(env, next)
    }

    /// Moves the episode to `next` (produced by some plant model) and scores
    /// the transition.
    pub fn advance(&self, env: &mut EnvState, next: VehicleState) -> Result<StepResult> {
        self.advance_with_radius(env, next, self.config.out_of_range_radius)
    }

    pub(crate) fn advance_with_radius(
        &self,
        env: &mut EnvState,
        next: VehicleState,
        out_of_range_radius: f64,
    ) -> Result<StepResult> {
        if env.done {
            return Err(Error::IllegalState("step called on a finished episode".into()));
        }
        env.vehicle = next;
        env.step_count += 1;
        let distance = env.distance_to_target();
        let flags = TerminationFlags {
            out_of_range: env.distance_from_start() > out_of_range_radius,
            // tolerance absorbs accumulated rounding in the clock
            max_time: env.vehicle.elapsed + 1e-9 >= self.config.max_episode_time,
        };
        let reward = compute_reward(
            env.prev_distance,
            distance,
            env.prev_lift,
            env.vehicle.lift,
            env.vehicle.speed,
            env.step_count,
            flags,
            &self.config,
        );
        env.prev_distance = distance;
        env.prev_lift = env.vehicle.lift;
        env.done = reward.done;
        env.outcome = reward.outcome;
        Ok(StepResult {
            observation: build_observation(env),
            reward,
            done: reward.done,
        })
    }
}

/// True when the initial offset is nearly aligned with one axis, where one
/// observed coordinate starts close to zero.
pub fn is_degenerate_heading(heading: f64) -> bool {
    heading.sin().abs() < 0.05 || heading.cos().abs() < 0.05
}

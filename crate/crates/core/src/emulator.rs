//! Deployment emulation: runs a policy against a plant that behaves like the
//! physical machine rather than the training simulator. Position fixes
//! arrive late, the controller runs at a fraction of the simulation rate,
//! a PID loop holds cruise speed and the brake pedal tapers.

use std::collections::VecDeque;

use crate::env::{target_from_heading, ApproachEnv, Observation};
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::registry::Registry;
use crate::trace::{EmulationColumns, EpisodeTrace, TraceRow};
use crate::vehicle::{check_step_args, integrate, step_vehicle, BrakeModel, Controls, VehicleParams, VehicleState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Clamp on the accumulated error integral, in m/s·s.
    pub integral_limit: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        Self {
            kp: 0.8,
            ki: 0.3,
            kd: 0.0,
            integral_limit: 1.0,
        }
    }
}

impl PidGains {
    pub fn validate(&self) -> Result<()> {
        if ![self.kp, self.ki, self.kd].iter().all(|g| g.is_finite()) {
            return Err(Error::invalid("pid gains must be finite"));
        }
        if !(self.integral_limit > 0.0 && self.integral_limit.is_finite()) {
            return Err(Error::invalid("pid integral_limit must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PidState {
    pub integral: f64,
    pub prev_error: Option<f64>,
}

/// One PID update on the speed error. The output lies in [-1, 1]: positive
/// values request throttle, negative values request brake pedal.
pub fn pid_throttle(state: &PidState, target_v: f64, measured_v: f64, dt: f64, gains: &PidGains) -> (f64, PidState) {
    let error = target_v - measured_v;
    let integral = (state.integral + error * dt).clamp(-gains.integral_limit, gains.integral_limit);
    let derivative = state.prev_error.map_or(0.0, |prev| (error - prev) / dt);
    let command = (gains.kp * error + gains.ki * integral + gains.kd * derivative).clamp(-1.0, 1.0);
    (
        command,
        PidState {
            integral,
            prev_error: Some(error),
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionSample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

/// Time-stamped position history that answers "where did the sensor say we
/// were `delay` seconds ago".
#[derive(Debug, Clone, PartialEq)]
pub struct DelayBuffer {
    delay: f64,
    initial: PositionSample,
    samples: VecDeque<PositionSample>,
}

impl DelayBuffer {
    pub fn new(delay: f64, initial: PositionSample) -> Result<Self> {
        if !(delay >= 0.0 && delay.is_finite()) {
            return Err(Error::invalid(format!("position delay must be non-negative, got {delay}")));
        }
        Ok(Self {
            delay,
            initial,
            samples: VecDeque::from([initial]),
        })
    }

    pub fn delay(&self) -> f64 {
        self.delay
    }

    pub fn push(&mut self, sample: PositionSample) -> Result<()> {
        if let Some(last) = self.samples.back() {
            if !(sample.t > last.t) {
                return Err(Error::invalid(format!(
                    "delay buffer timestamps must increase ({} after {})",
                    sample.t, last.t
                )));
            }
        }
        self.samples.push_back(sample);
        // drop samples that can no longer be the answer for `sample.t` or later
        let horizon = sample.t - self.delay;
        while self.samples.len() > 1 && self.samples[1].t <= horizon {
            self.samples.pop_front();
        }
        Ok(())
    }

    /// Newest sample stamped at or before `now - delay`, or the initial
    /// sample while nothing is old enough yet.
    pub fn read(&self, now: f64) -> PositionSample {
        let horizon = now - self.delay;
        self.samples
            .iter()
            .rev()
            .find(|s| s.t <= horizon)
            .copied()
            .unwrap_or(self.initial)
    }
}

pub fn delayed_position(buffer: &DelayBuffer, now: f64) -> PositionSample {
    buffer.read(now)
}

/// Easting / northing in metres.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UtmPosition {
    pub easting: f64,
    pub northing: f64,
}

/// Observation built from map positions: the target sits `target_distance`
/// ahead of the start pose, and the offsets are taken relative to it.
pub fn utm_relative_observation(
    current: UtmPosition,
    start: UtmPosition,
    heading: f64,
    target_distance: f64,
    speed: f64,
    lift: f64,
) -> Observation {
    let (target_e, target_n) = target_from_heading((start.easting, start.northing), heading, target_distance);
    Observation {
        rel_x: (target_e - current.easting).abs(),
        rel_y: (target_n - current.northing).abs(),
        speed,
        lift,
    }
}

/// Speed regulation of the emulated plant.
pub trait SpeedController: std::fmt::Debug {
    fn name(&self) -> &'static str;

    /// Recomputes the throttle/brake command; called at controller rate.
    fn update(&mut self, target_v: f64, measured_v: f64, dt: f64) -> f64;

    /// Advances the plant one step with the agent's controls and the held command.
    fn plant_step(
        &self,
        state: &VehicleState,
        controls: Controls,
        command: f64,
        dt: f64,
        params: &VehicleParams,
        brake: BrakeModel,
    ) -> Result<VehicleState>;
}

/// Speed snaps to cruise whenever the agent is not braking, as in training.
#[derive(Debug, Clone, Default)]
pub struct InstantSpeed;

impl SpeedController for InstantSpeed {
    fn name(&self) -> &'static str {
        "instant"
    }

    fn update(&mut self, _target_v: f64, _measured_v: f64, _dt: f64) -> f64 {
        0.0
    }

    fn plant_step(
        &self,
        state: &VehicleState,
        controls: Controls,
        _command: f64,
        dt: f64,
        params: &VehicleParams,
        brake: BrakeModel,
    ) -> Result<VehicleState> {
        step_vehicle(state, controls, dt, params, brake)
    }
}

/// PID on speed with a bounded acceleration. The agent's brake request
/// overrides the PID output.
#[derive(Debug, Clone)]
pub struct PidSpeed {
    pub gains: PidGains,
    pub accel_limit: f64,
    pub state: PidState,
}

impl SpeedController for PidSpeed {
    fn name(&self) -> &'static str {
        "pid"
    }

    fn update(&mut self, target_v: f64, measured_v: f64, dt: f64) -> f64 {
        let (command, next) = pid_throttle(&self.state, target_v, measured_v, dt, &self.gains);
        self.state = next;
        command
    }

    fn plant_step(
        &self,
        state: &VehicleState,
        controls: Controls,
        command: f64,
        dt: f64,
        params: &VehicleParams,
        brake: BrakeModel,
    ) -> Result<VehicleState> {
        check_step_args(state, dt)?;
        let (speed, pedal) = if controls.brake {
            let (decel, pedal) = brake.braking(state.pedal, dt, params);
            (state.speed - decel * dt, pedal)
        } else if command >= 0.0 {
            (state.speed + command * self.accel_limit * dt, 0.0)
        } else {
            (state.speed + command * params.ideal_decel * dt, 0.0)
        };
        Ok(integrate(state, speed, pedal, controls.lift_up, dt, params))
    }
}

pub type SpeedControllerFactory = fn(&EmulationConfig) -> Box<dyn SpeedController>;

pub fn speed_controllers() -> Registry<SpeedControllerFactory> {
    let mut r: Registry<SpeedControllerFactory> = Registry::new("speed controller");
    r.register("pid", |emu| {
        Box::new(PidSpeed {
            gains: emu.pid,
            accel_limit: emu.accel_limit,
            state: PidState::default(),
        })
    });
    r.register("instant", |_| Box::new(InstantSpeed));
    r
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmulationConfig {
    /// Age of position fixes, in s.
    pub position_delay: f64,
    /// Controller rate as a fraction of the simulation rate.
    pub rate_scale: f64,
    pub pid: PidGains,
    /// m/s² at full throttle
    pub accel_limit: f64,
    pub brake_model: BrakeModel,
    /// Registry name of the speed controller.
    pub speed_control: String,
    pub utm_origin: UtmPosition,
    /// Replaces the environment's out-of-range radius during emulation;
    /// `None` keeps the training value.
    pub travel_limit: Option<f64>,
}

impl Default for EmulationConfig {
    fn default() -> Self {
        Self {
            position_delay: 3.0,
            rate_scale: 0.1,
            pid: PidGains::default(),
            accel_limit: 1.0,
            brake_model: BrakeModel::Tapered,
            speed_control: "pid".into(),
            utm_origin: UtmPosition::default(),
            travel_limit: Some(30.0),
        }
    }
}

impl EmulationConfig {
    /// Settings under which emulation reproduces the training simulator.
    pub fn degenerate() -> Self {
        Self {
            position_delay: 0.0,
            rate_scale: 1.0,
            brake_model: BrakeModel::Ideal,
            speed_control: "instant".into(),
            travel_limit: None,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.position_delay >= 0.0 && self.position_delay.is_finite()) {
            return Err(Error::invalid(format!(
                "position_delay must be non-negative, got {}",
                self.position_delay
            )));
        }
        if !(self.rate_scale > 0.0 && self.rate_scale <= 1.0) {
            return Err(Error::invalid(format!("rate_scale must be in (0, 1], got {}", self.rate_scale)));
        }
        if !(self.accel_limit > 0.0 && self.accel_limit.is_finite()) {
            return Err(Error::invalid("accel_limit must be positive"));
        }
        if let Some(limit) = self.travel_limit {
            if !(limit > 0.0 && limit.is_finite()) {
                return Err(Error::invalid("travel_limit must be positive"));
            }
        }
        if !self.utm_origin.easting.is_finite() || !self.utm_origin.northing.is_finite() {
            return Err(Error::invalid("utm origin must be finite"));
        }
        self.pid.validate()?;
        speed_controllers().get(&self.speed_control)?;
        Ok(())
    }

    /// Plant steps per controller decision.
    pub fn decision_period(&self) -> usize {
        (1.0 / self.rate_scale).round().max(1.0) as usize
    }
}

/// Runs one emulated episode. The plant integrates at the environment's
/// `dt`; policy and speed controller act every `decision_period()` plant
/// steps with their outputs held in between. Rewards are scored on the true
/// state; the policy only sees delayed positions.
pub fn run_emulated_episode(
    env: &ApproachEnv,
    emu: &EmulationConfig,
    policy: &mut dyn Policy,
    seed: u64,
    config_digest: &str,
) -> Result<EpisodeTrace> {
    emu.validate()?;
    let mut speed_control = speed_controllers().get(&emu.speed_control)?(emu);
    let radius = emu.travel_limit.unwrap_or(env.config.out_of_range_radius);
    let dt = env.config.dt;
    let period = emu.decision_period();
    let control_dt = dt * period as f64;

    let (mut state, _) = env.reset(seed);
    policy.reset();
    let heading = state.vehicle.heading;
    let to_utm = |x: f64, y: f64| UtmPosition {
        easting: emu.utm_origin.easting + x,
        northing: emu.utm_origin.northing + y,
    };
    let start = to_utm(state.start_x, state.start_y);
    let mut delay = DelayBuffer::new(
        emu.position_delay,
        PositionSample {
            t: state.vehicle.elapsed,
            x: state.vehicle.x,
            y: state.vehicle.y,
        },
    )?;

    let mut trace = EpisodeTrace {
        config_digest: config_digest.to_string(),
        heading,
        start_lift: state.vehicle.lift,
        rows: Vec::new(),
    };
    let mut action = Controls::default();
    let mut command = 0.0;
    for plant_step in 0.. {
        if plant_step % period == 0 {
            let sensed = delay.read(state.vehicle.elapsed);
            let obs = utm_relative_observation(
                to_utm(sensed.x, sensed.y),
                start,
                heading,
                env.config.target_distance,
                state.vehicle.speed,
                state.vehicle.lift,
            );
            action = policy.act(&obs)?;
            command = speed_control.update(env.vehicle.cruise_speed, state.vehicle.speed, control_dt);
        }
        let next = speed_control.plant_step(&state.vehicle, action, command, dt, &env.vehicle, emu.brake_model)?;
        let step = env.advance_with_radius(&mut state, next, radius)?;
        let v = state.vehicle;
        delay.push(PositionSample { t: v.elapsed, x: v.x, y: v.y })?;
        let sensed = delay.read(v.elapsed);
        let pedal_fraction = if action.brake {
            v.pedal
        } else {
            (-command).max(0.0)
        };
        trace.rows.push(TraceRow {
            step: state.step_count,
            t: v.elapsed,
            x: v.x,
            y: v.y,
            rel_x: step.observation.rel_x,
            rel_y: step.observation.rel_y,
            speed: v.speed,
            lift: v.lift,
            brake_action: action.brake,
            lift_action: action.lift_up,
            reward_total: step.reward.total,
            reward_progress: step.reward.progress_term,
            reward_lift: step.reward.lift_term,
            reward_time: step.reward.time_term,
            outcome: step.reward.outcome,
            emulation: Some(EmulationColumns {
                true_x: v.x,
                true_y: v.y,
                delayed_x: sensed.x,
                delayed_y: sensed.y,
                pid_command: command,
                pedal_fraction,
                overshoot: state.overshoot(),
            }),
        });
        if step.done {
            break;
        }
    }
    Ok(trace)
}

//! Scripted reference controller and an independent reward recomputation,
//! used to check the environment and to bound what a trained agent can score.

use crate::env::{Action, EnvConfig, LiftTermMode, Observation, Outcome};
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::trace::EpisodeTrace;
use crate::vehicle::VehicleParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    /// Extra distance added to the braking distance before braking, in m.
    pub brake_margin: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { brake_margin: 0.1 }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.brake_margin >= 0.0 && self.brake_margin.is_finite()) {
            return Err(Error::invalid("oracle brake_margin must be non-negative"));
        }
        Ok(())
    }
}

/// Lift until past the goal; brake once the remaining distance is within
/// the braking distance plus margin. Braking is held whenever the loader is
/// already below cruise speed, which only happens after the brake was
/// applied, so the stop is carried through even after rolling past the
/// target (where the unsigned offsets grow again).
pub fn scripted_policy(
    obs: &Observation,
    oracle: &OracleConfig,
    env: &EnvConfig,
    vehicle: &VehicleParams,
) -> Action {
    let braking_distance = vehicle.stopping_distance(obs.speed) + oracle.brake_margin;
    let slowed = obs.speed < vehicle.cruise_speed - 1e-9;
    Action {
        brake: obs.distance() <= braking_distance || slowed,
        lift_up: obs.lift <= env.lift_goal(vehicle),
    }
}

#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    pub oracle: OracleConfig,
    pub env: EnvConfig,
    pub vehicle: VehicleParams,
}

impl Policy for ScriptedPolicy {
    fn name(&self) -> &str {
        "scripted"
    }

    fn act(&mut self, obs: &Observation) -> Result<Action> {
        Ok(scripted_policy(obs, &self.oracle, &self.env, &self.vehicle))
    }
}

/// Recomputes the episode return from the trace's raw columns.
pub fn reward_oracle(trace: &EpisodeTrace, config: &EnvConfig) -> Result<f64> {
    if trace.rows.is_empty() {
        return Err(Error::format("trace has no steps"));
    }
    let goal = config.lift_goal_frac;
    let mut previous_distance = config.target_distance;
    let mut previous_lift = trace.start_lift;
    let mut total = 0.0;
    for (i, row) in trace.rows.iter().enumerate() {
        if row.step != i as u64 + 1 {
            return Err(Error::format(format!("trace step {} found at position {}", row.step, i + 1)));
        }
        let last = i + 1 == trace.rows.len();
        if row.outcome.is_terminal() != last {
            return Err(Error::format(format!(
                "trace row {} has outcome {} but {} the last row",
                row.step,
                row.outcome.name(),
                if last { "is" } else { "is not" }
            )));
        }
        let distance = (row.rel_x * row.rel_x + row.rel_y * row.rel_y).sqrt();
        let reward = match row.outcome {
            Outcome::OutOfRange | Outcome::Timeout => -1.0,
            Outcome::Success => {
                let achieved = distance < config.vicinity && row.speed < config.speed_threshold && row.lift > goal;
                if !achieved {
                    return Err(Error::format(format!(
                        "trace row {} claims success but the success condition does not hold",
                        row.step
                    )));
                }
                1.0
            }
            Outcome::Running => {
                let lift_gain = match config.lift_term {
                    LiftTermMode::GoalProgress => {
                        let capped = |l: f64| if l > goal { goal } else { l };
                        config.lift_reward_scale * (capped(row.lift) - capped(previous_lift))
                    }
                    LiftTermMode::Literal => previous_lift - goal * row.lift,
                };
                (previous_distance - distance) + lift_gain - config.time_penalty * (i as f64 + 1.0)
            }
        };
        total += reward;
        previous_distance = distance;
        previous_lift = row.lift;
    }
    Ok(total)
}

/// Upper bound on the episode return without time penalty: all of the
/// initial distance, lift shaping from the lowest possible start to the
/// goal, and the success bonus.
pub fn max_reward_bound(config: &EnvConfig) -> Result<f64> {
    if config.lift_term != LiftTermMode::GoalProgress {
        return Err(Error::invalid("reward bound is only defined for goal_progress lift shaping"));
    }
    let lowest_start = config.lift_start_mean - config.lift_start_jitter;
    let lift_span = (config.lift_goal_frac - lowest_start).max(0.0);
    Ok(config.target_distance + config.lift_reward_scale * lift_span + 1.0)
}

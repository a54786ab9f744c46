//! Actor-critic parameters and the policies that drive episodes.

use rand::Rng;

use crate::distribution::{self, ActionDistribution, DistributionOptions, HEAD_DIM};
use crate::env::{Action, ApproachEnv, EnvState, Observation, OBS_DIM};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::nn::{Mlp, RunningMeanStd};
use crate::oracle::ScriptedPolicy;
use crate::registry::Registry;
use crate::trace::{EpisodeTrace, TraceRow};

/// Actor and critic networks plus the observation normalizer they expect.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic {
    /// obs -> hidden -> hidden -> action head
    pub actor: Mlp,
    /// obs -> hidden -> hidden -> value
    pub critic: Mlp,
    /// Parameters owned by the action distribution (log std for Gaussian heads).
    pub extra: Vec<f64>,
    pub normalizer: RunningMeanStd,
    /// Registry name of the action distribution.
    pub distribution: String,
}

impl ActorCritic {
    pub fn new<R: Rng>(hidden: usize, dist: &dyn ActionDistribution, rng: &mut R) -> Self {
        let gain = 2f64.sqrt();
        Self {
            actor: Mlp::orthogonal(&[OBS_DIM, hidden, hidden, HEAD_DIM], gain, 0.01, rng),
            critic: Mlp::orthogonal(&[OBS_DIM, hidden, hidden, 1], gain, 1.0, rng),
            extra: dist.initial_extra(),
            normalizer: RunningMeanStd::new(OBS_DIM),
            distribution: dist.name().to_string(),
        }
    }

    /// All-zero networks; useful as a neutral policy in tests.
    pub fn zeros(hidden: usize, dist: &dyn ActionDistribution) -> Self {
        Self {
            actor: Mlp::zeros(&[OBS_DIM, hidden, hidden, HEAD_DIM]),
            critic: Mlp::zeros(&[OBS_DIM, hidden, hidden, 1]),
            extra: vec![0.0; dist.extra_params()],
            normalizer: RunningMeanStd::new(OBS_DIM),
            distribution: dist.name().to_string(),
        }
    }

    pub fn hidden_units(&self) -> usize {
        self.actor.sizes()[1]
    }

    pub fn resolve_distribution(&self, options: &DistributionOptions) -> Result<Box<dyn ActionDistribution>> {
        let dist = distribution::registry().get(&self.distribution)?(options);
        if dist.extra_params() != self.extra.len() {
            return Err(Error::format(format!(
                "distribution `{}` expects {} extra parameters, found {}",
                self.distribution,
                dist.extra_params(),
                self.extra.len()
            )));
        }
        Ok(dist)
    }

    pub fn normalize(&self, obs: &Observation) -> Result<[f64; OBS_DIM]> {
        if !obs.is_finite() {
            return Err(Error::invalid(format!("non-finite observation {obs:?}")));
        }
        let n = self.normalizer.normalize(&obs.to_array());
        Ok([n[0], n[1], n[2], n[3]])
    }

    pub fn head(&self, normalized: &[f64; OBS_DIM]) -> [f64; HEAD_DIM] {
        let out = self.actor.forward(normalized);
        [out[0], out[1]]
    }

    pub fn value(&self, normalized: &[f64; OBS_DIM]) -> f64 {
        self.critic.forward(normalized)[0]
    }

    pub fn all_finite(&self) -> bool {
        self.actor
            .params()
            .iter()
            .chain(self.critic.params())
            .chain(&self.extra)
            .all(|v| v.is_finite())
    }
}

/// Action head and state value for one raw observation.
pub fn policy_forward(params: &ActorCritic, obs: &Observation) -> Result<([f64; HEAD_DIM], f64)> {
    let x = params.normalize(obs)?;
    Ok((params.head(&x), params.value(&x)))
}

/// Anything that maps observations to actions during an episode.
pub trait Policy {
    fn name(&self) -> &str;

    fn act(&mut self, obs: &Observation) -> Result<Action>;

    /// Called at the start of every episode.
    fn reset(&mut self) {}
}

/// Deterministic evaluation policy: the most likely action of a trained actor.
#[derive(Debug)]
pub struct GreedyPolicy {
    params: ActorCritic,
    dist: Box<dyn ActionDistribution>,
}

impl GreedyPolicy {
    pub fn new(params: ActorCritic) -> Result<Self> {
        let dist = params.resolve_distribution(&DistributionOptions::default())?;
        Ok(Self { params, dist })
    }
}

impl Policy for GreedyPolicy {
    fn name(&self) -> &str {
        "greedy"
    }

    fn act(&mut self, obs: &Observation) -> Result<Action> {
        let (head, _) = policy_forward(&self.params, obs)?;
        Ok(self.dist.greedy(&head))
    }
}

/// Inputs a named policy may be built from.
#[derive(Debug, Clone, Copy)]
pub struct PolicySource<'a> {
    pub run: &'a RunConfig,
    pub params: Option<&'a ActorCritic>,
}

pub type PolicyFactory = fn(&PolicySource) -> Result<Box<dyn Policy>>;

pub fn policies() -> Registry<PolicyFactory> {
    let mut r: Registry<PolicyFactory> = Registry::new("policy");
    r.register("scripted", |src| {
        Ok(Box::new(ScriptedPolicy {
            oracle: src.run.oracle,
            env: src.run.env,
            vehicle: src.run.vehicle,
        }))
    });
    r.register("greedy", |src| {
        let params = src
            .params
            .ok_or_else(|| Error::invalid("the greedy policy needs trained parameters"))?;
        Ok(Box::new(GreedyPolicy::new(params.clone())?))
    });
    r
}

/// Runs one episode from `seed` and records every step.
pub fn run_episode(env: &ApproachEnv, seed: u64, policy: &mut dyn Policy, config_digest: &str) -> Result<EpisodeTrace> {
    let (state, obs) = env.reset(seed);
    run_episode_from(env, state, obs, policy, config_digest)
}

/// Runs one episode from an already reset state.
pub fn run_episode_from(
    env: &ApproachEnv,
    mut state: EnvState,
    mut obs: Observation,
    policy: &mut dyn Policy,
    config_digest: &str,
) -> Result<EpisodeTrace> {
    policy.reset();
    let mut trace = EpisodeTrace {
        config_digest: config_digest.to_string(),
        heading: state.vehicle.heading,
        start_lift: state.vehicle.lift,
        rows: Vec::new(),
    };
    loop {
        let action = policy.act(&obs)?;
        let step = env.step(&mut state, action)?;
        let v = &state.vehicle;
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
            emulation: None,
        });
        if step.done {
            return Ok(trace);
        }
        obs = step.observation;
    }
}

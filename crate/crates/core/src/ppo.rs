//! Proximal policy optimization: rollout storage, advantage estimation, the
//! clipped surrogate loss and the minibatch update.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::distribution::{ActionDistribution, HEAD_DIM};
use crate::env::OBS_DIM;
use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, Adam, MlpCache};
use crate::policy::ActorCritic;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub n_steps: usize,
    pub batch_size: usize,
    pub n_epochs: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_range: f64,
    pub ent_coef: f64,
    pub vf_coef: f64,
    pub max_grad_norm: f64,
    pub n_envs: usize,
    pub total_timesteps: u64,
    /// Registry name of the action distribution.
    pub exploration: String,
    /// Steps between noise draws for distributions that hold noise.
    pub noise_resample_every: usize,
    pub hidden_units: usize,
    pub normalize_advantage: bool,
    pub normalize_observations: bool,
    /// Greedy evaluation cadence (in updates) for best-checkpoint selection.
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Periodic checkpoint cadence in updates; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-5,
            n_steps: 512,
            batch_size: 128,
            n_epochs: 20,
            gamma: 0.99,
            gae_lambda: 0.9,
            clip_range: 0.4,
            ent_coef: 0.0,
            vf_coef: 0.5,
            max_grad_norm: 0.5,
            n_envs: 1,
            total_timesteps: 3_000_000,
            exploration: "bernoulli".into(),
            noise_resample_every: 4,
            hidden_units: 64,
            normalize_advantage: true,
            normalize_observations: true,
            eval_every: 10,
            eval_episodes: 20,
            checkpoint_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::invalid("gamma must be in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(Error::invalid("gae_lambda must be in [0, 1]"));
        }
        if !(self.clip_range > 0.0) {
            return Err(Error::invalid("clip_range must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !(self.max_grad_norm > 0.0) {
            return Err(Error::invalid("max_grad_norm must be positive"));
        }
        if self.ent_coef < 0.0 || self.vf_coef < 0.0 {
            return Err(Error::invalid("ent_coef and vf_coef must be non-negative"));
        }
        if self.n_envs != 1 {
            return Err(Error::invalid("only n_envs = 1 is supported"));
        }
        if self.n_steps == 0 || self.batch_size == 0 || self.n_epochs == 0 || self.hidden_units == 0 {
            return Err(Error::invalid("n_steps, batch_size, n_epochs and hidden_units must be positive"));
        }
        if (self.n_steps * self.n_envs) % self.batch_size != 0 {
            return Err(Error::invalid("batch_size must divide n_steps * n_envs"));
        }
        if self.noise_resample_every == 0 {
            return Err(Error::invalid("noise_resample_every must be positive"));
        }
        if self.eval_every == 0 || self.eval_episodes == 0 {
            return Err(Error::invalid("eval_every and eval_episodes must be positive"));
        }
        Ok(())
    }
}

/// Advantages and value targets. `dones[t]` marks that the episode ended
/// with transition `t`, so nothing is bootstrapped across it.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap_value: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if n == 0 || values.len() != n || dones.len() != n {
        return Err(Error::invalid(format!(
            "gae inputs must be non-empty and equal length (rewards {n}, values {}, dones {})",
            values.len(),
            dones.len()
        )));
    }
    let mut advantages = vec![0.0; n];
    let mut next_advantage = 0.0;
    let mut next_value = bootstrap_value;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_advantage = delta + gamma * lambda * live * next_advantage;
        advantages[t] = next_advantage;
        next_value = values[t];
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((advantages, returns))
}

/// `exp(new - old)` with the exponent clamped to ±30.
pub fn ppo_ratio(log_prob_new: f64, log_prob_old: f64) -> f64 {
    (log_prob_new - log_prob_old).clamp(-30.0, 30.0).exp()
}

/// Negative mean of the clipped surrogate objective.
pub fn clipped_policy_loss(ratios: &[f64], advantages: &[f64], clip_range: f64) -> Result<f64> {
    if ratios.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if ratios.len() != advantages.len() {
        return Err(Error::invalid("ratios and advantages differ in length"));
    }
    if !(clip_range > 0.0) {
        return Err(Error::invalid("clip_range must be positive"));
    }
    let sum: f64 = ratios
        .iter()
        .zip(advantages)
        .map(|(&r, &a)| surrogate(r, a, clip_range))
        .sum();
    Ok(-sum / ratios.len() as f64)
}

fn surrogate(ratio: f64, advantage: f64, clip_range: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip_range, 1.0 + clip_range);
    (ratio * advantage).min(clipped * advantage)
}

/// True when the clipped branch is the active minimum, so the sample
/// contributes no policy gradient.
fn clip_active(ratio: f64, advantage: f64, clip_range: f64) -> bool {
    (advantage > 0.0 && ratio > 1.0 + clip_range) || (advantage < 0.0 && ratio < 1.0 - clip_range)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RolloutBuffer {
    /// Observations after normalization, as fed to the networks.
    pub observations: Vec<[f64; OBS_DIM]>,
    pub raw_actions: Vec<[f64; HEAD_DIM]>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub bootstrap_value: f64,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            observations: Vec::with_capacity(n),
            raw_actions: Vec::with_capacity(n),
            log_probs: Vec::with_capacity(n),
            values: Vec::with_capacity(n),
            rewards: Vec::with_capacity(n),
            dones: Vec::with_capacity(n),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn push(&mut self, obs: [f64; OBS_DIM], raw: [f64; HEAD_DIM], log_prob: f64, value: f64, reward: f64, done: bool) {
        self.observations.push(obs);
        self.raw_actions.push(raw);
        self.log_probs.push(log_prob);
        self.values.push(value);
        self.rewards.push(reward);
        self.dones.push(done);
    }

    pub fn clear(&mut self) {
        self.observations.clear();
        self.raw_actions.clear();
        self.log_probs.clear();
        self.values.clear();
        self.rewards.clear();
        self.dones.clear();
        self.advantages.clear();
        self.returns.clear();
        self.bootstrap_value = 0.0;
    }

    /// Fills `advantages` and `returns`.
    pub fn finish(&mut self, gamma: f64, lambda: f64) -> Result<()> {
        let (adv, ret) = compute_gae(&self.rewards, &self.values, &self.dones, self.bootstrap_value, gamma, lambda)?;
        self.advantages = adv;
        self.returns = ret;
        Ok(())
    }

    fn check(&self) -> Result<()> {
        let n = self.len();
        let lengths = [
            self.observations.len(),
            self.raw_actions.len(),
            self.log_probs.len(),
            self.values.len(),
            self.dones.len(),
            self.advantages.len(),
            self.returns.len(),
        ];
        if n == 0 || lengths.iter().any(|&l| l != n) {
            return Err(Error::invalid("rollout buffer arrays are empty or inconsistent (was finish called?)"));
        }
        if self.log_probs.iter().any(|lp| !lp.is_finite()) {
            return Err(Error::invalid("rollout buffer holds non-finite log-probabilities"));
        }
        Ok(())
    }
}

/// Gradient buffers matching an [`ActorCritic`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub actor: Vec<f64>,
    pub critic: Vec<f64>,
    pub extra: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(params: &ActorCritic) -> Self {
        Self {
            actor: vec![0.0; params.actor.params().len()],
            critic: vec![0.0; params.critic.params().len()],
            extra: vec![0.0; params.extra.len()],
        }
    }

    pub fn reset(&mut self) {
        self.actor.fill(0.0);
        self.critic.fill(0.0);
        self.extra.fill(0.0);
    }

    pub fn norm(&self) -> f64 {
        self.actor
            .iter()
            .chain(&self.critic)
            .chain(&self.extra)
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

/// Minibatch view: buffer indices plus the advantages to use for them.
#[derive(Debug, Clone)]
pub struct Minibatch<'a> {
    pub buffer: &'a RolloutBuffer,
    pub indices: &'a [usize],
    pub advantages: &'a [f64],
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossEvaluation {
    pub total: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub ratio_mean: f64,
    pub approx_kl: f64,
}

/// Advantages of the selected samples, normalized to zero mean and unit
/// (sample) standard deviation when `normalize` is set and there are at
/// least two samples.
pub fn minibatch_advantages(buffer: &RolloutBuffer, indices: &[usize], normalize: bool) -> Vec<f64> {
    let adv: Vec<f64> = indices.iter().map(|&i| buffer.advantages[i]).collect();
    if !normalize || adv.len() < 2 {
        return adv;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    adv.iter().map(|a| (a - mean) / (std + 1e-8)).collect()
}

/// PPO loss `policy + vf_coef * value - ent_coef * entropy` on a minibatch,
/// optionally accumulating its gradient into `grads`.
pub fn evaluate_minibatch(
    params: &ActorCritic,
    dist: &dyn ActionDistribution,
    batch: &Minibatch<'_>,
    config: &TrainConfig,
    mut grads: Option<&mut Gradients>,
) -> LossEvaluation {
    let n = batch.indices.len() as f64;
    let eps = config.clip_range;
    let mut actor_cache = MlpCache::default();
    let mut critic_cache = MlpCache::default();
    let mut out = LossEvaluation::default();
    let mut surrogate_sum = 0.0;
    for (&i, &adv) in batch.indices.iter().zip(batch.advantages) {
        let obs = &batch.buffer.observations[i];
        let raw = &batch.buffer.raw_actions[i];
        let out_head = params.actor.forward_cached(obs, &mut actor_cache);
        let head = [out_head[0], out_head[1]];
        let value = params.critic.forward_cached(obs, &mut critic_cache)[0];

        let log_prob = dist.log_prob(&head, &params.extra, raw);
        let log_ratio = log_prob - batch.buffer.log_probs[i];
        let ratio = ppo_ratio(log_prob, batch.buffer.log_probs[i]);
        let entropy = dist.entropy(&head, &params.extra);
        let value_err = value - batch.buffer.returns[i];

        surrogate_sum += surrogate(ratio, adv, eps);
        out.value_loss += value_err * value_err / n;
        out.entropy += entropy / n;
        out.ratio_mean += ratio / n;
        out.approx_kl += ((ratio - 1.0) - log_ratio) / n;
        if (ratio - 1.0).abs() > eps {
            out.clip_fraction += 1.0 / n;
        }

        if let Some(g) = grads.as_deref_mut() {
            let d_log_prob = if clip_active(ratio, adv, eps) {
                0.0
            } else {
                -ratio * adv / n
            };
            let d_entropy = -config.ent_coef / n;
            let dg = dist.grad(&head, &params.extra, raw, d_log_prob, d_entropy);
            params.actor.backward(&actor_cache, &dg.head, &mut g.actor);
            for (e, d) in g.extra.iter_mut().zip(dg.extra) {
                *e += d;
            }
            let d_value = config.vf_coef * 2.0 * value_err / n;
            params.critic.backward(&critic_cache, &[d_value], &mut g.critic);
        }
    }
    out.policy_loss = -surrogate_sum / n;
    out.total = out.policy_loss + config.vf_coef * out.value_loss - config.ent_coef * out.entropy;
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub ratio_mean: f64,
    pub approx_kl: f64,
    /// Mean gradient norm before clipping.
    pub grad_norm: f64,
    pub minibatches: usize,
}

/// Optimizer state that persists across updates.
#[derive(Debug, Clone, PartialEq)]
pub struct PpoOptimizer {
    pub adam: Adam,
}

impl PpoOptimizer {
    pub fn new(params: &ActorCritic, learning_rate: f64) -> Self {
        Self {
            adam: Adam::new(
                learning_rate,
                &[params.actor.params().len(), params.critic.params().len(), params.extra.len()],
            ),
        }
    }
}

/// `n_epochs` passes of shuffled minibatch gradient steps over a finished
/// buffer. On a non-finite loss or gradient the parameters and optimizer are
/// restored and a numerical error is returned.
pub fn ppo_update(
    params: &mut ActorCritic,
    optimizer: &mut PpoOptimizer,
    dist: &dyn ActionDistribution,
    buffer: &RolloutBuffer,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateStats> {
    buffer.check()?;
    let snapshot = (params.clone(), optimizer.clone());
    let mut grads = Gradients::zeros_like(params);
    let mut order: Vec<usize> = (0..buffer.len()).collect();
    let mut stats = UpdateStats::default();

    for epoch in 0..config.n_epochs {
        order.shuffle(rng);
        for (b, indices) in order.chunks(config.batch_size).enumerate() {
            let advantages = minibatch_advantages(buffer, indices, config.normalize_advantage);
            let batch = Minibatch {
                buffer,
                indices,
                advantages: &advantages,
            };
            grads.reset();
            let eval = evaluate_minibatch(params, dist, &batch, config, Some(&mut grads));
            let grad_norm = clip_grad_norm(
                &mut [&mut grads.actor[..], &mut grads.critic[..], &mut grads.extra[..]],
                config.max_grad_norm,
            );
            if !eval.total.is_finite() || !grad_norm.is_finite() {
                (*params, *optimizer) = snapshot;
                return Err(Error::Numerical(format!(
                    "non-finite loss in epoch {epoch}, minibatch {b}: total {} (policy {}, value {}, entropy {}), grad norm {grad_norm}",
                    eval.total, eval.policy_loss, eval.value_loss, eval.entropy
                )));
            }
            optimizer.adam.step(
                &mut [params.actor.params_mut(), params.critic.params_mut(), &mut params.extra[..]],
                &[&grads.actor, &grads.critic, &grads.extra],
            );
            stats.policy_loss += eval.policy_loss;
            stats.value_loss += eval.value_loss;
            stats.entropy += eval.entropy;
            stats.clip_fraction += eval.clip_fraction;
            stats.ratio_mean += eval.ratio_mean;
            stats.approx_kl += eval.approx_kl;
            stats.grad_norm += grad_norm;
            stats.minibatches += 1;
        }
    }
    if !params.all_finite() {
        (*params, *optimizer) = snapshot;
        return Err(Error::Numerical("parameters became non-finite during update".into()));
    }
    let m = stats.minibatches.max(1) as f64;
    for v in [
        &mut stats.policy_loss,
        &mut stats.value_loss,
        &mut stats.entropy,
        &mut stats.clip_fraction,
        &mut stats.ratio_mean,
        &mut stats.approx_kl,
        &mut stats.grad_norm,
    ] {
        *v /= m;
    }
    Ok(stats)
}

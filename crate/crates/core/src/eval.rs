//! Fixed-seed policy evaluation and its text report.

use std::fmt::Write as _;

use crate::env::{is_degenerate_heading, ApproachEnv, Outcome};
use crate::error::{Error, Result};
use crate::policy::{run_episode, Policy};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Bucket {
    pub episodes: usize,
    pub successes: usize,
}

impl Bucket {
    pub fn success_rate(&self) -> f64 {
        if self.episodes == 0 {
            0.0
        } else {
            self.successes as f64 / self.episodes as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub config_digest: String,
    pub policy: String,
    pub seed: u64,
    pub episodes: usize,
    pub mean_reward: f64,
    /// Population variance of episode returns.
    pub reward_variance: f64,
    pub success_rate: f64,
    /// Mean final distance to the target over all episodes, in m.
    pub mean_stop_error: f64,
    pub mean_length: f64,
    pub out_of_range: usize,
    pub timeouts: usize,
    /// Episodes whose heading is not nearly axis aligned.
    pub regular: Bucket,
    pub degenerate: Bucket,
}

impl EvalReport {
    pub fn success_rate_excluding_degenerate(&self) -> f64 {
        self.regular.success_rate()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "config_digest = {}", self.config_digest);
        let _ = writeln!(s, "policy = {}", self.policy);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "episodes = {}", self.episodes);
        let _ = writeln!(s, "mean_reward = {}", self.mean_reward);
        let _ = writeln!(s, "reward_variance = {}", self.reward_variance);
        let _ = writeln!(s, "success_rate = {}", self.success_rate);
        let _ = writeln!(s, "mean_stop_error = {}", self.mean_stop_error);
        let _ = writeln!(s, "mean_length = {}", self.mean_length);
        let _ = writeln!(s, "out_of_range = {}", self.out_of_range);
        let _ = writeln!(s, "timeouts = {}", self.timeouts);
        let _ = writeln!(
            s,
            "regular = {}/{} ({})",
            self.regular.successes,
            self.regular.episodes,
            self.regular.success_rate()
        );
        let _ = writeln!(
            s,
            "degenerate = {}/{} ({})",
            self.degenerate.successes,
            self.degenerate.episodes,
            self.degenerate.success_rate()
        );
        let _ = writeln!(s, "success_rate_excluding_degenerate = {}", self.success_rate_excluding_degenerate());
        s
    }
}

/// Seed of evaluation episode `index`.
pub fn episode_seed(seed: u64, index: usize) -> u64 {
    rng::derive_u64(seed, rng::EVAL_STREAM, index as u64)
}

/// Runs `episodes` episodes with seeds derived from `seed`.
pub fn evaluate(
    env: &ApproachEnv,
    policy: &mut dyn Policy,
    episodes: usize,
    seed: u64,
    config_digest: &str,
) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(Error::invalid("evaluation needs at least one episode"));
    }
    let mut returns = Vec::with_capacity(episodes);
    let mut report = EvalReport {
        config_digest: config_digest.to_string(),
        policy: policy.name().to_string(),
        seed,
        episodes,
        mean_reward: 0.0,
        reward_variance: 0.0,
        success_rate: 0.0,
        mean_stop_error: 0.0,
        mean_length: 0.0,
        out_of_range: 0,
        timeouts: 0,
        regular: Bucket::default(),
        degenerate: Bucket::default(),
    };
    let mut successes = 0;
    for i in 0..episodes {
        let trace = run_episode(env, episode_seed(seed, i), policy, config_digest)?;
        returns.push(trace.total_reward());
        report.mean_stop_error += trace.final_distance().unwrap_or(f64::NAN);
        report.mean_length += trace.rows.len() as f64;
        let success = trace.outcome() == Outcome::Success;
        match trace.outcome() {
            Outcome::OutOfRange => report.out_of_range += 1,
            Outcome::Timeout => report.timeouts += 1,
            _ => {}
        }
        successes += usize::from(success);
        let bucket = if is_degenerate_heading(trace.heading) {
            &mut report.degenerate
        } else {
            &mut report.regular
        };
        bucket.episodes += 1;
        bucket.successes += usize::from(success);
    }
    let n = episodes as f64;
    report.mean_reward = returns.iter().sum::<f64>() / n;
    report.reward_variance = returns.iter().map(|r| (r - report.mean_reward).powi(2)).sum::<f64>() / n;
    report.success_rate = successes as f64 / n;
    report.mean_stop_error /= n;
    report.mean_length /= n;
    Ok(report)
}

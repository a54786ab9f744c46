//! Action distributions over the two binary commands.
//!
//! The actor network emits two numbers per observation (the "head"). A
//! distribution turns the head, plus any free parameters it owns, into
//! sampled actions, log-probabilities, entropies and their gradients. The
//! raw sample is what the rollout buffer stores; the binary action is derived
//! from it.

use std::f64::consts::{LN_2, PI};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::env::Action;
use crate::registry::Registry;

pub const HEAD_DIM: usize = 2;

/// Exploration noise carried between steps by distributions that hold it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExplorationState {
    noise: [f64; HEAD_DIM],
    age: usize,
}

impl ExplorationState {
    pub fn reset(&mut self) {
        *self = Self::default();
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub raw: [f64; HEAD_DIM],
    pub action: Action,
    pub log_prob: f64,
}

/// Gradients of a weighted objective with respect to the head and to the
/// distribution's own parameters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DistGrad {
    pub head: [f64; HEAD_DIM],
    pub extra: [f64; HEAD_DIM],
}

pub trait ActionDistribution: Send + Sync + std::fmt::Debug {
    fn name(&self) -> &'static str;

    /// Number of free parameters owned by the distribution (e.g. log std).
    fn extra_params(&self) -> usize {
        0
    }

    fn initial_extra(&self) -> Vec<f64> {
        vec![0.0; self.extra_params()]
    }

    fn sample(
        &self,
        head: &[f64; HEAD_DIM],
        extra: &[f64],
        rng: &mut ChaCha8Rng,
        exploration: &mut ExplorationState,
    ) -> Sample;

    fn log_prob(&self, head: &[f64; HEAD_DIM], extra: &[f64], raw: &[f64; HEAD_DIM]) -> f64;

    fn entropy(&self, head: &[f64; HEAD_DIM], extra: &[f64]) -> f64;

    /// Most likely action, used for evaluation.
    fn greedy(&self, head: &[f64; HEAD_DIM]) -> Action;

    /// Gradient of `lp_weight * log_prob(raw) + ent_weight * entropy`.
    fn grad(
        &self,
        head: &[f64; HEAD_DIM],
        extra: &[f64],
        raw: &[f64; HEAD_DIM],
        lp_weight: f64,
        ent_weight: f64,
    ) -> DistGrad;
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln sigmoid(x)`, stable for large |x|.
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

fn to_action(bits: [bool; HEAD_DIM]) -> Action {
    Action {
        brake: bits[0],
        lift_up: bits[1],
    }
}

/// Two independent Bernoulli heads on the logits.
#[derive(Debug, Clone, Copy, Default)]
pub struct BernoulliHeads;

impl BernoulliHeads {
    fn head_log_prob(logit: f64, taken: bool) -> f64 {
        if taken {
            log_sigmoid(logit)
        } else {
            log_sigmoid(-logit)
        }
    }

    fn head_entropy(logit: f64) -> f64 {
        let p = sigmoid(logit);
        -(p * log_sigmoid(logit) + (1.0 - p) * log_sigmoid(-logit))
    }
}

impl ActionDistribution for BernoulliHeads {
    fn name(&self) -> &'static str {
        "bernoulli"
    }

    fn sample(
        &self,
        head: &[f64; HEAD_DIM],
        _extra: &[f64],
        rng: &mut ChaCha8Rng,
        _exploration: &mut ExplorationState,
    ) -> Sample {
        let mut bits = [false; HEAD_DIM];
        let mut raw = [0.0; HEAD_DIM];
        for i in 0..HEAD_DIM {
            bits[i] = rng.gen::<f64>() < sigmoid(head[i]);
            raw[i] = f64::from(u8::from(bits[i]));
        }
        Sample {
            raw,
            action: to_action(bits),
            log_prob: self.log_prob(head, &[], &raw),
        }
    }

    fn log_prob(&self, head: &[f64; HEAD_DIM], _extra: &[f64], raw: &[f64; HEAD_DIM]) -> f64 {
        head.iter()
            .zip(raw)
            .map(|(&z, &a)| Self::head_log_prob(z, a > 0.5))
            .sum()
    }

    fn entropy(&self, head: &[f64; HEAD_DIM], _extra: &[f64]) -> f64 {
        head.iter().map(|&z| Self::head_entropy(z)).sum()
    }

    fn greedy(&self, head: &[f64; HEAD_DIM]) -> Action {
        to_action([head[0] > 0.0, head[1] > 0.0])
    }

    fn grad(
        &self,
        head: &[f64; HEAD_DIM],
        _extra: &[f64],
        raw: &[f64; HEAD_DIM],
        lp_weight: f64,
        ent_weight: f64,
    ) -> DistGrad {
        let mut g = DistGrad::default();
        for i in 0..HEAD_DIM {
            let p = sigmoid(head[i]);
            // d/dz log p(a) = a - p ; d/dz H = -z p (1 - p)
            g.head[i] = lp_weight * (raw[i] - p) + ent_weight * (-head[i] * p * (1.0 - p));
        }
        g
    }
}

/// Diagonal Gaussian on the head with a learned state-independent log std.
/// A sample is thresholded at zero into the binary command (identical to
/// thresholding its tanh-squashed value). The exploration noise is held for
/// `resample_every` steps before a fresh draw.
#[derive(Debug, Clone, Copy)]
pub struct ContinuousThreshold {
    pub resample_every: usize,
    pub log_std_init: f64,
}

impl Default for ContinuousThreshold {
    fn default() -> Self {
        Self {
            resample_every: 4,
            log_std_init: 0.0,
        }
    }
}

impl ActionDistribution for ContinuousThreshold {
    fn name(&self) -> &'static str {
        "continuous-threshold"
    }

    fn extra_params(&self) -> usize {
        HEAD_DIM
    }

    fn initial_extra(&self) -> Vec<f64> {
        vec![self.log_std_init; HEAD_DIM]
    }

    fn sample(
        &self,
        head: &[f64; HEAD_DIM],
        extra: &[f64],
        rng: &mut ChaCha8Rng,
        exploration: &mut ExplorationState,
    ) -> Sample {
        if exploration.age % self.resample_every.max(1) == 0 {
            for n in &mut exploration.noise {
                *n = StandardNormal.sample(rng);
            }
        }
        exploration.age += 1;
        let mut raw = [0.0; HEAD_DIM];
        for i in 0..HEAD_DIM {
            raw[i] = head[i] + extra[i].exp() * exploration.noise[i];
        }
        Sample {
            raw,
            action: to_action([raw[0] > 0.0, raw[1] > 0.0]),
            log_prob: self.log_prob(head, extra, &raw),
        }
    }

    fn log_prob(&self, head: &[f64; HEAD_DIM], extra: &[f64], raw: &[f64; HEAD_DIM]) -> f64 {
        (0..HEAD_DIM)
            .map(|i| {
                let z = (raw[i] - head[i]) / extra[i].exp();
                -0.5 * z * z - extra[i] - 0.5 * (2.0 * PI).ln()
            })
            .sum()
    }

    fn entropy(&self, _head: &[f64; HEAD_DIM], extra: &[f64]) -> f64 {
        extra
            .iter()
            .map(|ls| 0.5 + 0.5 * (2.0 * PI).ln() + ls)
            .sum()
    }

    fn greedy(&self, head: &[f64; HEAD_DIM]) -> Action {
        to_action([head[0] > 0.0, head[1] > 0.0])
    }

    fn grad(
        &self,
        head: &[f64; HEAD_DIM],
        extra: &[f64],
        raw: &[f64; HEAD_DIM],
        lp_weight: f64,
        ent_weight: f64,
    ) -> DistGrad {
        let mut g = DistGrad::default();
        for i in 0..HEAD_DIM {
            let std = extra[i].exp();
            let z = (raw[i] - head[i]) / std;
            g.head[i] = lp_weight * z / std;
            g.extra[i] = lp_weight * (z * z - 1.0) + ent_weight;
        }
        g
    }
}

pub type DistributionFactory = fn(&DistributionOptions) -> Box<dyn ActionDistribution>;

#[derive(Debug, Clone, Copy)]
pub struct DistributionOptions {
    pub noise_resample_every: usize,
}

impl Default for DistributionOptions {
    fn default() -> Self {
        Self {
            noise_resample_every: 4,
        }
    }
}

pub fn registry() -> Registry<DistributionFactory> {
    let mut r: Registry<DistributionFactory> = Registry::new("exploration mode");
    r.register("bernoulli", |_| Box::new(BernoulliHeads));
    r.register("continuous-threshold", |o| {
        Box::new(ContinuousThreshold {
            resample_every: o.noise_resample_every,
            ..ContinuousThreshold::default()
        })
    });
    r
}

/// Entropy of two fair coins.
pub const MAX_BERNOULLI_ENTROPY: f64 = 2.0 * LN_2;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(3)
    }

    #[test]
    fn saturated_logits_choose_both() {
        let s = BernoulliHeads.sample(&[20.0, 20.0], &[], &mut rng(), &mut ExplorationState::default());
        assert!(s.action.brake && s.action.lift_up);
        assert!(s.log_prob.abs() < 1e-8);
    }

    #[test]
    fn fair_coin_log_prob() {
        let lp = BernoulliHeads.log_prob(&[0.0, 0.0], &[], &[1.0, 0.0]);
        assert!((lp - 2.0 * 0.5f64.ln()).abs() < 1e-12);
        assert!((lp + 1.38629).abs() < 1e-5);
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn greedy_follows_logit_sign() {
        let a = BernoulliHeads.greedy(&[0.3, -0.2]);
        assert!(a.brake && !a.lift_up);
    }

    #[test]
    fn entropy_peaks_at_zero_logits() {
        let h0 = BernoulliHeads.entropy(&[0.0, 0.0], &[]);
        assert!((h0 - MAX_BERNOULLI_ENTROPY).abs() < 1e-12);
        for d in [1e-3, -1e-3, 0.5, -2.0] {
            assert!(BernoulliHeads.entropy(&[d, 0.0], &[]) < h0);
            assert!(BernoulliHeads.entropy(&[0.0, d], &[]) < h0);
        }
    }

    #[test]
    fn sampling_is_deterministic_given_rng() {
        for dist in [&BernoulliHeads as &dyn ActionDistribution, &ContinuousThreshold::default()] {
            let extra = dist.initial_extra();
            let run = || {
                let mut r = rng();
                let mut e = ExplorationState::default();
                (0..20)
                    .map(|_| dist.sample(&[0.1, -0.4], &extra, &mut r, &mut e))
                    .collect::<Vec<_>>()
            };
            assert_eq!(run(), run());
        }
    }

    #[test]
    fn continuous_noise_held_between_resamples() {
        let d = ContinuousThreshold::default();
        let mut r = rng();
        let mut e = ExplorationState::default();
        let samples: Vec<_> = (0..8).map(|_| d.sample(&[0.0, 0.0], &[0.0, 0.0], &mut r, &mut e)).collect();
        assert_eq!(samples[0].raw, samples[3].raw);
        assert_ne!(samples[3].raw, samples[4].raw);
        assert_eq!(samples[4].raw, samples[7].raw);
    }

    fn check_grad(dist: &dyn ActionDistribution, head: [f64; 2], extra: Vec<f64>, raw: [f64; 2]) {
        let (wl, we) = (0.7, -0.3);
        let objective =
            |h: &[f64; 2], x: &[f64]| wl * dist.log_prob(h, x, &raw) + we * dist.entropy(h, x);
        let g = dist.grad(&head, &extra, &raw, wl, we);
        let eps = 1e-6;
        for i in 0..2 {
            let (mut hp, mut hm) = (head, head);
            hp[i] += eps;
            hm[i] -= eps;
            let num = (objective(&hp, &extra) - objective(&hm, &extra)) / (2.0 * eps);
            assert!((num - g.head[i]).abs() < 1e-7, "head {i}: {num} vs {}", g.head[i]);
        }
        for i in 0..dist.extra_params() {
            let (mut xp, mut xm) = (extra.clone(), extra.clone());
            xp[i] += eps;
            xm[i] -= eps;
            let num = (objective(&head, &xp) - objective(&head, &xm)) / (2.0 * eps);
            assert!((num - g.extra[i]).abs() < 1e-7, "extra {i}: {num} vs {}", g.extra[i]);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        check_grad(&BernoulliHeads, [0.4, -1.3], vec![], [1.0, 0.0]);
        check_grad(&BernoulliHeads, [-2.0, 0.1], vec![], [0.0, 1.0]);
        check_grad(&ContinuousThreshold::default(), [0.4, -1.3], vec![-0.5, 0.2], [0.9, -0.1]);
    }

    #[test]
    fn registry_resolves_names() {
        let r = registry();
        let opts = DistributionOptions::default();
        assert_eq!(r.get("bernoulli").unwrap()(&opts).name(), "bernoulli");
        assert_eq!(r.get("continuous-threshold").unwrap()(&opts).extra_params(), 2);
        assert!(r.get("gaussian").is_err());
    }
}

use loader_rl_core::distribution::{ActionDistribution, BernoulliHeads, ContinuousThreshold, ExplorationState};
use loader_rl_core::nn::clip_grad_norm;
use loader_rl_core::policy::ActorCritic;
use loader_rl_core::ppo::{
    clipped_policy_loss, evaluate_minibatch, ppo_update, Gradients, Minibatch, PpoOptimizer, RolloutBuffer, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Per-sample clipped objective written out by cases rather than with min/clamp.
fn scalar_objective(r: f64, a: f64, eps: f64) -> f64 {
    if a >= 0.0 {
        if r > 1.0 + eps {
            (1.0 + eps) * a
        } else {
            r * a
        }
    } else if r < 1.0 - eps {
        (1.0 - eps) * a
    } else {
        r * a
    }
}

fn scalar_loss(ratios: &[f64], advantages: &[f64], eps: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..ratios.len() {
        total += scalar_objective(ratios[i], advantages[i], eps);
    }
    -total / ratios.len() as f64
}

#[test]
fn loss_examples() {
    let adv = [0.3, -1.2, 2.5, -0.1];
    assert!((clipped_policy_loss(&[1.0; 4], &adv, 0.4).unwrap() - (-(0.3 - 1.2 + 2.5 - 0.1) / 4.0)).abs() < 1e-12);
    assert!((clipped_policy_loss(&[2.0], &[1.0], 0.4).unwrap() - (-1.4)).abs() < 1e-12);
    assert!((clipped_policy_loss(&[0.5], &[-1.0], 0.4).unwrap() - 0.6).abs() < 1e-12);
}

#[test]
fn sixteen_sample_batch_matches_scalar_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..200 {
        let ratios: Vec<f64> = (0..16).map(|_| rng.gen_range(0.2..2.5)).collect();
        let advantages: Vec<f64> = (0..16).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let eps = rng.gen_range(0.05..0.6);
        let got = clipped_policy_loss(&ratios, &advantages, eps).unwrap();
        assert!((got - scalar_loss(&ratios, &advantages, eps)).abs() < 1e-10);
    }
}

#[test]
fn four_sample_hand_computed() {
    // objectives: min(1.2*1, 1.2*1)=1.2; min(0.5*-2, 0.6*-2)=-1.2;
    // min(1.6*0.5, 1.4*0.5)=0.7; min(0.9*-1, 0.9*-1)=-0.9
    let loss = clipped_policy_loss(&[1.2, 0.5, 1.6, 0.9], &[1.0, -2.0, 0.5, -1.0], 0.4).unwrap();
    assert!((loss - (-(1.2 - 1.2 + 0.7 - 0.9) / 4.0)).abs() < 1e-10);
}

/// A 16-sample buffer whose stored log-probs put the ratios well inside
/// or well outside the clip interval, away from its kinks.
fn buffer_for(params: &ActorCritic, dist: &dyn ActionDistribution, rng: &mut ChaCha8Rng) -> RolloutBuffer {
    let mut buffer = RolloutBuffer::with_capacity(16);
    let mut exploration = ExplorationState::default();
    for i in 0..16 {
        let obs = [
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
        ];
        let head = params.head(&obs);
        let sample = dist.sample(&head, &params.extra, rng, &mut exploration);
        let shift = match i % 3 {
            0 => rng.gen_range(-0.2..0.2),
            1 => rng.gen_range(0.6..0.9),
            _ => rng.gen_range(-1.2..-0.7),
        };
        buffer.push(obs, sample.raw, sample.log_prob - shift, rng.gen_range(-1.0..1.0), 0.0, false);
    }
    buffer.advantages = (0..16).map(|_| rng.gen_range(-2.0..2.0)).collect();
    buffer.returns = (0..16).map(|_| rng.gen_range(-3.0..3.0)).collect();
    buffer
}

fn check_gradient(dist: &dyn ActionDistribution, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ActorCritic::new(8, dist, &mut rng);
    // larger output weights so the heads are not all near zero
    for w in params.actor.params_mut() {
        *w *= 3.0;
    }
    let buffer = buffer_for(&params, dist, &mut rng);
    let indices: Vec<usize> = (0..16).collect();
    let config = TrainConfig {
        ent_coef: 0.01,
        ..TrainConfig::default()
    };
    let batch = Minibatch {
        buffer: &buffer,
        indices: &indices,
        advantages: &buffer.advantages,
    };
    let mut grads = Gradients::zeros_like(&params);
    evaluate_minibatch(&params, dist, &batch, &config, Some(&mut grads));

    let h = 1e-5;
    let loss = |p: &ActorCritic| evaluate_minibatch(p, dist, &batch, &config, None).total;
    let mut numeric = Vec::new();
    for k in 0..params.actor.params().len() {
        let mut plus = params.clone();
        plus.actor.params_mut()[k] += h;
        let mut minus = params.clone();
        minus.actor.params_mut()[k] -= h;
        numeric.push((loss(&plus) - loss(&minus)) / (2.0 * h));
    }
    for k in 0..params.extra.len() {
        let mut plus = params.clone();
        plus.extra[k] += h;
        let mut minus = params.clone();
        minus.extra[k] -= h;
        numeric.push((loss(&plus) - loss(&minus)) / (2.0 * h));
    }
    let analytic: Vec<f64> = grads.actor.iter().chain(&grads.extra).copied().collect();
    let diff = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
    assert!(scale > 1e-6, "degenerate gradient");
    assert!(diff / scale < 1e-4, "{}: relative error {}", dist.name(), diff / scale);
}

#[test]
fn bernoulli_policy_gradient_matches_finite_differences() {
    for seed in 0..4 {
        check_gradient(&BernoulliHeads, seed);
    }
}

#[test]
fn threshold_policy_gradient_matches_finite_differences() {
    for seed in 0..4 {
        check_gradient(&ContinuousThreshold::default(), seed);
    }
}

#[test]
fn zero_advantages_leave_the_policy_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dist = BernoulliHeads;
    let mut params = ActorCritic::new(16, &dist, &mut rng);
    let mut buffer = buffer_for(&params, &dist, &mut rng);
    for (lp, i) in buffer.log_probs.iter_mut().zip(0..) {
        *lp = dist.log_prob(&params.head(&buffer.observations[i]), &[], &buffer.raw_actions[i]);
    }
    buffer.advantages = vec![0.0; 16];
    let config = TrainConfig {
        n_epochs: 1,
        batch_size: 16,
        normalize_advantage: false,
        ..TrainConfig::default()
    };
    let before = params.clone();
    let mut optimizer = PpoOptimizer::new(&params, config.learning_rate);
    ppo_update(&mut params, &mut optimizer, &dist, &buffer, &config, &mut rng).unwrap();
    assert_eq!(params.actor, before.actor);

    let sigmoid = |z: f64| 1.0 / (1.0 + (-z).exp());
    for _ in 0..32 {
        let obs = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        let (a, b) = (before.head(&obs), params.head(&obs));
        let kl: f64 = (0..2)
            .map(|i| {
                let (p, q) = (sigmoid(a[i]), sigmoid(b[i]));
                p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln()
            })
            .sum();
        assert!(kl < 1e-8);
    }
}

#[test]
fn clipping_caps_the_applied_norm() {
    let mut a = vec![6.0, 0.0];
    let mut b = vec![8.0];
    let before = clip_grad_norm(&mut [&mut a[..], &mut b[..]], 0.5);
    assert!((before - 10.0).abs() < 1e-12);
    let after = (a[0] * a[0] + b[0] * b[0]).sqrt();
    assert!((after - 0.5).abs() < 1e-6);
}

#[test]
fn update_is_deterministic_given_seed() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dist = BernoulliHeads;
        let mut params = ActorCritic::new(16, &dist, &mut rng);
        let buffer = buffer_for(&params, &dist, &mut rng);
        let config = TrainConfig {
            batch_size: 8,
            n_epochs: 3,
            ..TrainConfig::default()
        };
        let mut optimizer = PpoOptimizer::new(&params, 3e-4);
        let stats = ppo_update(&mut params, &mut optimizer, &dist, &buffer, &config, &mut rng).unwrap();
        (params, stats)
    };
    assert_eq!(run(), run());
}

use loader_rl_core::emulator::{run_emulated_episode, EmulationConfig};
use loader_rl_core::oracle::{OracleConfig, ScriptedPolicy};
use loader_rl_core::policy::{run_episode, ActorCritic, GreedyPolicy};
use loader_rl_core::distribution::BernoulliHeads;
use loader_rl_core::{ApproachEnv, EnvConfig, EpisodeTrace, Outcome, VehicleParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn env() -> ApproachEnv {
    ApproachEnv::new(EnvConfig::default(), VehicleParams::default()).unwrap()
}

fn scripted() -> ScriptedPolicy {
    ScriptedPolicy {
        oracle: OracleConfig::default(),
        env: EnvConfig::default(),
        vehicle: VehicleParams::default(),
    }
}

fn same_shared_columns(a: &EpisodeTrace, b: &EpisodeTrace) {
    assert_eq!(a.rows.len(), b.rows.len());
    assert_eq!(a.heading.to_bits(), b.heading.to_bits());
    for (x, y) in a.rows.iter().zip(&b.rows) {
        let mut y = y.clone();
        y.emulation = None;
        assert_eq!(*x, y);
    }
}

#[test]
fn degenerate_emulation_reproduces_the_simulator() {
    let env = env();
    let emu = EmulationConfig::degenerate();
    for seed in 0..20 {
        let plain = run_episode(&env, seed, &mut scripted(), "d").unwrap();
        let emulated = run_emulated_episode(&env, &emu, &mut scripted(), seed, "d").unwrap();
        same_shared_columns(&plain, &emulated);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let params = ActorCritic::new(16, &BernoulliHeads, &mut rng);
    for seed in 0..5 {
        let plain = run_episode(&env, seed, &mut GreedyPolicy::new(params.clone()).unwrap(), "d").unwrap();
        let emulated =
            run_emulated_episode(&env, &emu, &mut GreedyPolicy::new(params.clone()).unwrap(), seed, "d").unwrap();
        same_shared_columns(&plain, &emulated);
    }
}

#[test]
fn delay_makes_braking_later_and_overshoot_larger() {
    let env = env();
    for seed in 0..10 {
        let mut previous: Option<(f64, f64)> = None;
        for delay in [0.0, 1.0, 2.0, 3.0] {
            let emu = EmulationConfig {
                position_delay: delay,
                ..EmulationConfig::default()
            };
            let trace = run_emulated_episode(&env, &emu, &mut scripted(), seed, "d").unwrap();
            let onset = trace.brake_onset().expect("never braked");
            let overshoot = trace.final_overshoot().unwrap();
            if let Some((prev_onset, prev_overshoot)) = previous {
                assert!(onset > prev_onset, "seed {seed} delay {delay}");
                assert!(overshoot > prev_overshoot, "seed {seed} delay {delay}");
            }
            previous = Some((onset, overshoot));
        }
    }
}

#[test]
fn sensed_position_lags_by_the_delay() {
    let env = env();
    let emu = EmulationConfig {
        position_delay: 1.0,
        ..EmulationConfig::default()
    };
    let trace = run_emulated_episode(&env, &emu, &mut scripted(), 2, "d").unwrap();
    let by_time = |t: f64| trace.rows.iter().find(|r| (r.t - t).abs() < 1e-6).unwrap();
    let later = by_time(2.5).emulation.unwrap();
    let earlier = by_time(1.5);
    assert!((later.delayed_x - earlier.x).abs() < 1e-9 && (later.delayed_y - earlier.y).abs() < 1e-9);
}

#[test]
fn emulated_trace_round_trips_through_csv() {
    let trace = run_emulated_episode(&env(), &EmulationConfig::default(), &mut scripted(), 9, "abc").unwrap();
    let text = trace.to_csv_string(false).unwrap();
    let back = EpisodeTrace::read_csv(text.as_bytes()).unwrap();
    assert_eq!(back, trace);
    assert_ne!(trace.outcome(), Outcome::Running);
}

//! The training loop: rollout collection, PPO updates, metrics, periodic
//! greedy evaluation and checkpoint hand-off through an observer.

use std::collections::VecDeque;
use std::fs;
use std::io::{Read, Write};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{Checkpoint, RngSnapshot};
use crate::config::RunConfig;
use crate::distribution::{ActionDistribution, DistributionOptions, ExplorationState};
use crate::env::{ApproachEnv, EnvState, Observation, Outcome};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::policy::{ActorCritic, GreedyPolicy};
use crate::ppo::{ppo_update, PpoOptimizer, RolloutBuffer, UpdateStats};
use crate::rng;

/// Episodes averaged into the rolling metrics.
pub const METRICS_WINDOW: usize = 100;

pub const METRICS_COLUMNS: [&str; 10] = [
    "timestep",
    "updates",
    "ep_reward_mean",
    "ep_len_mean",
    "success_rate",
    "policy_loss",
    "value_loss",
    "entropy",
    "clip_fraction",
    "ratio_mean",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub timestep: u64,
    pub updates: u64,
    pub ep_reward_mean: f64,
    pub ep_len_mean: f64,
    pub success_rate: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub ratio_mean: f64,
}

impl MetricsRow {
    fn values(&self) -> [String; 10] {
        [
            self.timestep.to_string(),
            self.updates.to_string(),
            self.ep_reward_mean.to_string(),
            self.ep_len_mean.to_string(),
            self.success_rate.to_string(),
            self.policy_loss.to_string(),
            self.value_loss.to_string(),
            self.entropy.to_string(),
            self.clip_fraction.to_string(),
            self.ratio_mean.to_string(),
        ]
    }
}

/// Streams metrics rows as CSV after a `# config_digest=` line.
pub struct MetricsWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(mut out: W, config_digest: &str) -> Result<Self> {
        writeln!(out, "# config_digest={config_digest}").map_err(|e| Error::io("<metrics>", e))?;
        let mut inner = csv::Writer::from_writer(out);
        inner.write_record(METRICS_COLUMNS).map_err(|e| Error::format(e.to_string()))?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        self.inner.write_record(row.values()).map_err(|e| Error::format(e.to_string()))?;
        self.inner.flush().map_err(|e| Error::io("<metrics>", e))
    }
}

/// Parses a metrics file. Errors name the 1-based line of the bad record.
pub fn read_metrics<R: Read>(input: R) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .from_reader(input);
    let headers = reader.headers().map_err(|e| Error::format(format!("metrics header: {e}")))?.clone();
    if headers.iter().ne(METRICS_COLUMNS.iter().copied()) {
        return Err(Error::format(format!("unexpected metrics header `{}`", headers.iter().collect::<Vec<_>>().join(","))));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::format(format!("metrics: {e}")))?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |what: &str| Error::format(format!("metrics line {line}: {what}"));
        if record.len() != METRICS_COLUMNS.len() {
            return Err(bad(&format!("expected {} fields, got {}", METRICS_COLUMNS.len(), record.len())));
        }
        let int = |i: usize| record[i].parse::<u64>().map_err(|_| bad(&format!("bad {} `{}`", METRICS_COLUMNS[i], &record[i])));
        let float = |i: usize| record[i].parse::<f64>().map_err(|_| bad(&format!("bad {} `{}`", METRICS_COLUMNS[i], &record[i])));
        rows.push(MetricsRow {
            timestep: int(0)?,
            updates: int(1)?,
            ep_reward_mean: float(2)?,
            ep_len_mean: float(3)?,
            success_rate: float(4)?,
            policy_loss: float(5)?,
            value_loss: float(6)?,
            entropy: float(7)?,
            clip_fraction: float(8)?,
            ratio_mean: float(9)?,
        });
    }
    Ok(rows)
}

/// Hooks called by [`Trainer::run`]. Returning `Break` stops training after
/// the current update.
pub trait TrainObserver {
    fn on_update(&mut self, _trainer: &Trainer, _row: &MetricsRow) -> Result<ControlFlow<()>> {
        Ok(ControlFlow::Continue(()))
    }

    fn on_eval(&mut self, _trainer: &Trainer, _report: &EvalReport, _is_best: bool) -> Result<ControlFlow<()>> {
        Ok(ControlFlow::Continue(()))
    }

    fn on_finish(&mut self, _trainer: &Trainer) -> Result<()> {
        Ok(())
    }
}

/// Observer that does nothing.
pub struct NoObserver;

impl TrainObserver for NoObserver {}

#[derive(Debug, Clone, Copy, PartialEq)]
struct EpisodeStats {
    reward: f64,
    length: u64,
    success: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub timesteps: u64,
    pub updates: u64,
    pub episodes: u64,
    pub stopped_early: bool,
    pub best: Option<EvalReport>,
    pub last_metrics: Option<MetricsRow>,
}

pub struct Trainer {
    config: RunConfig,
    env: ApproachEnv,
    dist: Box<dyn ActionDistribution>,
    params: ActorCritic,
    optimizer: PpoOptimizer,
    sampling: ChaCha8Rng,
    minibatch: ChaCha8Rng,
    exploration: ExplorationState,
    state: EnvState,
    obs: Observation,
    buffer: RolloutBuffer,
    timesteps: u64,
    updates: u64,
    episodes: u64,
    episode_reward: f64,
    recent: VecDeque<EpisodeStats>,
    best: Option<EvalReport>,
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let env = ApproachEnv::new(config.env, config.vehicle)?;
        let options = DistributionOptions {
            noise_resample_every: config.train.noise_resample_every,
        };
        let dist = crate::distribution::registry().get(&config.train.exploration)?(&options);
        let mut init = rng::stream(config.seed, rng::POLICY_INIT_STREAM);
        let params = ActorCritic::new(config.train.hidden_units, dist.as_ref(), &mut init);
        let optimizer = PpoOptimizer::new(&params, config.train.learning_rate);
        let (state, obs) = env.reset(Self::episode_seed(config.seed, 0));
        Ok(Self {
            sampling: rng::stream(config.seed, rng::SAMPLING_STREAM),
            minibatch: rng::stream(config.seed, rng::MINIBATCH_STREAM),
            buffer: RolloutBuffer::with_capacity(config.train.n_steps),
            config,
            env,
            dist,
            params,
            optimizer,
            exploration: ExplorationState::default(),
            state,
            obs,
            timesteps: 0,
            updates: 0,
            episodes: 0,
            episode_reward: 0.0,
            recent: VecDeque::with_capacity(METRICS_WINDOW),
            best: None,
        })
    }

    fn episode_seed(seed: u64, index: u64) -> u64 {
        rng::derive_u64(seed, rng::ENV_STREAM, index)
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn params(&self) -> &ActorCritic {
        &self.params
    }

    pub fn timesteps(&self) -> u64 {
        self.timesteps
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn best(&self) -> Option<&EvalReport> {
        self.best.as_ref()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            params: self.params.clone(),
            rng_states: vec![
                (rng::SAMPLING_STREAM.to_string(), RngSnapshot::capture(&self.sampling)),
                (rng::MINIBATCH_STREAM.to_string(), RngSnapshot::capture(&self.minibatch)),
            ],
            timesteps: self.timesteps,
            updates: self.updates,
        }
    }

    /// Collects `n_steps` transitions with the stochastic policy.
    fn collect_rollout(&mut self) -> Result<()> {
        self.buffer.clear();
        let normalize = self.config.train.normalize_observations;
        for _ in 0..self.config.train.n_steps {
            if normalize {
                self.params.normalizer.update(&self.obs.to_array());
            }
            let x = self.params.normalize(&self.obs)?;
            let head = self.params.head(&x);
            let value = self.params.value(&x);
            let sample = self
                .dist
                .sample(&head, &self.params.extra, &mut self.sampling, &mut self.exploration);
            let step = self.env.step(&mut self.state, sample.action)?;
            self.timesteps += 1;
            self.episode_reward += step.reward.total;
            self.buffer
                .push(x, sample.raw, sample.log_prob, value, step.reward.total, step.done);
            if step.done {
                self.finish_episode(step.reward.outcome);
            } else {
                self.obs = step.observation;
            }
        }
        self.buffer.bootstrap_value = if self.buffer.dones.last() == Some(&true) {
            0.0
        } else {
            self.params.value(&self.params.normalize(&self.obs)?)
        };
        self.buffer.finish(self.config.train.gamma, self.config.train.gae_lambda)
    }

    fn finish_episode(&mut self, outcome: Outcome) {
        if self.recent.len() == METRICS_WINDOW {
            self.recent.pop_front();
        }
        self.recent.push_back(EpisodeStats {
            reward: self.episode_reward,
            length: self.state.step_count,
            success: outcome == Outcome::Success,
        });
        self.episodes += 1;
        self.episode_reward = 0.0;
        let (state, obs) = self.env.reset(Self::episode_seed(self.config.seed, self.episodes));
        self.state = state;
        self.obs = obs;
    }

    fn metrics(&self, stats: &UpdateStats) -> MetricsRow {
        let n = self.recent.len() as f64;
        let mean = |f: fn(&EpisodeStats) -> f64| {
            if self.recent.is_empty() {
                f64::NAN
            } else {
                self.recent.iter().map(f).sum::<f64>() / n
            }
        };
        MetricsRow {
            timestep: self.timesteps,
            updates: self.updates,
            ep_reward_mean: mean(|e| e.reward),
            ep_len_mean: mean(|e| e.length as f64),
            success_rate: mean(|e| f64::from(u8::from(e.success))),
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            clip_fraction: stats.clip_fraction,
            ratio_mean: stats.ratio_mean,
        }
    }

    /// Greedy evaluation of the current parameters on the training env.
    pub fn evaluate_greedy(&self, episodes: usize, seed: u64) -> Result<EvalReport> {
        let mut policy = GreedyPolicy::new(self.params.clone())?;
        evaluate(&self.env, &mut policy, episodes, seed, &self.config.digest())
    }

    /// One rollout plus one PPO update.
    pub fn train_iteration(&mut self) -> Result<MetricsRow> {
        self.collect_rollout()?;
        let stats = ppo_update(
            &mut self.params,
            &mut self.optimizer,
            self.dist.as_ref(),
            &self.buffer,
            &self.config.train,
            &mut self.minibatch,
        )?;
        self.updates += 1;
        Ok(self.metrics(&stats))
    }

    pub fn run(&mut self, observer: &mut dyn TrainObserver) -> Result<TrainSummary> {
        let total = self.config.train.total_timesteps;
        let eval_seed = rng::derive_u64(self.config.seed, rng::EVAL_STREAM, u64::MAX);
        let mut last_metrics = None;
        let mut stopped_early = false;
        while self.timesteps < total {
            let row = self.train_iteration()?;
            log::debug!(
                "update {} at {} steps: reward {:.3}, success {:.2}",
                row.updates,
                row.timestep,
                row.ep_reward_mean,
                row.success_rate
            );
            last_metrics = Some(row);
            let mut flow = observer.on_update(self, &row)?;
            if self.updates % self.config.train.eval_every as u64 == 0 {
                let report = self.evaluate_greedy(self.config.train.eval_episodes, eval_seed)?;
                let is_best = self.best.as_ref().map_or(true, |b| {
                    (report.success_rate, report.mean_reward) > (b.success_rate, b.mean_reward)
                });
                log::info!(
                    "eval after {} steps: success {:.2}, reward {:.3}{}",
                    self.timesteps,
                    report.success_rate,
                    report.mean_reward,
                    if is_best { " (best)" } else { "" }
                );
                if is_best {
                    self.best = Some(report.clone());
                }
                if observer.on_eval(self, &report, is_best)?.is_break() {
                    flow = ControlFlow::Break(());
                }
            }
            if flow.is_break() {
                stopped_early = true;
                break;
            }
        }
        observer.on_finish(self)?;
        Ok(TrainSummary {
            timesteps: self.timesteps,
            updates: self.updates,
            episodes: self.episodes,
            stopped_early,
            best: self.best.clone(),
            last_metrics,
        })
    }
}

/// Writes `metrics.csv`, periodic checkpoints, `best.ckpt` and `last.ckpt`
/// into a run directory.
pub struct RunDirectory {
    dir: PathBuf,
    metrics: MetricsWriter<fs::File>,
    checkpoint_every: u64,
}

impl RunDirectory {
    pub const METRICS_FILE: &'static str = "metrics.csv";
    pub const BEST_FILE: &'static str = "best.ckpt";
    pub const LAST_FILE: &'static str = "last.ckpt";

    pub fn create(dir: &Path, config: &RunConfig) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(Self::METRICS_FILE);
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            metrics: MetricsWriter::new(file, &config.digest())?,
            checkpoint_every: config.train.checkpoint_every as u64,
        })
    }

    fn save(&self, name: &str, checkpoint: &Checkpoint) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, checkpoint.to_bytes()).map_err(|e| Error::io(&path, e))
    }
}

impl TrainObserver for RunDirectory {
    fn on_update(&mut self, trainer: &Trainer, row: &MetricsRow) -> Result<ControlFlow<()>> {
        self.metrics.write(row)?;
        if self.checkpoint_every > 0 && trainer.updates() % self.checkpoint_every == 0 {
            self.save(&format!("checkpoint_{:06}.ckpt", trainer.updates()), &trainer.checkpoint())?;
        }
        Ok(ControlFlow::Continue(()))
    }

    fn on_eval(&mut self, trainer: &Trainer, _report: &EvalReport, is_best: bool) -> Result<ControlFlow<()>> {
        if is_best {
            self.save(Self::BEST_FILE, &trainer.checkpoint())?;
        }
        Ok(ControlFlow::Continue(()))
    }

    fn on_finish(&mut self, trainer: &Trainer) -> Result<()> {
        let last = trainer.checkpoint();
        self.save(Self::LAST_FILE, &last)?;
        if trainer.best().is_none() {
            self.save(Self::BEST_FILE, &last)?;
        }
        Ok(())
    }
}

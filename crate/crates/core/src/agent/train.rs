//! DDPG training loop.
//!
//! Single-threaded and deterministic: every random draw comes from one of a
//! handful of streams derived from the master seed, so a run is a pure
//! function of `(TrainConfig, EnvConfig, seed)`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::actor::{Actor, ActorConfig};
use super::batch::ObsBatch;
use super::critic::Critic;
use super::losses::{actor_loss, critic_loss, td_targets, ActorLossWeights};
use super::replay::{ReplayBuffer, Transition};
use crate::dynamics::MAX_RUDDER_DEG;
use crate::error::{Error, Result};
use crate::neural::{adam_update, AdamConfig, AdamState, MlpGrads};
use crate::observation::StackedObservation;
use crate::scenario::{derive_seed, EnvConfig, Episode, Scenario};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_steps: u64,
    /// Environment steps between update triggers.
    pub train_interval: u64,
    pub updates_per_trigger: u32,
    pub lr: f64,
    pub target_update_rate: f64,
    pub batch_size: usize,
    pub gamma: f64,
    pub lambda_reg: f64,
    pub lambda_s: f64,
    pub lambda_a: f64,
    /// Uniformly random actions before the first update.
    pub warmup_steps: u64,
    pub buffer_capacity: usize,
    pub noise_sigma_start: f64,
    pub noise_sigma_end: f64,
    /// Fraction of `learning_steps` over which σ is annealed.
    pub noise_anneal_fraction: f64,
    /// Per-feature σ of the perturbed state in the smoothing term.
    pub smoothing_sigma: f64,
    /// 0 disables periodic checkpoints.
    pub checkpoint_every: u64,
    pub actor: ActorConfig,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_steps: 10_000_000,
            train_interval: 100,
            updates_per_trigger: 1,
            lr: 0.001,
            target_update_rate: 0.001,
            batch_size: 1024,
            gamma: 0.98,
            lambda_reg: 0.001,
            lambda_s: 0.005,
            lambda_a: 0.0001,
            warmup_steps: 10_000,
            buffer_capacity: 1_000_000,
            noise_sigma_start: 0.3,
            noise_sigma_end: 0.05,
            noise_anneal_fraction: 0.5,
            smoothing_sigma: 0.01,
            checkpoint_every: 100_000,
            actor: ActorConfig::default(),
            adam: AdamConfig::default(),
        }
    }
}

fn positive(field: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(field, "must be positive"))
    }
}

fn non_negative(field: &'static str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(field, "must be non-negative"))
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_interval == 0 {
            return Err(Error::config("train.train_interval", "must be positive"));
        }
        if self.updates_per_trigger == 0 {
            return Err(Error::config("train.updates_per_trigger", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        if self.buffer_capacity == 0 {
            return Err(Error::config("train.buffer_capacity", "must be positive"));
        }
        positive("train.lr", self.lr)?;
        positive("train.target_update_rate", self.target_update_rate)?;
        if self.target_update_rate > 1.0 {
            return Err(Error::config("train.target_update_rate", "must not exceed 1"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::config("train.gamma", "must lie in (0, 1)"));
        }
        non_negative("train.lambda_reg", self.lambda_reg)?;
        non_negative("train.lambda_s", self.lambda_s)?;
        non_negative("train.lambda_a", self.lambda_a)?;
        non_negative("train.noise_sigma_start", self.noise_sigma_start)?;
        non_negative("train.noise_sigma_end", self.noise_sigma_end)?;
        non_negative("train.smoothing_sigma", self.smoothing_sigma)?;
        if !(self.noise_anneal_fraction > 0.0 && self.noise_anneal_fraction <= 1.0) {
            return Err(Error::config("train.noise_anneal_fraction", "must lie in (0, 1]"));
        }
        let a = self.adam;
        if !(a.beta1 >= 0.0 && a.beta1 < 1.0 && a.beta2 >= 0.0 && a.beta2 < 1.0 && a.eps > 0.0) {
            return Err(Error::config("train.adam", "betas must lie in [0, 1) and eps be positive"));
        }
        Ok(())
    }

    pub fn loss_weights(&self) -> ActorLossWeights {
        ActorLossWeights {
            lambda_reg: self.lambda_reg,
            lambda_s: self.lambda_s,
            lambda_a: self.lambda_a,
        }
    }

    /// Exploration σ in effect at 0-based environment step `t`.
    pub fn exploration_sigma(&self, t: u64) -> f64 {
        let span = self.noise_anneal_fraction * self.learning_steps as f64;
        let frac = if span > 0.0 { (t as f64 / span).min(1.0) } else { 1.0 };
        self.noise_sigma_start * (1.0 - frac) + self.noise_sigma_end * frac
    }

    /// Updates performed once `n` environment steps have completed.
    pub fn updates_after(&self, n: u64) -> u64 {
        if n < self.warmup_steps {
            0
        } else {
            (n - self.warmup_steps) / self.train_interval * self.updates_per_trigger as u64
        }
    }
}

/// Online and target networks with their optimizer state.
#[derive(Debug, Clone)]
pub struct Agent {
    pub actor: Actor,
    pub critic: Critic,
    pub target_actor: Actor,
    pub target_critic: Critic,
    actor_opt: Vec<AdamState>,
    critic_opt: Vec<AdamState>,
}

/// Random stream indices under the master seed.
mod stream {
    pub const INIT: u64 = 0;
    pub const SCENARIO: u64 = 1;
    pub const EXPLORE: u64 = 2;
    pub const REPLAY: u64 = 3;
    pub const SMOOTH: u64 = 4;
}

impl Agent {
    /// Freshly initialized agent; targets start as exact copies.
    pub fn new(actor_cfg: &ActorConfig, adam: AdamConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, stream::INIT));
        let actor = Actor::init(actor_cfg, &mut rng);
        let critic = Critic::init(&mut rng);
        Self::from_networks(actor, critic, adam)
    }

    pub fn from_networks(actor: Actor, critic: Critic, adam: AdamConfig) -> Self {
        let actor_opt = actor.nets().iter().map(|(_, n)| AdamState::new(n, adam)).collect();
        let critic_opt = critic.nets().iter().map(|(_, n)| AdamState::new(n, adam)).collect();
        Agent {
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
            actor_opt,
            critic_opt,
        }
    }

    pub fn soft_update(&mut self, rate: f64) {
        self.target_actor.soft_update_from(&self.actor, rate);
        self.target_critic.soft_update_from(&self.critic, rate);
    }
}

/// One row of the metrics log, written when an episode ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    /// Environment steps completed when the episode ended.
    pub env_step: u64,
    pub episode: u64,
    pub episode_return: f64,
    /// Mean over the updates run during the episode; empty when none ran.
    pub critic_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub invasion_events: usize,
    /// Exploration σ at the episode's last step.
    pub epsilon_sigma: f64,
}

pub const METRICS_COLUMNS: [&str; 7] = [
    "env_step",
    "episode",
    "episode_return",
    "critic_loss",
    "actor_loss",
    "invasion_events",
    "epsilon_sigma",
];

impl EpisodeMetrics {
    /// CSV row in [`METRICS_COLUMNS`] order. Floats use the shortest
    /// representation that round-trips.
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.env_step,
            self.episode,
            self.episode_return,
            opt(self.critic_loss),
            opt(self.actor_loss),
            self.invasion_events,
            self.epsilon_sigma
        )
    }
}

/// Callback hooks during [`train`].
pub enum TrainEvent<'a> {
    Episode(&'a EpisodeMetrics),
    Checkpoint { env_step: u64, agent: &'a Agent },
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub agent: Agent,
    pub metrics: Vec<EpisodeMetrics>,
    pub env_steps: u64,
    pub updates: u64,
}

/// Step-wise trainer; [`train`] drives it to completion.
pub struct Trainer {
    cfg: TrainConfig,
    env_cfg: EnvConfig,
    seed: u64,
    agent: Agent,
    buffer: ReplayBuffer,
    explore_rng: ChaCha8Rng,
    replay_rng: ChaCha8Rng,
    smooth_rng: ChaCha8Rng,
    episode: Episode,
    obs: Arc<StackedObservation>,
    episode_index: u64,
    episode_return: f64,
    losses: (f64, f64, u32),
    env_steps: u64,
    updates: u64,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, env_cfg: EnvConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        env_cfg.validate()?;
        let agent = Agent::new(&cfg.actor, cfg.adam, seed);
        let (episode, obs) = Self::start_episode(&env_cfg, seed, 0);
        Ok(Trainer {
            buffer: ReplayBuffer::new(cfg.buffer_capacity),
            explore_rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, stream::EXPLORE)),
            replay_rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, stream::REPLAY)),
            smooth_rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, stream::SMOOTH)),
            cfg,
            env_cfg,
            seed,
            agent,
            episode,
            obs: Arc::new(obs),
            episode_index: 0,
            episode_return: 0.0,
            losses: (0.0, 0.0, 0),
            env_steps: 0,
            updates: 0,
        })
    }

    fn start_episode(env_cfg: &EnvConfig, seed: u64, index: u64) -> (Episode, StackedObservation) {
        let scenario_seed = derive_seed(derive_seed(seed, stream::SCENARIO), index);
        Episode::reset(Scenario::generate(scenario_seed, &env_cfg.scenario), env_cfg)
    }

    pub fn agent(&self) -> &Agent {
        &self.agent
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn buffer_len(&self) -> usize {
        self.buffer.len()
    }

    fn diverged(&self, what: impl Into<String>) -> Error {
        Error::Diverged {
            step: self.env_steps,
            what: what.into(),
        }
    }

    fn choose_action(&mut self) -> Result<f64> {
        if self.env_steps < self.cfg.warmup_steps {
            return Ok(self.explore_rng.gen_range(-1.0..=1.0));
        }
        let pi = self
            .agent
            .actor
            .act(&self.obs)
            .map_err(|e| self.diverged(format!("actor output: {e}")))?;
        let sigma = self.cfg.exploration_sigma(self.env_steps);
        let z: f64 = StandardNormal.sample(&mut self.explore_rng);
        Ok((pi + sigma * z).clamp(-1.0, 1.0))
    }

    /// Advances one environment step, running the updates it triggers.
    /// Returns the metrics row when an episode ended on this step.
    pub fn step(&mut self) -> Result<Option<EpisodeMetrics>> {
        let a = self.choose_action()?;
        let out = self.episode.step(MAX_RUDDER_DEG * a)?;
        let r = out.reward.total;
        if !r.is_finite() || !out.observation.is_finite() {
            return Err(self.diverged("environment produced a non-finite value"));
        }
        let sigma = self.cfg.exploration_sigma(self.env_steps);
        self.env_steps += 1;
        self.episode_return += r;
        let next = Arc::new(out.observation);
        self.buffer.push(Transition {
            s: self.obs.clone(),
            a,
            r,
            s_next: next.clone(),
            time_limit: out.time_limit,
        });
        self.obs = next;

        if self.env_steps > self.cfg.warmup_steps
            && (self.env_steps - self.cfg.warmup_steps) % self.cfg.train_interval == 0
        {
            for _ in 0..self.cfg.updates_per_trigger {
                let (lc, la) = self.update()?;
                self.losses.0 += lc;
                self.losses.1 += la;
                self.losses.2 += 1;
                self.updates += 1;
            }
        }

        if !out.done {
            return Ok(None);
        }
        let (lc, la, k) = self.losses;
        let metrics = EpisodeMetrics {
            env_step: self.env_steps,
            episode: self.episode_index,
            episode_return: self.episode_return,
            critic_loss: (k > 0).then(|| lc / k as f64),
            actor_loss: (k > 0).then(|| la / k as f64),
            invasion_events: self.episode.invasion_events(),
            epsilon_sigma: sigma,
        };
        self.episode_index += 1;
        let (episode, obs) = Self::start_episode(&self.env_cfg, self.seed, self.episode_index);
        self.episode = episode;
        self.obs = Arc::new(obs);
        self.episode_return = 0.0;
        self.losses = (0.0, 0.0, 0);
        Ok(Some(metrics))
    }

    /// One critic update, one actor update, one soft update (in that order).
    fn update(&mut self) -> Result<(f64, f64)> {
        let sample = self.buffer.sample(&mut self.replay_rng, self.cfg.batch_size);
        let s = ObsBatch::from_observations(sample.iter().map(|t| t.s.as_ref()));
        let next = ObsBatch::from_observations(sample.iter().map(|t| t.s_next.as_ref()));
        let actions: Vec<f64> = sample.iter().map(|t| t.a).collect();
        let rewards: Vec<f64> = sample.iter().map(|t| t.r).collect();
        let step = self.env_steps;
        let wrap = |what: &str, e: Error| Error::Diverged {
            step,
            what: format!("{what}: {e}"),
        };

        let y = td_targets(
            &self.agent.target_actor,
            &self.agent.target_critic,
            &next,
            &rewards,
            self.cfg.gamma,
        )
        .map_err(|e| wrap("td target", e))?;
        let (lc, cg) = critic_loss(&self.agent.critic, &s, &actions, &y).map_err(|e| wrap("critic loss", e))?;
        let grads: [&MlpGrads; 2] = [&cg.q_wp, &cg.q_ca];
        for ((_, net), (g, st)) in self
            .agent
            .critic
            .nets_mut()
            .into_iter()
            .zip(grads.into_iter().zip(self.agent.critic_opt.iter_mut()))
        {
            adam_update(net, g, st, self.cfg.lr).map_err(|e| wrap("critic step", e))?;
        }

        let sigma = self.cfg.smoothing_sigma;
        let rng = &mut self.smooth_rng;
        let s_hat = s.perturbed(|| {
            let z: f64 = StandardNormal.sample(rng);
            sigma * z
        });
        let (parts, ag) = actor_loss(
            &self.agent.actor,
            &self.agent.critic,
            &s,
            &s_hat,
            &next,
            &self.cfg.loss_weights(),
        )
        .map_err(|e| wrap("actor loss", e))?;
        let grads = ag.nets();
        for ((_, net), ((_, g), st)) in self
            .agent
            .actor
            .nets_mut()
            .into_iter()
            .zip(grads.into_iter().zip(self.agent.actor_opt.iter_mut()))
        {
            adam_update(net, g, st, self.cfg.lr).map_err(|e| wrap("actor step", e))?;
        }

        self.agent.soft_update(self.cfg.target_update_rate);
        Ok((lc, parts.total))
    }

    /// Runs to `learning_steps`, reporting episodes and checkpoints.
    pub fn run(mut self, observer: &mut dyn FnMut(TrainEvent<'_>) -> Result<()>) -> Result<TrainOutcome> {
        let mut metrics = Vec::new();
        while self.env_steps < self.cfg.learning_steps {
            if let Some(m) = self.step()? {
                observer(TrainEvent::Episode(&m))?;
                metrics.push(m);
            }
            let every = self.cfg.checkpoint_every;
            if every > 0 && self.env_steps % every == 0 && self.env_steps < self.cfg.learning_steps {
                observer(TrainEvent::Checkpoint {
                    env_step: self.env_steps,
                    agent: &self.agent,
                })?;
            }
        }
        Ok(TrainOutcome {
            agent: self.agent,
            metrics,
            env_steps: self.env_steps,
            updates: self.updates,
        })
    }
}

/// Trains from scratch. The final agent is returned, not reported as a
/// checkpoint event.
pub fn train(
    cfg: &TrainConfig,
    env_cfg: &EnvConfig,
    seed: u64,
    observer: &mut dyn FnMut(TrainEvent<'_>) -> Result<()>,
) -> Result<TrainOutcome> {
    Trainer::new(cfg.clone(), env_cfg.clone(), seed)?.run(observer)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> (TrainConfig, EnvConfig) {
        let cfg = TrainConfig {
            learning_steps: 700,
            warmup_steps: 200,
            train_interval: 50,
            batch_size: 8,
            checkpoint_every: 0,
            ..TrainConfig::default()
        };
        let mut env = EnvConfig::default();
        env.scenario.n_ships_range = [0, 2];
        (cfg, env)
    }

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
        let bad = TrainConfig {
            gamma: 1.0,
            ..TrainConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::InvalidConfig { ref field, .. }) if field == "train.gamma"));
    }

    #[test]
    fn sigma_schedule() {
        let cfg = TrainConfig {
            learning_steps: 1000,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.exploration_sigma(0), 0.3);
        assert!((cfg.exploration_sigma(250) - 0.175).abs() < 1e-15);
        assert_eq!(cfg.exploration_sigma(500), 0.05);
        assert_eq!(cfg.exploration_sigma(900), 0.05);
    }

    #[test]
    fn update_count_follows_warmup_rule() {
        let (cfg, env) = tiny();
        let mut t = Trainer::new(cfg.clone(), env, 3).unwrap();
        for n in 1..=430u64 {
            t.step().unwrap();
            assert_eq!(t.updates(), cfg.updates_after(n), "after {n} steps");
        }
        assert_eq!(t.updates(), (430 - 200) / 50);
    }

    #[test]
    fn warmup_leaves_networks_untouched() {
        let (cfg, env) = tiny();
        let mut t = Trainer::new(cfg, env, 4).unwrap();
        let before = t.agent().actor.clone();
        for _ in 0..200 {
            t.step().unwrap();
        }
        assert_eq!(t.updates(), 0);
        assert_eq!(t.agent().actor, before);
        assert_eq!(t.agent().target_actor, before);
    }

    #[test]
    fn runs_are_deterministic() {
        let (cfg, env) = tiny();
        let a = train(&cfg, &env, 9, &mut |_| Ok(())).unwrap();
        let b = train(&cfg, &env, 9, &mut |_| Ok(())).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.agent.actor, b.agent.actor);
        assert_eq!(a.metrics.len(), 2);
        assert_eq!(a.updates, 10);
        assert!(a.metrics[1].critic_loss.is_some());
    }
}

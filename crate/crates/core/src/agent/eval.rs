//! Deterministic policy rollouts for evaluation.

use serde::{Deserialize, Serialize};

use super::actor::Actor;
use crate::dynamics::MAX_RUDDER_DEG;
use crate::error::Result;
use crate::scenario::{derive_seed, EnvConfig, Episode, Scenario};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeEval {
    pub episode: u64,
    pub scenario_seed: u64,
    pub n_ships: usize,
    pub episode_return: f64,
    pub invasion_events: usize,
    pub max_cr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    /// `None` when no episodes ran.
    pub mean_return: Option<f64>,
    pub min_return: Option<f64>,
    /// Share of episodes with at least one domain invasion.
    pub invasion_episode_rate: Option<f64>,
    pub mean_max_cr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub summary: EvalSummary,
    pub episodes: Vec<EpisodeEval>,
}

/// Scenario seed of evaluation episode `k` under master `seed`.
pub fn eval_scenario_seed(seed: u64, k: u64) -> u64 {
    derive_seed(seed, k)
}

/// Rolls out the greedy policy for one scenario.
pub fn rollout(actor: &Actor, scenario: Scenario, env: &EnvConfig) -> Result<(f64, Episode)> {
    let (mut ep, mut obs) = Episode::reset(scenario, env);
    let mut ret = 0.0;
    while !ep.is_done() {
        let a = actor.act(&obs)?;
        let out = ep.step(MAX_RUDDER_DEG * a)?;
        ret += out.reward.total;
        obs = out.observation;
    }
    Ok((ret, ep))
}

/// Evaluates `episodes` fixed-seed scenarios. With `n_ships` set, every
/// scenario has exactly that many targets.
pub fn evaluate(actor: &Actor, env: &EnvConfig, episodes: usize, seed: u64, n_ships: Option<usize>) -> Result<EvalReport> {
    let mut rows = Vec::with_capacity(episodes);
    for k in 0..episodes as u64 {
        let scenario_seed = eval_scenario_seed(seed, k);
        let scenario = match n_ships {
            Some(n) => Scenario::generate_with_count(scenario_seed, &env.scenario, n),
            None => Scenario::generate(scenario_seed, &env.scenario),
        };
        let n = scenario.targets.len();
        let (ret, ep) = rollout(actor, scenario, env)?;
        rows.push(EpisodeEval {
            episode: k,
            scenario_seed,
            n_ships: n,
            episode_return: ret,
            invasion_events: ep.invasion_events(),
            max_cr: ep.max_cr(),
        });
    }
    Ok(EvalReport {
        summary: summarize(&rows),
        episodes: rows,
    })
}

pub fn summarize(rows: &[EpisodeEval]) -> EvalSummary {
    let n = rows.len();
    if n == 0 {
        return EvalSummary {
            episodes: 0,
            mean_return: None,
            min_return: None,
            invasion_episode_rate: None,
            mean_max_cr: None,
        };
    }
    let nf = n as f64;
    EvalSummary {
        episodes: n,
        mean_return: Some(rows.iter().map(|r| r.episode_return).sum::<f64>() / nf),
        min_return: rows.iter().map(|r| r.episode_return).min_by(f64::total_cmp),
        invasion_episode_rate: Some(rows.iter().filter(|r| r.invasion_events > 0).count() as f64 / nf),
        mean_max_cr: Some(rows.iter().map(|r| r.max_cr).sum::<f64>() / nf),
    }
}

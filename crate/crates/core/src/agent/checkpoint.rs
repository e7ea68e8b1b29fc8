//! Checkpoint files: networks plus everything needed to interpret them.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::actor::{Actor, ActorConfig};
use super::critic::Critic;
use super::train::{Agent, TrainConfig};
use crate::error::{Error, Result};
use crate::neural::Mlp;
use crate::observation::ObsScales;
use crate::scenario::EnvConfig;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub hyperparams: TrainConfig,
    pub env: EnvConfig,
    pub obs_normalization: ObsScales,
    pub rng_seed: u64,
    /// Hash of the run configuration that produced this file (may be empty).
    pub config_hash: String,
    pub env_steps: u64,
    /// Online networks keyed `actor.<net>` / `critic.<net>`.
    pub networks: BTreeMap<String, Mlp>,
}

impl Checkpoint {
    pub fn from_agent(
        agent: &Agent,
        hyperparams: &TrainConfig,
        env: &EnvConfig,
        rng_seed: u64,
        config_hash: &str,
        env_steps: u64,
    ) -> Self {
        Self::from_networks(&agent.actor, &agent.critic, hyperparams, env, rng_seed, config_hash, env_steps)
    }

    pub fn from_networks(
        actor: &Actor,
        critic: &Critic,
        hyperparams: &TrainConfig,
        env: &EnvConfig,
        rng_seed: u64,
        config_hash: &str,
        env_steps: u64,
    ) -> Self {
        let mut networks = BTreeMap::new();
        for (k, n) in actor.nets() {
            networks.insert(format!("actor.{k}"), n.clone());
        }
        for (k, n) in critic.nets() {
            networks.insert(format!("critic.{k}"), n.clone());
        }
        let mut hyperparams = hyperparams.clone();
        hyperparams.actor = actor.config();
        Checkpoint {
            format_version: FORMAT_VERSION,
            hyperparams,
            env: env.clone(),
            obs_normalization: env.normalization,
            rng_seed,
            config_hash: config_hash.to_string(),
            env_steps,
            networks,
        }
    }

    fn take(&self, name: &str) -> Result<Mlp> {
        self.networks
            .get(name)
            .cloned()
            .ok_or_else(|| Error::Checkpoint(format!("missing network {name}")))
    }

    pub fn actor_config(&self) -> ActorConfig {
        self.hyperparams.actor
    }

    pub fn actor(&self) -> Result<Actor> {
        let cfg = self.actor_config();
        let attention = match cfg.variant {
            super::actor::ActorVariant::Plain => None,
            super::actor::ActorVariant::Attention => Some(self.take("actor.attention")?),
        };
        let actor = Actor {
            e_wp: self.take("actor.e_wp")?,
            e_oth: self.take("actor.e_oth")?,
            head_a: self.take("actor.head_a")?,
            attention,
            feature_softsign: cfg.feature_softsign,
        };
        actor.validate()?;
        Ok(actor)
    }

    pub fn critic(&self) -> Result<Critic> {
        let critic = Critic {
            q_wp: self.take("critic.q_wp")?,
            q_ca: self.take("critic.q_ca")?,
        };
        critic.validate()?;
        Ok(critic)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Version {
            format_version: Option<u32>,
        }
        let v: Version = serde_json::from_str(s)?;
        match v.format_version {
            Some(FORMAT_VERSION) => {}
            Some(other) => {
                return Err(Error::Checkpoint(format!(
                    "format version {other} is not supported (expected {FORMAT_VERSION})"
                )))
            }
            None => return Err(Error::Checkpoint("missing format_version".into())),
        }
        let c: Checkpoint = serde_json::from_str(s)?;
        if c.obs_normalization != c.env.normalization {
            return Err(Error::Checkpoint("obs_normalization disagrees with env.normalization".into()));
        }
        c.actor()?;
        c.critic()?;
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::actor::ActorVariant;
    use crate::neural::AdamConfig;

    fn sample(variant: ActorVariant) -> Checkpoint {
        let cfg = TrainConfig {
            actor: ActorConfig {
                variant,
                feature_softsign: true,
            },
            ..TrainConfig::default()
        };
        let agent = Agent::new(&cfg.actor, AdamConfig::default(), 7);
        Checkpoint::from_agent(&agent, &cfg, &EnvConfig::default(), 7, "abc", 0)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for v in [ActorVariant::Plain, ActorVariant::Attention] {
            let c = sample(v);
            let back = Checkpoint::from_json(&c.to_json().unwrap()).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.actor().unwrap().variant(), v);
        }
    }

    #[test]
    fn version_mismatch_rejected() {
        let c = sample(ActorVariant::Plain);
        let s = c.to_json().unwrap().replacen("\"format_version\":1", "\"format_version\":9", 1);
        assert!(matches!(Checkpoint::from_json(&s), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn missing_network_rejected() {
        let mut c = sample(ActorVariant::Attention);
        c.networks.remove("actor.attention");
        assert!(Checkpoint::from_json(&c.to_json().unwrap()).is_err());
    }
}

//! DDPG losses with analytic gradients.

use serde::{Deserialize, Serialize};

use super::actor::{Actor, ActorGrads};
use super::batch::ObsBatch;
use super::critic::{Critic, CriticGrads};
use crate::error::{Error, Result};

/// TD targets `r + γ·Q'(s', π'(s'))` from the target networks.
pub fn td_targets(
    target_actor: &Actor,
    target_critic: &Critic,
    next: &ObsBatch,
    rewards: &[f64],
    gamma: f64,
) -> Result<Vec<f64>> {
    let a_next = target_actor.predict_batch(next)?;
    let q_next = target_critic.predict_batch(next, &a_next)?;
    Ok(rewards.iter().zip(&q_next).map(|(&r, &q)| r + gamma * q).collect())
}

/// `mean (Q(s,a) − y)²` and its gradient with respect to the online critic.
pub fn critic_loss(critic: &Critic, s: &ObsBatch, actions: &[f64], targets: &[f64]) -> Result<(f64, CriticGrads)> {
    if s.is_empty() {
        return Err(Error::Dimension("critic loss on an empty batch".into()));
    }
    let pass = critic.forward_batch(s, actions)?;
    let n = s.len() as f64;
    let err: Vec<f64> = pass.q_total.iter().zip(targets).map(|(&q, &y)| q - y).collect();
    let loss = err.iter().fold(0.0, |acc, &e| acc + e * e) / n;
    if !loss.is_finite() {
        return Err(Error::NonFinite("critic loss".into()));
    }
    let d_q: Vec<f64> = err.iter().map(|&e| 2.0 * e / n).collect();
    let (grads, _) = critic.backward(&pass, &d_q)?;
    Ok((loss, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActorLossWeights {
    pub lambda_reg: f64,
    pub lambda_s: f64,
    pub lambda_a: f64,
}

impl Default for ActorLossWeights {
    fn default() -> Self {
        Self {
            lambda_reg: 0.001,
            lambda_s: 0.005,
            lambda_a: 0.0001,
        }
    }
}

/// The individual terms of the actor loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActorLossParts {
    pub neg_q: f64,
    pub reg: f64,
    pub smooth: f64,
    pub magnitude: f64,
    pub total: f64,
}

/// `−mean Q(s,π(s)) + λ_reg·Σθ² + λ_s·sqrt(mean[(π(s)−π(ŝ))² + (π(s)−π(s'))²]) + λ_a·mean|π(s)|`.
///
/// The critic is frozen; the returned gradient is with respect to the actor.
/// `s_hat` is the perturbed copy of `s`, `next` the successor states.
pub fn actor_loss(
    actor: &Actor,
    critic: &Critic,
    s: &ObsBatch,
    s_hat: &ObsBatch,
    next: &ObsBatch,
    w: &ActorLossWeights,
) -> Result<(ActorLossParts, ActorGrads)> {
    let (parts, grads) = actor_loss_impl(actor, critic, s, s_hat, next, w, true)?;
    Ok((parts, grads.expect("requested")))
}

/// [`actor_loss`] without the backward sweep.
pub fn actor_loss_value(
    actor: &Actor,
    critic: &Critic,
    s: &ObsBatch,
    s_hat: &ObsBatch,
    next: &ObsBatch,
    w: &ActorLossWeights,
) -> Result<ActorLossParts> {
    Ok(actor_loss_impl(actor, critic, s, s_hat, next, w, false)?.0)
}

fn sign(a: f64) -> f64 {
    if a > 0.0 {
        1.0
    } else if a < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn actor_loss_impl(
    actor: &Actor,
    critic: &Critic,
    s: &ObsBatch,
    s_hat: &ObsBatch,
    next: &ObsBatch,
    w: &ActorLossWeights,
    want_grads: bool,
) -> Result<(ActorLossParts, Option<ActorGrads>)> {
    if s.is_empty() {
        return Err(Error::Dimension("actor loss on an empty batch".into()));
    }
    if s_hat.len() != s.len() || next.len() != s.len() {
        return Err(Error::Dimension("actor loss batches differ in length".into()));
    }
    let b = s.len();
    let n = b as f64;
    let agg = actor.default_aggregation();
    let p = actor.forward_batch(s, agg)?;
    let q_pass = critic.forward_batch(s, &p.actions)?;
    let neg_q = -q_pass.q_total.iter().fold(0.0, |acc, &q| acc + q) / n;
    let magnitude = w.lambda_a * p.actions.iter().fold(0.0, |acc, &a| acc + a.abs()) / n;

    let smoothing = if w.lambda_s != 0.0 {
        let ph = actor.forward_batch(s_hat, agg)?;
        let pn = actor.forward_batch(next, agg)?;
        let d = (0..b).fold(0.0, |acc, k| {
            let x = p.actions[k] - ph.actions[k];
            let y = p.actions[k] - pn.actions[k];
            acc + x * x + y * y
        }) / n;
        Some((ph, pn, d))
    } else {
        None
    };
    let smooth = smoothing.as_ref().map_or(0.0, |(_, _, d)| w.lambda_s * d.sqrt());
    let reg = w.lambda_reg * actor.sum_squares();
    let total = neg_q + reg + smooth + magnitude;
    if !total.is_finite() {
        return Err(Error::NonFinite("actor loss".into()));
    }
    let parts = ActorLossParts {
        neg_q,
        reg,
        smooth,
        magnitude,
        total,
    };
    if !want_grads {
        return Ok((parts, None));
    }

    let dq_da = critic.backward_action(&q_pass, &vec![1.0; b])?;
    let mut d_pi: Vec<f64> = dq_da
        .iter()
        .zip(&p.actions)
        .map(|(&g, &a)| -g / n + w.lambda_a * sign(a) / n)
        .collect();
    let mut extra = Vec::new();
    if let Some((ph, pn, d)) = &smoothing {
        // The square root has no derivative at zero; a policy that is already
        // perfectly smooth gets no push from this term.
        if *d > 0.0 {
            let c = w.lambda_s / d.sqrt() / n;
            let mut d_hat = vec![0.0; b];
            let mut d_next = vec![0.0; b];
            for k in 0..b {
                let x = p.actions[k] - ph.actions[k];
                let y = p.actions[k] - pn.actions[k];
                d_pi[k] += c * (x + y);
                d_hat[k] = -c * x;
                d_next[k] = -c * y;
            }
            extra.push(actor.backward(ph, &d_hat)?);
            extra.push(actor.backward(pn, &d_next)?);
        }
    }
    let mut grads = actor.backward(&p, &d_pi)?;
    for g in &extra {
        grads.add_assign(g);
    }
    if w.lambda_reg != 0.0 {
        grads.add_scaled_params(actor, 2.0 * w.lambda_reg);
    }
    Ok((parts, Some(grads)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::actor::ActorConfig;
    use crate::observation::{StackedObservation, SHIP_BLOCK, WP_BLOCK};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_obs(rng: &mut ChaCha8Rng, n: usize) -> StackedObservation {
        StackedObservation {
            wp: (0..WP_BLOCK).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            ships: (0..n)
                .map(|_| (0..SHIP_BLOCK).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect(),
        }
    }

    #[test]
    fn zero_td_error_gives_zero_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let critic = Critic::init(&mut rng);
        let obs: Vec<_> = (0..4).map(|k| random_obs(&mut rng, k % 3)).collect();
        let s = ObsBatch::from_observations(&obs);
        let a = [0.1, -0.2, 0.3, 0.0];
        let y = critic.predict_batch(&s, &a).unwrap();
        let (loss, g) = critic_loss(&critic, &s, &a, &y).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.q_wp.layers.iter().all(|l| l.w.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn myopic_targets_are_rewards() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let actor = Actor::init(&ActorConfig::default(), &mut rng);
        let critic = Critic::init(&mut rng);
        let obs: Vec<_> = (0..3).map(|k| random_obs(&mut rng, k)).collect();
        let next = ObsBatch::from_observations(&obs);
        let y = td_targets(&actor, &critic, &next, &[0.5, -1.0, 0.2], 0.0).unwrap();
        assert_eq!(y, vec![0.5, -1.0, 0.2]);
    }

    #[test]
    fn reduces_to_negative_mean_q_without_penalties() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let actor = Actor::init(&ActorConfig::default(), &mut rng);
        let critic = Critic::init(&mut rng);
        let obs: Vec<_> = (0..3).map(|k| random_obs(&mut rng, k)).collect();
        let s = ObsBatch::from_observations(&obs);
        let w = ActorLossWeights {
            lambda_reg: 0.0,
            lambda_s: 0.0,
            lambda_a: 0.0,
        };
        let (parts, _) = actor_loss(&actor, &critic, &s, &s, &s, &w).unwrap();
        let a = actor.predict_batch(&s).unwrap();
        let q = critic.predict_batch(&s, &a).unwrap();
        assert!((parts.total + q.iter().sum::<f64>() / 3.0).abs() < 1e-14);
    }

    #[test]
    fn constant_policy_has_no_smoothing_penalty() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let actor = Actor::init(&ActorConfig::default(), &mut rng);
        let critic = Critic::init(&mut rng);
        let obs: Vec<_> = (0..3).map(|k| random_obs(&mut rng, k)).collect();
        let s = ObsBatch::from_observations(&obs);
        let (parts, g) = actor_loss(&actor, &critic, &s, &s, &s, &ActorLossWeights::default()).unwrap();
        assert_eq!(parts.smooth, 0.0);
        assert!(g.is_finite());
    }
}

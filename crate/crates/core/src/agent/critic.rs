//! Sub-task critic: `Q(s, a) = Q_wp(s_wp, a) + Σ_i Q_ca(s_i, a)`.
//!
//! One `Q_ca` network is shared by every ship, so the sum is defined for any
//! number of ships. Each sub-critic only sees its own block plus the action.

use ndarray::Array2;
use rand::Rng;

use super::batch::ObsBatch;
use crate::error::{Error, Result};
use crate::neural::{Activation, LayerSpec, Mlp, MlpGrads, MlpSpec, Tape};
use crate::observation::{StackedObservation, SHIP_BLOCK, WP_BLOCK};

fn q_spec(input: usize) -> MlpSpec {
    MlpSpec::new(
        input,
        vec![
            LayerSpec::new(256, Activation::Relu),
            LayerSpec::new(256, Activation::Relu),
            LayerSpec::new(128, Activation::Relu),
            LayerSpec::new(1, Activation::Identity),
        ],
    )
}

/// Waypoint sub-critic architecture (input: waypoint block + action).
pub fn q_wp_spec() -> MlpSpec {
    q_spec(WP_BLOCK + 1)
}

/// Collision-avoidance sub-critic architecture (input: ship block + action).
pub fn q_ca_spec() -> MlpSpec {
    q_spec(SHIP_BLOCK + 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    pub q_wp: Mlp,
    pub q_ca: Mlp,
}

#[derive(Debug, Clone)]
pub struct CriticGrads {
    pub q_wp: MlpGrads,
    pub q_ca: MlpGrads,
}

impl CriticGrads {
    pub fn nets(&self) -> Vec<(&'static str, &MlpGrads)> {
        vec![("q_wp", &self.q_wp), ("q_ca", &self.q_ca)]
    }

    pub fn is_finite(&self) -> bool {
        self.q_wp.is_finite() && self.q_ca.is_finite()
    }
}

/// Critic values for one observation, ships in the observation's order.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticValues {
    pub q_total: f64,
    pub q_wp: f64,
    pub q_ca: Vec<f64>,
}

/// Batched critic pass with tapes for the backward sweep.
#[derive(Debug)]
pub struct CriticPass {
    pub q_total: Vec<f64>,
    pub q_wp: Vec<f64>,
    /// One value per ship row of the batch (canonical order).
    pub q_ca: Vec<f64>,
    wp_tape: Tape,
    ca_tape: Option<Tape>,
    offsets: Vec<usize>,
}

/// `q_wp + Σ q_ca` with the ship sum accumulated left to right.
pub fn combine(q_wp: f64, q_ca: &[f64]) -> f64 {
    let ships: f64 = q_ca.iter().fold(0.0, |acc, &q| acc + q);
    q_wp + ships
}

impl Critic {
    pub fn init<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Critic {
            q_wp: Mlp::init(&q_wp_spec(), rng),
            q_ca: Mlp::init(&q_ca_spec(), rng),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if *self.q_wp.spec() != q_wp_spec() || *self.q_ca.spec() != q_ca_spec() {
            return Err(Error::Checkpoint("critic architecture does not match".into()));
        }
        Ok(())
    }

    fn totals(q_wp: &[f64], q_ca: &[f64], offsets: &[usize]) -> Vec<f64> {
        q_wp.iter()
            .enumerate()
            .map(|(b, &w)| combine(w, &q_ca[offsets[b]..offsets[b + 1]]))
            .collect()
    }

    pub fn forward_batch(&self, batch: &ObsBatch, actions: &[f64]) -> Result<CriticPass> {
        if actions.len() != batch.len() {
            return Err(Error::Dimension(format!(
                "{} actions for {} observations",
                actions.len(),
                batch.len()
            )));
        }
        let wp_tape = self.q_wp.forward(batch.wp_with_action(actions).view())?;
        let q_wp = wp_tape.output().column(0).to_vec();
        let (ca_tape, q_ca) = if batch.total_ships() > 0 {
            let t = self.q_ca.forward(batch.ships_with_action(actions).view())?;
            let q = t.output().column(0).to_vec();
            (Some(t), q)
        } else {
            (None, Vec::new())
        };
        Ok(CriticPass {
            q_total: Self::totals(&q_wp, &q_ca, &batch.offsets),
            q_wp,
            q_ca,
            wp_tape,
            ca_tape,
            offsets: batch.offsets.clone(),
        })
    }

    /// `q_total` per sample without recording tapes.
    pub fn predict_batch(&self, batch: &ObsBatch, actions: &[f64]) -> Result<Vec<f64>> {
        let q_wp = self.q_wp.predict(batch.wp_with_action(actions).view())?;
        let q_ca = if batch.total_ships() > 0 {
            self.q_ca.predict(batch.ships_with_action(actions).view())?.column(0).to_vec()
        } else {
            Vec::new()
        };
        Ok(Self::totals(&q_wp.column(0).to_vec(), &q_ca, &batch.offsets))
    }

    pub fn evaluate(&self, obs: &StackedObservation, action: f64) -> Result<CriticValues> {
        let batch = ObsBatch::single(obs);
        let pass = self.forward_batch(&batch, &[action])?;
        let q_ca = batch.per_sample_in_source_order(&pass.q_ca).remove(0);
        Ok(CriticValues {
            q_total: pass.q_total[0],
            q_wp: pass.q_wp[0],
            q_ca,
        })
    }

    fn upstream(pass: &CriticPass, d_q_total: &[f64]) -> (Array2<f64>, Array2<f64>) {
        let b = d_q_total.len();
        let d_wp = Array2::from_shape_vec((b, 1), d_q_total.to_vec()).expect("column");
        let mut d_ca = Array2::zeros((pass.q_ca.len(), 1));
        for s in 0..b {
            for r in pass.offsets[s]..pass.offsets[s + 1] {
                d_ca[[r, 0]] = d_q_total[s];
            }
        }
        (d_wp, d_ca)
    }

    /// Action gradient from the two input-gradient matrices.
    fn action_grad(pass: &CriticPass, dx_wp: &Array2<f64>, dx_ca: Option<&Array2<f64>>) -> Vec<f64> {
        let b = dx_wp.nrows();
        (0..b)
            .map(|s| {
                let mut g = dx_wp[[s, WP_BLOCK]];
                if let Some(dx) = dx_ca {
                    for r in pass.offsets[s]..pass.offsets[s + 1] {
                        g += dx[[r, SHIP_BLOCK]];
                    }
                }
                g
            })
            .collect()
    }

    /// Parameter gradients and `∂/∂a` for an upstream gradient on `q_total`.
    pub fn backward(&self, pass: &CriticPass, d_q_total: &[f64]) -> Result<(CriticGrads, Vec<f64>)> {
        let (d_wp, d_ca) = Self::upstream(pass, d_q_total);
        let (g_wp, dx_wp) = self.q_wp.backward(&pass.wp_tape, d_wp.view())?;
        let (g_ca, dx_ca) = match &pass.ca_tape {
            Some(t) => {
                let (g, dx) = self.q_ca.backward(t, d_ca.view())?;
                (g, Some(dx))
            }
            None => (MlpGrads::zeros_like(&self.q_ca), None),
        };
        let d_action = Self::action_grad(pass, &dx_wp, dx_ca.as_ref());
        Ok((CriticGrads { q_wp: g_wp, q_ca: g_ca }, d_action))
    }

    /// Only `∂q_total/∂a`-weighted action gradients; parameters untouched.
    pub fn backward_action(&self, pass: &CriticPass, d_q_total: &[f64]) -> Result<Vec<f64>> {
        let (d_wp, d_ca) = Self::upstream(pass, d_q_total);
        let dx_wp = self.q_wp.backward_input(&pass.wp_tape, d_wp.view())?;
        let dx_ca = match &pass.ca_tape {
            Some(t) => Some(self.q_ca.backward_input(t, d_ca.view())?),
            None => None,
        };
        Ok(Self::action_grad(pass, &dx_wp, dx_ca.as_ref()))
    }

    /// See [`Mlp::kink_signature`].
    pub fn kink_signature(&self, pass: &CriticPass, out: &mut Vec<bool>) {
        self.q_wp.kink_signature(&pass.wp_tape, out);
        if let Some(t) = &pass.ca_tape {
            self.q_ca.kink_signature(t, out);
        }
    }

    /// Named sub-networks, in checkpoint order.
    pub fn nets(&self) -> Vec<(&'static str, &Mlp)> {
        vec![("q_wp", &self.q_wp), ("q_ca", &self.q_ca)]
    }

    pub fn nets_mut(&mut self) -> Vec<(&'static str, &mut Mlp)> {
        vec![("q_wp", &mut self.q_wp), ("q_ca", &mut self.q_ca)]
    }

    pub fn soft_update_from(&mut self, online: &Critic, rate: f64) {
        self.q_wp.soft_update_from(&online.q_wp, rate);
        self.q_ca.soft_update_from(&online.q_ca, rate);
    }

    pub fn distance(&self, other: &Critic) -> f64 {
        (self.q_wp.distance(&other.q_wp).powi(2) + self.q_ca.distance(&other.q_ca).powi(2)).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
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
    fn empty_ship_set_reduces_to_waypoint_critic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let critic = Critic::init(&mut rng);
        let v = critic.evaluate(&random_obs(&mut rng, 0), 0.3).unwrap();
        assert_eq!(v.q_total, v.q_wp);
        assert!(v.q_ca.is_empty());
    }

    #[test]
    fn decomposition_and_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let critic = Critic::init(&mut rng);
        let obs = random_obs(&mut rng, 4);
        let v = critic.evaluate(&obs, -0.4).unwrap();
        let mut canon = v.q_ca.clone();
        let order = super::super::batch::canonical_order(&obs);
        canon = order.iter().map(|&i| canon[i]).collect();
        assert_eq!(v.q_total, combine(v.q_wp, &canon));

        let mut permuted = obs.clone();
        permuted.ships.reverse();
        let p = critic.evaluate(&permuted, -0.4).unwrap();
        assert_eq!(p.q_total.to_bits(), v.q_total.to_bits());
        let mut rev = v.q_ca.clone();
        rev.reverse();
        assert_eq!(p.q_ca, rev);
    }

    #[test]
    fn batch_matches_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let critic = Critic::init(&mut rng);
        let obs: Vec<_> = [0, 2, 1].iter().map(|&n| random_obs(&mut rng, n)).collect();
        let batch = ObsBatch::from_observations(&obs);
        let q = critic.predict_batch(&batch, &[0.1, 0.2, 0.3]).unwrap();
        for (k, o) in obs.iter().enumerate() {
            let single = critic.evaluate(o, [0.1, 0.2, 0.3][k]).unwrap().q_total;
            assert!((single - q[k]).abs() < 1e-12);
        }
    }
}

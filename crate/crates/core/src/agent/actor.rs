//! Variable-length actor.
//!
//! Each ship block goes through a shared encoder `E_oth`, the waypoint block
//! through `E_wp`. The encoded ships are pooled (plain sum, or a softmax
//! weighted sum for the attention variant), added to the waypoint features,
//! squashed and fed to the action head.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::batch::ObsBatch;
use crate::error::{Error, Result};
use crate::neural::{softsign, softsign_derivative, Activation, LayerSpec, Mlp, MlpGrads, MlpSpec, Tape};
use crate::observation::{StackedObservation, SHIP_BLOCK, WP_BLOCK};

/// Width of the pooled feature vector.
pub const FEATURE_WIDTH: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorVariant {
    Plain,
    Attention,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActorConfig {
    pub variant: ActorVariant,
    /// Squash the pooled features before the head.
    pub feature_softsign: bool,
}

impl Default for ActorConfig {
    fn default() -> Self {
        Self {
            variant: ActorVariant::Plain,
            feature_softsign: true,
        }
    }
}

fn leaky(width: usize) -> LayerSpec {
    LayerSpec::new(width, Activation::LeakyRelu)
}

pub fn e_wp_spec() -> MlpSpec {
    MlpSpec::new(
        WP_BLOCK,
        vec![leaky(256), leaky(256), LayerSpec::new(FEATURE_WIDTH, Activation::Identity)],
    )
}

pub fn e_oth_spec() -> MlpSpec {
    MlpSpec::new(
        SHIP_BLOCK,
        vec![leaky(256), leaky(256), LayerSpec::new(FEATURE_WIDTH, Activation::Identity)],
    )
}

pub fn head_a_spec() -> MlpSpec {
    MlpSpec::new(
        FEATURE_WIDTH,
        vec![leaky(256), leaky(256), leaky(128), LayerSpec::new(1, Activation::Softsign)],
    )
}

/// Pairwise scorer over `[ship_i, ship_j]`.
pub fn attention_spec() -> MlpSpec {
    MlpSpec::new(
        2 * SHIP_BLOCK,
        vec![leaky(256), leaky(256), LayerSpec::new(1, Activation::Identity)],
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Actor {
    pub e_wp: Mlp,
    pub e_oth: Mlp,
    pub head_a: Mlp,
    pub attention: Option<Mlp>,
    pub feature_softsign: bool,
}

#[derive(Debug, Clone)]
pub struct ActorGrads {
    pub e_wp: MlpGrads,
    pub e_oth: MlpGrads,
    pub head_a: MlpGrads,
    pub attention: Option<MlpGrads>,
}

impl ActorGrads {
    /// Same order as [`Actor::nets`].
    pub fn nets(&self) -> Vec<(&'static str, &MlpGrads)> {
        let mut v = vec![("e_wp", &self.e_wp), ("e_oth", &self.e_oth), ("head_a", &self.head_a)];
        if let Some(a) = &self.attention {
            v.push(("attention", a));
        }
        v
    }

    pub fn zeros_like(actor: &Actor) -> Self {
        ActorGrads {
            e_wp: MlpGrads::zeros_like(&actor.e_wp),
            e_oth: MlpGrads::zeros_like(&actor.e_oth),
            head_a: MlpGrads::zeros_like(&actor.head_a),
            attention: actor.attention.as_ref().map(MlpGrads::zeros_like),
        }
    }

    pub fn add_assign(&mut self, other: &ActorGrads) {
        self.e_wp.add_assign(&other.e_wp);
        self.e_oth.add_assign(&other.e_oth);
        self.head_a.add_assign(&other.head_a);
        if let (Some(a), Some(b)) = (&mut self.attention, &other.attention) {
            a.add_assign(b);
        }
    }

    /// Adds `scale·θ` for every actor parameter (L2 penalty gradient).
    pub fn add_scaled_params(&mut self, actor: &Actor, scale: f64) {
        self.e_wp.add_scaled_params(&actor.e_wp, scale);
        self.e_oth.add_scaled_params(&actor.e_oth, scale);
        self.head_a.add_scaled_params(&actor.head_a, scale);
        if let (Some(g), Some(net)) = (&mut self.attention, &actor.attention) {
            g.add_scaled_params(net, scale);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.e_wp.is_finite()
            && self.e_oth.is_finite()
            && self.head_a.is_finite()
            && self.attention.as_ref().is_none_or(|g| g.is_finite())
    }
}

/// How encoded ships are pooled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    Sum,
    Attention,
}

/// Batched actor pass with everything the backward sweep needs.
#[derive(Debug)]
pub struct ActorPass {
    pub actions: Vec<f64>,
    /// Attention weight per ship row (canonical order), attention pooling only.
    pub alpha: Option<Vec<f64>>,
    wp_tape: Tape,
    oth_tape: Option<Tape>,
    att_tape: Option<Tape>,
    head_tape: Tape,
    /// Pooled features before the optional squash, `B × 128`.
    h: Array2<f64>,
    offsets: Vec<usize>,
    pair_offsets: Vec<usize>,
}

/// Numerically stable softmax, accumulated left to right.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|&s| (s - m).exp()).collect();
    let z = e.iter().fold(0.0, |acc, &v| acc + v);
    e.iter().map(|&v| v / z).collect()
}

impl Actor {
    pub fn init<R: Rng + ?Sized>(config: &ActorConfig, rng: &mut R) -> Self {
        let e_wp = Mlp::init(&e_wp_spec(), rng);
        let e_oth = Mlp::init(&e_oth_spec(), rng);
        let head_a = Mlp::init(&head_a_spec(), rng);
        let attention = match config.variant {
            ActorVariant::Plain => None,
            ActorVariant::Attention => Some(Mlp::init(&attention_spec(), rng)),
        };
        Actor {
            e_wp,
            e_oth,
            head_a,
            attention,
            feature_softsign: config.feature_softsign,
        }
    }

    pub fn variant(&self) -> ActorVariant {
        if self.attention.is_some() {
            ActorVariant::Attention
        } else {
            ActorVariant::Plain
        }
    }

    pub fn config(&self) -> ActorConfig {
        ActorConfig {
            variant: self.variant(),
            feature_softsign: self.feature_softsign,
        }
    }

    /// Pooling used by [`Actor::act`] for this actor's variant.
    pub fn default_aggregation(&self) -> Aggregation {
        match self.variant() {
            ActorVariant::Plain => Aggregation::Sum,
            ActorVariant::Attention => Aggregation::Attention,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = *self.e_wp.spec() == e_wp_spec()
            && *self.e_oth.spec() == e_oth_spec()
            && *self.head_a.spec() == head_a_spec()
            && self.attention.as_ref().is_none_or(|a| *a.spec() == attention_spec());
        if !ok {
            return Err(Error::Checkpoint("actor architecture does not match".into()));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.e_wp.param_count()
            + self.e_oth.param_count()
            + self.head_a.param_count()
            + self.attention.as_ref().map_or(0, Mlp::param_count)
    }

    pub fn sum_squares(&self) -> f64 {
        self.e_wp.sum_squares()
            + self.e_oth.sum_squares()
            + self.head_a.sum_squares()
            + self.attention.as_ref().map_or(0.0, Mlp::sum_squares)
    }

    pub fn forward_batch(&self, batch: &ObsBatch, agg: Aggregation) -> Result<ActorPass> {
        let b = batch.len();
        let wp_tape = self.e_wp.forward(batch.wp.view())?;
        let mut h = wp_tape.output().clone();
        let mut oth_tape = None;
        let mut att_tape = None;
        let mut alpha = None;
        let pair_offsets = batch.pair_offsets();

        if batch.total_ships() > 0 {
            let ot = self.e_oth.forward(batch.ships.view())?;
            let weights: Vec<f64> = match agg {
                Aggregation::Sum => vec![1.0; batch.total_ships()],
                Aggregation::Attention => {
                    let net = self.attention.as_ref().ok_or_else(|| {
                        Error::config("actor.variant", "attention pooling needs an attention network")
                    })?;
                    let at = net.forward(batch.pairs().view())?;
                    let scores = at.output().column(0);
                    let mut w = Vec::with_capacity(batch.total_ships());
                    for s in 0..b {
                        let n = batch.ship_rows(s).len();
                        let base = pair_offsets[s];
                        let sc: Vec<f64> = (0..n)
                            .map(|i| (0..n).fold(0.0, |acc, j| acc + scores[base + i * n + j]))
                            .collect();
                        if n > 0 {
                            w.extend(softmax(&sc));
                        }
                    }
                    att_tape = Some(at);
                    alpha = Some(w.clone());
                    w
                }
            };
            let e = ot.output();
            for s in 0..b {
                let mut pooled = Array1::<f64>::zeros(FEATURE_WIDTH);
                for r in batch.ship_rows(s) {
                    pooled.scaled_add(weights[r], &e.row(r));
                }
                let mut row = h.row_mut(s);
                row += &pooled;
            }
            oth_tape = Some(ot);
        } else if agg == Aggregation::Attention {
            alpha = Some(Vec::new());
        }

        let f = if self.feature_softsign { h.mapv(softsign) } else { h.clone() };
        let head_tape = self.head_a.forward(f.view())?;
        let actions = head_tape.output().column(0).to_vec();
        Ok(ActorPass {
            actions,
            alpha,
            wp_tape,
            oth_tape,
            att_tape,
            head_tape,
            h,
            offsets: batch.offsets.clone(),
            pair_offsets,
        })
    }

    /// Actions for a batch using this actor's own pooling.
    pub fn predict_batch(&self, batch: &ObsBatch) -> Result<Vec<f64>> {
        Ok(self.forward_batch(batch, self.default_aggregation())?.actions)
    }

    /// Normalized action in (−1, 1) for one observation.
    pub fn act(&self, obs: &StackedObservation) -> Result<f64> {
        Ok(self.act_with_attention(obs)?.0)
    }

    /// Action plus attention weights in the observation's ship order
    /// (`None` for the plain actor).
    pub fn act_with_attention(&self, obs: &StackedObservation) -> Result<(f64, Option<Vec<f64>>)> {
        let batch = ObsBatch::single(obs);
        let pass = self.forward_batch(&batch, self.default_aggregation())?;
        let alpha = pass
            .alpha
            .as_ref()
            .map(|a| batch.per_sample_in_source_order(a).remove(0));
        Ok((pass.actions[0], alpha))
    }

    /// Attention weights per ship, empty when there are no ships.
    pub fn attention_values(&self, obs: &StackedObservation) -> Result<Vec<f64>> {
        if self.attention.is_none() {
            return Err(Error::config("actor.variant", "plain actor has no attention values"));
        }
        Ok(self.act_with_attention(obs)?.1.unwrap_or_default())
    }

    /// Parameter gradients for an upstream gradient on each sample's action.
    pub fn backward(&self, pass: &ActorPass, d_action: &[f64]) -> Result<ActorGrads> {
        let b = d_action.len();
        if b != pass.actions.len() {
            return Err(Error::Dimension(format!("{b} gradients for {} actions", pass.actions.len())));
        }
        let d_out = Array2::from_shape_vec((b, 1), d_action.to_vec()).expect("column");
        let (g_head, mut dh) = self.head_a.backward(&pass.head_tape, d_out.view())?;
        if self.feature_softsign {
            dh.zip_mut_with(&pass.h, |d, &z| *d *= softsign_derivative(z));
        }
        let (g_wp, _) = self.e_wp.backward(&pass.wp_tape, dh.view())?;

        let mut g_oth = MlpGrads::zeros_like(&self.e_oth);
        let mut g_att = self.attention.as_ref().map(MlpGrads::zeros_like);
        if let Some(ot) = &pass.oth_tape {
            let e = ot.output();
            let m = e.nrows();
            let mut d_e = Array2::<f64>::zeros((m, FEATURE_WIDTH));
            for s in 0..b {
                for r in pass.offsets[s]..pass.offsets[s + 1] {
                    let w = pass.alpha.as_ref().map_or(1.0, |a| a[r]);
                    d_e.row_mut(r).scaled_add(w, &dh.row(s));
                }
            }
            g_oth = self.e_oth.backward(ot, d_e.view())?.0;

            if let (Some(at), Some(alpha), Some(net)) = (&pass.att_tape, &pass.alpha, &self.attention) {
                let mut d_pairs = Array2::<f64>::zeros((at.batch(), 1));
                for s in 0..b {
                    let rows = pass.offsets[s]..pass.offsets[s + 1];
                    let n = rows.len();
                    let d_alpha: Vec<f64> = rows.clone().map(|r| dh.row(s).dot(&e.row(r))).collect();
                    let mean = rows
                        .clone()
                        .zip(&d_alpha)
                        .fold(0.0, |acc, (r, &da)| acc + alpha[r] * da);
                    for (i, r) in rows.enumerate() {
                        let ds = alpha[r] * (d_alpha[i] - mean);
                        let base = pass.pair_offsets[s] + i * n;
                        for j in 0..n {
                            d_pairs[[base + j, 0]] = ds;
                        }
                    }
                }
                g_att = Some(net.backward(at, d_pairs.view())?.0);
            }
        }
        Ok(ActorGrads {
            e_wp: g_wp,
            e_oth: g_oth,
            head_a: g_head,
            attention: g_att,
        })
    }

    /// See [`Mlp::kink_signature`].
    pub fn kink_signature(&self, pass: &ActorPass, out: &mut Vec<bool>) {
        self.e_wp.kink_signature(&pass.wp_tape, out);
        if let Some(t) = &pass.oth_tape {
            self.e_oth.kink_signature(t, out);
        }
        if let (Some(t), Some(net)) = (&pass.att_tape, &self.attention) {
            net.kink_signature(t, out);
        }
        self.head_a.kink_signature(&pass.head_tape, out);
    }

    /// Named sub-networks, in checkpoint order.
    pub fn nets(&self) -> Vec<(&'static str, &Mlp)> {
        let mut v = vec![("e_wp", &self.e_wp), ("e_oth", &self.e_oth), ("head_a", &self.head_a)];
        if let Some(a) = &self.attention {
            v.push(("attention", a));
        }
        v
    }

    pub fn nets_mut(&mut self) -> Vec<(&'static str, &mut Mlp)> {
        let mut v = vec![
            ("e_wp", &mut self.e_wp),
            ("e_oth", &mut self.e_oth),
            ("head_a", &mut self.head_a),
        ];
        if let Some(a) = &mut self.attention {
            v.push(("attention", a));
        }
        v
    }

    pub fn soft_update_from(&mut self, online: &Actor, rate: f64) {
        self.e_wp.soft_update_from(&online.e_wp, rate);
        self.e_oth.soft_update_from(&online.e_oth, rate);
        self.head_a.soft_update_from(&online.head_a, rate);
        if let (Some(t), Some(o)) = (&mut self.attention, &online.attention) {
            t.soft_update_from(o, rate);
        }
    }

    pub fn distance(&self, other: &Actor) -> f64 {
        let mut sq = self.e_wp.distance(&other.e_wp).powi(2)
            + self.e_oth.distance(&other.e_oth).powi(2)
            + self.head_a.distance(&other.head_a).powi(2);
        if let (Some(a), Some(b)) = (&self.attention, &other.attention) {
            sq += a.distance(b).powi(2);
        }
        sq.sqrt()
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

    fn attention_actor(seed: u64) -> Actor {
        let cfg = ActorConfig {
            variant: ActorVariant::Attention,
            feature_softsign: true,
        };
        Actor::init(&cfg, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[3.0]), vec![1.0]);
        let a = softmax(&[1.0, 1.0, 1.0, 1.0]);
        assert!(a.iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let big = softmax(&[1000.0, 0.0]);
        assert!((big[0] - 1.0).abs() < 1e-15 && big[1] >= 0.0);
    }

    #[test]
    fn empty_ship_set_uses_waypoint_features_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let actor = Actor::init(&ActorConfig::default(), &mut rng);
        let obs = random_obs(&mut rng, 0);
        let e = actor.e_wp.predict(ndarray::ArrayView2::from_shape((1, WP_BLOCK), &obs.wp).unwrap()).unwrap();
        let f = e.mapv(softsign);
        let expected = actor.head_a.predict(f.view()).unwrap()[[0, 0]];
        assert_eq!(actor.act(&obs).unwrap(), expected);
    }

    #[test]
    fn single_ship_attention_equals_plain_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let actor = attention_actor(6);
        let obs = random_obs(&mut rng, 1);
        let (a, alpha) = actor.act_with_attention(&obs).unwrap();
        assert_eq!(alpha.unwrap(), vec![1.0]);
        let batch = ObsBatch::single(&obs);
        let plain = actor.forward_batch(&batch, Aggregation::Sum).unwrap().actions[0];
        assert_eq!(a, plain);
    }

    #[test]
    fn uniform_scores_give_mean_pooling() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut actor = attention_actor(8);
        let att = actor.attention.as_mut().unwrap();
        let last = att.layers().len() - 1;
        att.layers_mut()[last].w.fill(0.0);
        let obs = random_obs(&mut rng, 3);
        let alpha = actor.attention_values(&obs).unwrap();
        assert!(alpha.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));

        let batch = ObsBatch::single(&obs);
        let e = actor.e_oth.predict(batch.ships.view()).unwrap();
        let mut h = actor.e_wp.predict(batch.wp.view()).unwrap();
        let mut pooled = Array1::<f64>::zeros(FEATURE_WIDTH);
        for r in 0..3 {
            pooled.scaled_add(alpha[0], &e.row(r));
        }
        let mut row = h.row_mut(0);
        row += &pooled;
        let expected = actor.head_a.predict(h.mapv(softsign).view()).unwrap()[[0, 0]];
        assert!((actor.act(&obs).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn permutation_invariance_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for actor in [Actor::init(&ActorConfig::default(), &mut rng), attention_actor(10)] {
            let obs = random_obs(&mut rng, 5);
            let (a, alpha) = actor.act_with_attention(&obs).unwrap();
            let mut perm = obs.clone();
            perm.ships.rotate_left(2);
            let (b, beta) = actor.act_with_attention(&perm).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
            if let (Some(mut alpha), Some(beta)) = (alpha, beta) {
                alpha.rotate_left(2);
                assert_eq!(alpha, beta);
            }
        }
    }

    #[test]
    fn output_is_bounded_and_alpha_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let actor = attention_actor(12);
        for n in 0..=12 {
            let obs = random_obs(&mut rng, n);
            let (a, alpha) = actor.act_with_attention(&obs).unwrap();
            assert!(a > -1.0 && a < 1.0);
            let alpha = alpha.unwrap();
            assert_eq!(alpha.len(), n);
            if n > 0 {
                assert!((alpha.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn plain_actor_has_no_attention_values() {
        let actor = Actor::init(&ActorConfig::default(), &mut ChaCha8Rng::seed_from_u64(1));
        assert!(actor.attention_values(&random_obs(&mut ChaCha8Rng::seed_from_u64(2), 2)).is_err());
    }
}

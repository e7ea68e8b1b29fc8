//! Central finite-difference checks of every analytic gradient.
//!
//! Each check compares analytic and numeric derivatives over a sample of
//! coordinates: the largest analytic entries (so the norm is dominated by
//! well-conditioned values) plus uniformly drawn ones (so a bug confined to
//! small entries still shows). The error reported is
//! `‖g_analytic − g_numeric‖ / max(‖g_analytic‖, ‖g_numeric‖)` on that sample.
//!
//! A coordinate whose `θ ± h` probes land on different linear pieces of some
//! ReLU-family unit is skipped and counted: the function is not
//! differentiable across that interval, so a central difference there says
//! nothing about the analytic gradient.

use ndarray::Array2;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::actor::{attention_spec, e_oth_spec, e_wp_spec, head_a_spec, Actor, ActorConfig, ActorVariant, Aggregation};
use super::batch::ObsBatch;
use super::critic::{q_ca_spec, q_wp_spec, Critic};
use super::losses::{actor_loss, actor_loss_value, critic_loss, ActorLossWeights};
use crate::error::Result;
use crate::neural::{Mlp, MlpGrads, MlpSpec};
use crate::observation::{StackedObservation, SHIP_BLOCK, WP_BLOCK};

pub const FD_STEP: f64 = 1e-6;
pub const REL_TOL: f64 = 1e-5;

/// Below this norm both gradients are treated as zero.
const ZERO_NORM: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub suite: String,
    pub configs: usize,
    pub comparisons: usize,
    /// Coordinates dropped because a kink lay between the probes.
    pub kink_skips: usize,
    pub worst_rel: f64,
    pub worst_case: String,
}

impl GradCheckReport {
    fn new(suite: &str) -> Self {
        Self {
            suite: suite.into(),
            configs: 0,
            comparisons: 0,
            kink_skips: 0,
            worst_rel: 0.0,
            worst_case: String::new(),
        }
    }

    fn record(&mut self, rel: f64, case: impl FnOnce() -> String) {
        self.comparisons += 1;
        if rel > self.worst_rel || rel.is_nan() {
            self.worst_rel = rel;
            self.worst_case = case();
        }
    }

    pub fn passed(&self) -> bool {
        self.comparisons > 0 && self.worst_rel <= REL_TOL
    }
}

/// Vector relative error with the zero convention described above.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let na = norm(&mut analytic.iter().copied());
    let nn = norm(&mut numeric.iter().copied());
    let nd = norm(&mut analytic.iter().zip(numeric).map(|(a, b)| a - b));
    let scale = na.max(nn);
    if scale < ZERO_NORM {
        return nd;
    }
    nd / scale
}

fn flat(g: &MlpGrads) -> Vec<f64> {
    g.layers
        .iter()
        .flat_map(|l| l.w.iter().chain(l.b.iter()).copied())
        .collect()
}

/// Coordinates to compare: the `top` largest analytic entries plus `random`
/// uniform draws.
fn pick_coords<R: Rng>(g: &[f64], top: usize, random: usize, rng: &mut R) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..g.len()).collect();
    idx.sort_by(|&a, &b| g[b].abs().total_cmp(&g[a].abs()).then(a.cmp(&b)));
    let mut out: Vec<usize> = idx.into_iter().take(top).collect();
    let extra = random.min(g.len());
    out.extend(sample(rng, g.len(), extra));
    out.sort_unstable();
    out.dedup();
    out
}

/// Value plus kink signature at a probe point.
type Probe = (f64, Vec<bool>);

/// Central difference, `None` when the probes straddle a kink.
fn central<F: FnMut(f64) -> Result<Probe>>(mut f: F, base: f64) -> Result<Option<f64>> {
    let (plus, sp) = f(base + FD_STEP)?;
    let (minus, sm) = f(base - FD_STEP)?;
    Ok((sp == sm).then(|| (plus - minus) / (2.0 * FD_STEP)))
}

/// Compares `analytic[coords]` with central differences of `value` as
/// `set(k, v)` moves coordinate `k`.
fn compare<G, S, V>(
    report: &mut GradCheckReport,
    analytic: &[f64],
    coords: &[usize],
    mut get: G,
    mut set: S,
    mut value: V,
    case: impl FnOnce() -> String,
) -> Result<()>
where
    G: FnMut(usize) -> f64,
    S: FnMut(usize, f64),
    V: FnMut() -> Result<Probe>,
{
    let mut ana = Vec::with_capacity(coords.len());
    let mut num = Vec::with_capacity(coords.len());
    for &k in coords {
        let base = get(k);
        let d = central(
            |v| {
                set(k, v);
                value()
            },
            base,
        )?;
        set(k, base);
        match d {
            Some(d) => {
                ana.push(analytic[k]);
                num.push(d);
            }
            None => report.kink_skips += 1,
        }
    }
    report.record(relative_error(&ana, &num), case);
    Ok(())
}

fn random_obs<R: Rng>(rng: &mut R, n: usize) -> StackedObservation {
    StackedObservation {
        wp: (0..WP_BLOCK).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        ships: (0..n)
            .map(|_| (0..SHIP_BLOCK).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect(),
    }
}

const SHIP_COUNTS: [usize; 3] = [0, 1, 3];

/// Per-network checks of `Σ c ⊙ net(x)` against parameters and inputs.
pub fn check_networks(configs: usize, seed: u64) -> Result<GradCheckReport> {
    let specs: [(&str, MlpSpec); 6] = [
        ("q_wp", q_wp_spec()),
        ("q_ca", q_ca_spec()),
        ("e_wp", e_wp_spec()),
        ("e_oth", e_oth_spec()),
        ("head_a", head_a_spec()),
        ("attention", attention_spec()),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport::new("networks");
    for cfg in 0..configs {
        let (name, spec) = &specs[cfg % specs.len()];
        let net = std::cell::RefCell::new(Mlp::init(spec, &mut rng));
        let rows = rng.gen_range(1..=3);
        let x = std::cell::RefCell::new(Array2::from_shape_fn((rows, spec.input), |_| rng.gen_range(-1.5..1.5)));
        let c = Array2::from_shape_fn((rows, spec.output()), |_| rng.gen_range(-1.0..1.0));
        let probe = || -> Result<Probe> {
            let net = net.borrow();
            let tape = net.forward(x.borrow().view())?;
            let mut sig = Vec::new();
            net.kink_signature(&tape, &mut sig);
            Ok(((tape.output() * &c).sum(), sig))
        };

        let (g, dx) = {
            let net = net.borrow();
            let tape = net.forward(x.borrow().view())?;
            net.backward(&tape, c.view())?
        };
        let g = flat(&g);
        let coords = pick_coords(&g, 6, 10, &mut rng);
        compare(
            &mut report,
            &g,
            &coords,
            |k| net.borrow().param(k),
            |k, v| *net.borrow_mut().param_mut(k) = v,
            probe,
            || format!("config {cfg} {name} params"),
        )?;

        let dx_flat: Vec<f64> = dx.iter().copied().collect();
        let coords = pick_coords(&dx_flat, 4, 6, &mut rng);
        let at = |k: usize| (k / spec.input, k % spec.input);
        compare(
            &mut report,
            &dx_flat,
            &coords,
            |k| x.borrow()[at(k)],
            |k, v| x.borrow_mut()[at(k)] = v,
            probe,
            || format!("config {cfg} {name} inputs"),
        )?;
        report.configs += 1;
    }
    Ok(report)
}

struct LossCase {
    s: ObsBatch,
    s_hat: ObsBatch,
    next: ObsBatch,
    actions: Vec<f64>,
    targets: Vec<f64>,
    n: usize,
}

fn loss_case<R: Rng>(rng: &mut R, n: usize) -> LossCase {
    let b = rng.gen_range(1..=3);
    let s: Vec<_> = (0..b).map(|_| random_obs(rng, n)).collect();
    let noise = Normal::new(0.0, 0.01).expect("valid sigma");
    let s_hat: Vec<_> = s
        .iter()
        .map(|o| StackedObservation {
            wp: o.wp.iter().map(|v| v + noise.sample(rng)).collect(),
            ships: o
                .ships
                .iter()
                .map(|sh| sh.iter().map(|v| v + noise.sample(rng)).collect())
                .collect(),
        })
        .collect();
    let next: Vec<_> = (0..b).map(|_| random_obs(rng, n)).collect();
    LossCase {
        s: ObsBatch::from_observations(&s),
        s_hat: ObsBatch::from_observations(&s_hat),
        next: ObsBatch::from_observations(&next),
        actions: (0..b).map(|_| rng.gen_range(-0.9..0.9)).collect(),
        targets: (0..b).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        n,
    }
}

/// Critic loss gradients for every critic sub-network.
pub fn check_critic_loss(configs: usize, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport::new("critic_loss");
    for cfg in 0..configs {
        let case = loss_case(&mut rng, SHIP_COUNTS[cfg % 3]);
        let critic = std::cell::RefCell::new(Critic::init(&mut rng));
        let probe = || -> Result<Probe> {
            let critic = critic.borrow();
            let pass = critic.forward_batch(&case.s, &case.actions)?;
            let mut sig = Vec::new();
            critic.kink_signature(&pass, &mut sig);
            Ok((critic_loss(&critic, &case.s, &case.actions, &case.targets)?.0, sig))
        };
        let (_, grads) = critic_loss(&critic.borrow(), &case.s, &case.actions, &case.targets)?;
        let flats: Vec<(&str, Vec<f64>)> = grads.nets().into_iter().map(|(k, g)| (k, flat(g))).collect();
        for (ni, (name, g)) in flats.iter().enumerate() {
            let coords = pick_coords(g, 5, 7, &mut rng);
            compare(
                &mut report,
                g,
                &coords,
                |k| critic.borrow().nets()[ni].1.param(k),
                |k, v| *critic.borrow_mut().nets_mut()[ni].1.param_mut(k) = v,
                probe,
                || format!("config {cfg} n={} {name}", case.n),
            )?;
        }
        report.configs += 1;
    }
    Ok(report)
}

fn actor_loss_probe(actor: &Actor, critic: &Critic, case: &LossCase, w: &ActorLossWeights) -> Result<Probe> {
    let agg = actor.default_aggregation();
    let mut sig = Vec::new();
    for batch in [&case.s, &case.s_hat, &case.next] {
        let pass = actor.forward_batch(batch, agg)?;
        actor.kink_signature(&pass, &mut sig);
        if std::ptr::eq(batch, &case.s) {
            sig.extend(pass.actions.iter().map(|&a| a > 0.0));
            let q = critic.forward_batch(&case.s, &pass.actions)?;
            critic.kink_signature(&q, &mut sig);
        }
    }
    let loss = actor_loss_value(actor, critic, &case.s, &case.s_hat, &case.next, w)?.total;
    Ok((loss, sig))
}

/// Full actor loss (all penalty terms on) for both actor variants and both
/// settings of the feature squash.
pub fn check_actor_loss(configs: usize, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport::new("actor_loss");
    let weights = ActorLossWeights::default();
    for cfg in 0..configs {
        let case = loss_case(&mut rng, SHIP_COUNTS[cfg % 3]);
        let actor_cfg = ActorConfig {
            variant: if (cfg / 3) % 2 == 0 {
                ActorVariant::Attention
            } else {
                ActorVariant::Plain
            },
            feature_softsign: (cfg / 6) % 2 == 0,
        };
        let actor = std::cell::RefCell::new(Actor::init(&actor_cfg, &mut rng));
        let critic = Critic::init(&mut rng);
        let (_, grads) = actor_loss(&actor.borrow(), &critic, &case.s, &case.s_hat, &case.next, &weights)?;
        let flats: Vec<(&str, Vec<f64>)> = grads.nets().into_iter().map(|(k, g)| (k, flat(g))).collect();
        for (ni, (name, g)) in flats.iter().enumerate() {
            let coords = pick_coords(g, 5, 7, &mut rng);
            compare(
                &mut report,
                g,
                &coords,
                |k| actor.borrow().nets()[ni].1.param(k),
                |k, v| *actor.borrow_mut().nets_mut()[ni].1.param_mut(k) = v,
                || actor_loss_probe(&actor.borrow(), &critic, &case, &weights),
                || format!("config {cfg} n={} {:?} {name}", case.n, actor_cfg),
            )?;
        }
        report.configs += 1;
    }
    Ok(report)
}

/// Attention actor output `Σ c·π(s)` against every actor parameter,
/// exercising the softmax path on its own.
pub fn check_attention_actor(configs: usize, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport::new("attention_actor");
    let cfg_actor = ActorConfig {
        variant: ActorVariant::Attention,
        feature_softsign: true,
    };
    for cfg in 0..configs {
        let n = SHIP_COUNTS[cfg % 3];
        let b = rng.gen_range(1..=3);
        let obs: Vec<_> = (0..b).map(|_| random_obs(&mut rng, n)).collect();
        let batch = ObsBatch::from_observations(&obs);
        let c: Vec<f64> = (0..b).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let actor = std::cell::RefCell::new(Actor::init(&cfg_actor, &mut rng));
        let probe = || -> Result<Probe> {
            let actor = actor.borrow();
            let p = actor.forward_batch(&batch, Aggregation::Attention)?;
            let mut sig = Vec::new();
            actor.kink_signature(&p, &mut sig);
            Ok((p.actions.iter().zip(&c).map(|(x, y)| x * y).sum(), sig))
        };
        let grads = {
            let actor = actor.borrow();
            let pass = actor.forward_batch(&batch, Aggregation::Attention)?;
            actor.backward(&pass, &c)?
        };
        let flats: Vec<(&str, Vec<f64>)> = grads.nets().into_iter().map(|(k, g)| (k, flat(g))).collect();
        for (ni, (name, g)) in flats.iter().enumerate() {
            let coords = pick_coords(g, 5, 7, &mut rng);
            compare(
                &mut report,
                g,
                &coords,
                |k| actor.borrow().nets()[ni].1.param(k),
                |k, v| *actor.borrow_mut().nets_mut()[ni].1.param_mut(k) = v,
                probe,
                || format!("config {cfg} n={n} {name}"),
            )?;
        }
        report.configs += 1;
    }
    Ok(report)
}

/// Every suite with `configs` random configurations each.
pub fn run_all(configs: usize, seed: u64) -> Result<Vec<GradCheckReport>> {
    Ok(vec![
        check_networks(configs, seed)?,
        check_critic_loss(configs, seed.wrapping_add(1))?,
        check_actor_loss(configs, seed.wrapping_add(2))?,
        check_attention_actor(configs, seed.wrapping_add(3))?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_conventions() {
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
        assert_eq!(relative_error(&[1.0, 0.0], &[1.0, 0.0]), 0.0);
        assert!((relative_error(&[1.0], &[0.5]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn small_smoke_run() {
        for r in run_all(6, 99).unwrap() {
            assert!(r.passed(), "{r:?}");
        }
    }
}

//! Per-step explanations of a trained policy.
//!
//! Priorities measure how much the chosen action raises each sub-critic
//! over sailing straight (`a = 0`). Intention weighs each ship's
//! collision-avoidance value by the attention the actor paid to it.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::{ActorVariant, Checkpoint, Critic};
use crate::dynamics::MAX_RUDDER_DEG;
use crate::error::{Error, Result};
use crate::observation::StackedObservation;
use crate::scenario::{Episode, Scenario};

pub const TRACE_VERSION: u32 = 1;

/// Sub-task priorities for one observation, ships in observation order.
#[derive(Debug, Clone, PartialEq)]
pub struct Priorities {
    pub p_wp: f64,
    pub p_oth: Vec<f64>,
    pub p_oth_total: f64,
}

/// `Q_k(s, a) − Q_k(s, 0)` for the waypoint critic and every ship.
pub fn priorities(critic: &Critic, obs: &StackedObservation, action: f64) -> Result<Priorities> {
    let at = critic.evaluate(obs, action)?;
    let straight = critic.evaluate(obs, 0.0)?;
    let p_oth: Vec<f64> = at.q_ca.iter().zip(&straight.q_ca).map(|(a, b)| a - b).collect();
    Ok(Priorities {
        p_wp: at.q_wp - straight.q_wp,
        p_oth_total: p_oth.iter().fold(0.0, |acc, &p| acc + p),
        p_oth,
    })
}

pub fn intention(q_ca: f64, alpha: f64) -> f64 {
    q_ca * alpha
}

/// Which action the collision-avoidance values behind intention are taken at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntentionAction {
    /// The action the policy chose.
    #[default]
    Taken,
    /// Sailing straight, `a = 0`.
    Straight,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OwnPose {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub r: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaypointRecord {
    pub dtheta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardRecord {
    pub total: f64,
    pub r_wp: f64,
    pub r_dwp: f64,
    pub r_oth: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShipRecord {
    pub x: f64,
    pub y: f64,
    pub course: f64,
    pub speed: f64,
    /// Danger level at the decision state.
    pub cr: f64,
    pub q_ca: f64,
    pub p_oth: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intention: Option<f64>,
}

/// One decision: the state at time `t`, what the agent did there, and the
/// reward that action earned on the following step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplanationRecord {
    pub t: f64,
    pub own: OwnPose,
    pub wp: WaypointRecord,
    pub q_wp: f64,
    pub p_wp: f64,
    pub p_oth_total: f64,
    /// Normalized action in [-1, 1]; the rudder command is `5·action` deg.
    pub action: f64,
    pub reward: RewardRecord,
    pub ships: Vec<ShipRecord>,
}

impl ExplanationRecord {
    /// Rechecks `intention = q_ca × α` bit for bit.
    pub fn check_intention(&self) -> Result<()> {
        for (i, s) in self.ships.iter().enumerate() {
            match (s.alpha, s.intention) {
                (Some(a), Some(v)) if intention(s.q_ca, a).to_bits() == v.to_bits() => {}
                (None, None) => {}
                _ => {
                    return Err(Error::Trace(format!(
                        "t = {}: ship {i} intention does not equal q_ca × alpha",
                        self.t
                    )))
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointRef {
    pub config_hash: String,
    pub rng_seed: u64,
    pub env_steps: u64,
    pub variant: ActorVariant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceHeader {
    pub trace_version: u32,
    pub checkpoint: CheckpointRef,
    pub scenario: Scenario,
    pub intention_action: IntentionAction,
    pub steps: usize,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplanationTrace {
    pub header: TraceHeader,
    pub records: Vec<ExplanationRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    header: TraceHeader,
}

/// Rolls out the greedy policy of `checkpoint` on `scenario` and records
/// every decision.
pub fn explain_episode(checkpoint: &Checkpoint, scenario: &Scenario, at: IntentionAction) -> Result<ExplanationTrace> {
    let actor = checkpoint.actor()?;
    let critic = checkpoint.critic()?;
    let env = &checkpoint.env;
    let mut notes = Vec::new();
    let n = scenario.targets.len();
    let [lo, hi] = env.scenario.n_ships_range;
    if n < lo || n > hi {
        notes.push(format!("scenario has {n} ships; the checkpoint was trained on {lo} to {hi}"));
    }
    if actor.variant() == ActorVariant::Plain {
        notes.push("plain actor: alpha and intention are not available and are omitted".into());
    }

    let (mut ep, mut obs) = Episode::reset(scenario.clone(), env);
    let mut records = Vec::with_capacity(env.scenario.episode_steps);
    while !ep.is_done() {
        let (action, alpha) = actor.act_with_attention(&obs)?;
        let values = critic.evaluate(&obs, action)?;
        let prio = priorities(&critic, &obs, action)?;
        let q_ca_int = match at {
            IntentionAction::Taken => values.q_ca.clone(),
            IntentionAction::Straight => critic.evaluate(&obs, 0.0)?.q_ca,
        };
        let own = ep.own();
        let ships = ep
            .targets()
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let a = alpha.as_ref().map(|al| al[i]);
                ShipRecord {
                    x: t.x,
                    y: t.y,
                    course: t.course,
                    speed: t.speed,
                    cr: ep.current_cr()[i],
                    q_ca: q_ca_int[i],
                    p_oth: prio.p_oth[i],
                    alpha: a,
                    intention: a.map(|a| intention(q_ca_int[i], a)),
                }
            })
            .collect();
        let mut rec = ExplanationRecord {
            t: ep.time(),
            own: OwnPose {
                x: own.x,
                y: own.y,
                psi: own.psi,
                r: own.r,
                delta: own.delta,
            },
            wp: WaypointRecord {
                dtheta: ep.current_dtheta(),
            },
            q_wp: values.q_wp,
            p_wp: prio.p_wp,
            p_oth_total: prio.p_oth_total,
            action,
            reward: RewardRecord {
                total: 0.0,
                r_wp: 0.0,
                r_dwp: 0.0,
                r_oth: Vec::new(),
            },
            ships,
        };
        let out = ep.step(MAX_RUDDER_DEG * action)?;
        rec.reward = RewardRecord {
            total: out.reward.total,
            r_wp: out.reward.r_wp,
            r_dwp: out.reward.r_dwp,
            r_oth: out.reward.r_oth,
        };
        records.push(rec);
        obs = out.observation;
    }
    Ok(ExplanationTrace {
        header: TraceHeader {
            trace_version: TRACE_VERSION,
            checkpoint: CheckpointRef {
                config_hash: checkpoint.config_hash.clone(),
                rng_seed: checkpoint.rng_seed,
                env_steps: checkpoint.env_steps,
                variant: actor.variant(),
            },
            scenario: scenario.clone(),
            intention_action: at,
            steps: records.len(),
            notes,
        },
        records,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceFormat {
    Jsonl,
    Csv,
}

impl ExplanationTrace {
    pub fn check(&self) -> Result<()> {
        if self.header.steps != self.records.len() {
            return Err(Error::Trace(format!(
                "header announces {} steps, found {} records",
                self.header.steps,
                self.records.len()
            )));
        }
        self.records.iter().try_for_each(ExplanationRecord::check_intention)
    }

    /// Header line `{"header": ...}` followed by one record per line.
    pub fn to_jsonl(&self) -> Result<String> {
        self.check()?;
        let mut s = serde_json::to_string(&HeaderLine {
            header: self.header.clone(),
        })?;
        s.push('\n');
        for r in &self.records {
            s.push_str(&serde_json::to_string(r)?);
            s.push('\n');
        }
        Ok(s)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        Self::read_jsonl(BufReader::new(text.as_bytes()))
    }

    fn read_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::Trace("empty trace".into()))?
            .map_err(|e| Error::Trace(e.to_string()))?;
        let header = serde_json::from_str::<HeaderLine>(&first)?.header;
        let mut records = Vec::new();
        for line in lines {
            let line = line.map_err(|e| Error::Trace(e.to_string()))?;
            if !line.trim().is_empty() {
                records.push(serde_json::from_str(&line)?);
            }
        }
        let trace = ExplanationTrace { header, records };
        trace.check()?;
        Ok(trace)
    }

    /// Column names of the wide CSV layout for `n` ships.
    pub fn csv_columns(n: usize) -> Vec<String> {
        let mut cols: Vec<String> = [
            "t", "own_x", "own_y", "own_psi", "own_r", "own_delta", "wp_dtheta", "q_wp", "p_wp", "p_oth_total",
            "action", "reward_total", "r_wp", "r_dwp",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        for i in 0..n {
            for f in SHIP_CSV_FIELDS {
                cols.push(format!("ship{i}_{f}"));
            }
        }
        cols
    }

    /// One provenance comment line, one header row, one row per record.
    /// Ships are flattened into `ship<i>_<field>` columns; fields the actor
    /// cannot provide are left empty.
    pub fn to_csv(&self) -> Result<String> {
        self.check()?;
        let n = self.header.scenario.targets.len();
        let mut s = format!(
            "# config_hash={} seed={} scenario_seed={}\n",
            self.header.checkpoint.config_hash, self.header.checkpoint.rng_seed, self.header.scenario.rng_seed
        );
        s.push_str(&Self::csv_columns(n).join(","));
        s.push('\n');
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        for r in &self.records {
            if r.ships.len() != n {
                return Err(Error::Trace(format!("t = {}: expected {n} ships", r.t)));
            }
            let mut row = vec![
                r.t, r.own.x, r.own.y, r.own.psi, r.own.r, r.own.delta, r.wp.dtheta, r.q_wp, r.p_wp, r.p_oth_total,
                r.action, r.reward.total, r.reward.r_wp, r.reward.r_dwp,
            ]
            .iter()
            .map(f64::to_string)
            .collect::<Vec<_>>();
            for (sh, r_oth) in r.ships.iter().zip(&r.reward.r_oth) {
                for v in [sh.x, sh.y, sh.course, sh.speed, sh.cr, sh.q_ca, sh.p_oth] {
                    row.push(v.to_string());
                }
                row.push(opt(sh.alpha));
                row.push(opt(sh.intention));
                row.push(r_oth.to_string());
            }
            let _ = writeln!(s, "{}", row.join(","));
        }
        Ok(s)
    }

    pub fn export(&self, path: &Path, format: TraceFormat) -> Result<()> {
        let text = match format {
            TraceFormat::Jsonl => self.to_jsonl()?,
            TraceFormat::Csv => self.to_csv()?,
        };
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load_jsonl(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_jsonl(BufReader::new(file))
    }
}

const SHIP_CSV_FIELDS: [&str; 10] =
    ["x", "y", "course", "speed", "cr", "q_ca", "p_oth", "alpha", "intention", "r_oth"];

/// Parses the records back out of a wide CSV export. The CSV carries no
/// header metadata, so only records come back.
pub fn records_from_csv(text: &str) -> Result<Vec<ExplanationRecord>> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.is_empty());
    let cols: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Trace("csv has no header row".into()))?
        .split(',')
        .collect();
    let fixed = ExplanationTrace::csv_columns(0).len();
    if cols.len() < fixed || (cols.len() - fixed) % SHIP_CSV_FIELDS.len() != 0 {
        return Err(Error::Trace(format!("unexpected csv column count {}", cols.len())));
    }
    let n = (cols.len() - fixed) / SHIP_CSV_FIELDS.len();
    if cols != ExplanationTrace::csv_columns(n) {
        return Err(Error::Trace("csv header does not match the trace layout".into()));
    }
    let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| Error::Trace(format!("bad number `{s}`"))) };
    let opt = |s: &str| -> Result<Option<f64>> { if s.is_empty() { Ok(None) } else { num(s).map(Some) } };
    let mut out = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols.len() {
            return Err(Error::Trace(format!("row has {} fields, expected {}", f.len(), cols.len())));
        }
        let mut ships = Vec::with_capacity(n);
        let mut r_oth = Vec::with_capacity(n);
        for i in 0..n {
            let g = &f[fixed + i * SHIP_CSV_FIELDS.len()..];
            ships.push(ShipRecord {
                x: num(g[0])?,
                y: num(g[1])?,
                course: num(g[2])?,
                speed: num(g[3])?,
                cr: num(g[4])?,
                q_ca: num(g[5])?,
                p_oth: num(g[6])?,
                alpha: opt(g[7])?,
                intention: opt(g[8])?,
            });
            r_oth.push(num(g[9])?);
        }
        out.push(ExplanationRecord {
            t: num(f[0])?,
            own: OwnPose {
                x: num(f[1])?,
                y: num(f[2])?,
                psi: num(f[3])?,
                r: num(f[4])?,
                delta: num(f[5])?,
            },
            wp: WaypointRecord { dtheta: num(f[6])? },
            q_wp: num(f[7])?,
            p_wp: num(f[8])?,
            p_oth_total: num(f[9])?,
            action: num(f[10])?,
            reward: RewardRecord {
                total: num(f[11])?,
                r_wp: num(f[12])?,
                r_dwp: num(f[13])?,
                r_oth,
            },
            ships,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{ActorConfig, Agent, TrainConfig};
    use crate::scenario::EnvConfig;

    fn checkpoint(variant: ActorVariant) -> Checkpoint {
        let cfg = TrainConfig {
            actor: ActorConfig {
                variant,
                feature_softsign: true,
            },
            ..TrainConfig::default()
        };
        let agent = Agent::new(&cfg.actor, cfg.adam, 7);
        Checkpoint::from_agent(&agent, &cfg, &EnvConfig::default(), 7, "abc", 0)
    }

    #[test]
    fn intention_examples() {
        assert_eq!(intention(-0.4, 0.25), -0.1);
        assert_eq!(intention(3.0, 0.0), 0.0);
    }

    #[test]
    fn straight_action_has_zero_priority() {
        let ck = checkpoint(ActorVariant::Plain);
        let critic = ck.critic().unwrap();
        let sc = Scenario::generate_with_count(3, &ck.env.scenario, 2);
        let (ep, obs) = Episode::reset(sc, &ck.env);
        drop(ep);
        let p = priorities(&critic, &obs, 0.0).unwrap();
        assert_eq!(p.p_wp, 0.0);
        assert!(p.p_oth.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn attention_trace_round_trips() {
        let ck = checkpoint(ActorVariant::Attention);
        let sc = Scenario::generate_with_count(11, &ck.env.scenario, 3);
        let tr = explain_episode(&ck, &sc, IntentionAction::Taken).unwrap();
        assert_eq!(tr.records.len(), 240);
        for r in &tr.records {
            let s: f64 = r.ships.iter().map(|s| s.alpha.unwrap()).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
        let back = ExplanationTrace::from_jsonl(&tr.to_jsonl().unwrap()).unwrap();
        assert_eq!(back, tr);
        let csv = tr.to_csv().unwrap();
        assert_eq!(csv.lines().count(), 242);
        assert_eq!(records_from_csv(&csv).unwrap(), tr.records);
    }

    #[test]
    fn plain_trace_omits_attention() {
        let ck = checkpoint(ActorVariant::Plain);
        let sc = Scenario::generate_with_count(11, &ck.env.scenario, 1);
        let tr = explain_episode(&ck, &sc, IntentionAction::Taken).unwrap();
        assert!(tr.header.notes.iter().any(|n| n.contains("plain actor")));
        let line = tr.to_jsonl().unwrap().lines().nth(1).unwrap().to_string();
        assert!(!line.contains("alpha") && !line.contains("intention"));
        assert_eq!(records_from_csv(&tr.to_csv().unwrap()).unwrap(), tr.records);
    }

    #[test]
    fn empty_ship_trace_is_valid() {
        let ck = checkpoint(ActorVariant::Attention);
        let sc = Scenario::generate_with_count(5, &ck.env.scenario, 0);
        let tr = explain_episode(&ck, &sc, IntentionAction::Taken).unwrap();
        assert!(tr.records.iter().all(|r| r.ships.is_empty() && r.p_oth_total == 0.0));
        assert_eq!(records_from_csv(&tr.to_csv().unwrap()).unwrap(), tr.records);
    }

    #[test]
    fn out_of_range_ship_count_is_flagged() {
        let ck = checkpoint(ActorVariant::Attention);
        let sc = Scenario::generate_with_count(5, &ck.env.scenario, 9);
        let tr = explain_episode(&ck, &sc, IntentionAction::Straight).unwrap();
        assert!(tr.header.notes.iter().any(|n| n.contains("9 ships")));
        tr.check().unwrap();
    }

    #[test]
    fn tampered_intention_is_rejected() {
        let ck = checkpoint(ActorVariant::Attention);
        let sc = Scenario::generate_with_count(5, &ck.env.scenario, 1);
        let mut tr = explain_episode(&ck, &sc, IntentionAction::Taken).unwrap();
        tr.records[3].ships[0].intention = Some(123.0);
        assert!(matches!(tr.to_jsonl(), Err(Error::Trace(_))));
    }
}

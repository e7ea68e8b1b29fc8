//! Randomized encounter generation and the episodic environment.
//!
//! Each other ship is placed so that, absent noise, it would meet the own
//! ship at a sampled time `t_col` if both sailed straight. Independent
//! uniform noise on position and course then perturbs it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    step_own_ship, step_target_ship, wrap_deg, NomotoParams, OwnShipState, TargetShipState,
    MAX_RUDDER_DEG,
};
use crate::error::{Error, Result};
use crate::observation::{Frame, ObsScales, ObservationHistory, StackedObservation};
use crate::reward::{total_reward, RewardBreakdown, ShipDomain};

/// Closed interval `[lo, hi]` sampled uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        rng.gen_range(self.lo..=self.hi)
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    fn validate(&self, field: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi) {
            return Err(Error::config(field, format!("empty or non-finite range [{}, {}]", self.lo, self.hi)));
        }
        Ok(())
    }
}

impl From<[f64; 2]> for Interval {
    fn from(v: [f64; 2]) -> Self {
        Interval::new(v[0], v[1])
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.lo, i.hi]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OwnInit {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// km/s
    pub target_speed_range: Interval,
    /// deg
    pub course_col_range: Interval,
    /// s
    pub t_col_range: Interval,
    /// km, applied independently per axis
    pub pos_noise_range: Interval,
    /// deg
    pub course_noise_range: Interval,
    /// Inclusive bounds on the number of other ships.
    pub n_ships_range: [usize; 2],
    pub waypoint: [f64; 2],
    pub own_init: OwnInit,
    /// Own speed [km/s]. When absent it is drawn per episode from
    /// `target_speed_range`.
    #[serde(default)]
    pub own_speed: Option<f64>,
    /// s
    pub dt: f64,
    pub episode_steps: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            target_speed_range: Interval::new(0.0041, 0.0062),
            course_col_range: Interval::new(-150.0, 150.0),
            t_col_range: Interval::new(600.0, 1800.0),
            pos_noise_range: Interval::new(-1.0, 1.0),
            course_noise_range: Interval::new(-30.0, 30.0),
            n_ships_range: [0, 6],
            waypoint: [0.0, 46.3],
            own_init: OwnInit::default(),
            own_speed: None,
            dt: 5.0,
            episode_steps: 240,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.target_speed_range.validate("scenario.target_speed_range")?;
        if self.target_speed_range.lo <= 0.0 {
            return Err(Error::config("scenario.target_speed_range", "speeds must be positive"));
        }
        self.course_col_range.validate("scenario.course_col_range")?;
        self.t_col_range.validate("scenario.t_col_range")?;
        self.pos_noise_range.validate("scenario.pos_noise_range")?;
        self.course_noise_range.validate("scenario.course_noise_range")?;
        if self.n_ships_range[0] > self.n_ships_range[1] {
            return Err(Error::config("scenario.n_ships_range", "lower bound exceeds upper bound"));
        }
        if let Some(s) = self.own_speed {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::config("scenario.own_speed", "must be positive"));
            }
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config("scenario.dt", "must be positive"));
        }
        if self.episode_steps == 0 {
            return Err(Error::config("scenario.episode_steps", "must be positive"));
        }
        Ok(())
    }

    /// Same ranges with every noise term pinned to zero.
    pub fn without_noise(&self) -> Self {
        Self {
            pos_noise_range: Interval::new(0.0, 0.0),
            course_noise_range: Interval::new(0.0, 0.0),
            ..self.clone()
        }
    }
}

/// Mixes a master seed with a stream index (SplitMix64 finalizer).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Raw draws behind one placed target, kept for property checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetDraw {
    pub speed: f64,
    pub course_col: f64,
    pub t_col: f64,
    pub noise: (f64, f64, f64),
    pub ship: TargetShipState,
}

pub fn sample_target_draw<R: Rng + ?Sized>(
    rng: &mut R,
    own: &OwnShipState,
    cfg: &ScenarioConfig,
) -> TargetDraw {
    let speed = cfg.target_speed_range.sample(rng);
    let course_col = cfg.course_col_range.sample(rng);
    let t_col = cfg.t_col_range.sample(rng);
    let dx = cfg.pos_noise_range.sample(rng);
    let dy = cfg.pos_noise_range.sample(rng);
    let dpsi = cfg.course_noise_range.sample(rng);

    let (so_s, so_c) = own.psi.to_radians().sin_cos();
    let (st_s, st_c) = course_col.to_radians().sin_cos();
    let x_col = own.x + t_col * (own.speed_u * so_s - speed * st_s);
    let y_col = own.y + t_col * (own.speed_u * so_c - speed * st_c);

    TargetDraw {
        speed,
        course_col,
        t_col,
        noise: (dx, dy, dpsi),
        ship: TargetShipState {
            x: x_col + dx,
            y: y_col + dy,
            course: wrap_deg(course_col + dpsi),
            speed,
        },
    }
}

pub fn sample_target_ship<R: Rng + ?Sized>(
    rng: &mut R,
    own: &OwnShipState,
    cfg: &ScenarioConfig,
) -> TargetShipState {
    sample_target_draw(rng, own, cfg).ship
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ScenarioFile", from = "ScenarioFile")]
pub struct Scenario {
    pub own: OwnShipState,
    pub targets: Vec<TargetShipState>,
    pub waypoint: (f64, f64),
    pub rng_seed: u64,
}

impl Scenario {
    pub fn generate(seed: u64, cfg: &ScenarioConfig) -> Self {
        Self::generate_inner(seed, cfg, None)
    }

    /// Generates with a fixed ship count instead of drawing one.
    pub fn generate_with_count(seed: u64, cfg: &ScenarioConfig, n_ships: usize) -> Self {
        Self::generate_inner(seed, cfg, Some(n_ships))
    }

    fn generate_inner(seed: u64, cfg: &ScenarioConfig, n_override: Option<usize>) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let speed = match cfg.own_speed {
            Some(s) => s,
            None => cfg.target_speed_range.sample(&mut rng),
        };
        let own = OwnShipState::new(cfg.own_init.x, cfg.own_init.y, wrap_deg(cfg.own_init.psi), speed);
        let n = match n_override {
            Some(n) => n,
            None => rng.gen_range(cfg.n_ships_range[0]..=cfg.n_ships_range[1]),
        };
        let targets = (0..n).map(|_| sample_target_ship(&mut rng, &own, cfg)).collect();
        Scenario {
            own,
            targets,
            waypoint: (cfg.waypoint[0], cfg.waypoint[1]),
            rng_seed: seed,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OwnFile {
    x: f64,
    y: f64,
    psi: f64,
    speed: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScenarioFile {
    seed: u64,
    own: OwnFile,
    waypoint: [f64; 2],
    targets: Vec<TargetShipState>,
}

impl From<Scenario> for ScenarioFile {
    fn from(s: Scenario) -> Self {
        ScenarioFile {
            seed: s.rng_seed,
            own: OwnFile {
                x: s.own.x,
                y: s.own.y,
                psi: s.own.psi,
                speed: s.own.speed_u,
            },
            waypoint: [s.waypoint.0, s.waypoint.1],
            targets: s.targets,
        }
    }
}

impl From<ScenarioFile> for Scenario {
    fn from(f: ScenarioFile) -> Self {
        Scenario {
            own: OwnShipState::new(f.own.x, f.own.y, f.own.psi, f.own.speed),
            targets: f.targets,
            waypoint: (f.waypoint[0], f.waypoint[1]),
            rng_seed: f.seed,
        }
    }
}

/// Everything the simulator needs besides the scenario itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub scenario: ScenarioConfig,
    pub nomoto: NomotoParams,
    pub domain: ShipDomain,
    pub normalization: ObsScales,
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.nomoto.validate()?;
        if !(self.domain.loa > 0.0) {
            return Err(Error::config("domain.loa", "must be positive"));
        }
        self.normalization.validate()
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub observation: StackedObservation,
    pub reward: RewardBreakdown,
    pub done: bool,
    /// Set on the final step: the episode ended on the step budget, not on
    /// a failure, so value targets keep bootstrapping.
    pub time_limit: bool,
}

/// One running episode.
#[derive(Debug, Clone)]
pub struct Episode {
    cfg: EnvConfig,
    scenario: Scenario,
    own: OwnShipState,
    targets: Vec<TargetShipState>,
    step_index: usize,
    prev_cr: Vec<f64>,
    prev_dtheta: f64,
    history: ObservationHistory,
    invasion_events: usize,
    max_cr: f64,
    done: bool,
}

impl Episode {
    pub fn reset(scenario: Scenario, cfg: &EnvConfig) -> (Self, StackedObservation) {
        let own = scenario.own;
        let targets = scenario.targets.clone();
        let frame = Frame::capture(&own, &targets, scenario.waypoint);
        let prev_dtheta = frame.waypoint.dtheta_wp;
        let prev_cr: Vec<f64> = targets.iter().map(|t| cfg.domain.danger_of(&own, t)).collect();
        let invasion_events = prev_cr.iter().filter(|&&c| c > 0.0).count();
        let max_cr = prev_cr.iter().copied().fold(0.0, f64::max);
        let history = ObservationHistory::warm(frame, cfg.normalization);
        let obs = history.stacked();
        (
            Episode {
                cfg: cfg.clone(),
                scenario,
                own,
                targets,
                step_index: 0,
                prev_cr,
                prev_dtheta,
                history,
                invasion_events,
                max_cr,
                done: false,
            },
            obs,
        )
    }

    pub fn step(&mut self, rudder_cmd: f64) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::EpisodeFinished);
        }
        if !rudder_cmd.is_finite() || rudder_cmd.abs() > MAX_RUDDER_DEG {
            return Err(Error::RudderOutOfRange(rudder_cmd));
        }
        let dt = self.cfg.scenario.dt;
        self.own = step_own_ship(&self.own, rudder_cmd, dt, &self.cfg.nomoto);
        for t in &mut self.targets {
            *t = step_target_ship(t, dt);
        }
        let frame = Frame::capture(&self.own, &self.targets, self.scenario.waypoint);
        let dtheta = frame.waypoint.dtheta_wp;
        let reward = total_reward(
            &self.own,
            &self.targets,
            dtheta,
            &self.prev_cr,
            self.prev_dtheta,
            &self.cfg.domain,
        );
        for (&now, &prev) in reward.cr.iter().zip(&self.prev_cr) {
            if now > 0.0 && prev == 0.0 {
                self.invasion_events += 1;
            }
            self.max_cr = self.max_cr.max(now);
        }
        self.history.push(frame)?;
        self.prev_cr.clone_from(&reward.cr);
        self.prev_dtheta = dtheta;
        self.step_index += 1;
        self.done = self.step_index >= self.cfg.scenario.episode_steps;
        Ok(StepOutcome {
            observation: self.history.stacked(),
            reward,
            done: self.done,
            time_limit: self.done,
        })
    }

    pub fn observation(&self) -> StackedObservation {
        self.history.stacked()
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn own(&self) -> &OwnShipState {
        &self.own
    }

    pub fn targets(&self) -> &[TargetShipState] {
        &self.targets
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    /// Elapsed simulated time [s].
    pub fn time(&self) -> f64 {
        self.step_index as f64 * self.cfg.scenario.dt
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Danger levels at the current state.
    pub fn current_cr(&self) -> &[f64] {
        &self.prev_cr
    }

    pub fn current_dtheta(&self) -> f64 {
        self.prev_dtheta
    }

    pub fn history(&self) -> &ObservationHistory {
        &self.history
    }

    /// Number of times a ship entered the domain (including ships that
    /// start inside it).
    pub fn invasion_events(&self) -> usize {
        self.invasion_events
    }

    pub fn max_cr(&self) -> f64 {
        self.max_cr
    }
}

/// Draws a fresh scenario from `rng` and resets an episode on it.
pub fn env_reset<R: Rng + ?Sized>(rng: &mut R, cfg: &EnvConfig) -> (Episode, StackedObservation) {
    let seed: u64 = rng.gen();
    Episode::reset(Scenario::generate(seed, &cfg.scenario), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn hand_evaluated_placement() {
        let cfg = ScenarioConfig {
            target_speed_range: Interval::new(0.005, 0.005),
            course_col_range: Interval::new(90.0, 90.0),
            t_col_range: Interval::new(1000.0, 1000.0),
            ..ScenarioConfig::default().without_noise()
        };
        let own = OwnShipState::new(0.0, 0.0, 0.0, 0.005);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = sample_target_ship(&mut rng, &own, &cfg);
        assert_abs_diff_eq!(t.x, -5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(t.y, 5.0, epsilon = 1e-12);
        assert_eq!(t.course, 90.0);
    }

    #[test]
    fn zero_noise_meets_at_t_col() {
        let cfg = ScenarioConfig::default().without_noise();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let own = OwnShipState::new(0.0, 0.0, 0.0, 0.0049);
        for _ in 0..200 {
            let d = sample_target_draw(&mut rng, &own, &cfg);
            let o = step_target_ship(
                &TargetShipState {
                    x: own.x,
                    y: own.y,
                    course: own.psi,
                    speed: own.speed_u,
                },
                d.t_col,
            );
            let t = step_target_ship(&d.ship, d.t_col);
            assert!((o.x - t.x).hypot(o.y - t.y) <= 1e-9);
        }
    }

    #[test]
    fn fixed_count_and_empty_scenarios() {
        let cfg = ScenarioConfig::default();
        let s = Scenario::generate_with_count(4, &cfg, 0);
        assert!(s.targets.is_empty());
        assert_eq!(s.own.x, 0.0);
        assert_eq!(s.own.psi, 0.0);
        assert_eq!(s.waypoint, (0.0, 46.3));
        assert_eq!(Scenario::generate_with_count(4, &cfg, 3).targets.len(), 3);
        assert_eq!(Scenario::generate(77, &cfg), Scenario::generate(77, &cfg));
    }

    #[test]
    fn json_round_trip() {
        let s = Scenario::generate_with_count(5, &ScenarioConfig::default(), 4);
        let back = Scenario::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(back, s);
        let v: serde_json::Value = serde_json::from_str(&s.to_json().unwrap()).unwrap();
        assert!(v["own"]["speed"].is_f64());
        assert_eq!(v["targets"].as_array().unwrap().len(), 4);
    }

    #[test]
    fn episode_lifecycle() {
        let cfg = EnvConfig::default();
        let (mut ep, obs) = Episode::reset(Scenario::generate_with_count(1, &cfg.scenario, 0), &cfg);
        assert_eq!(ep.step_index(), 0);
        assert!(obs.ships.is_empty());
        let first = ep.step(0.0).unwrap();
        // Dead ahead with no ships: only the alignment term pays.
        assert_eq!(first.reward.total, crate::reward::waypoint_reward(0.0));
        for k in 2..=240 {
            let out = ep.step(0.0).unwrap();
            assert_eq!(out.done, k == 240);
        }
        assert!(matches!(ep.step(0.0), Err(Error::EpisodeFinished)));
    }

    #[test]
    fn rejects_oversized_rudder() {
        let cfg = EnvConfig::default();
        let (mut ep, _) = Episode::reset(Scenario::generate(1, &cfg.scenario), &cfg);
        assert!(ep.step(5.5).is_err());
        assert!(ep.step(f64::NAN).is_err());
        assert!(ep.step(-5.0).is_ok());
    }

    #[test]
    fn replay_is_bit_identical() {
        let cfg = EnvConfig::default();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(123);
            let (mut ep, _) = env_reset(&mut rng, &cfg);
            let mut out = Vec::new();
            for k in 0..100 {
                let s = ep.step(((k as f64) * 0.37).sin() * 5.0).unwrap();
                out.push(s.reward.total.to_bits());
                out.extend(s.observation.wp.iter().map(|v| v.to_bits()));
            }
            out
        };
        assert_eq!(run(), run());
    }
}

//! Observation features for the waypoint and for each other ship, plus the
//! five-frame history the networks consume.
//!
//! All relative quantities live in the own-ship body frame: `+x` to
//! starboard, `+y` ahead. A world offset `(e, n)` maps to body coordinates
//! by rotating through `-ψ`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::dynamics::{wrap_deg, OwnShipState, TargetShipState};
use crate::error::{Error, Result};

/// Frames of history fed to the networks (current plus four past steps).
pub const HISTORY_LEN: usize = 5;
pub const WP_FEATURES: usize = 3;
pub const SHIP_FEATURES: usize = 10;
/// Width of a flattened waypoint block.
pub const WP_BLOCK: usize = WP_FEATURES * HISTORY_LEN;
/// Width of a flattened single-ship block.
pub const SHIP_BLOCK: usize = SHIP_FEATURES * HISTORY_LEN;

/// Relative velocity below which the CPA is treated as undefined.
pub const CPA_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaypointObs {
    pub dx_wp: f64,
    pub dy_wp: f64,
    pub dtheta_wp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetObs {
    pub dx: f64,
    pub dy: f64,
    pub dtheta: f64,
    pub relv_x: f64,
    pub relv_y: f64,
    pub dist: f64,
    pub dx_cpa: f64,
    pub dy_cpa: f64,
    pub dcpa: f64,
    pub tcpa: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cpa {
    pub dx_cpa: f64,
    pub dy_cpa: f64,
    pub dcpa: f64,
    pub tcpa: f64,
}

/// Rotates a world-frame vector into the body frame of a ship heading `psi`.
pub fn to_body(e: f64, n: f64, psi: f64) -> (f64, f64) {
    let (s, c) = psi.to_radians().sin_cos();
    (e * c - n * s, e * s + n * c)
}

/// Relative bearing of a body-frame offset, degrees in `[-180, 180)`.
/// A zero offset has bearing 0.
fn bearing(dx: f64, dy: f64) -> f64 {
    if dx == 0.0 && dy == 0.0 {
        0.0
    } else {
        wrap_deg(dx.atan2(dy).to_degrees())
    }
}

pub fn waypoint_observation(own: &OwnShipState, waypoint: (f64, f64)) -> WaypointObs {
    let (dx, dy) = to_body(waypoint.0 - own.x, waypoint.1 - own.y, own.psi);
    WaypointObs {
        dx_wp: dx,
        dy_wp: dy,
        dtheta_wp: bearing(dx, dy),
    }
}

/// Closest point of approach of `target` relative to `own`, both assumed to
/// hold course and speed. `tcpa` is negative when the CPA lies in the past.
pub fn compute_cpa(own: &OwnShipState, target: &TargetShipState) -> Cpa {
    let (px, py) = (target.x - own.x, target.y - own.y);
    let (ovx, ovy) = own.velocity();
    let (tvx, tvy) = target.velocity();
    let (vx, vy) = (tvx - ovx, tvy - ovy);
    let v2 = vx * vx + vy * vy;
    let tcpa = if v2.sqrt() > CPA_EPS {
        -(px * vx + py * vy) / v2
    } else {
        0.0
    };
    let (cx, cy) = (px + vx * tcpa, py + vy * tcpa);
    let (dx_cpa, dy_cpa) = to_body(cx, cy, own.psi);
    Cpa {
        dx_cpa,
        dy_cpa,
        dcpa: cx.hypot(cy),
        tcpa,
    }
}

pub fn target_observation(own: &OwnShipState, target: &TargetShipState) -> TargetObs {
    let (ex, ey) = (target.x - own.x, target.y - own.y);
    let (dx, dy) = to_body(ex, ey, own.psi);
    let (ovx, ovy) = own.velocity();
    let (tvx, tvy) = target.velocity();
    let (relv_x, relv_y) = to_body(tvx - ovx, tvy - ovy, own.psi);
    let cpa = compute_cpa(own, target);
    TargetObs {
        dx,
        dy,
        dtheta: bearing(dx, dy),
        relv_x,
        relv_y,
        dist: ex.hypot(ey),
        dx_cpa: cpa.dx_cpa,
        dy_cpa: cpa.dy_cpa,
        dcpa: cpa.dcpa,
        tcpa: cpa.tcpa,
    }
}

/// Feature scales applied before the networks see an observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObsScales {
    /// km
    pub distance: f64,
    /// km/s
    pub speed: f64,
    /// deg
    pub angle: f64,
    /// s
    pub time: f64,
}

impl Default for ObsScales {
    fn default() -> Self {
        Self {
            distance: 10.0,
            speed: 0.01,
            angle: 180.0,
            time: 1000.0,
        }
    }
}

impl ObsScales {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("distance", self.distance),
            ("speed", self.speed),
            ("angle", self.angle),
            ("time", self.time),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("normalization.{name}"), "must be positive"));
            }
        }
        Ok(())
    }

    pub fn normalize_waypoint(&self, o: &WaypointObs) -> [f64; WP_FEATURES] {
        [o.dx_wp / self.distance, o.dy_wp / self.distance, o.dtheta_wp / self.angle]
    }

    pub fn denormalize_waypoint(&self, v: &[f64; WP_FEATURES]) -> WaypointObs {
        WaypointObs {
            dx_wp: v[0] * self.distance,
            dy_wp: v[1] * self.distance,
            dtheta_wp: v[2] * self.angle,
        }
    }

    pub fn normalize_target(&self, o: &TargetObs) -> [f64; SHIP_FEATURES] {
        let d = self.distance;
        [
            o.dx / d,
            o.dy / d,
            o.dtheta / self.angle,
            o.relv_x / self.speed,
            o.relv_y / self.speed,
            o.dist / d,
            o.dx_cpa / d,
            o.dy_cpa / d,
            o.dcpa / d,
            o.tcpa / self.time,
        ]
    }

    pub fn denormalize_target(&self, v: &[f64; SHIP_FEATURES]) -> TargetObs {
        let d = self.distance;
        TargetObs {
            dx: v[0] * d,
            dy: v[1] * d,
            dtheta: v[2] * self.angle,
            relv_x: v[3] * self.speed,
            relv_y: v[4] * self.speed,
            dist: v[5] * d,
            dx_cpa: v[6] * d,
            dy_cpa: v[7] * d,
            dcpa: v[8] * d,
            tcpa: v[9] * self.time,
        }
    }
}

/// One time step of raw (unnormalized) features.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub waypoint: WaypointObs,
    pub ships: Vec<TargetObs>,
}

impl Frame {
    pub fn capture(own: &OwnShipState, targets: &[TargetShipState], waypoint: (f64, f64)) -> Self {
        Frame {
            waypoint: waypoint_observation(own, waypoint),
            ships: targets.iter().map(|t| target_observation(own, t)).collect(),
        }
    }
}

/// Normalized five-frame observation. Frames run oldest to newest inside
/// each flattened block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedObservation {
    pub wp: Vec<f64>,
    /// One `SHIP_BLOCK`-wide block per ship, in scenario order.
    pub ships: Vec<Vec<f64>>,
}

impl StackedObservation {
    pub fn n_ships(&self) -> usize {
        self.ships.len()
    }

    pub fn is_finite(&self) -> bool {
        self.wp.iter().chain(self.ships.iter().flatten()).all(|v| v.is_finite())
    }
}

/// Rolling buffer of the most recent [`HISTORY_LEN`] frames.
#[derive(Debug, Clone)]
pub struct ObservationHistory {
    frames: VecDeque<Frame>,
    n_ships: usize,
    scales: ObsScales,
}

impl ObservationHistory {
    /// Starts a history by replicating `first` into every slot.
    pub fn warm(first: Frame, scales: ObsScales) -> Self {
        let n_ships = first.ships.len();
        let frames = std::iter::repeat(first).take(HISTORY_LEN).collect();
        Self {
            frames,
            n_ships,
            scales,
        }
    }

    pub fn push(&mut self, frame: Frame) -> Result<()> {
        if frame.ships.len() != self.n_ships {
            return Err(Error::ShipCountChanged {
                expected: self.n_ships,
                found: frame.ships.len(),
            });
        }
        self.frames.push_back(frame);
        while self.frames.len() > HISTORY_LEN {
            self.frames.pop_front();
        }
        Ok(())
    }

    pub fn frames(&self) -> impl Iterator<Item = &Frame> {
        self.frames.iter()
    }

    pub fn latest(&self) -> &Frame {
        self.frames.back().expect("history is never empty")
    }

    pub fn stacked(&self) -> StackedObservation {
        let mut wp = Vec::with_capacity(WP_BLOCK);
        for f in &self.frames {
            wp.extend_from_slice(&self.scales.normalize_waypoint(&f.waypoint));
        }
        let ships = (0..self.n_ships)
            .map(|i| {
                let mut block = Vec::with_capacity(SHIP_BLOCK);
                for f in &self.frames {
                    block.extend_from_slice(&self.scales.normalize_target(&f.ships[i]));
                }
                block
            })
            .collect();
        StackedObservation { wp, ships }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::step_target_ship;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn own(psi: f64) -> OwnShipState {
        OwnShipState::new(0.0, 0.0, psi, 0.005)
    }

    #[test]
    fn waypoint_examples() {
        let o = waypoint_observation(&own(0.0), (0.0, 46.3));
        assert_abs_diff_eq!(o.dx_wp, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(o.dy_wp, 46.3, epsilon = 1e-12);
        assert_eq!(o.dtheta_wp, 0.0);

        let o = waypoint_observation(&own(90.0), (0.0, 46.3));
        assert_abs_diff_eq!(o.dtheta_wp, -90.0, epsilon = 1e-12);

        let o = waypoint_observation(&own(0.0), (1.0, 0.0));
        assert_abs_diff_eq!(o.dtheta_wp, 90.0, epsilon = 1e-12);

        let o = waypoint_observation(&own(30.0), (0.0, 0.0));
        assert_eq!(o.dtheta_wp, 0.0);
    }

    #[test]
    fn head_on_cpa() {
        let t = TargetShipState {
            x: 0.0,
            y: 6.0,
            course: -180.0,
            speed: 0.005,
        };
        let c = compute_cpa(&own(0.0), &t);
        assert_abs_diff_eq!(c.tcpa, 600.0, epsilon = 1e-9);
        assert_abs_diff_eq!(c.dcpa, 0.0, epsilon = 1e-12);

        let o = target_observation(&own(0.0), &t);
        assert_abs_diff_eq!(o.dist, 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(o.dtheta, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(o.relv_y, -0.01, epsilon = 1e-15);
    }

    #[test]
    fn parallel_ships_have_degenerate_cpa() {
        let t = TargetShipState {
            x: 3.0,
            y: 4.0,
            course: 0.0,
            speed: 0.005,
        };
        let c = compute_cpa(&own(0.0), &t);
        assert_eq!(c.tcpa, 0.0);
        assert_abs_diff_eq!(c.dcpa, 5.0, epsilon = 1e-12);
    }

    #[test]
    fn coincident_target() {
        let t = TargetShipState {
            x: 0.0,
            y: 0.0,
            course: 40.0,
            speed: 0.004,
        };
        let o = target_observation(&own(10.0), &t);
        assert_eq!(o.dist, 0.0);
        assert_eq!(o.dx, 0.0);
        assert_eq!(o.dy, 0.0);
    }

    fn random_pair(rng: &mut ChaCha8Rng) -> (OwnShipState, TargetShipState) {
        let o = OwnShipState::new(
            rng.gen_range(-5.0..5.0),
            rng.gen_range(-5.0..5.0),
            rng.gen_range(-180.0..180.0),
            rng.gen_range(0.004..0.0065),
        );
        let t = TargetShipState {
            x: rng.gen_range(-10.0..10.0),
            y: rng.gen_range(-10.0..10.0),
            course: rng.gen_range(-180.0..180.0),
            speed: rng.gen_range(0.004..0.0065),
        };
        (o, t)
    }

    #[test]
    fn dcpa_invariant_along_straight_lines() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let (mut o, mut t) = random_pair(&mut rng);
            let d0 = compute_cpa(&o, &t).dcpa;
            for _ in 0..40 {
                o = crate::dynamics::step_own_ship(&o, 0.0, 5.0, &Default::default());
                t = step_target_ship(&t, 5.0);
                assert_abs_diff_eq!(compute_cpa(&o, &t).dcpa, d0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn body_frame_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let (o, t) = random_pair(&mut rng);
            let rot: f64 = rng.gen_range(-180.0..180.0);
            let (s, c) = rot.to_radians().sin_cos();
            // Rotating the world clockwise by `rot` adds `rot` to every heading.
            let turn = |x: f64, y: f64| (x * c + y * s, -x * s + y * c);
            let (ox, oy) = turn(o.x, o.y);
            let (tx, ty) = turn(t.x, t.y);
            let o2 = OwnShipState {
                x: ox,
                y: oy,
                psi: wrap_deg(o.psi + rot),
                ..o
            };
            let t2 = TargetShipState {
                x: tx,
                y: ty,
                course: wrap_deg(t.course + rot),
                ..t
            };
            let a = target_observation(&o, &t);
            let b = target_observation(&o2, &t2);
            for (u, v) in [
                (a.dx, b.dx),
                (a.dy, b.dy),
                (a.relv_x, b.relv_x),
                (a.relv_y, b.relv_y),
                (a.dist, b.dist),
                (a.dx_cpa, b.dx_cpa),
                (a.dy_cpa, b.dy_cpa),
                (a.dcpa, b.dcpa),
            ] {
                assert_abs_diff_eq!(u, v, epsilon = 1e-9);
            }
            assert_abs_diff_eq!(a.tcpa, b.tcpa, epsilon = 1e-6);
            let dth = wrap_deg(a.dtheta - b.dtheta);
            assert_abs_diff_eq!(dth, 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn history_warmup_and_rolling() {
        let t = TargetShipState {
            x: 1.0,
            y: 2.0,
            course: 0.0,
            speed: 0.004,
        };
        let frame = |y: f64| Frame::capture(&OwnShipState::new(0.0, y, 0.0, 0.005), &[t], (0.0, 46.3));
        let mut h = ObservationHistory::warm(frame(0.0), ObsScales::default());
        let s0 = h.stacked();
        assert_eq!(s0.wp.len(), WP_BLOCK);
        for k in 1..HISTORY_LEN {
            assert_eq!(s0.wp[..WP_FEATURES], s0.wp[k * WP_FEATURES..(k + 1) * WP_FEATURES]);
        }
        h.push(frame(0.1)).unwrap();
        let ys: Vec<f64> = h.frames().map(|f| f.waypoint.dy_wp).collect();
        assert_eq!(ys, vec![46.3, 46.3, 46.3, 46.3, 46.3 - 0.1]);
        for k in 2..10 {
            h.push(frame(0.1 * k as f64)).unwrap();
        }
        let ys: Vec<f64> = h.frames().map(|f| f.waypoint.dy_wp).collect();
        let expect: Vec<f64> = (5..10).map(|k| 46.3 - 0.1 * k as f64).collect();
        assert_eq!(ys, expect);
        assert!(h.push(Frame::capture(&own(0.0), &[], (0.0, 46.3))).is_err());
    }

    #[test]
    fn empty_ship_list_keeps_waypoint_block() {
        let h = ObservationHistory::warm(Frame::capture(&own(0.0), &[], (0.0, 46.3)), ObsScales::default());
        let s = h.stacked();
        assert!(s.ships.is_empty());
        assert_eq!(s.wp.len(), WP_BLOCK);
    }

    #[test]
    fn normalization_scales() {
        let sc = ObsScales::default();
        let w = sc.normalize_waypoint(&WaypointObs {
            dx_wp: 10.0,
            dy_wp: 0.0,
            dtheta_wp: 180.0,
        });
        assert_eq!(w, [1.0, 0.0, 1.0]);
    }

    proptest! {
        #[test]
        fn normalize_round_trip(v in proptest::array::uniform10(-1e3f64..1e3)) {
            let sc = ObsScales::default();
            let back = sc.normalize_target(&sc.denormalize_target(&v));
            for (a, b) in v.iter().zip(back.iter()) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }

        #[test]
        fn dcpa_bounded_by_range_when_ahead(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (o, t) = random_pair(&mut rng);
            let obs = target_observation(&o, &t);
            prop_assert!(obs.dist >= 0.0 && obs.dcpa >= 0.0);
            if obs.tcpa >= 0.0 {
                prop_assert!(obs.dcpa <= obs.dist + 1e-12);
            }
        }
    }
}

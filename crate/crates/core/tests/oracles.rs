//! Simulator pieces checked against independent reference computations.

use colav::dynamics::{step_own_ship, step_target_ship, NomotoParams, OwnShipState, TargetShipState};
use colav::observation::{compute_cpa, to_body};
use colav::reward::{collision_reward, danger_level, domain_axes, waypoint_reward};
use colav::scenario::{sample_target_draw, ScenarioConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Heading for a constant rudder from rest: `Kδ(t − T(1 − e^{−t/T}))`.
fn analytic_heading(k: f64, t_const: f64, delta: f64, t: f64) -> f64 {
    k * delta * (t - t_const * (1.0 - (-t / t_const).exp()))
}

#[test]
fn turn_rate_and_heading_follow_first_order_response() {
    let p = NomotoParams::default();
    let delta = 5.0;
    let mut s = OwnShipState::new(0.0, 0.0, 0.0, 0.005);
    let mut heading = 0.0f64;
    for step in 1..=240 {
        let before = s.psi;
        s = step_own_ship(&s, delta, 5.0, &p);
        // psi is wrapped; accumulate the unwrapped change.
        let mut d = s.psi - before;
        if d < -180.0 {
            d += 360.0;
        }
        heading += d;
        let t = 5.0 * step as f64;
        let r = p.gain_k * delta * (1.0 - (-t / p.time_const_t).exp());
        assert!(((s.r - r) / r).abs() <= 1e-6, "t = {t}: r = {} vs {r}", s.r);
        let h = analytic_heading(p.gain_k, p.time_const_t, delta, t);
        assert!((heading - h).abs() <= 1e-6 * h.max(1.0), "t = {t}: psi = {heading} vs {h}");
    }
}

#[test]
fn straight_run_moves_speed_times_time() {
    let p = NomotoParams::default();
    let mut s = OwnShipState::new(1.0, -2.0, 30.0, 0.006);
    for _ in 0..240 {
        s = step_own_ship(&s, 0.0, 5.0, &p);
    }
    let d = 0.006 * 1200.0;
    assert!((s.x - (1.0 + d * 30f64.to_radians().sin())).abs() < 1e-9);
    assert!((s.y - (-2.0 + d * 30f64.to_radians().cos())).abs() < 1e-9);
}

/// Minimum separation by marching both ships in 0.1 s steps.
fn march_cpa(own: &OwnShipState, tgt: &TargetShipState, span: f64) -> (f64, f64) {
    let (ovx, ovy) = own.velocity();
    let (tvx, tvy) = tgt.velocity();
    let n = (span / 0.1).ceil() as i64;
    let mut best = (f64::INFINITY, 0.0);
    for k in -n..=n {
        let t = 0.1 * k as f64;
        let dx = (tgt.x + tvx * t) - (own.x + ovx * t);
        let dy = (tgt.y + tvy * t) - (own.y + ovy * t);
        let d = dx.hypot(dy);
        if d < best.0 {
            best = (d, t);
        }
    }
    best
}

#[test]
fn cpa_matches_time_march() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    while checked < 300 {
        let own = OwnShipState::new(
            rng.gen_range(-5.0..5.0),
            rng.gen_range(-5.0..5.0),
            rng.gen_range(-180.0..180.0),
            rng.gen_range(0.0041..0.0062),
        );
        let tgt = TargetShipState {
            x: rng.gen_range(-15.0..15.0),
            y: rng.gen_range(-15.0..15.0),
            course: rng.gen_range(-180.0..180.0),
            speed: rng.gen_range(0.0041..0.0062),
        };
        let (ovx, ovy) = own.velocity();
        let (tvx, tvy) = tgt.velocity();
        let v = (tvx - ovx).hypot(tvy - ovy);
        if v < 0.002 {
            continue;
        }
        // |tcpa| ≤ distance / relative speed.
        let span = (tgt.x - own.x).hypot(tgt.y - own.y) / v + 1.0;
        let (d, t) = march_cpa(&own, &tgt, span);
        let cpa = compute_cpa(&own, &tgt);
        assert!((cpa.dcpa - d).abs() <= 1e-3, "dcpa {} vs {d}", cpa.dcpa);
        assert!((cpa.tcpa - t).abs() <= 0.5, "tcpa {} vs {t}", cpa.tcpa);
        // The body-frame CPA vector is the rotated world-frame one.
        let t_exact = cpa.tcpa;
        let dx = (tgt.x + tvx * t_exact) - (own.x + ovx * t_exact);
        let dy = (tgt.y + tvy * t_exact) - (own.y + ovy * t_exact);
        let (bx, by) = to_body(dx, dy, own.psi);
        assert!((bx - cpa.dx_cpa).abs() < 1e-9 && (by - cpa.dy_cpa).abs() < 1e-9);
        checked += 1;
    }
}

#[test]
fn noiseless_targets_meet_own_ship_at_collision_time() {
    let cfg = ScenarioConfig::default().without_noise();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..500 {
        let own = OwnShipState::new(
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-180.0..180.0),
            rng.gen_range(0.0041..0.0062),
        );
        let d = sample_target_draw(&mut rng, &own, &cfg);
        let (ovx, ovy) = own.velocity();
        let tgt = step_target_ship(&d.ship, d.t_col);
        let (ox, oy) = (own.x + ovx * d.t_col, own.y + ovy * d.t_col);
        assert!((tgt.x - ox).hypot(tgt.y - oy) <= 1e-9);
    }
}

#[test]
fn reward_reference_values() {
    assert_eq!(danger_level(0.0, 0.0, 0.34), 1.0);
    // -0.5·0.5 - 0.1 while the danger is falling, -0.5 - 0.5 while rising.
    assert_eq!(collision_reward(0.5, 0.6), -0.35);
    assert_eq!(collision_reward(0.5, 0.4), -1.0);
    assert_eq!(waypoint_reward(0.0), 0.2);
    approx::assert_relative_eq!(waypoint_reward(180.0), 0.18 * (-4.5f64).exp(), max_relative = 1e-15);
}

proptest! {
    #[test]
    fn danger_is_zero_on_the_domain_boundary(theta in -180.0f64..180.0) {
        let loa = 0.34;
        let (sx, sy) = theta.to_radians().sin_cos();
        let (a, b) = domain_axes(sx, sy, loa);
        let (x, y) = (a * sx, b * sy);
        prop_assert!(danger_level(x, y, loa).abs() <= 1e-12);
    }

    #[test]
    fn danger_is_bounded_and_falls_with_distance(theta in -180.0f64..180.0, r in 0.0f64..3.0) {
        let (sx, sy) = theta.to_radians().sin_cos();
        let near = danger_level(r * sx, r * sy, 0.34);
        let far = danger_level((r + 0.1) * sx, (r + 0.1) * sy, 0.34);
        prop_assert!((0.0..=1.0).contains(&near));
        prop_assert!(far <= near);
    }

    #[test]
    fn waypoint_reward_is_even_and_peaks_ahead(d in 0.0f64..180.0) {
        prop_assert_eq!(waypoint_reward(d), waypoint_reward(-d));
        prop_assert!(waypoint_reward(d) <= waypoint_reward(0.0));
    }
}

//! Ship-domain danger index and the per-step reward terms.

use serde::{Deserialize, Serialize};

use crate::dynamics::{OwnShipState, TargetShipState};
use crate::observation::to_body;

/// Elliptical exclusive area around the own ship, sized from its length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShipDomain {
    /// Overall length [km].
    pub loa: f64,
}

impl Default for ShipDomain {
    fn default() -> Self {
        Self { loa: 0.34 }
    }
}

impl ShipDomain {
    pub fn axes(&self, dx_body: f64, dy_body: f64) -> (f64, f64) {
        domain_axes(dx_body, dy_body, self.loa)
    }

    pub fn danger(&self, dx_body: f64, dy_body: f64) -> f64 {
        danger_level(dx_body, dy_body, self.loa)
    }

    /// Danger posed by a point target at its current position.
    pub fn danger_of(&self, own: &OwnShipState, target: &TargetShipState) -> f64 {
        let (dx, dy) = to_body(target.x - own.x, target.y - own.y, own.psi);
        self.danger(dx, dy)
    }
}

/// Semi-axes `(ax_x, ax_y)` of the quadrant containing `(dx, dy)`.
/// Starboard and ahead are the `>= 0` sides.
pub fn domain_axes(dx_body: f64, dy_body: f64, loa: f64) -> (f64, f64) {
    let ax_x = if dx_body >= 0.0 { 3.2 * loa } else { 1.6 * loa };
    let ax_y = if dy_body >= 0.0 { 6.4 * loa } else { 1.6 * loa };
    (ax_x, ax_y)
}

/// Penetration depth of a point into the domain: 1 at the centre, 0 on and
/// outside the boundary.
pub fn danger_level(dx_body: f64, dy_body: f64, loa: f64) -> f64 {
    let (ax, ay) = domain_axes(dx_body, dy_body, loa);
    let u = dx_body / ax;
    let v = dy_body / ay;
    (1.0 - (u * u + v * v).sqrt()).max(0.0)
}

pub fn collision_reward(cr_t: f64, cr_prev: f64) -> f64 {
    if cr_t == 0.0 {
        0.0
    } else if cr_t <= cr_prev {
        -0.5 * cr_t - 0.1
    } else {
        -1.0 * cr_t - 0.5
    }
}

/// Heading-alignment reward, largest (0.20) when the waypoint is dead ahead.
pub fn waypoint_reward(dtheta_wp: f64) -> f64 {
    let g = dtheta_wp / 60.0;
    0.20 * (0.9 * (-(g * g) / 2.0).exp() + 0.1 * (1.0 - dtheta_wp.abs() / 180.0))
}

/// Reward for reducing the bearing error, paid only while no ship is inside
/// the domain. Zero when the previous bearing error was already zero.
pub fn waypoint_progress_reward(dtheta_prev: f64, dtheta_t: f64, sum_cr: f64) -> f64 {
    if sum_cr > 0.0 {
        return 0.0;
    }
    let prev = dtheta_prev.abs();
    if prev == 0.0 {
        return 0.0;
    }
    let ratio = (prev - dtheta_t.abs()) / prev.min(10.0);
    0.050 * ratio.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_oth: Vec<f64>,
    pub r_wp: f64,
    pub r_dwp: f64,
    pub total: f64,
    /// Danger level of each ship at this step.
    pub cr: Vec<f64>,
}

impl RewardBreakdown {
    /// Sums the components in the canonical order used for `total`.
    pub fn sum_components(r_oth: &[f64], r_wp: f64, r_dwp: f64) -> f64 {
        let collision: f64 = r_oth.iter().sum();
        collision + r_wp + r_dwp
    }

    pub fn sum_cr(&self) -> f64 {
        self.cr.iter().sum()
    }
}

/// Reward for arriving in the state `(own, targets)` whose waypoint bearing
/// is `dtheta_t`, given last step's danger levels and bearing.
pub fn total_reward(
    own: &OwnShipState,
    targets: &[TargetShipState],
    dtheta_t: f64,
    cr_prev: &[f64],
    dtheta_prev: f64,
    domain: &ShipDomain,
) -> RewardBreakdown {
    debug_assert_eq!(targets.len(), cr_prev.len());
    let cr: Vec<f64> = targets.iter().map(|t| domain.danger_of(own, t)).collect();
    let r_oth: Vec<f64> = cr
        .iter()
        .zip(cr_prev)
        .map(|(&now, &prev)| collision_reward(now, prev))
        .collect();
    let sum_cr: f64 = cr.iter().sum();
    let r_wp = waypoint_reward(dtheta_t);
    let r_dwp = waypoint_progress_reward(dtheta_prev, dtheta_t, sum_cr);
    let total = RewardBreakdown::sum_components(&r_oth, r_wp, r_dwp);
    RewardBreakdown {
        r_oth,
        r_wp,
        r_dwp,
        total,
        cr,
    }
}

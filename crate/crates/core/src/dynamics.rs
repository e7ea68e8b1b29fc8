//! Ship motion under Nomoto's first-order steering model.
//!
//! The own ship obeys `T·ṙ + r = K·δ` with kinematics `ẋ = U sin ψ`,
//! `ẏ = U cos ψ`, `ψ̇ = r`. Headings are degrees, clockwise from north (+y).
//! Positions are kilometres, speeds km/s, time seconds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest rudder deflection the controller may command, in degrees.
pub const MAX_RUDDER_DEG: f64 = 5.0;

/// Integrator substep inside one control interval, in seconds.
pub const SUBSTEP_S: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OwnShipState {
    /// East [km].
    pub x: f64,
    /// North [km].
    pub y: f64,
    /// Heading [deg], in [-180, 180).
    pub psi: f64,
    /// Rate of turn [deg/s].
    pub r: f64,
    /// Rudder angle currently applied [deg].
    pub delta: f64,
    /// Speed over ground [km/s].
    pub speed_u: f64,
}

impl OwnShipState {
    pub fn new(x: f64, y: f64, psi: f64, speed_u: f64) -> Self {
        Self {
            x,
            y,
            psi,
            r: 0.0,
            delta: 0.0,
            speed_u,
        }
    }

    /// World-frame velocity `(east, north)` in km/s.
    pub fn velocity(&self) -> (f64, f64) {
        let (s, c) = self.psi.to_radians().sin_cos();
        (self.speed_u * s, self.speed_u * c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NomotoParams {
    /// Gain K [1/s].
    pub gain_k: f64,
    /// Time constant T [s].
    pub time_const_t: f64,
}

impl Default for NomotoParams {
    fn default() -> Self {
        Self {
            gain_k: 0.05,
            time_const_t: 30.0,
        }
    }
}

impl NomotoParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gain_k > 0.0 && self.gain_k.is_finite()) {
            return Err(Error::config("nomoto.gain_k", "must be positive"));
        }
        if !(self.time_const_t > 0.0 && self.time_const_t.is_finite()) {
            return Err(Error::config("nomoto.time_const_t", "must be positive"));
        }
        Ok(())
    }
}

/// An other ship holding course and speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetShipState {
    pub x: f64,
    pub y: f64,
    /// Course over ground [deg], in [-180, 180).
    pub course: f64,
    /// Speed over ground [km/s].
    pub speed: f64,
}

impl TargetShipState {
    pub fn velocity(&self) -> (f64, f64) {
        let (s, c) = self.course.to_radians().sin_cos();
        (self.speed * s, self.speed * c)
    }
}

/// Wraps an angle in degrees into `[-180, 180)`.
pub fn wrap_angle(theta: f64) -> Result<f64> {
    if !theta.is_finite() {
        return Err(Error::NonFiniteAngle(theta));
    }
    Ok(wrap_deg(theta))
}

/// Unchecked variant of [`wrap_angle`] for values already known finite.
pub(crate) fn wrap_deg(theta: f64) -> f64 {
    let mut w = (theta + 180.0).rem_euclid(360.0) - 180.0;
    // rem_euclid can round up to exactly 360 for tiny negative inputs.
    if w >= 180.0 {
        w -= 360.0;
    }
    w
}

/// Angular acceleration `ṙ = (K·δ − r) / T` in deg/s².
pub fn rate_of_turn_derivative(state: &OwnShipState, delta_cmd: f64, params: &NomotoParams) -> f64 {
    (params.gain_k * delta_cmd - state.r) / params.time_const_t
}

#[derive(Clone, Copy)]
struct Kinematic {
    x: f64,
    y: f64,
    psi: f64,
    r: f64,
}

impl Kinematic {
    fn deriv(&self, speed: f64, delta: f64, p: &NomotoParams) -> Kinematic {
        let (s, c) = self.psi.to_radians().sin_cos();
        Kinematic {
            x: speed * s,
            y: speed * c,
            psi: self.r,
            r: (p.gain_k * delta - self.r) / p.time_const_t,
        }
    }

    fn add_scaled(&self, d: &Kinematic, h: f64) -> Kinematic {
        Kinematic {
            x: self.x + h * d.x,
            y: self.y + h * d.y,
            psi: self.psi + h * d.psi,
            r: self.r + h * d.r,
        }
    }
}

/// Advances the own ship by `dt` seconds holding `delta_cmd` constant.
///
/// Uses classical RK4 with substeps of at most [`SUBSTEP_S`]. The rudder
/// takes the commanded value instantly.
pub fn step_own_ship(
    state: &OwnShipState,
    delta_cmd: f64,
    dt: f64,
    params: &NomotoParams,
) -> OwnShipState {
    let n = (dt / SUBSTEP_S).ceil().max(1.0) as usize;
    let h = dt / n as f64;
    let speed = state.speed_u;
    let mut k = Kinematic {
        x: state.x,
        y: state.y,
        psi: state.psi,
        r: state.r,
    };
    for _ in 0..n {
        let k1 = k.deriv(speed, delta_cmd, params);
        let k2 = k.add_scaled(&k1, h / 2.0).deriv(speed, delta_cmd, params);
        let k3 = k.add_scaled(&k2, h / 2.0).deriv(speed, delta_cmd, params);
        let k4 = k.add_scaled(&k3, h).deriv(speed, delta_cmd, params);
        k = Kinematic {
            x: k.x + h / 6.0 * (k1.x + 2.0 * k2.x + 2.0 * k3.x + k4.x),
            y: k.y + h / 6.0 * (k1.y + 2.0 * k2.y + 2.0 * k3.y + k4.y),
            psi: k.psi + h / 6.0 * (k1.psi + 2.0 * k2.psi + 2.0 * k3.psi + k4.psi),
            r: k.r + h / 6.0 * (k1.r + 2.0 * k2.r + 2.0 * k3.r + k4.r),
        };
    }
    OwnShipState {
        x: k.x,
        y: k.y,
        psi: wrap_deg(k.psi),
        r: k.r,
        delta: delta_cmd,
        speed_u: speed,
    }
}

pub fn step_target_ship(state: &TargetShipState, dt: f64) -> TargetShipState {
    let (vx, vy) = state.velocity();
    TargetShipState {
        x: state.x + vx * dt,
        y: state.y + vy * dt,
        ..*state
    }
}

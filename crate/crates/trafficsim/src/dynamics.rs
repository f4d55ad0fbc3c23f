//! Kinematic bicycle model: forward-Euler transition and its analytic
//! Jacobians. `(x, y)` is the center of the rear axle; `theta` is kept
//! unwrapped so gradients stay smooth across multi-turn rollouts.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{OrientedBox, Vec2};
use crate::tape::Real;

/// Simulation and policy tick length in seconds.
pub const DEFAULT_DT: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum DynamicsError {
    #[error("non-finite state or action input")]
    NonFinite,
    #[error("steering angle {0} outside (-pi/2, pi/2)")]
    SteerOutOfRange(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentKinematicState {
    pub x: f64,
    pub y: f64,
    /// Yaw, radians, unwrapped.
    pub theta: f64,
    /// Forward speed, m/s, never negative.
    pub v: f64,
    /// Rear-to-front axle distance, m.
    pub wheelbase: f64,
    pub box_length: f64,
    pub box_width: f64,
}

impl AgentKinematicState {
    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite() && self.v.is_finite()
    }

    /// Agent footprint. The box center sits half a wheelbase ahead of the
    /// rear axle (axles symmetric within the box).
    pub fn bounding_box(&self) -> OrientedBox {
        let (s, c) = self.theta.sin_cos();
        let center = Vec2::new(
            self.x + 0.5 * self.wheelbase * c,
            self.y + 0.5 * self.wheelbase * s,
        );
        OrientedBox {
            center,
            heading: self.theta,
            half_length: 0.5 * self.box_length,
            half_width: 0.5 * self.box_width,
        }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentAction {
    /// Longitudinal acceleration, m/s^2.
    pub accel: f64,
    /// Steering angle, rad, |steer| < pi/2.
    pub steer: f64,
}

impl AgentAction {
    pub const ZERO: AgentAction = AgentAction {
        accel: 0.0,
        steer: 0.0,
    };
}

/// Configured actuation limits. The paper-facing dynamics do not constrain
/// actions; these bounds are applied wherever actions are produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionBounds {
    pub max_accel: f64,
    pub max_steer: f64,
}

impl Default for ActionBounds {
    fn default() -> Self {
        ActionBounds {
            max_accel: 6.0,
            max_steer: 0.45,
        }
    }
}

impl ActionBounds {
    pub fn clip(&self, a: AgentAction) -> (AgentAction, bool) {
        let accel = a.accel.clamp(-self.max_accel, self.max_accel);
        let steer = a.steer.clamp(-self.max_steer, self.max_steer);
        let clipped = accel != a.accel || steer != a.steer;
        (AgentAction { accel, steer }, clipped)
    }
}

/// Result of one forward-Euler step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BicycleStep {
    pub state: AgentKinematicState,
    /// True iff the updated speed was clamped at zero (no reverse driving);
    /// Jacobian rows touched by the clamp are zeroed to match.
    pub velocity_clamped: bool,
}

/// Generic forward-Euler bicycle update over `[x, y, theta, v]`.
/// The speed clamp records a zero partial on the clamped branch.
pub fn bicycle_kinematics<R: Real>(
    x: R,
    y: R,
    theta: R,
    v: R,
    accel: R,
    steer: R,
    wheelbase: f64,
    dt: f64,
) -> [R; 4] {
    let dt_l = x.lit(dt);
    let nx = v * theta.cos() * dt_l + x;
    let ny = v * theta.sin() * dt_l + y;
    let ntheta = v * steer.tan() * x.lit(dt / wheelbase) + theta;
    let nv = (accel * dt_l + v).max_c(0.0);
    [nx, ny, ntheta, nv]
}

/// One bicycle step on plain floats.
pub fn bicycle_step(
    s: &AgentKinematicState,
    a: &AgentAction,
    dt: f64,
) -> Result<BicycleStep, DynamicsError> {
    if !s.is_finite() || !a.accel.is_finite() || !a.steer.is_finite() {
        return Err(DynamicsError::NonFinite);
    }
    let [x, y, theta, v] =
        bicycle_kinematics(s.x, s.y, s.theta, s.v, a.accel, a.steer, s.wheelbase, dt);
    let velocity_clamped = s.v + a.accel * dt < 0.0;
    Ok(BicycleStep {
        state: AgentKinematicState {
            x,
            y,
            theta,
            v,
            ..*s
        },
        velocity_clamped,
    })
}

/// Exact partial derivatives of the forward-Euler map, evaluated at the
/// pre-clamp state. Row/column order is `(x, y, theta, v)`; action columns
/// are `(accel, steer)`. When the speed clamp fires, its row is zeroed.
pub fn bicycle_jacobians(
    s: &AgentKinematicState,
    a: &AgentAction,
    dt: f64,
) -> Result<([[f64; 4]; 4], [[f64; 2]; 4]), DynamicsError> {
    if !s.is_finite() || !a.accel.is_finite() || !a.steer.is_finite() {
        return Err(DynamicsError::NonFinite);
    }
    if a.steer.abs() >= std::f64::consts::FRAC_PI_2 {
        return Err(DynamicsError::SteerOutOfRange(a.steer));
    }
    let (sin_t, cos_t) = s.theta.sin_cos();
    let cos_phi = a.steer.cos();
    let sec2 = 1.0 / (cos_phi * cos_phi);
    let l = s.wheelbase;

    let mut ds = [
        [1.0, 0.0, -s.v * sin_t * dt, cos_t * dt],
        [0.0, 1.0, s.v * cos_t * dt, sin_t * dt],
        [0.0, 0.0, 1.0, a.steer.tan() * dt / l],
        [0.0, 0.0, 0.0, 1.0],
    ];
    let mut da = [
        [0.0, 0.0],
        [0.0, 0.0],
        [0.0, s.v * dt / l * sec2],
        [dt, 0.0],
    ];
    if s.v + a.accel * dt < 0.0 {
        ds[3] = [0.0; 4];
        da[3] = [0.0; 2];
    }
    Ok((ds, da))
}

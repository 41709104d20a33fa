//! Two-layer Lyapunov tracking controller.
//!
//! The outer layer converts the task-space tracking error into a desired
//! body-velocity profile `q_d`; the inner layer computes wheel torques that
//! drive `q` to `q_d` while feeding the pose error back through the
//! transposed kinematics. With positive gains the combined error
//! `V = 0.5 ||q - q_d||^2 + 0.5 ||e||^2` decays along the noise-free closed
//! loop at the rate `-k_q ||q_tilde||^2 - k_e ||e_z||^2`.

use nalgebra::Vector2;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::robot::{
    c_inverse, c_inverse_dot, c_matrix, damping_matrix, input_matrix, mass_matrix, BodyState,
    Pose, RobotParams,
};

/// One sample of the reference trajectory with derivatives up to second
/// order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceSample {
    /// Desired heading (rad), continuous in `t` (no wrap jumps) for the
    /// circle and line shapes.
    pub theta_d: f64,
    /// Desired position (m).
    pub z_d: Vector2<f64>,
    /// Desired velocity (m/s).
    pub z_d_dot: Vector2<f64>,
    /// Desired acceleration (m/s^2).
    pub z_d_ddot: Vector2<f64>,
    /// Desired heading rate (rad/s).
    pub omega_d: f64,
}

/// Positive scalar gains of the two layers.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlGains {
    pub k_q: f64,
    pub k_e: f64,
}

impl ControlGains {
    pub fn new(k_q: f64, k_e: f64) -> Result<Self> {
        let g = Self { k_q, k_e };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k_q > 0.0 && self.k_q.is_finite()) || !(self.k_e > 0.0 && self.k_e.is_finite())
        {
            return Err(Error::InvalidParameter(format!(
                "control gains must be strictly positive, got k_q={}, k_e={}",
                self.k_q, self.k_e
            )));
        }
        Ok(())
    }
}

impl Default for ControlGains {
    fn default() -> Self {
        Self { k_q: 10.0, k_e: 10.0 }
    }
}

/// Heading and position tracking error. The heading component is left
/// unwrapped; references are generated with continuous heading so no 2*pi
/// jumps reach the controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingError {
    pub e_theta: f64,
    pub e_z: Vector2<f64>,
}

impl TrackingError {
    pub fn norm(&self) -> f64 {
        (self.e_theta * self.e_theta + self.e_z.norm_squared()).sqrt()
    }
}

/// Componentwise error between the (estimated) state and the reference.
pub fn tracking_error(
    state: &BodyState,
    pose: &Pose,
    reference: &ReferenceSample,
) -> TrackingError {
    TrackingError {
        e_theta: state.theta - reference.theta_d,
        e_z: pose.z - reference.z_d,
    }
}

/// Desired body velocities and their time derivative.
///
/// `q_d = C(theta)^-1 (z_d_dot - k_e e_z)`; its derivative is evaluated along
/// the actual motion, so the current `q` appears as a feedback term.
pub fn desired_velocity(
    state: &BodyState,
    e_z: &Vector2<f64>,
    reference: &ReferenceSample,
    gains: &ControlGains,
    params: &RobotParams,
) -> (Vector2<f64>, Vector2<f64>) {
    let c_inv = c_inverse(state.theta, params);
    let c_inv_dot = c_inverse_dot(state.theta, state.omega(), params);
    let c = c_matrix(state.theta, params);
    let q_d = c_inv * (reference.z_d_dot - gains.k_e * e_z);
    let q_d_dot = -gains.k_e * (c_inv_dot * e_z + state.q)
        + c_inv
            * (reference.z_d_ddot
                + gains.k_e * reference.z_d_dot
                + c * c_inv_dot * reference.z_d_dot);
    (q_d, q_d_dot)
}

/// Wheel torques `tau = B^-1 (M u + D q)` with
/// `u = -k_q (q - q_d) + q_d_dot - C_bar(theta)^T e`.
pub fn control_torque(
    state: &BodyState,
    pose: &Pose,
    reference: &ReferenceSample,
    gains: &ControlGains,
    params: &RobotParams,
) -> Vector2<f64> {
    let err = tracking_error(state, pose, reference);
    let (q_d, q_d_dot) = desired_velocity(state, &err.e_z, reference, gains, params);
    let c = c_matrix(state.theta, params);
    // C_bar^T e = [(C^T e_z)_1, e_theta + (C^T e_z)_2]
    let ct_ez = c.transpose() * err.e_z;
    let coupling = Vector2::new(ct_ez[0], err.e_theta + ct_ez[1]);
    let u = -gains.k_q * (state.q - q_d) + q_d_dot - coupling;
    let m = mass_matrix(params);
    let d = damping_matrix(params, state.omega());
    let b_inv = input_matrix(params)
        .try_inverse()
        .expect("input matrix is invertible for positive r, L");
    b_inv * (m * u + d * state.q)
}

/// Lyapunov candidate `0.5 ||q_tilde||^2 + 0.5 ||e||^2`.
pub fn lyapunov_value(q_tilde: &Vector2<f64>, err: &TrackingError) -> f64 {
    0.5 * q_tilde.norm_squared() + 0.5 * (err.e_theta * err.e_theta + err.e_z.norm_squared())
}

/// Closed-form decay rate `-k_q ||q_tilde||^2 - k_e ||e_z||^2`.
pub fn lyapunov_rate(gains: &ControlGains, q_tilde: &Vector2<f64>, e_z: &Vector2<f64>) -> f64 {
    -gains.k_q * q_tilde.norm_squared() - gains.k_e * e_z.norm_squared()
}

/// Built-in analytic reference shapes.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TrajectoryKind {
    /// Circle of given radius traversed at constant angular rate (rad/s).
    Circle { radius: f64, rate: f64 },
    /// Figure-eight `[rho sin(w t), 0.5 rho sin(2 w t)]`.
    Lemniscate { radius: f64, rate: f64 },
    /// Straight line from `start` with constant velocity.
    Line { start: [f64; 2], velocity: [f64; 2] },
}

impl TrajectoryKind {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            TrajectoryKind::Circle { radius, rate }
            | TrajectoryKind::Lemniscate { radius, rate } => {
                radius.is_finite() && *radius > 0.0 && rate.is_finite() && *rate != 0.0
            }
            TrajectoryKind::Line { start, velocity } => {
                start.iter().chain(velocity.iter()).all(|v| v.is_finite())
                    && (velocity[0] != 0.0 || velocity[1] != 0.0)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "invalid trajectory parameters: {self:?}"
            )))
        }
    }

    /// Sample the reference at time `t`.
    ///
    /// For the circle and the line the returned heading is continuous in
    /// `t`; the lemniscate heading comes from `atan2` and wraps, so
    /// sequential consumers should unwrap it (see [`unwrap_angle`]).
    pub fn sample(&self, t: f64) -> ReferenceSample {
        match *self {
            TrajectoryKind::Circle { radius, rate } => {
                let (s, c) = (rate * t).sin_cos();
                ReferenceSample {
                    theta_d: rate * t + std::f64::consts::FRAC_PI_2 * rate.signum(),
                    z_d: Vector2::new(radius * c, radius * s),
                    z_d_dot: Vector2::new(-radius * rate * s, radius * rate * c),
                    z_d_ddot: Vector2::new(-radius * rate * rate * c, -radius * rate * rate * s),
                    omega_d: rate,
                }
            }
            TrajectoryKind::Lemniscate { radius, rate } => {
                let w = rate;
                let (s1, c1) = (w * t).sin_cos();
                let (s2, c2) = (2.0 * w * t).sin_cos();
                let z_d_dot = Vector2::new(radius * w * c1, radius * w * c2);
                let z_d_ddot =
                    Vector2::new(-radius * w * w * s1, -2.0 * radius * w * w * s2);
                // Heading rate (x_dot y_ddot - y_dot x_ddot) / speed^2; the
                // figure-eight speed never vanishes.
                let omega_d = (z_d_dot[0] * z_d_ddot[1] - z_d_dot[1] * z_d_ddot[0])
                    / z_d_dot.norm_squared();
                ReferenceSample {
                    theta_d: z_d_dot[1].atan2(z_d_dot[0]),
                    z_d: Vector2::new(radius * s1, 0.5 * radius * s2),
                    z_d_dot,
                    z_d_ddot,
                    omega_d,
                }
            }
            TrajectoryKind::Line { start, velocity } => {
                let v = Vector2::new(velocity[0], velocity[1]);
                ReferenceSample {
                    theta_d: v[1].atan2(v[0]),
                    z_d: Vector2::new(start[0], start[1]) + v * t,
                    z_d_dot: v,
                    z_d_ddot: Vector2::zeros(),
                    omega_d: 0.0,
                }
            }
        }
    }
}

/// Shift `raw` by the multiple of 2*pi that brings it closest to `previous`.
/// Used to keep sampled reference headings continuous across wrap points.
pub fn unwrap_angle(previous: f64, raw: f64) -> f64 {
    raw + std::f64::consts::TAU * ((previous - raw) / std::f64::consts::TAU).round()
}

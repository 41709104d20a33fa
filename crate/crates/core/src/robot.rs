//! Differential-drive robot dynamics and kinematics.
//!
//! The plant state splits into the heading `theta`, the generalized body
//! velocities `q = [v, omega]` and the planar position `z = [x, y]`. Body
//! velocities follow a rigid-body model driven by wheel torques; the pose
//! follows the nonholonomic kinematics `[theta_dot; z_dot] = C_bar(theta) q`.
//! Every matrix that depends on the robot geometry is defined here so the
//! controller, the measurement model and the filter share one source.

use nalgebra::{Matrix2, Vector2, Vector3};

use crate::error::{Error, Result};

/// Physical parameters of the robot.
#[derive(Debug, Clone, Copy, PartialEq, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotParams {
    /// Mass (kg).
    pub mass: f64,
    /// Yaw inertia (kg m^2).
    pub inertia: f64,
    /// Offset of the body center from the wheel axle (m). Must be strictly
    /// positive: the kinematic matrix has determinant equal to this offset
    /// and is inverted by the controller.
    pub offset: f64,
    /// Wheel radius (m).
    pub wheel_radius: f64,
    /// Half wheel-base (m).
    pub half_wheelbase: f64,
}

impl RobotParams {
    pub fn new(
        mass: f64,
        inertia: f64,
        offset: f64,
        wheel_radius: f64,
        half_wheelbase: f64,
    ) -> Result<Self> {
        let p = Self {
            mass,
            inertia,
            offset,
            wheel_radius,
            half_wheelbase,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.mass, "mass"),
            (self.inertia, "inertia"),
            (self.offset, "offset"),
            (self.wheel_radius, "wheel_radius"),
            (self.half_wheelbase, "half_wheelbase"),
        ];
        for (value, name) in checks {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be strictly positive, got {value}"
                )));
            }
        }
        Ok(())
    }
}

/// Plausible small indoor robot; all values can be overridden in the
/// scenario configuration.
impl Default for RobotParams {
    fn default() -> Self {
        Self {
            mass: 10.0,
            inertia: 0.5,
            offset: 0.1,
            wheel_radius: 0.05,
            half_wheelbase: 0.2,
        }
    }
}

/// Heading plus generalized body velocities `q = [v, omega]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyState {
    /// Heading (rad).
    pub theta: f64,
    /// `[v (m/s), omega (rad/s)]`.
    pub q: Vector2<f64>,
}

impl BodyState {
    pub fn new(theta: f64, v: f64, omega: f64) -> Self {
        Self {
            theta,
            q: Vector2::new(v, omega),
        }
    }

    pub fn v(&self) -> f64 {
        self.q[0]
    }

    pub fn omega(&self) -> f64 {
        self.q[1]
    }

    /// Full estimator state `[theta, v, omega]`.
    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.theta, self.q[0], self.q[1])
    }

    pub fn from_vector(x: &Vector3<f64>) -> Self {
        Self::new(x[0], x[1], x[2])
    }

    pub fn is_finite(&self) -> bool {
        self.theta.is_finite() && self.q.iter().all(|v| v.is_finite())
    }
}

/// Planar position of the body center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    /// `[x (m), y (m)]`.
    pub z: Vector2<f64>,
}

impl Pose {
    pub fn new(x: f64, y: f64) -> Self {
        Self {
            z: Vector2::new(x, y),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.z.iter().all(|v| v.is_finite())
    }
}

/// Covariance of the additive noise on the body-velocity derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProcessNoise {
    pub cov: Matrix2<f64>,
}

impl ProcessNoise {
    pub fn new(cov: Matrix2<f64>) -> Result<Self> {
        if (cov - cov.transpose()).norm() > 1e-12 * (1.0 + cov.norm()) {
            return Err(Error::InvalidParameter(
                "process covariance must be symmetric".into(),
            ));
        }
        // PSD check via eigenvalues of the symmetrized matrix.
        let sym = (cov + cov.transpose()) * 0.5;
        let eig = nalgebra::SymmetricEigen::new(sym);
        if eig.eigenvalues.iter().any(|&l| l < -1e-12) {
            return Err(Error::InvalidParameter(
                "process covariance must be positive semi-definite".into(),
            ));
        }
        Ok(Self { cov })
    }

    pub fn from_std(std: [f64; 2]) -> Result<Self> {
        if std.iter().any(|s| *s < 0.0 || !s.is_finite()) {
            return Err(Error::InvalidParameter(
                "process noise std must be finite and non-negative".into(),
            ));
        }
        Ok(Self {
            cov: Matrix2::from_diagonal(&Vector2::new(std[0] * std[0], std[1] * std[1])),
        })
    }

    pub fn zero() -> Self {
        Self {
            cov: Matrix2::zeros(),
        }
    }
}

/// Inertia matrix `M = diag(m, m d^2 + J)`.
pub fn mass_matrix(params: &RobotParams) -> Matrix2<f64> {
    Matrix2::new(
        params.mass,
        0.0,
        0.0,
        params.mass * params.offset * params.offset + params.inertia,
    )
}

/// Velocity-coupling matrix; vanishes at `omega = 0`.
pub fn damping_matrix(params: &RobotParams, omega: f64) -> Matrix2<f64> {
    let md = params.mass * params.offset;
    Matrix2::new(0.0, -md * omega, md * omega, 0.0)
}

/// Torque input matrix `B = (1/r) [[1, 1], [L, -L]]`.
pub fn input_matrix(params: &RobotParams) -> Matrix2<f64> {
    let r = params.wheel_radius;
    let l = params.half_wheelbase;
    Matrix2::new(1.0 / r, 1.0 / r, l / r, -l / r)
}

/// Kinematic matrix `C(theta)`; `det C = offset` for every heading.
pub fn c_matrix(theta: f64, params: &RobotParams) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    let d = params.offset;
    Matrix2::new(c, -d * s, s, d * c)
}

/// Exact analytic inverse of `C(theta)`.
pub fn c_inverse(theta: f64, params: &RobotParams) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    let d = params.offset;
    Matrix2::new(c, s, -s / d, c / d)
}

/// Time derivative of `C(theta)^-1` along a trajectory with heading rate
/// `omega`.
pub fn c_inverse_dot(theta: f64, omega: f64, params: &RobotParams) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    let d = params.offset;
    Matrix2::new(-s, c, -c / d, -s / d) * omega
}

/// Body-velocity derivative `M^-1 (-D(omega) q + B tau)`, noise-free.
pub fn dynamics_rhs(state: &BodyState, tau: &Vector2<f64>, params: &RobotParams) -> Vector2<f64> {
    let m = mass_matrix(params);
    let d = damping_matrix(params, state.omega());
    let b = input_matrix(params);
    let rhs = -d * state.q + b * tau;
    Vector2::new(rhs[0] / m[(0, 0)], rhs[1] / m[(1, 1)])
}

/// Pose-side derivative `[theta_dot; z_dot] = C_bar(theta) q`.
pub fn kinematics_rhs(theta: f64, q: &Vector2<f64>, params: &RobotParams) -> Vector3<f64> {
    let z_dot = c_matrix(theta, params) * q;
    Vector3::new(q[1], z_dot[0], z_dot[1])
}

/// One forward-Euler step of the estimator state `[theta, v, omega]`,
/// noise-free. Shared by the plant stepper, the filter prediction, the
/// monitor and the attack linearization.
pub fn discrete_dynamics(
    x: &Vector3<f64>,
    tau: &Vector2<f64>,
    dt: f64,
    params: &RobotParams,
) -> Vector3<f64> {
    let state = BodyState::from_vector(x);
    let q_dot = dynamics_rhs(&state, tau, params);
    Vector3::new(
        x[0] + dt * x[2],
        x[1] + dt * q_dot[0],
        x[2] + dt * q_dot[1],
    )
}

/// Forward-Euler step of the full plant. `noise_sample` is a draw of the
/// velocity disturbance `w`; it enters as `w * dt` on `q` only, the pose
/// kinematics stay noise-free. Deterministic given the sample.
pub fn step(
    state: &BodyState,
    pose: &Pose,
    tau: &Vector2<f64>,
    dt: f64,
    noise_sample: &Vector2<f64>,
    params: &RobotParams,
) -> Result<(BodyState, Pose)> {
    debug_assert!(dt > 0.0);
    let q_dot = dynamics_rhs(state, tau, params);
    let kin = kinematics_rhs(state.theta, &state.q, params);
    let next = BodyState {
        theta: state.theta + dt * kin[0],
        q: state.q + dt * (q_dot + noise_sample),
    };
    let next_pose = Pose {
        z: pose.z + dt * Vector2::new(kin[1], kin[2]),
    };
    if !next.is_finite() || !next_pose.is_finite() {
        return Err(Error::NonFinite {
            step: 0,
            what: "plant state after Euler step",
        });
    }
    Ok((next, next_pose))
}

/// Classical fourth-order Runge-Kutta step of the noise-free plant.
/// Reference integrator for accuracy checks; the simulation itself uses
/// forward Euler.
pub fn rk4_step(
    state: &BodyState,
    pose: &Pose,
    tau: &Vector2<f64>,
    dt: f64,
    params: &RobotParams,
) -> (BodyState, Pose) {
    // Full 5-state derivative [theta_dot, v_dot, omega_dot, x_dot, y_dot].
    let deriv = |theta: f64, q: &Vector2<f64>| -> [f64; 5] {
        let s = BodyState { theta, q: *q };
        let qd = dynamics_rhs(&s, tau, params);
        let kin = kinematics_rhs(theta, q, params);
        [kin[0], qd[0], qd[1], kin[1], kin[2]]
    };
    let y0 = [state.theta, state.q[0], state.q[1], pose.z[0], pose.z[1]];
    let eval = |y: &[f64; 5]| deriv(y[0], &Vector2::new(y[1], y[2]));
    let add = |y: &[f64; 5], k: &[f64; 5], h: f64| -> [f64; 5] {
        let mut out = *y;
        for i in 0..5 {
            out[i] += h * k[i];
        }
        out
    };
    let k1 = eval(&y0);
    let k2 = eval(&add(&y0, &k1, dt / 2.0));
    let k3 = eval(&add(&y0, &k2, dt / 2.0));
    let k4 = eval(&add(&y0, &k3, dt));
    let mut y = y0;
    for i in 0..5 {
        y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    (
        BodyState::new(y[0], y[1], y[2]),
        Pose::new(y[3], y[4]),
    )
}

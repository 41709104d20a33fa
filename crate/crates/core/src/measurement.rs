//! Redundant six-channel measurement system.
//!
//! Channels (1-indexed in configs and logs, 0-indexed in code):
//!   1. forward speed `v`
//!   2. yaw rate `omega`
//!   3. wheel combination `(v + L omega) / 4r`
//!   4. wheel combination `(v - L omega) / 4r`
//!   5. task-space velocity `x_dot`
//!   6. task-space velocity `y_dot`
//!
//! Rows 5-6 equal `C(theta) q`, so the heading is observable through them
//! even though only the body velocities enter linearly.

use nalgebra::{DMatrix, DVector, Matrix6, SMatrix, Vector2, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::robot::RobotParams;

/// Number of measurement channels.
pub const CHANNELS: usize = 6;

/// The 6x2 output map applied to `q = [v, omega]` at a given heading.
pub fn output_matrix(theta: f64, params: &RobotParams) -> SMatrix<f64, 6, 2> {
    let (s, c) = theta.sin_cos();
    let d = params.offset;
    let quarter_r = 1.0 / (4.0 * params.wheel_radius);
    let l = params.half_wheelbase;
    SMatrix::<f64, 6, 2>::from_row_slice(&[
        1.0,
        0.0,
        0.0,
        1.0,
        quarter_r,
        l * quarter_r,
        quarter_r,
        -l * quarter_r,
        c,
        -d * s,
        s,
        d * c,
    ])
}

/// Noise-free measurement function `f(x)` of the full state `[theta, v, omega]`.
pub fn measurement_fn(x: &Vector3<f64>, params: &RobotParams) -> Vector6<f64> {
    output_matrix(x[0], params) * Vector2::new(x[1], x[2])
}

/// Measure with an externally drawn noise sample (deterministic given it).
pub fn measure(
    theta: f64,
    q: &Vector2<f64>,
    params: &RobotParams,
    noise_sample: &Vector6<f64>,
) -> Vector6<f64> {
    output_matrix(theta, params) * q + noise_sample
}

/// Analytic Jacobian of `f` with respect to `[theta, v, omega]` at `x0`.
pub fn measurement_jacobian(x0: &Vector3<f64>, params: &RobotParams) -> SMatrix<f64, 6, 3> {
    let (theta, v, omega) = (x0[0], x0[1], x0[2]);
    let (s, c) = theta.sin_cos();
    let d = params.offset;
    let quarter_r = 1.0 / (4.0 * params.wheel_radius);
    let l = params.half_wheelbase;
    SMatrix::<f64, 6, 3>::from_row_slice(&[
        0.0,
        1.0,
        0.0,
        0.0,
        0.0,
        1.0,
        0.0,
        quarter_r,
        l * quarter_r,
        0.0,
        quarter_r,
        -l * quarter_r,
        -v * s - d * omega * c,
        c,
        -d * s,
        v * c - d * omega * s,
        s,
        d * c,
    ])
}

/// One attacked measurement: the clean vector, the additive attack, its
/// support and the sum the estimator actually sees.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementFrame {
    pub y: Vector6<f64>,
    pub e: Vector6<f64>,
    /// 0-indexed channels carrying a nonzero attack entry.
    pub attacked_support: Vec<usize>,
    pub y_attacked: Vector6<f64>,
}

/// Add the attack vector to the measurement and record its support.
pub fn inject(y: &Vector6<f64>, e: &Vector6<f64>) -> MeasurementFrame {
    MeasurementFrame {
        y: *y,
        e: *e,
        attacked_support: (0..CHANNELS).filter(|&i| e[i] != 0.0).collect(),
        y_attacked: y + e,
    }
}

/// Covariance of the measurement noise.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementNoise {
    pub cov: Matrix6<f64>,
}

impl MeasurementNoise {
    pub fn new(cov: Matrix6<f64>) -> Result<Self> {
        if (cov - cov.transpose()).norm() > 1e-12 * (1.0 + cov.norm()) {
            return Err(Error::InvalidParameter(
                "measurement covariance must be symmetric".into(),
            ));
        }
        let eig = nalgebra::SymmetricEigen::new((cov + cov.transpose()) * 0.5);
        if eig.eigenvalues.iter().any(|&l| l < -1e-12) {
            return Err(Error::InvalidParameter(
                "measurement covariance must be positive semi-definite".into(),
            ));
        }
        Ok(Self { cov })
    }

    pub fn from_std(std: [f64; CHANNELS]) -> Result<Self> {
        if std.iter().any(|s| *s < 0.0 || !s.is_finite()) {
            return Err(Error::InvalidParameter(
                "measurement noise std must be finite and non-negative".into(),
            ));
        }
        let mut cov = Matrix6::zeros();
        for i in 0..CHANNELS {
            cov[(i, i)] = std[i] * std[i];
        }
        Ok(Self { cov })
    }

    /// Covariance restricted to the masked channels.
    pub fn masked(&self, mask: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(mask.len(), mask.len(), |i, j| self.cov[(mask[i], mask[j])])
    }
}

/// Extract the masked channels of a full measurement vector.
pub fn select_channels(y: &Vector6<f64>, mask: &[usize]) -> DVector<f64> {
    DVector::from_fn(mask.len(), |i, _| y[mask[i]])
}

/// Noise-free measurement restricted to the masked channels.
pub fn masked_measurement_fn(
    x: &Vector3<f64>,
    params: &RobotParams,
    mask: &[usize],
) -> DVector<f64> {
    let full = measurement_fn(x, params);
    select_channels(&full, mask)
}

//! Channel-masked unscented Kalman filter over `x = [theta, v, omega]`.
//!
//! The filter propagates 2n+1 sigma points through the Euler-discretized
//! dynamics and maps them through the measurement rows the pruning stage
//! trusts for the step. Masking happens in measurement space only; the state
//! side is untouched, so an empty mask simply skips the update.
//!
//! Sigma points use the standard symmetric set
//! `chi_0 = mean`, `chi_i = mean +/- col_i(sqrt((n + lambda) P))` with the
//! matrix square root taken as the Cholesky factor.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Vector2, Vector3};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::measurement::{masked_measurement_fn, MeasurementNoise};
use crate::robot::{discrete_dynamics, RobotParams};

/// State dimension.
pub const STATE_DIM: usize = 3;
/// Number of sigma points.
pub const SIGMA_COUNT: usize = 2 * STATE_DIM + 1;

/// Spread parameters of the unscented transform.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UkfConfig {
    /// Sigma-point spread, in (0, 1].
    pub alpha: f64,
    /// Distribution prior; 2 is optimal for Gaussians.
    pub beta: f64,
    /// Secondary spread parameter, >= 0.
    pub kappa: f64,
}

impl Default for UkfConfig {
    fn default() -> Self {
        Self { alpha: 0.5, beta: 2.0, kappa: 0.0 }
    }
}

impl UkfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "ukf alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.kappa >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "ukf kappa must be >= 0, got {}",
                self.kappa
            )));
        }
        let n = STATE_DIM as f64;
        if !(n + self.lambda() > 0.0) {
            return Err(Error::InvalidParameter(
                "ukf scaling gives n + lambda <= 0".into(),
            ));
        }
        Ok(())
    }

    /// `lambda = alpha^2 (n + kappa) - n`.
    pub fn lambda(&self) -> f64 {
        let n = STATE_DIM as f64;
        self.alpha * self.alpha * (n + self.kappa) - n
    }
}

/// Gaussian state belief.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianBelief {
    pub mean: Vector3<f64>,
    pub cov: Matrix3<f64>,
}

impl GaussianBelief {
    pub fn new(mean: Vector3<f64>, cov: Matrix3<f64>) -> Result<Self> {
        let belief = Self { mean, cov };
        belief.validate()?;
        Ok(belief)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mean.iter().all(|v| v.is_finite()) || !self.cov.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { step: 0, what: "belief" });
        }
        if (self.cov - self.cov.transpose()).norm() > 1e-10 * (1.0 + self.cov.norm()) {
            return Err(Error::InvalidParameter("belief covariance not symmetric".into()));
        }
        Ok(())
    }
}

/// Symmetric sigma-point set with its mean and covariance weights.
#[derive(Debug, Clone)]
pub struct SigmaPoints {
    pub points: [Vector3<f64>; SIGMA_COUNT],
    pub w_mean: [f64; SIGMA_COUNT],
    pub w_cov: [f64; SIGMA_COUNT],
}

impl SigmaPoints {
    pub fn weighted_mean(&self) -> Vector3<f64> {
        let mut mean = Vector3::zeros();
        for (w, p) in self.w_mean.iter().zip(self.points.iter()) {
            mean += *w * p;
        }
        mean
    }

    /// Weighted covariance of the points around `center`.
    pub fn weighted_cov(&self, center: &Vector3<f64>) -> Matrix3<f64> {
        let mut cov = Matrix3::zeros();
        for (w, p) in self.w_cov.iter().zip(self.points.iter()) {
            let d = p - center;
            cov += *w * d * d.transpose();
        }
        cov
    }
}

fn cholesky_with_repair(cov: &Matrix3<f64>, context: &'static str) -> Result<Matrix3<f64>> {
    if let Some(chol) = nalgebra::Cholesky::new(*cov) {
        return Ok(chol.l());
    }
    // Symmetrize, add jitter, retry once.
    let repaired = (cov + cov.transpose()) * 0.5 + Matrix3::identity() * 1e-9;
    nalgebra::Cholesky::new(repaired)
        .map(|c| c.l())
        .ok_or(Error::CovarianceNotPd { context })
}

/// Build the 2n+1 symmetric sigma points of a belief.
pub fn sigma_points(belief: &GaussianBelief, config: &UkfConfig) -> Result<SigmaPoints> {
    config.validate()?;
    let n = STATE_DIM as f64;
    let lambda = config.lambda();
    let scale = lambda + n;
    let l = cholesky_with_repair(&(belief.cov * scale), "sigma-point square root")?;
    let mut points = [belief.mean; SIGMA_COUNT];
    for i in 0..STATE_DIM {
        let col = l.column(i);
        points[1 + i] = belief.mean + col;
        points[1 + STATE_DIM + i] = belief.mean - col;
    }
    let mut w_mean = [1.0 / (2.0 * scale); SIGMA_COUNT];
    let mut w_cov = w_mean;
    w_mean[0] = lambda / scale;
    w_cov[0] = w_mean[0] + 1.0 - config.alpha * config.alpha + config.beta;
    Ok(SigmaPoints { points, w_mean, w_cov })
}

/// Prediction output: the predicted belief plus the propagated sigma points
/// (kept for diagnostics).
#[derive(Debug, Clone)]
pub struct Predicted {
    pub belief: GaussianBelief,
    pub propagated: SigmaPoints,
}

/// Time update through an arbitrary state map; `added_cov` is the full
/// process-noise covariance for the step and is added verbatim.
pub fn predict_with<F>(
    belief: &GaussianBelief,
    config: &UkfConfig,
    f: F,
    added_cov: &Matrix3<f64>,
) -> Result<Predicted>
where
    F: Fn(&Vector3<f64>) -> Vector3<f64>,
{
    let mut set = sigma_points(belief, config)?;
    for point in set.points.iter_mut() {
        *point = f(point);
        if !point.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { step: 0, what: "propagated sigma point" });
        }
    }
    let mean = set.weighted_mean();
    let cov = set.weighted_cov(&mean) + added_cov;
    let cov = (cov + cov.transpose()) * 0.5;
    Ok(Predicted { belief: GaussianBelief { mean, cov }, propagated: set })
}

/// Time update through the robot dynamics under torque `tau`.
///
/// `step_noise_cov` is the covariance of the velocity noise accumulated over
/// one step (for the Euler plant this is `dt^2 R` when the disturbance `w`
/// has covariance `R`); it is lifted to the full state with a zero heading
/// row and added as-is.
pub fn predict(
    belief: &GaussianBelief,
    tau: &Vector2<f64>,
    dt: f64,
    step_noise_cov: &Matrix2<f64>,
    params: &RobotParams,
    config: &UkfConfig,
) -> Result<Predicted> {
    let lifted = lift_process_cov(step_noise_cov);
    predict_with(belief, config, |x| discrete_dynamics(x, tau, dt, params), &lifted)
}

/// Embed the velocity-noise covariance in the full state with a zero
/// heading row.
pub fn lift_process_cov(cov_q: &Matrix2<f64>) -> Matrix3<f64> {
    let mut out = Matrix3::zeros();
    out.fixed_view_mut::<2, 2>(1, 1).copy_from(cov_q);
    out
}

/// Measurement update through an arbitrary measurement map. Sigma points are
/// redrawn from the predicted belief so the innovation geometry includes the
/// process noise added during prediction.
pub fn update_with<H>(
    predicted: &GaussianBelief,
    config: &UkfConfig,
    h: H,
    y: &DVector<f64>,
    noise_cov: &DMatrix<f64>,
) -> Result<GaussianBelief>
where
    H: Fn(&Vector3<f64>) -> DVector<f64>,
{
    let dim = y.len();
    if dim == 0 {
        return Err(Error::EmptyMask);
    }
    if noise_cov.nrows() != dim || noise_cov.ncols() != dim {
        return Err(Error::InvalidParameter(format!(
            "measurement noise is {}x{}, expected {dim}x{dim}",
            noise_cov.nrows(),
            noise_cov.ncols()
        )));
    }
    let set = sigma_points(predicted, config)?;
    let mapped: Vec<DVector<f64>> = set.points.iter().map(|p| h(p)).collect();
    if mapped.iter().any(|v| v.len() != dim) {
        return Err(Error::InvalidParameter(
            "measurement map dimension does not match observation".into(),
        ));
    }
    let mut y_hat = DVector::zeros(dim);
    for (w, v) in set.w_mean.iter().zip(mapped.iter()) {
        y_hat += v * *w;
    }
    let mut p_yy = noise_cov.clone();
    let mut p_xy = DMatrix::zeros(STATE_DIM, dim);
    for i in 0..SIGMA_COUNT {
        let dy = &mapped[i] - &y_hat;
        let dx = set.points[i] - predicted.mean;
        p_yy += &dy * dy.transpose() * set.w_cov[i];
        for r in 0..STATE_DIM {
            for c in 0..dim {
                p_xy[(r, c)] += set.w_cov[i] * dx[r] * dy[c];
            }
        }
    }
    let p_yy = (&p_yy + p_yy.transpose()) * 0.5;
    let chol = match nalgebra::Cholesky::new(p_yy.clone()) {
        Some(c) => c,
        None => {
            let jittered = p_yy.clone() + DMatrix::identity(dim, dim) * 1e-12;
            nalgebra::Cholesky::new(jittered)
                .ok_or(Error::CovarianceNotPd { context: "innovation covariance" })?
        }
    };
    // K = P_xy P_yy^-1 via the factorization: solve P_yy K' = P_xy'.
    let gain = chol.solve(&p_xy.transpose()).transpose();
    let innovation = y - &y_hat;
    let correction = &gain * innovation;
    let mean = predicted.mean + Vector3::new(correction[0], correction[1], correction[2]);
    let reduction = &gain * p_yy * gain.transpose();
    let mut cov = predicted.cov;
    for r in 0..STATE_DIM {
        for c in 0..STATE_DIM {
            cov[(r, c)] -= reduction[(r, c)];
        }
    }
    let cov = (cov + cov.transpose()) * 0.5;
    let belief = GaussianBelief { mean, cov };
    belief.validate()?;
    // The posterior must stay factorizable for the next prediction.
    cholesky_with_repair(&cov, "posterior covariance").map(|_| belief)
}

/// Measurement update against the trusted channels only.
pub fn update(
    predicted: &Predicted,
    y_masked: &DVector<f64>,
    mask: &[usize],
    noise: &MeasurementNoise,
    params: &RobotParams,
    config: &UkfConfig,
) -> Result<GaussianBelief> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    if y_masked.len() != mask.len() {
        return Err(Error::InvalidParameter(format!(
            "masked measurement has {} entries for a mask of {}",
            y_masked.len(),
            mask.len()
        )));
    }
    update_with(
        &predicted.belief,
        config,
        |x| masked_measurement_fn(x, params, mask),
        y_masked,
        &noise.masked(mask),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::{measurement_fn, select_channels};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn config() -> UkfConfig {
        UkfConfig::default()
    }

    fn belief() -> GaussianBelief {
        GaussianBelief {
            mean: Vector3::new(0.4, 0.6, -0.2),
            cov: Matrix3::new(0.02, 0.001, 0.0, 0.001, 0.03, 0.002, 0.0, 0.002, 0.04),
        }
    }

    #[test]
    fn config_validation() {
        assert!(UkfConfig { alpha: 0.0, beta: 2.0, kappa: 0.0 }.validate().is_err());
        assert!(UkfConfig { alpha: 1.5, beta: 2.0, kappa: 0.0 }.validate().is_err());
        assert!(UkfConfig { alpha: 0.5, beta: 2.0, kappa: -1.0 }.validate().is_err());
        assert!(config().validate().is_ok());
    }

    #[test]
    fn weights_are_normalized() {
        let set = sigma_points(&belief(), &config()).unwrap();
        let sum: f64 = set.w_mean.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sigma_mean_is_exact() {
        let b = belief();
        let set = sigma_points(&b, &config()).unwrap();
        assert!((set.weighted_mean() - b.mean).norm() < 1e-14);
    }

    proptest! {
        #[test]
        fn sigma_covariance_reproduces_p(
            a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0,
            d1 in 0.05f64..1.0, d2 in 0.05f64..1.0, d3 in 0.05f64..1.0,
        ) {
            // Random PD matrix via L L^T + diag.
            let l = Matrix3::new(d1, 0.0, 0.0, a, d2, 0.0, b, c, d3);
            let cov = l * l.transpose();
            let bel = GaussianBelief { mean: Vector3::new(0.1, -0.3, 0.8), cov };
            let set = sigma_points(&bel, &config()).unwrap();
            let rebuilt = set.weighted_cov(&bel.mean);
            prop_assert!((rebuilt - cov).norm() < 1e-10 * (1.0 + cov.norm()));
        }
    }

    #[test]
    fn sigma_points_repair_nearly_pd_covariance() {
        let mut bel = belief();
        // Tiny negative eigenvalue.
        bel.cov = Matrix3::new(1e-12, 0.0, 0.0, 0.0, -1e-14, 0.0, 0.0, 0.0, 1e-12);
        let set = sigma_points(&bel, &config()).unwrap();
        assert!(set.points.iter().all(|p| p.iter().all(|v| v.is_finite())));
    }

    #[test]
    fn zero_step_prediction_adds_noise_only() {
        let b = belief();
        let p = crate::robot::RobotParams::default();
        let step_cov = Matrix2::new(1e-4, 0.0, 0.0, 2e-4);
        let out = predict(&b, &Vector2::zeros(), 0.0, &step_cov, &p, &config()).unwrap();
        assert!((out.belief.mean - b.mean).norm() < 1e-12);
        let expect = b.cov + lift_process_cov(&step_cov);
        assert!((out.belief.cov - expect).norm() < 1e-10);
    }

    /// Plain Kalman filter, written directly from the classical formulas;
    /// the independent oracle for the linear-equivalence checks.
    mod kf {
        use super::*;

        pub fn predict(
            mean: &Vector3<f64>,
            cov: &Matrix3<f64>,
            a: &Matrix3<f64>,
            bu: &Vector3<f64>,
            q: &Matrix3<f64>,
        ) -> (Vector3<f64>, Matrix3<f64>) {
            (a * mean + bu, a * cov * a.transpose() + q)
        }

        pub fn update(
            mean: &Vector3<f64>,
            cov: &Matrix3<f64>,
            c: &DMatrix<f64>,
            y: &DVector<f64>,
            r: &DMatrix<f64>,
        ) -> (Vector3<f64>, Matrix3<f64>) {
            let cov_d = DMatrix::from_fn(3, 3, |i, j| cov[(i, j)]);
            let s = c * &cov_d * c.transpose() + r;
            let k = &cov_d * c.transpose() * s.try_inverse().unwrap();
            let innov = y - c * DVector::from_fn(3, |i, _| mean[i]);
            let dm = &k * innov;
            let new_cov = &cov_d - &k * c * &cov_d;
            (
                mean + Vector3::new(dm[0], dm[1], dm[2]),
                Matrix3::from_fn(|i, j| new_cov[(i, j)]),
            )
        }
    }

    #[test]
    fn linear_system_matches_kalman_filter() {
        // Marginally stable linear dynamics with sinusoidal input, linear
        // measurement rows; UKF and KF must agree to machine-level accuracy.
        let a = Matrix3::new(1.0, 0.01, 0.0, 0.0, 0.995, 0.003, 0.0, -0.002, 0.99);
        let b_u = |k: usize| {
            let t = k as f64 * 0.01;
            Vector3::new(0.0, 0.001 * t.sin(), 0.0005 * (2.0 * t).cos())
        };
        let q = Matrix3::new(1e-6, 0.0, 0.0, 0.0, 2e-6, 1e-7, 0.0, 1e-7, 1.5e-6);
        let c = DMatrix::from_row_slice(4, 3, &[
            0.0, 1.0, 0.0,
            0.0, 0.0, 1.0,
            0.0, 5.0, 1.0,
            0.0, 5.0, -1.0,
        ]);
        let r = DMatrix::identity(4, 4) * 1e-4;
        let cfg = config();
        let mut rng = ChaCha8Rng::seed_from_u64(77);

        let mut ukf = belief();
        let (mut kf_mean, mut kf_cov) = (ukf.mean, ukf.cov);
        for k in 0..1000 {
            let bu = b_u(k);
            let predicted =
                predict_with(&ukf, &cfg, |x| a * x + bu, &q).unwrap();
            let (pm, pc) = kf::predict(&kf_mean, &kf_cov, &a, &bu, &q);
            assert!((predicted.belief.mean - pm).norm() < 1e-8, "predict mean step {k}");
            assert!((predicted.belief.cov - pc).norm() < 1e-8, "predict cov step {k}");

            let y = DVector::from_fn(4, |i, _| {
                let clean = c.row(i).transpose().dot(&DVector::from_fn(3, |j, _| pm[j]));
                clean + 1e-3 * rng.random_range(-1.0..1.0)
            });
            ukf = update_with(
                &predicted.belief,
                &cfg,
                |x| &c * DVector::from_fn(3, |j, _| x[j]),
                &y,
                &r,
            )
            .unwrap();
            let (um, uc) = kf::update(&pm, &pc, &c, &y, &r);
            assert!((ukf.mean - um).norm() < 1e-8, "update mean step {k}");
            assert!((ukf.cov - uc).norm() < 1e-8, "update cov step {k}");
            kf_mean = um;
            kf_cov = uc;
        }
    }

    #[test]
    fn full_mask_update_gains_information() {
        let p = crate::robot::RobotParams::default();
        let cfg = config();
        let noise = MeasurementNoise::from_std([0.01; 6]).unwrap();
        let truth = Vector3::new(0.3, 0.5, 0.2);
        let b = GaussianBelief {
            mean: Vector3::new(0.35, 0.45, 0.25),
            cov: Matrix3::identity() * 0.05,
        };
        let predicted = predict(
            &b,
            &Vector2::zeros(),
            0.0,
            &Matrix2::identity().scale(1e-6),
            &p,
            &cfg,
        )
        .unwrap();
        let mask: Vec<usize> = (0..6).collect();
        let y = select_channels(&measurement_fn(&truth, &p), &mask);
        let posterior = update(&predicted, &y, &mask, &noise, &p, &cfg).unwrap();
        assert!(posterior.cov.trace() < predicted.belief.cov.trace());
        assert!((posterior.mean - truth).norm() < (predicted.belief.mean - truth).norm());
    }

    #[test]
    fn masked_update_equals_row_restricted_model() {
        let p = crate::robot::RobotParams::default();
        let cfg = config();
        let noise = MeasurementNoise::from_std([0.01, 0.02, 0.03, 0.04, 0.05, 0.06]).unwrap();
        let mask = vec![0usize, 2, 5];
        let b = belief();
        let predicted = predict(
            &b,
            &Vector2::new(0.1, -0.05),
            0.01,
            &Matrix2::identity().scale(1e-8),
            &p,
            &cfg,
        )
        .unwrap();
        let truth = Vector3::new(0.42, 0.55, -0.15);
        let y = select_channels(&measurement_fn(&truth, &p), &mask);
        let via_mask = update(&predicted, &y, &mask, &noise, &p, &cfg).unwrap();
        let via_rows = update_with(
            &predicted.belief,
            &cfg,
            |x| {
                let full = measurement_fn(x, &p);
                DVector::from_vec(vec![full[0], full[2], full[5]])
            },
            &y,
            &noise.masked(&mask),
        )
        .unwrap();
        assert!((via_mask.mean - via_rows.mean).norm() < 1e-14);
        assert!((via_mask.cov - via_rows.cov).norm() < 1e-14);
    }

    #[test]
    fn empty_mask_is_rejected() {
        let p = crate::robot::RobotParams::default();
        let cfg = config();
        let noise = MeasurementNoise::from_std([0.01; 6]).unwrap();
        let predicted = predict(
            &belief(),
            &Vector2::zeros(),
            0.01,
            &Matrix2::zeros(),
            &p,
            &cfg,
        )
        .unwrap();
        let r = update(&predicted, &DVector::zeros(0), &[], &noise, &p, &cfg);
        assert!(matches!(r, Err(Error::EmptyMask)));
    }

    #[test]
    fn long_run_covariance_stays_pd() {
        // 10^4 predict/update cycles on the nonlinear loop.
        let p = crate::robot::RobotParams::default();
        let cfg = config();
        let noise = MeasurementNoise::from_std([0.02; 6]).unwrap();
        let step_cov = Matrix2::identity() * (1e-4 * 1e-4);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut truth = Vector3::new(0.0, 0.4, 0.3);
        let mut bel = GaussianBelief {
            mean: truth + Vector3::new(0.01, -0.01, 0.02),
            cov: Matrix3::identity() * 1e-3,
        };
        let tau = Vector2::new(0.02, 0.01);
        let mask: Vec<usize> = (0..6).collect();
        for step in 0..10_000 {
            truth = discrete_dynamics(&truth, &tau, 0.01, &p);
            let mut y = select_channels(&measurement_fn(&truth, &p), &mask);
            for i in 0..6 {
                y[i] += 0.02 * rng.random_range(-1.0..1.0);
            }
            let predicted = predict(&bel, &tau, 0.01, &step_cov, &p, &cfg).unwrap();
            bel = update(&predicted, &y, &mask, &noise, &p, &cfg).unwrap();
            assert!(
                nalgebra::Cholesky::new(bel.cov).is_some(),
                "covariance lost PD at step {step}"
            );
        }
        assert!((bel.mean - truth).norm() < 0.1);
    }
}

//! Residual-based monitor over a sliding horizon.
//!
//! The monitor checks that the estimator's own history is consistent with
//! the plant model: successive estimates must agree with the discretized
//! dynamics within `eps_w`, and each measurement with the predicted output
//! within `eps_v`. When either check fails it raises the alarm and blames
//! the channels whose window-max residual exceeds the per-channel
//! thresholds. A feasibility-program monitor that searches over all
//! candidate estimate histories would be strictly stronger; this instance is
//! the standard one an attacker targets.

use nalgebra::{Vector2, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::measurement::{measurement_fn, MeasurementNoise, CHANNELS};
use crate::robot::{discrete_dynamics, ProcessNoise, RobotParams};

/// Thresholds and window length.
#[derive(Debug, Clone, PartialEq)]
pub struct MonitorConfig {
    /// Window length in samples, >= 1.
    pub horizon: usize,
    /// Bound on the dynamics residual norm.
    pub eps_w: f64,
    /// Bound on the measurement residual norm.
    pub eps_v: f64,
    /// Per-channel residual bounds used for localization.
    pub per_channel_eps: Vector6<f64>,
}

impl MonitorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidParameter("monitor horizon must be >= 1".into()));
        }
        if !(self.eps_w > 0.0) || !(self.eps_v > 0.0) || self.per_channel_eps.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::InvalidParameter("monitor thresholds must be positive".into()));
        }
        Ok(())
    }
}

/// Alarm flag plus suspected channels, ordered by descending window-max
/// residual (ties to the lower index). No alarm implies no suspects.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MonitorVerdict {
    pub alarm: bool,
    /// 0-indexed suspected channels.
    pub suspects: Vec<usize>,
}

impl MonitorVerdict {
    pub fn quiet() -> Self {
        Self { alarm: false, suspects: Vec::new() }
    }
}

const THRESHOLD_FLOOR: f64 = 1e-9;

/// Trace-based k-sigma calibration of the thresholds.
///
/// `eps_v` covers the measurement-noise norm; `eps_w` covers the per-step
/// noise increment plus the filter's correction magnitude, which scales with
/// the innovation size. The floor keeps degenerate zero-noise configurations
/// usable. The resulting false-alarm rate is checked empirically in tests.
pub fn calibrate(
    process: &ProcessNoise,
    meas: &MeasurementNoise,
    dt: f64,
    horizon: usize,
    sigma_gain: f64,
) -> MonitorConfig {
    let meas_tr = meas.cov.trace().max(0.0).sqrt();
    let proc_tr = process.cov.trace().max(0.0).sqrt();
    let eps_v = (sigma_gain * meas_tr).max(THRESHOLD_FLOOR);
    let eps_w = (sigma_gain * (dt * proc_tr + meas_tr)).max(THRESHOLD_FLOOR);
    let mut per_channel = Vector6::zeros();
    for i in 0..CHANNELS {
        per_channel[i] = (sigma_gain * meas.cov[(i, i)].max(0.0).sqrt()).max(THRESHOLD_FLOOR);
    }
    MonitorConfig { horizon, eps_w, eps_v, per_channel_eps: per_channel }
}

/// Evaluate the monitor over aligned histories against arbitrary dynamics
/// and measurement maps (used directly on linearized systems).
///
/// For a horizon `T`: `xhat_hist` holds `T + 1` successive posterior means
/// (oldest first), `tau_hist` the `T` torques applied between them, and
/// `y_hist` the `T` measurements seen at the instants of
/// `xhat_hist[1..=T]`.
pub fn evaluate_with<G, F>(
    y_hist: &[Vector6<f64>],
    tau_hist: &[Vector2<f64>],
    xhat_hist: &[Vector3<f64>],
    dynamics: G,
    output: F,
    config: &MonitorConfig,
) -> Result<MonitorVerdict>
where
    G: Fn(&Vector3<f64>, &Vector2<f64>) -> Vector3<f64>,
    F: Fn(&Vector3<f64>) -> Vector6<f64>,
{
    config.validate()?;
    let t = config.horizon;
    if xhat_hist.len() != t + 1 || y_hist.len() != t || tau_hist.len() != t {
        return Err(Error::MisalignedHistories(format!(
            "expected xhat {} / y {} / tau {}, got {} / {} / {}",
            t + 1,
            t,
            t,
            xhat_hist.len(),
            y_hist.len(),
            tau_hist.len()
        )));
    }
    let mut consistent = true;
    for j in 0..t {
        let predicted = dynamics(&xhat_hist[j], &tau_hist[j]);
        if (xhat_hist[j + 1] - predicted).norm() > config.eps_w {
            consistent = false;
            break;
        }
    }
    let mut channel_max = [0.0f64; CHANNELS];
    for j in 0..t {
        let residual = y_hist[j] - output(&xhat_hist[j + 1]);
        if residual.norm() > config.eps_v {
            consistent = false;
        }
        for i in 0..CHANNELS {
            channel_max[i] = channel_max[i].max(residual[i].abs());
        }
    }
    if consistent {
        return Ok(MonitorVerdict::quiet());
    }
    let mut suspects: Vec<usize> = (0..CHANNELS)
        .filter(|&i| channel_max[i] > config.per_channel_eps[i])
        .collect();
    suspects.sort_by(|&a, &b| {
        channel_max[b]
            .partial_cmp(&channel_max[a])
            .expect("finite residuals")
            .then(a.cmp(&b))
    });
    Ok(MonitorVerdict { alarm: true, suspects })
}

/// Evaluate against the robot dynamics and measurement model.
pub fn evaluate(
    y_hist: &[Vector6<f64>],
    tau_hist: &[Vector2<f64>],
    xhat_hist: &[Vector3<f64>],
    dt: f64,
    params: &RobotParams,
    config: &MonitorConfig,
) -> Result<MonitorVerdict> {
    evaluate_with(
        y_hist,
        tau_hist,
        xhat_hist,
        |x, tau| discrete_dynamics(x, tau, dt, params),
        |x| measurement_fn(x, params),
        config,
    )
}

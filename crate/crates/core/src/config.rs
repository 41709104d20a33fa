//! Scenario configuration: a TOML file maps onto [`ScenarioConfig`].
//!
//! Every section has defaults matching the nominal circle scenario; a full
//! annotated example ships in `configs/nominal.toml`. Channel indices in
//! configuration files and logs are 1-based; the API is 0-based.

use std::path::Path;

use serde::Deserialize;

use crate::controller::{ControlGains, TrajectoryKind};
use crate::error::{Error, Result};
use crate::fdia::AttackMode;
use crate::measurement::{MeasurementNoise, CHANNELS};
use crate::oracle::OracleStats;
use crate::robot::{ProcessNoise, RobotParams};
use crate::ukf::UkfConfig;

/// Which observer feeds the controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Plain UKF over all channels.
    UkfOnly,
    /// UKF masked by the raw oracle safe set.
    UkfWithOracle,
    /// UKF masked by the reliability-pruned support.
    PruningUkf,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::UkfOnly => "ukf-only",
            Strategy::UkfWithOracle => "ukf-with-oracle",
            Strategy::PruningUkf => "pruning-ukf",
        }
    }

    pub fn all() -> [Strategy; 3] {
        [Strategy::UkfOnly, Strategy::UkfWithOracle, Strategy::PruningUkf]
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Explicit initial plant state; when absent the run starts on the
/// reference with the feed-forward body velocities.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialState {
    pub theta: f64,
    pub v: f64,
    pub omega: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Standard deviations of the velocity disturbance `w = [w_v, w_omega]`.
    pub process_std: [f64; 2],
    /// Per-channel measurement noise standard deviations.
    pub measurement_std: [f64; CHANNELS],
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { process_std: [0.01, 0.01], measurement_std: [0.02; CHANNELS] }
    }
}

impl NoiseConfig {
    pub fn process(&self) -> Result<ProcessNoise> {
        ProcessNoise::from_std(self.process_std)
    }

    pub fn measurement(&self) -> Result<MeasurementNoise> {
        MeasurementNoise::from_std(self.measurement_std)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSettings {
    pub enabled: bool,
    /// Attack activation time (s).
    pub start_time: f64,
    /// Compromised channels, 1-based. Empty selects greedily.
    #[serde(default)]
    pub channels: Vec<usize>,
    /// Fraction of channels compromised when selecting greedily.
    #[serde(default = "default_fraction")]
    pub fraction: f64,
    /// Leakage budget; absent derives `(0.5 eps_v)^2` from the monitor.
    #[serde(default)]
    pub alpha: Option<f64>,
    /// Magnitude cap on the stacked attack vector.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Stacking horizon in samples.
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    pub mode: AttackMode,
    /// Ramp window (s) for the ramp schedule.
    #[serde(default = "default_ramp")]
    pub ramp_window: f64,
    /// Forward-velocity estimate displacement (m/s) the attack is expected
    /// to reach on the unprotected filter; used by analysis and tests.
    #[serde(default = "default_target_displacement")]
    pub target_v_displacement: f64,
}

fn default_target_displacement() -> f64 {
    0.008
}

fn default_fraction() -> f64 {
    1.0 / 3.0
}

fn default_gamma() -> f64 {
    0.2
}

fn default_horizon() -> usize {
    10
}

fn default_ramp() -> f64 {
    5.0
}

impl Default for AttackSettings {
    fn default() -> Self {
        Self {
            enabled: true,
            start_time: 20.0,
            channels: vec![5, 6],
            fraction: default_fraction(),
            alpha: None,
            gamma: default_gamma(),
            horizon: default_horizon(),
            mode: AttackMode::Ramp,
            ramp_window: default_ramp(),
            target_v_displacement: default_target_displacement(),
        }
    }
}

impl AttackSettings {
    /// Explicit support converted to 0-based indices.
    pub fn channels_zero_based(&self) -> Vec<usize> {
        self.channels.iter().map(|&c| c - 1).collect()
    }

    pub fn greedy_count(&self) -> usize {
        ((self.fraction * CHANNELS as f64).round() as usize).clamp(1, CHANNELS)
    }

    fn validate(&self) -> Result<()> {
        if self.enabled {
            if !(self.start_time >= 0.0) {
                return Err(Error::Config("attack start_time must be >= 0".into()));
            }
            if self.channels.iter().any(|&c| c == 0 || c > CHANNELS) {
                return Err(Error::Config(format!(
                    "attack channels must lie in 1..={CHANNELS}"
                )));
            }
            let mut unique = self.channels.clone();
            unique.sort_unstable();
            unique.dedup();
            if unique.len() != self.channels.len() {
                return Err(Error::Config("attack channels contain duplicates".into()));
            }
            if self.channels.is_empty() && !(self.fraction > 0.0 && self.fraction <= 1.0) {
                return Err(Error::Config("attack fraction must lie in (0, 1]".into()));
            }
            if let Some(alpha) = self.alpha {
                if !(alpha >= 0.0) {
                    return Err(Error::Config("attack alpha must be >= 0".into()));
                }
            }
            if !(self.gamma > 0.0) {
                return Err(Error::Config("attack gamma must be > 0".into()));
            }
            if self.horizon == 0 {
                return Err(Error::Config("attack horizon must be >= 1".into()));
            }
            if !(self.ramp_window >= 0.0) {
                return Err(Error::Config("attack ramp_window must be >= 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSettings {
    /// Shared per-channel agreement (true-positive) rate.
    pub tpr: f64,
    /// Shared per-channel confidence.
    pub confidence: f64,
    /// Run the oracle and the mask logic from t = 0 instead of from attack
    /// activation.
    #[serde(default)]
    pub always_on: bool,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self { tpr: 0.6, confidence: 0.5, always_on: false }
    }
}

impl OracleSettings {
    pub fn stats(&self) -> Result<OracleStats> {
        OracleStats::uniform(CHANNELS, self.tpr, self.confidence)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruningSettings {
    /// Reliability level eta in (0, 1).
    pub eta: f64,
}

impl Default for PruningSettings {
    fn default() -> Self {
        Self { eta: 0.8 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorSettings {
    /// Sliding-window length in samples.
    pub horizon: usize,
    /// Threshold gain in noise standard deviations.
    #[serde(default = "default_sigma_gain")]
    pub sigma_gain: f64,
}

fn default_sigma_gain() -> f64 {
    3.0
}

impl Default for MonitorSettings {
    fn default() -> Self {
        Self { horizon: 20, sigma_gain: default_sigma_gain() }
    }
}

/// Monte Carlo settings for the pruning demonstration.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneMcSettings {
    /// Number of measurement nodes in the synthetic layout.
    pub nodes: usize,
    /// Attacked nodes, 1-based.
    pub attacked: Vec<usize>,
    pub trials: usize,
    /// Reliability levels swept by the demo.
    pub etas: Vec<f64>,
    pub tpr: f64,
    pub confidence: f64,
}

impl Default for PruneMcSettings {
    fn default() -> Self {
        Self {
            nodes: 12,
            attacked: vec![8, 9, 12],
            trials: 10_000,
            etas: vec![0.1, 0.5, 0.8, 0.9],
            tpr: 0.6,
            confidence: 0.5,
        }
    }
}

impl PruneMcSettings {
    pub fn attacked_zero_based(&self) -> Vec<usize> {
        self.attacked.iter().map(|&c| c - 1).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.nodes == 0 {
            return Err(Error::Config("prune_mc.nodes must be >= 1".into()));
        }
        if self.attacked.iter().any(|&c| c == 0 || c > self.nodes) {
            return Err(Error::Config("prune_mc.attacked out of range".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("prune_mc.trials must be >= 1".into()));
        }
        if self.etas.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
            return Err(Error::Config("prune_mc.etas must lie in (0, 1)".into()));
        }
        if !(self.tpr > 0.0 && self.tpr <= 1.0) || !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::Config("prune_mc oracle statistics out of range".into()));
        }
        Ok(())
    }
}

/// Full scenario description.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    /// Sampling time (s).
    pub dt: f64,
    /// Run length (s).
    pub duration: f64,
    pub observer: Strategy,
    #[serde(default)]
    pub robot: RobotParams,
    #[serde(default)]
    pub gains: ControlGains,
    pub trajectory: TrajectoryKind,
    #[serde(default)]
    pub initial: Option<InitialState>,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub attack: AttackSettings,
    #[serde(default)]
    pub oracle: OracleSettings,
    #[serde(default)]
    pub pruning: PruningSettings,
    #[serde(default)]
    pub monitor: MonitorSettings,
    #[serde(default)]
    pub ukf: UkfConfig,
    #[serde(default)]
    pub prune_mc: PruneMcSettings,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ScenarioConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config("dt must be > 0".into()));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::Config("duration must be > 0".into()));
        }
        self.robot.validate()?;
        self.gains.validate()?;
        self.trajectory.validate()?;
        self.noise.process()?;
        self.noise.measurement()?;
        self.attack.validate()?;
        self.oracle.stats()?;
        if !(self.pruning.eta > 0.0 && self.pruning.eta < 1.0) {
            return Err(Error::Config("pruning.eta must lie in (0, 1)".into()));
        }
        if self.monitor.horizon == 0 {
            return Err(Error::Config("monitor.horizon must be >= 1".into()));
        }
        if !(self.monitor.sigma_gain > 0.0) {
            return Err(Error::Config("monitor.sigma_gain must be > 0".into()));
        }
        self.ukf.validate()?;
        self.prune_mc.validate()?;
        Ok(())
    }

    /// Number of simulation steps.
    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round().max(1.0) as usize
    }

    /// Nominal scenario used by tests and as a template.
    pub fn nominal() -> Self {
        Self {
            seed: 42,
            dt: 0.01,
            duration: 60.0,
            observer: Strategy::PruningUkf,
            robot: RobotParams::default(),
            gains: ControlGains::default(),
            trajectory: TrajectoryKind::Circle { radius: 1.0, rate: 0.5 },
            initial: None,
            noise: NoiseConfig::default(),
            attack: AttackSettings::default(),
            oracle: OracleSettings::default(),
            pruning: PruningSettings::default(),
            monitor: MonitorSettings::default(),
            ukf: UkfConfig::default(),
            prune_mc: PruneMcSettings::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nominal_is_valid() {
        ScenarioConfig::nominal().validate().unwrap();
    }

    #[test]
    fn minimal_toml_round_trip() {
        let text = r#"
            seed = 7
            dt = 0.01
            duration = 10.0
            observer = "ukf-only"

            [trajectory]
            kind = "circle"
            radius = 1.0
            rate = 0.5
        "#;
        let config = ScenarioConfig::from_toml(text).unwrap();
        assert_eq!(config.seed, 7);
        assert_eq!(config.observer, Strategy::UkfOnly);
        assert_eq!(config.steps(), 1000);
        assert_eq!(config.attack.channels_zero_based(), vec![4, 5]);
    }

    #[test]
    fn bad_values_rejected() {
        let mut config = ScenarioConfig::nominal();
        config.dt = 0.0;
        assert!(config.validate().is_err());

        let mut config = ScenarioConfig::nominal();
        config.attack.channels = vec![0];
        assert!(config.validate().is_err());

        let mut config = ScenarioConfig::nominal();
        config.attack.channels = vec![7];
        assert!(config.validate().is_err());

        let mut config = ScenarioConfig::nominal();
        config.pruning.eta = 1.0;
        assert!(config.validate().is_err());
    }

    #[test]
    fn unknown_fields_rejected() {
        let text = r#"
            seed = 7
            dt = 0.01
            duration = 10.0
            observer = "ukf-only"
            typo_field = 3

            [trajectory]
            kind = "circle"
            radius = 1.0
            rate = 0.5
        "#;
        assert!(ScenarioConfig::from_toml(text).is_err());
    }
}

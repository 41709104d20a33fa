//! Simulated attack-localization oracle.
//!
//! Any data-driven localizer reports, per channel, whether it believes the
//! channel is safe. Real localizers are inexact; the simulation prescribes
//! their ROC behavior instead of training one: channel `i` agrees with the
//! ground truth with probability `p[i]` and flips it otherwise.

use rand::Rng;

use crate::error::{Error, Result};

/// Per-channel agreement rates and confidences of the simulated localizer.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleStats {
    /// Agreement (true-positive) rate per channel, each in (0, 1].
    pub p: Vec<f64>,
    /// Confidence value per channel, each in [0, 1].
    pub s: Vec<f64>,
}

impl OracleStats {
    pub fn new(p: Vec<f64>, s: Vec<f64>) -> Result<Self> {
        if p.len() != s.len() {
            return Err(Error::InvalidParameter(format!(
                "oracle stats length mismatch: {} vs {}",
                p.len(),
                s.len()
            )));
        }
        if p.iter().any(|v| !(*v > 0.0 && *v <= 1.0)) {
            return Err(Error::InvalidParameter(
                "agreement rates must lie in (0, 1]".into(),
            ));
        }
        if s.iter().any(|v| !(*v >= 0.0 && *v <= 1.0)) {
            return Err(Error::InvalidParameter(
                "confidences must lie in [0, 1]".into(),
            ));
        }
        Ok(Self { p, s })
    }

    pub fn uniform(m: usize, p: f64, s: f64) -> Result<Self> {
        Self::new(vec![p; m], vec![s; m])
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

/// One oracle report: the estimated safe-channel indicator plus confidences.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    /// `q_hat[i] = true` means the oracle believes channel `i` is safe.
    pub q_hat: Vec<bool>,
    pub s: Vec<f64>,
}

impl OracleReport {
    /// Channels the oracle marks safe, ascending.
    pub fn safe_set(&self) -> Vec<usize> {
        (0..self.q_hat.len()).filter(|&i| self.q_hat[i]).collect()
    }
}

/// Ground-truth safe indicator: `q[i] = true` iff channel `i` carries no
/// attack.
pub fn safe_indicator(attacked_support: &[usize], m: usize) -> Vec<bool> {
    let mut q = vec![true; m];
    for &i in attacked_support {
        debug_assert!(i < m, "support index out of range");
        q[i] = false;
    }
    q
}

/// Draw one oracle report: each channel keeps the true indicator with
/// probability `p[i]` and flips it otherwise. The flip relation is symmetric
/// between truth and report.
pub fn simulate<R: Rng>(q: &[bool], stats: &OracleStats, rng: &mut R) -> Result<OracleReport> {
    if q.len() != stats.len() {
        return Err(Error::InvalidParameter(format!(
            "indicator length {} does not match stats length {}",
            q.len(),
            stats.len()
        )));
    }
    let q_hat = q
        .iter()
        .zip(stats.p.iter())
        .map(|(&truth, &p)| {
            let agree = rng.random::<f64>() < p;
            if agree { truth } else { !truth }
        })
        .collect();
    Ok(OracleReport { q_hat, s: stats.s.clone() })
}

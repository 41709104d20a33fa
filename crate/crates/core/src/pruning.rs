//! Poisson-Binomial reliability pruning.
//!
//! The number of channels the oracle localizes correctly is a sum of
//! independent, non-identical Bernoulli draws, i.e. Poisson-Binomially
//! distributed. Working back from a reliability level `eta`, the largest
//! count `l_eta` that is correct with probability at least `eta` bounds how
//! many oracle outputs are worth trusting; the pruned support keeps the
//! `l_eta` most trusted channels (ranked by agreement rate times confidence)
//! that the oracle also marked safe.

use crate::error::{Error, Result};
use crate::oracle::OracleReport;

/// PMF of the number of correctly localized channels; `values[k]` is
/// `Pr(sum of agreements = k)` for `k = 0..=m`.
#[derive(Debug, Clone, PartialEq)]
pub struct PmfVector {
    values: Vec<f64>,
}

impl PmfVector {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Tail probability `Pr(sum >= k)`.
    pub fn tail(&self, k: usize) -> f64 {
        if k == 0 {
            return 1.0;
        }
        let head: f64 = self.values.iter().take(k).sum();
        (1.0 - head).max(0.0)
    }
}

/// PMF of a sum of independent Bernoulli(p_i) variables, by direct
/// convolution of the two-point distributions `[1 - p_i, p_i]`. Equivalent
/// to the normalized-product form but well defined at `p_i = 0` and
/// `p_i = 1`.
pub fn poisson_binomial_pmf(p: &[f64]) -> Result<PmfVector> {
    if p.iter().any(|v| !(*v >= 0.0 && *v <= 1.0)) {
        return Err(Error::InvalidParameter(
            "Bernoulli rates must lie in [0, 1]".into(),
        ));
    }
    let mut values = vec![1.0f64];
    for &pi in p {
        let mut next = vec![0.0f64; values.len() + 1];
        for (k, &mass) in values.iter().enumerate() {
            next[k] += mass * (1.0 - pi);
            next[k + 1] += mass * pi;
        }
        values = next;
    }
    Ok(PmfVector { values })
}

/// Largest `k` such that at least `k` channels are correctly localized with
/// probability at least `eta`; 0 when no `k >= 1` qualifies.
pub fn reliable_count(pmf: &PmfVector, eta: f64) -> Result<usize> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "reliability level must lie in (0, 1), got {eta}"
        )));
    }
    let m = pmf.len() - 1;
    for k in (1..=m).rev() {
        if pmf.tail(k) >= eta {
            return Ok(k);
        }
    }
    Ok(0)
}

/// Robust support: the `l_eta` highest-scoring channels intersected with the
/// oracle's safe set.
#[derive(Debug, Clone, PartialEq)]
pub struct PrunedSupport {
    /// Retained channels, ascending. Never larger than `l_eta`.
    pub indices: Vec<usize>,
    /// Reliability level the count was derived from.
    pub eta: f64,
    /// Trusted-count bound used for the cut.
    pub l_eta: usize,
}

/// Rank channels by `p[i] * s[i]` descending (ties to the lower index), keep
/// the first `l_eta`, intersect with the oracle's safe set.
pub fn prune(report: &OracleReport, p: &[f64], l_eta: usize) -> Result<Vec<usize>> {
    if report.q_hat.len() != p.len() || report.s.len() != p.len() {
        return Err(Error::InvalidParameter(format!(
            "pruning dimension mismatch: report {} / stats {}",
            report.q_hat.len(),
            p.len()
        )));
    }
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&i, &j| {
        let si = p[i] * report.s[i];
        let sj = p[j] * report.s[j];
        sj.partial_cmp(&si)
            .expect("finite scores")
            .then(i.cmp(&j))
    });
    let mut retained: Vec<usize> = order
        .into_iter()
        .take(l_eta)
        .filter(|&i| report.q_hat[i])
        .collect();
    retained.sort_unstable();
    if retained.is_empty() {
        return Err(Error::InsufficientTrustedChannels);
    }
    Ok(retained)
}

/// Full pipeline: PMF from the agreement rates, reliable count at `eta`,
/// then the pruned support.
pub fn robust_support(report: &OracleReport, p: &[f64], eta: f64) -> Result<PrunedSupport> {
    let pmf = poisson_binomial_pmf(p)?;
    let l_eta = reliable_count(&pmf, eta)?;
    let indices = if l_eta == 0 {
        return Err(Error::InsufficientTrustedChannels);
    } else {
        prune(report, p, l_eta)?
    };
    Ok(PrunedSupport { indices, eta, l_eta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{safe_indicator, simulate, OracleStats};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Brute force over all 2^m outcomes.
    fn enumerate_pmf(p: &[f64]) -> Vec<f64> {
        let m = p.len();
        let mut out = vec![0.0f64; m + 1];
        for mask in 0u32..(1 << m) {
            let mut prob = 1.0;
            let mut count = 0usize;
            for (i, &pi) in p.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    prob *= pi;
                    count += 1;
                } else {
                    prob *= 1.0 - pi;
                }
            }
            out[count] += prob;
        }
        out
    }

    #[test]
    fn certainty_concentrates_at_m() {
        let pmf = poisson_binomial_pmf(&[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(pmf.values(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn two_fair_coins() {
        let pmf = poisson_binomial_pmf(&[0.5, 0.5]).unwrap();
        let expect = [0.25, 0.5, 0.25];
        for (a, b) in pmf.values().iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn degenerate_rates_are_fine() {
        // The normalized-product formulation divides by p_i; the convolution
        // stays defined at the boundary.
        let pmf = poisson_binomial_pmf(&[0.0, 1.0, 0.5]).unwrap();
        let expect = [0.0, 0.5, 0.5, 0.0];
        for (a, b) in pmf.values().iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_exhaustive_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..100 {
            let m = rng.random_range(1..=12);
            let p: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
            let pmf = poisson_binomial_pmf(&p).unwrap();
            let brute = enumerate_pmf(&p);
            for (a, b) in pmf.values().iter().zip(brute.iter()) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    proptest! {
        #[test]
        fn pmf_is_a_distribution(p in proptest::collection::vec(0.0f64..=1.0, 1..14)) {
            let pmf = poisson_binomial_pmf(&p).unwrap();
            prop_assert!(pmf.values().iter().all(|&v| v >= 0.0));
            let total: f64 = pmf.values().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn reliable_count_non_increasing_in_eta(
            p in proptest::collection::vec(0.01f64..=1.0, 1..12),
            eta_lo in 0.05f64..0.45,
            eta_hi in 0.5f64..0.95,
        ) {
            let pmf = poisson_binomial_pmf(&p).unwrap();
            let lo = reliable_count(&pmf, eta_lo).unwrap();
            let hi = reliable_count(&pmf, eta_hi).unwrap();
            prop_assert!(hi <= lo);
        }
    }

    #[test]
    fn reliable_count_certain_oracle() {
        let pmf = poisson_binomial_pmf(&[1.0; 7]).unwrap();
        for eta in [0.05, 0.5, 0.99] {
            assert_eq!(reliable_count(&pmf, eta).unwrap(), 7);
        }
    }

    #[test]
    fn reliable_count_tail_boundaries() {
        let pmf = poisson_binomial_pmf(&[0.5, 0.5]).unwrap();
        // Pr(sum >= 2) = 0.25, Pr(sum >= 1) = 0.75.
        assert_eq!(reliable_count(&pmf, 0.25).unwrap(), 2);
        assert_eq!(reliable_count(&pmf, 0.26).unwrap(), 1);
        assert_eq!(reliable_count(&pmf, 0.76).unwrap(), 0);
    }

    #[test]
    fn reliable_count_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(57);
        for _ in 0..100 {
            let m = rng.random_range(1..=12);
            let p: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
            let pmf = poisson_binomial_pmf(&p).unwrap();
            let eta = rng.random_range(0.05..0.95);
            let brute = {
                let values = enumerate_pmf(&p);
                let mut best = 0usize;
                for k in 1..=m {
                    let tail: f64 = values[k..].iter().sum();
                    if tail >= eta {
                        best = k;
                    }
                }
                best
            };
            assert_eq!(reliable_count(&pmf, eta).unwrap(), brute);
        }
    }

    #[test]
    fn prune_keeps_top_scores() {
        let report = OracleReport { q_hat: vec![true, true, true], s: vec![1.0, 1.0, 1.0] };
        let p = [0.9, 0.1, 0.5];
        let retained = prune(&report, &p, 2).unwrap();
        assert_eq!(retained, vec![0, 2]);
    }

    #[test]
    fn prune_full_when_everything_safe() {
        let m = 5;
        let report = OracleReport { q_hat: vec![true; m], s: vec![0.5; m] };
        let retained = prune(&report, &vec![0.6; m], m).unwrap();
        assert_eq!(retained, (0..m).collect::<Vec<_>>());
    }

    #[test]
    fn prune_intersects_with_safe_set() {
        let report = OracleReport {
            q_hat: vec![false, true, true, false],
            s: vec![0.5; 4],
        };
        let retained = prune(&report, &[0.6; 4], 3).unwrap();
        assert_eq!(retained, vec![1, 2]);
    }

    #[test]
    fn prune_empty_signals_caller() {
        let report = OracleReport { q_hat: vec![false, false], s: vec![0.5; 2] };
        assert!(matches!(
            prune(&report, &[0.6; 2], 2),
            Err(Error::InsufficientTrustedChannels)
        ));
    }

    #[test]
    fn pmf_tail_property_holds_empirically() {
        // The defining property of the reliable count: the number of correct
        // localizations reaches l_eta with frequency >= eta.
        let m = 12;
        let eta = 0.8;
        let stats = OracleStats::uniform(m, 0.6, 0.5).unwrap();
        let pmf = poisson_binomial_pmf(&stats.p).unwrap();
        let l_eta = reliable_count(&pmf, eta).unwrap();
        assert_eq!(l_eta, 6);
        let truth = safe_indicator(&[7, 8, 11], m);
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let trials = 10_000;
        let mut tail_hits = 0usize;
        for _ in 0..trials {
            let report = simulate(&truth, &stats, &mut rng).unwrap();
            let correct = (0..m).filter(|&i| report.q_hat[i] == truth[i]).count();
            if correct >= l_eta {
                tail_hits += 1;
            }
        }
        let rate = tail_hits as f64 / trials as f64;
        let margin = 3.0 * (eta * (1.0 - eta) / trials as f64).sqrt();
        assert!(rate >= eta - margin, "tail rate {rate} below {eta} - {margin}");
    }

    #[test]
    fn exclusion_monte_carlo_on_demo_layout() {
        // Attacked channels sit outside the trusted prefix (uniform scores
        // break ties toward low indices), reproducing the layout where the
        // pruned support excludes every attacked channel.
        let m = 12;
        let eta = 0.8;
        let attacked = [7usize, 8, 11];
        let stats = OracleStats::uniform(m, 0.6, 0.5).unwrap();
        let truth = safe_indicator(&attacked, m);
        let mut rng = ChaCha8Rng::seed_from_u64(202);
        let trials = 10_000;
        let mut excluded = 0usize;
        for _ in 0..trials {
            let report = simulate(&truth, &stats, &mut rng).unwrap();
            match robust_support(&report, &stats.p, eta) {
                Ok(support) => {
                    if support.indices.iter().all(|i| !attacked.contains(i)) {
                        excluded += 1;
                    }
                }
                Err(Error::InsufficientTrustedChannels) => excluded += 1,
                Err(e) => panic!("unexpected error: {e}"),
            }
        }
        let rate = excluded as f64 / trials as f64;
        let margin = 3.0 * (eta * (1.0 - eta) / trials as f64).sqrt();
        assert!(rate >= eta - margin, "exclusion rate {rate}");
    }
}

//! Absolute spectral gap: estimation from chain output and exact values for
//! finite reversible chains.
//!
//! The estimator rests on the decay of lagged autocovariances: for a
//! reversible chain and a centred function `f` that is not orthogonal to the
//! eigenspace of the second-largest eigenvalue modulus,
//! `(|rho_eta(f)| / Var(f))^(1/eta) -> 1 - gamma*` as `eta` grows. The
//! non-orthogonality condition cannot be checked from samples and is taken
//! as an assumption.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::chain::{check_detailed_balance, FiniteChain};
use crate::error::{check_param, Error, Result};

/// Smallest gap the estimator reports.
pub const GAP_FLOOR: f64 = 1e-6;
const DEGENERATE_VARIANCE: f64 = 1e-24;
/// Upper bound on eta-refinement rounds.
pub const MAX_ROUNDS: usize = 50;

/// Autocovariance of `series` at lag `eta`, centred on the full-sample mean
/// and normalised by `n - eta`. At `eta = 0` this is the biased variance.
pub fn autocovariance(series: &[f64], eta: usize) -> Result<f64> {
    let n = series.len();
    if eta >= n {
        return Err(Error::LagTooLarge { eta, len: n });
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    Ok(centred_autocovariance(series, mean, eta))
}

fn centred_autocovariance(series: &[f64], mean: f64, eta: usize) -> f64 {
    let n = series.len();
    let acc: f64 = series[..n - eta]
        .iter()
        .zip(&series[eta..])
        .map(|(a, b)| (a - mean) * (b - mean))
        .sum();
    acc / (n - eta) as f64
}

/// Gap implied by an autocovariance ratio at lag `eta`:
/// `1 - (|rho_eta| / variance)^(1/eta)`, clamped into `[GAP_FLOOR, 1]`.
pub fn gap_from_ratio(rho_eta: f64, variance: f64, eta: usize) -> Result<f64> {
    if !(variance > 0.0) {
        return Err(Error::DegenerateFunction);
    }
    check_param("eta", eta as f64, eta >= 1, "lag must be at least 1")?;
    let ratio = rho_eta.abs() / variance;
    if ratio >= 1.0 {
        return Ok(GAP_FLOOR);
    }
    let gap = 1.0 - ratio.powf(1.0 / eta as f64);
    Ok(gap.clamp(GAP_FLOOR, 1.0))
}

/// Lag `log(n gamma) / (4 log(1/(1 - gamma)))`, rounded half-up and clamped
/// to `[1, n/10]`.
pub fn eta_for(n: usize, gamma_star: f64) -> usize {
    let upper = (n / 10).max(1);
    if !(gamma_star < 1.0) || !(gamma_star > 0.0) {
        return 1;
    }
    let ng = n as f64 * gamma_star;
    if ng <= 1.0 {
        return 1;
    }
    let eta = ng.ln() / (4.0 * (1.0 / (1.0 - gamma_star)).ln());
    let rounded = (eta + 0.5).floor();
    if !rounded.is_finite() || rounded >= upper as f64 {
        return upper;
    }
    (rounded as usize).clamp(1, upper)
}

/// Diagnostics for one coordinate function at the final lag.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionGap {
    pub name: String,
    /// `|rho_eta| / Var`, or `None` when the function is constant.
    pub ratio: Option<f64>,
    pub implied_gap: Option<f64>,
}

/// One round of the eta iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapIterate {
    pub eta: usize,
    pub gamma_min: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapEstimate {
    pub gamma_star_hat: f64,
    pub eta_final: usize,
    pub per_function: Vec<FunctionGap>,
    pub n_used: usize,
    pub rounds: usize,
    /// Set when the round cap stopped the iteration.
    pub capped: bool,
    pub trace: Vec<GapIterate>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GapOutcome {
    Accepted(GapEstimate),
    /// `n <= 100 / gamma_hat`: rerun with at least `target_n` samples.
    NeedsMoreSamples {
        provisional: GapEstimate,
        target_n: usize,
    },
}

impl GapOutcome {
    pub fn estimate(&self) -> &GapEstimate {
        match self {
            GapOutcome::Accepted(e) => e,
            GapOutcome::NeedsMoreSamples { provisional, .. } => provisional,
        }
    }

    pub fn into_estimate(self) -> GapEstimate {
        match self {
            GapOutcome::Accepted(e) => e,
            GapOutcome::NeedsMoreSamples { provisional, .. } => provisional,
        }
    }
}

struct Prepared<'a> {
    name: &'a str,
    series: &'a [f64],
    mean: f64,
    variance: f64,
}

impl Prepared<'_> {
    fn ratio_and_gap(&self, eta: usize) -> Result<(f64, f64)> {
        let rho = centred_autocovariance(self.series, self.mean, eta);
        let ratio = rho.abs() / self.variance;
        Ok((ratio, gap_from_ratio(rho, self.variance, eta)?))
    }
}

fn gamma_min(functions: &[Prepared<'_>], eta: usize) -> Result<f64> {
    let mut best = f64::INFINITY;
    for f in functions {
        best = best.min(f.ratio_and_gap(eta)?.1);
    }
    Ok(best)
}

/// Iterative spectral-gap estimate from several functions of one path.
///
/// Starts from lag 1, then alternates lag-from-gap and gap-from-lag until
/// the minimum implied gap stops decreasing, and reports the last
/// decreasing value. Functions with zero variance are skipped.
pub fn estimate_gap(functions: &[(&str, &[f64])]) -> Result<GapOutcome> {
    let n = functions.first().map(|(_, s)| s.len()).unwrap_or(0);
    for (_, s) in functions {
        if s.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                found: s.len(),
            });
        }
    }
    check_param("n", n as f64, n >= 3, "need at least 3 samples")?;

    let mut prepared = Vec::new();
    for &(name, series) in functions {
        let mean = series.iter().sum::<f64>() / n as f64;
        let variance = centred_autocovariance(series, mean, 0);
        // Rounding in the mean leaves a constant series with a tiny variance.
        if variance > DEGENERATE_VARIANCE * mean.abs().max(1.0).powi(2) {
            prepared.push(Prepared {
                name,
                series,
                mean,
                variance,
            });
        }
    }
    if prepared.is_empty() {
        return Err(if functions.len() == 1 {
            Error::DegenerateFunction
        } else {
            Error::AllFunctionsDegenerate
        });
    }

    let mut eta = 1;
    let mut current = gamma_min(&prepared, eta)?;
    let mut trace = vec![GapIterate {
        eta,
        gamma_min: current,
    }];
    let mut rounds = 1;
    let mut capped = false;
    loop {
        if rounds >= MAX_ROUNDS {
            capped = true;
            break;
        }
        let next_eta = eta_for(n, current);
        let next = gamma_min(&prepared, next_eta)?;
        rounds += 1;
        trace.push(GapIterate {
            eta: next_eta,
            gamma_min: next,
        });
        if next >= current {
            break;
        }
        current = next;
        eta = next_eta;
    }

    let mut per_function = Vec::with_capacity(functions.len());
    for &(name, _) in functions {
        match prepared.iter().find(|p| p.name == name) {
            Some(p) => {
                let (ratio, gap) = p.ratio_and_gap(eta)?;
                per_function.push(FunctionGap {
                    name: name.to_owned(),
                    ratio: Some(ratio),
                    implied_gap: Some(gap),
                });
            }
            None => per_function.push(FunctionGap {
                name: name.to_owned(),
                ratio: None,
                implied_gap: None,
            }),
        }
    }

    let estimate = GapEstimate {
        gamma_star_hat: current,
        eta_final: eta,
        per_function,
        n_used: n,
        rounds,
        capped,
        trace,
    };
    if (n as f64) <= 100.0 / current {
        let target_n = (200.0 / current).ceil() as usize;
        Ok(GapOutcome::NeedsMoreSamples {
            provisional: estimate,
            target_n,
        })
    } else {
        Ok(GapOutcome::Accepted(estimate))
    }
}

/// Exact gaps of a finite reversible chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactGap {
    pub gamma: f64,
    pub gamma_star: f64,
    /// Spectrum in decreasing order.
    pub eigenvalues: Vec<f64>,
}

const UNIT_EIGEN_TOL: f64 = 1e-10;

/// Spectral gap and absolute spectral gap from the full spectrum.
///
/// The kernel is symmetrised as `D^{1/2} P D^{-1/2}` with `D = diag(pi)`
/// (restricted to states with positive mass), which is symmetric exactly
/// when detailed balance holds.
pub fn exact_gap_finite(chain: &FiniteChain) -> Result<ExactGap> {
    let balance = check_detailed_balance(chain);
    if !balance.reversible {
        return Err(Error::NotReversible {
            violation: balance.max_violation,
        });
    }
    let pi = chain.stationary();
    let support: Vec<usize> = (0..pi.len()).filter(|&x| pi[x] > 0.0).collect();
    let s = support.len();
    let kernel = chain.kernel();
    let sym = DMatrix::from_fn(s, s, |i, j| {
        let (x, y) = (support[i], support[j]);
        let a = pi[x].sqrt() * kernel[x][y] / pi[y].sqrt();
        let b = pi[y].sqrt() * kernel[y][x] / pi[x].sqrt();
        0.5 * (a + b)
    });
    let mut eigenvalues: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(|a, b| b.total_cmp(a));

    let unit = eigenvalues
        .iter()
        .filter(|l| (*l - 1.0).abs() <= UNIT_EIGEN_TOL)
        .count();
    if unit > 1 {
        return Ok(ExactGap {
            gamma: 0.0,
            gamma_star: 0.0,
            eigenvalues,
        });
    }
    // The top eigenvalue is the unit one; everything after it is non-unit.
    let rest = &eigenvalues[1..];
    if rest.is_empty() {
        return Ok(ExactGap {
            gamma: 1.0,
            gamma_star: 1.0,
            eigenvalues,
        });
    }
    let largest = rest.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let largest_abs = rest.iter().map(|l| l.abs()).fold(0.0, f64::max);
    Ok(ExactGap {
        gamma: (1.0 - largest).max(0.0),
        gamma_star: (1.0 - largest_abs).max(0.0),
        eigenvalues,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{seeded_rng, simulate_finite, Init};
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn alternating_sequence_lag_one() {
        let series: Vec<f64> = (0..1000).map(|i| (i % 2) as f64).collect();
        let rho = autocovariance(&series, 1).unwrap();
        assert!((rho + 0.25).abs() < 1e-12, "rho {rho}");
    }

    #[test]
    fn lag_zero_is_nonnegative_variance() {
        let series = [0.2, 0.9, 0.4, 0.4, 1.0];
        let v = autocovariance(&series, 0).unwrap();
        let mean = series.iter().sum::<f64>() / 5.0;
        let direct = series.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 5.0;
        assert!(v >= 0.0);
        assert!((v - direct).abs() < 1e-15);
    }

    #[test]
    fn iid_uniform_autocovariance_is_small() {
        let mut rng = seeded_rng(5);
        let n = 100_000;
        let series: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let var = autocovariance(&series, 0).unwrap();
        let rho = autocovariance(&series, 5).unwrap();
        assert!(rho.abs() <= 3.0 / (n as f64).sqrt() * var, "rho {rho}");
    }

    #[test]
    fn lag_too_large() {
        assert!(matches!(
            autocovariance(&[0.0, 1.0, 0.0], 3),
            Err(Error::LagTooLarge { eta: 3, len: 3 })
        ));
    }

    #[test]
    fn gap_from_ratio_examples() {
        assert_eq!(gap_from_ratio(0.0, 0.3, 4).unwrap(), 1.0);
        assert_eq!(gap_from_ratio(0.3, 0.3, 7).unwrap(), GAP_FLOOR);
        assert_eq!(gap_from_ratio(-0.6, 0.3, 7).unwrap(), GAP_FLOOR);
        let g = gap_from_ratio(0.49 * 0.2, 0.2, 2).unwrap();
        assert!((g - 0.3).abs() < 1e-12);
        assert!(matches!(
            gap_from_ratio(0.1, 0.0, 1),
            Err(Error::DegenerateFunction)
        ));
    }

    #[test]
    fn eta_for_examples() {
        assert_eq!(eta_for(1_000_000, 0.1), 27);
        assert_eq!(eta_for(10_000, 0.5), 3);
        // n * gamma = 1.2: the formula gives 0.13, clamped up to 1.
        assert_eq!(eta_for(4, 0.3), 1);
        assert_eq!(eta_for(1000, 0.0005), 1);
        assert_eq!(eta_for(1000, 1.0), 1);
    }

    #[test]
    fn exact_gap_two_state_examples() {
        let g = exact_gap_finite(&FiniteChain::two_state(0.5, 0.5).unwrap()).unwrap();
        assert!((g.gamma_star - 1.0).abs() < 1e-12);
        let g = exact_gap_finite(&FiniteChain::two_state(0.2, 0.1).unwrap()).unwrap();
        assert!((g.eigenvalues[1] - 0.7).abs() < 1e-12);
        assert!((g.gamma - 0.3).abs() < 1e-12);
        assert!((g.gamma_star - 0.3).abs() < 1e-12);
    }

    #[test]
    fn exact_gap_disconnected_is_zero() {
        let kernel = vec![
            vec![0.5, 0.5, 0.0, 0.0],
            vec![0.5, 0.5, 0.0, 0.0],
            vec![0.0, 0.0, 0.3, 0.7],
            vec![0.0, 0.0, 0.7, 0.3],
        ];
        let chain = FiniteChain::new(kernel, vec![0.25; 4], vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let g = exact_gap_finite(&chain).unwrap();
        assert_eq!(g.gamma, 0.0);
        assert_eq!(g.gamma_star, 0.0);
    }

    #[test]
    fn exact_gap_rejects_nonreversible() {
        let rotation = vec![
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![1.0, 0.0, 0.0],
        ];
        let chain = FiniteChain::from_kernel(rotation, vec![0.0, 0.5, 1.0]).unwrap();
        assert!(matches!(
            exact_gap_finite(&chain),
            Err(Error::NotReversible { .. })
        ));
    }

    #[test]
    fn estimate_gap_iid_chain() {
        let chain = FiniteChain::two_state(0.5, 0.5).unwrap();
        let traj = simulate_finite(&chain, 100_000, 3, &Init::Stationary).unwrap();
        let out = estimate_gap(&[("f", traj.values())]).unwrap();
        let est = out.estimate();
        assert!(matches!(out, GapOutcome::Accepted(_)));
        assert!(est.gamma_star_hat >= 0.5, "{est:?}");
    }

    #[test]
    fn estimate_gap_slow_chain() {
        let chain = FiniteChain::two_state(0.05, 0.05).unwrap();
        let traj = simulate_finite(&chain, 1_000_000, 4, &Init::Stationary).unwrap();
        let est = estimate_gap(&[("f", traj.values())]).unwrap().into_estimate();
        assert!(
            (0.05..=0.2).contains(&est.gamma_star_hat),
            "{}",
            est.gamma_star_hat
        );
        assert!(est.eta_final >= 1);
        assert_eq!(est.per_function.len(), 1);
        assert_eq!(est.per_function[0].implied_gap, Some(est.gamma_star_hat));
    }

    #[test]
    fn estimate_gap_degenerate() {
        let constant = vec![0.4; 500];
        assert!(matches!(
            estimate_gap(&[("f", &constant)]),
            Err(Error::DegenerateFunction)
        ));
        assert!(matches!(
            estimate_gap(&[("a", &constant), ("b", &constant)]),
            Err(Error::AllFunctionsDegenerate)
        ));
    }

    #[test]
    fn estimate_gap_skips_constant_function() {
        let chain = FiniteChain::two_state(0.3, 0.3).unwrap();
        let traj = simulate_finite(&chain, 50_000, 8, &Init::Stationary).unwrap();
        let constant = vec![1.0; traj.len()];
        let est = estimate_gap(&[("c", &constant), ("f", traj.values())])
            .unwrap()
            .into_estimate();
        assert_eq!(est.per_function[0].implied_gap, None);
        assert_eq!(est.per_function[1].implied_gap, Some(est.gamma_star_hat));
    }

    #[test]
    fn short_run_requests_more_samples() {
        let chain = FiniteChain::two_state(0.01, 0.01).unwrap();
        let traj = simulate_finite(&chain, 2_000, 11, &Init::Stationary).unwrap();
        match estimate_gap(&[("f", traj.values())]).unwrap() {
            GapOutcome::NeedsMoreSamples {
                provisional,
                target_n,
            } => {
                assert!(target_n as f64 >= 200.0 / provisional.gamma_star_hat);
                assert!(target_n > 2_000);
            }
            other => panic!("expected a restart request, got {other:?}"),
        }
    }

    #[test]
    fn length_mismatch_rejected() {
        let a = vec![0.0, 1.0, 0.0, 1.0];
        let b = vec![0.0, 1.0, 0.0];
        assert!(matches!(
            estimate_gap(&[("a", &a), ("b", &b)]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    proptest! {
        #[test]
        fn two_state_exact_gap_matches_analytic(p in 0.001f64..1.0, q in 0.001f64..1.0) {
            let g = exact_gap_finite(&FiniteChain::two_state(p, q).unwrap()).unwrap();
            let expected = (p + q).min(2.0 - (p + q));
            prop_assert!((g.gamma_star - expected).abs() < 1e-10);
            prop_assert!((g.gamma - (p + q)).abs() < 1e-10);
        }

        #[test]
        fn gap_from_ratio_monotone(a in 0.0f64..1.0, b in 0.0f64..1.0, var in 0.01f64..2.0, eta in 1usize..60) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let g_lo = gap_from_ratio(lo * var, var, eta).unwrap();
            let g_hi = gap_from_ratio(hi * var, var, eta).unwrap();
            prop_assert!(g_lo >= g_hi);
        }

        #[test]
        fn estimate_stays_in_unit_interval(p in 0.05f64..0.95, q in 0.05f64..0.95, seed in 0u64..1000) {
            let chain = FiniteChain::two_state(p, q).unwrap();
            let traj = simulate_finite(&chain, 5_000, seed, &Init::Stationary).unwrap();
            if let Ok(out) = estimate_gap(&[("f", traj.values())]) {
                let g = out.estimate().gamma_star_hat;
                prop_assert!(g > 0.0 && g <= 1.0);
                prop_assert!(out.estimate().rounds <= MAX_ROUNDS);
            }
        }
    }
}

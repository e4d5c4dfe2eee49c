//! Closed-form thresholds, sample sizes, error bounds and stopping-time
//! bounds for the three tests. All logarithms are natural.

use crate::error::{check_param, Error, Result};
use crate::hyptest::Schedule;

/// `P(|S_n - n E f| >= t) <= 2 exp(-t^2 gamma / n)`, capped at 1.
pub fn hoeffding_tail(n: u64, gamma: f64, t: f64) -> f64 {
    (2.0 * (-t * t * gamma / n as f64).exp()).min(1.0)
}

/// Error bound `exp(-gamma delta^2 n)` of the fixed-length test.
pub fn fixed_error_bound(gamma: f64, delta: f64, n: u64) -> f64 {
    (-gamma * delta * delta * n as f64).exp()
}

/// Samples sufficient for the fixed-length test to err with probability at
/// most `epsilon`: `ceil(log(1/epsilon) / (gamma delta^2))`.
pub fn required_n(epsilon: f64, gamma: f64, delta: f64) -> u64 {
    let raw = (1.0 / epsilon).ln() / (gamma * delta * delta);
    if raw <= 0.0 {
        0
    } else {
        raw.ceil() as u64
    }
}

/// Decision margin `M = log(2 / sqrt(epsilon xi)) / (2 gamma delta)` of the
/// sequential test with indifference region. The error guarantee is only
/// proven for `epsilon <= 0.4` and `xi <= 0.4`.
pub fn m_threshold(epsilon: f64, xi: f64, gamma: f64, delta: f64) -> Result<f64> {
    check_param(
        "epsilon",
        epsilon,
        epsilon > 0.0 && epsilon <= 0.4,
        "must lie in (0, 0.4]",
    )?;
    check_param("xi", xi, xi > 0.0 && xi <= 0.4, "must lie in (0, 0.4]")?;
    check_param("gamma", gamma, gamma > 0.0 && gamma <= 1.0, "must lie in (0, 1]")?;
    check_param("delta", delta, delta > 0.0, "must be positive")?;
    Ok((2.0 / (epsilon * xi).sqrt()).ln() / (2.0 * gamma * delta))
}

/// Schedule growth `1 / (log 2 log(1/epsilon))`, capped at 0.4.
pub fn xi_default(epsilon: f64) -> f64 {
    (1.0 / (std::f64::consts::LN_2 * (1.0 / epsilon).ln())).min(0.4)
}

/// Threshold `sqrt((n_i / gamma) (log(1/epsilon) + 1 + 2 log i))` of the
/// sequential test without indifference region, for check index `i >= 1`.
pub fn g_threshold(i: u32, epsilon: f64, gamma: f64, n_i: u64) -> f64 {
    let i = i.max(1) as f64;
    ((n_i as f64 / gamma) * ((1.0 / epsilon).ln() + 1.0 + 2.0 * i.ln())).sqrt()
}

/// Expected stopping-time bound of the test with indifference region,
/// `(1+xi)(M/Delta + 2 sqrt((M + 2 Delta)/(gamma Delta^3) + 2/(gamma Delta^2)))`,
/// where `Delta = |r - E f|`.
pub fn expected_stop_indiff(m: f64, xi: f64, gamma: f64, big_delta: f64) -> Result<f64> {
    check_param("Delta", big_delta, big_delta > 0.0, "must be positive")?;
    let d = big_delta;
    let root = ((m + 2.0 * d) / (gamma * d.powi(3)) + 2.0 / (gamma * d * d)).sqrt();
    Ok((1.0 + xi) * (m / d + 2.0 * root))
}

/// First schedule point `n_i` with `4 (log(1/epsilon) + 1 + 2 log i) / (gamma Delta^2) <= n_i`.
pub fn noindiff_horizon(epsilon: f64, gamma: f64, big_delta: f64, schedule: &Schedule) -> Result<u64> {
    check_param("Delta", big_delta, big_delta > 0.0, "must be positive")?;
    let scale = 4.0 / (gamma * big_delta * big_delta);
    let log_eps = (1.0 / epsilon).ln();
    schedule
        .raw_points()
        .find(|&(i, n_i)| scale * (log_eps + 1.0 + 2.0 * (i as f64).ln()) <= n_i as f64)
        .map(|(_, n_i)| n_i)
        .ok_or(Error::ScheduleExhausted)
}

/// Expected stopping-time bound `(1+xi)(N + 4 epsilon/(gamma Delta^2))` of
/// the test without indifference region.
pub fn expected_stop_noindiff(
    epsilon: f64,
    xi: f64,
    gamma: f64,
    big_delta: f64,
    schedule: &Schedule,
) -> Result<f64> {
    let horizon = noindiff_horizon(epsilon, gamma, big_delta, schedule)?;
    Ok((1.0 + xi) * (horizon as f64 + 4.0 * epsilon / (gamma * big_delta * big_delta)))
}

/// Tail bound `P(T >= t) <= (1+xi) exp(-gamma ((t Delta - M)_+)^2 / t)` for
/// the test with indifference region, capped at 1.
pub fn stop_tail_indiff(t: f64, m: f64, xi: f64, gamma: f64, big_delta: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    let excess = (t * big_delta - m).max(0.0);
    ((1.0 + xi) * (-gamma * excess * excess / t).exp()).min(1.0)
}

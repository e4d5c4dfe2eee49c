//! Threshold tests on the stationary mean `E_pi f` of a reversible chain.
//!
//! Three executors share one [`SampleSource`] interface:
//!
//! * [`fixed_length_test`] reads exactly `n` samples and compares the sum
//!   with `n r`.
//! * [`seq_indiff_test`] checks `|S - n_i r| >= M` on a geometric schedule,
//!   for hypotheses separated by an indifference region `(r - delta, r + delta)`.
//! * [`seq_noindiff_test`] uses the growing margin `g(i, epsilon)` and needs
//!   no indifference region.
//!
//! The error guarantees hold for the spectral gap `gamma` passed in the
//! config. When `gamma` is itself estimated, overestimating it weakens the
//! guarantee; [`conservative_gamma`] applies a safety factor.

mod bounds;
mod schedule;

pub use bounds::{
    expected_stop_indiff, expected_stop_noindiff, fixed_error_bound, g_threshold, hoeffding_tail,
    m_threshold, noindiff_horizon, required_n, stop_tail_indiff, xi_default,
};
pub use schedule::Schedule;

use std::fmt;
use std::str::FromStr;

use crate::chain::SampleSource;
use crate::error::{check_param, Error, Result};

/// Sequential tests without indifference region stop checking once the
/// schedule passes this many samples (unless a tighter cap is given).
pub const DEFAULT_SAMPLE_CAP: u64 = 100_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestConfig {
    pub r: f64,
    /// Half-width of the indifference region; `None` for the test without one.
    pub delta: Option<f64>,
    pub epsilon: f64,
    pub xi: f64,
    pub gamma: f64,
    /// Replaces the computed decision margin `M` of the indifference test.
    pub m_override: Option<f64>,
}

impl TestConfig {
    pub fn new(r: f64, epsilon: f64, xi: f64, gamma: f64) -> Result<Self> {
        let cfg = Self {
            r,
            delta: None,
            epsilon,
            xi,
            gamma,
            m_override: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_delta(mut self, delta: f64) -> Result<Self> {
        self.delta = Some(delta);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        check_param("r", self.r, self.r > 0.0 && self.r < 1.0, "must lie in (0, 1)")?;
        check_param(
            "epsilon",
            self.epsilon,
            self.epsilon > 0.0 && self.epsilon <= 0.4,
            "must lie in (0, 0.4]",
        )?;
        check_param("xi", self.xi, self.xi > 0.0 && self.xi <= 0.4, "must lie in (0, 0.4]")?;
        check_param(
            "gamma",
            self.gamma,
            self.gamma > 0.0 && self.gamma <= 1.0,
            "must lie in (0, 1]",
        )?;
        if let Some(d) = self.delta {
            check_param(
                "delta",
                d,
                d > 0.0 && d < self.r.min(1.0 - self.r),
                "must lie in (0, min(r, 1 - r))",
            )?;
        }
        Ok(())
    }

    /// `M` for the indifference test: the override, or the formula value.
    pub fn decision_margin(&self) -> Result<f64> {
        let delta = self.delta.ok_or(Error::InvalidParameter {
            name: "delta",
            value: f64::NAN,
            reason: "the indifference-region test needs delta",
        })?;
        match self.m_override {
            Some(m) => Ok(m),
            None => m_threshold(self.epsilon, self.xi, self.gamma, delta),
        }
    }
}

/// `gamma_hat * safety`, kept inside `(0, 1]`.
pub fn conservative_gamma(gamma_hat: f64, safety: f64) -> f64 {
    (gamma_hat * safety).clamp(f64::MIN_POSITIVE, 1.0)
}

/// Burn-in length `max(ceil(30 / gamma), requested)`.
pub fn burn_in_for(gamma: f64, requested: u64) -> u64 {
    ((30.0 / gamma).ceil() as u64).max(requested)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Decision {
    H0,
    H1,
    /// Indifference test hit the `6M/delta` cap and `S >= n r`.
    ForcedH0,
    ForcedH1,
    /// Test without indifference region ran out of checks.
    Undecided,
}

impl Decision {
    pub fn as_str(&self) -> &'static str {
        match self {
            Decision::H0 => "H0",
            Decision::H1 => "H1",
            Decision::ForcedH0 => "ForcedH0",
            Decision::ForcedH1 => "ForcedH1",
            Decision::Undecided => "Undecided",
        }
    }

    /// `Some(true)` for H0-type, `Some(false)` for H1-type decisions.
    pub fn chooses_h0(&self) -> Option<bool> {
        match self {
            Decision::H0 | Decision::ForcedH0 => Some(true),
            Decision::H1 | Decision::ForcedH1 => Some(false),
            Decision::Undecided => None,
        }
    }

    pub fn mirrored(&self) -> Decision {
        match self {
            Decision::H0 => Decision::H1,
            Decision::H1 => Decision::H0,
            Decision::ForcedH0 => Decision::ForcedH1,
            Decision::ForcedH1 => Decision::ForcedH0,
            Decision::Undecided => Decision::Undecided,
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Decision {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "H0" => Decision::H0,
            "H1" => Decision::H1,
            "ForcedH0" => Decision::ForcedH0,
            "ForcedH1" => Decision::ForcedH1,
            "Undecided" => Decision::Undecided,
            other => return Err(format!("unknown decision {other:?}")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestOutcome {
    pub decision: Decision,
    /// Samples consumed after burn-in.
    pub stopping_time: u64,
    pub final_sum: f64,
    pub checks_performed: u32,
}

/// Reads `n` samples; `H0` iff `S_n >= n r`.
pub fn fixed_length_test<S: SampleSource + ?Sized>(src: &mut S, r: f64, n: u64) -> Result<TestOutcome> {
    check_param("n", n as f64, n >= 1, "must be at least 1")?;
    let sum = src.take_sum(n)?;
    let decision = if sum >= n as f64 * r {
        Decision::H0
    } else {
        Decision::H1
    };
    Ok(TestOutcome {
        decision,
        stopping_time: n,
        final_sum: sum,
        checks_performed: 1,
    })
}

/// First check size `floor(M min(1/(1-r), 1/r))`, at least 1.
///
/// Written as `M / max(r, 1-r)` so that `r` and `1 - r` give the same value.
pub fn indiff_n0(m: f64, r: f64) -> u64 {
    ((m / r.max(1.0 - r)).floor() as u64).max(1)
}

/// Sequential test with indifference region.
///
/// After `n0` samples, checks at each schedule point `n_i`: `H0` if
/// `S >= n_i r + M`, `H1` if `S <= n_i r - M`. At the first point with
/// `n_i >= 6M/delta` that is still undecided, the decision is forced by the
/// sign of `S - n_i r`.
pub fn seq_indiff_test<S: SampleSource + ?Sized>(src: &mut S, cfg: &TestConfig) -> Result<TestOutcome> {
    cfg.validate()?;
    let m = cfg.decision_margin()?;
    let delta = cfg.delta.expect("decision_margin checked delta");
    let r = cfg.r;
    let cap = 6.0 * m / delta;
    let schedule = Schedule::new(indiff_n0(m, r), cfg.xi);

    let mut sum = src.take_sum(schedule.n0())?;
    let mut read = schedule.n0();
    let mut checks = 0;
    for (_, n_i) in schedule.points() {
        sum += src.take_sum(n_i - read)?;
        read = n_i;
        checks += 1;
        let centre = n_i as f64 * r;
        let decision = if sum >= centre + m {
            Some(Decision::H0)
        } else if sum <= centre - m {
            Some(Decision::H1)
        } else if n_i as f64 >= cap {
            Some(if sum >= centre {
                Decision::ForcedH0
            } else {
                Decision::ForcedH1
            })
        } else {
            None
        };
        if let Some(decision) = decision {
            return Ok(TestOutcome {
                decision,
                stopping_time: n_i,
                final_sum: sum,
                checks_performed: checks,
            });
        }
    }
    // The cap is finite, so the schedule always reaches it first.
    Err(Error::ScheduleExhausted)
}

/// Sequential test without indifference region.
///
/// Starts from `n0 = floor(100/gamma)` samples and checks `|S - n_i r| >= g(i, epsilon)`
/// at each schedule point, where `i` is the exponent index. Gives up with
/// [`Decision::Undecided`] after `max_checks` points, or by default once a
/// point reaches [`DEFAULT_SAMPLE_CAP`] samples.
pub fn seq_noindiff_test<S: SampleSource + ?Sized>(
    src: &mut S,
    cfg: &TestConfig,
    max_checks: Option<u32>,
) -> Result<TestOutcome> {
    cfg.validate()?;
    if let Some(c) = max_checks {
        check_param("max_checks", c as f64, c >= 1, "must be at least 1")?;
    }
    let r = cfg.r;
    let schedule = Schedule::new((100.0 / cfg.gamma).floor() as u64, cfg.xi);

    let mut sum = src.take_sum(schedule.n0())?;
    let mut read = schedule.n0();
    let mut checks = 0;
    for (i, n_i) in schedule.points() {
        sum += src.take_sum(n_i - read)?;
        read = n_i;
        checks += 1;
        let g = g_threshold(i, cfg.epsilon, cfg.gamma, n_i);
        let centre = n_i as f64 * r;
        let decision = if sum >= centre + g {
            Some(Decision::H0)
        } else if sum <= centre - g {
            Some(Decision::H1)
        } else {
            let out_of_checks = match max_checks {
                Some(c) => checks >= c,
                None => n_i >= DEFAULT_SAMPLE_CAP,
            };
            out_of_checks.then_some(Decision::Undecided)
        };
        if let Some(decision) = decision {
            return Ok(TestOutcome {
                decision,
                stopping_time: n_i,
                final_sum: sum,
                checks_performed: checks,
            });
        }
    }
    Err(Error::ScheduleExhausted)
}

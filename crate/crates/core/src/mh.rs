//! Random-walk Metropolis–Hastings over a box-shaped uniform prior.
//!
//! Log-space throughout. The uniform prior contributes nothing inside the
//! box and rejects everything outside it, and the symmetric proposal drops
//! out of the acceptance ratio, so a step accepts `theta'` with probability
//! `min(1, exp(loglik(theta') - loglik(theta)))`. `exp` is only ever applied
//! to a negative argument.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::chain::{seeded_rng, ChainRng, SampleSource, Trajectory};
use crate::error::{Error, Result};

/// Closed interval per dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl PriorBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                expected: lo.len(),
                found: hi.len(),
            });
        }
        for (l, h) in lo.iter().zip(&hi) {
            crate::error::check_param("hi", *h, l < h, "each upper bound must exceed its lower bound")?;
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(t, (l, h))| *l <= *t && *t <= *h)
    }

    pub fn sample_uniform(&self, rng: &mut ChainRng) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| l + (h - l) * rng.random::<f64>())
            .collect()
    }
}

/// Symmetric proposal kernel.
pub trait Proposal {
    fn propose(&self, current: &[f64], rng: &mut ChainRng) -> Vec<f64>;
}

/// Diagonal Gaussian `N(theta, diag(sigma^2))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianProposal {
    sigma: Vec<f64>,
}

impl GaussianProposal {
    pub fn new(sigma: Vec<f64>) -> Result<Self> {
        for s in &sigma {
            crate::error::check_param("sigma_mh", *s, *s > 0.0, "must be positive")?;
        }
        Ok(Self { sigma })
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }
}

impl Proposal for GaussianProposal {
    fn propose(&self, current: &[f64], rng: &mut ChainRng) -> Vec<f64> {
        current
            .iter()
            .zip(&self.sigma)
            .map(|(x, s)| {
                let z: f64 = rng.sample(StandardNormal);
                x + s * z
            })
            .collect()
    }
}

/// Moves every coordinate by an offset drawn uniformly from a fixed list.
/// Symmetric whenever the list is closed under negation.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeProposal {
    offsets: Vec<f64>,
}

impl LatticeProposal {
    pub fn new(offsets: Vec<f64>) -> Self {
        assert!(!offsets.is_empty(), "lattice proposal needs at least one offset");
        Self { offsets }
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }
}

impl Proposal for LatticeProposal {
    fn propose(&self, current: &[f64], rng: &mut ChainRng) -> Vec<f64> {
        current
            .iter()
            .map(|x| x + self.offsets[rng.random_range(0..self.offsets.len())])
            .collect()
    }
}

/// Log-likelihood (up to a constant) and property value at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub log_lik: f64,
    pub property: f64,
}

/// Posterior target. An `Err` from `evaluate` is treated as zero likelihood.
pub trait Target {
    fn evaluate(&self, theta: &[f64]) -> Result<Evaluation>;
}

/// Target built from two closures.
pub struct FnTarget<L, F> {
    log_lik: L,
    property: F,
}

impl<L, F> FnTarget<L, F>
where
    L: Fn(&[f64]) -> f64,
    F: Fn(&[f64]) -> f64,
{
    pub fn new(log_lik: L, property: F) -> Self {
        Self { log_lik, property }
    }
}

impl<L, F> Target for FnTarget<L, F>
where
    L: Fn(&[f64]) -> f64,
    F: Fn(&[f64]) -> f64,
{
    fn evaluate(&self, theta: &[f64]) -> Result<Evaluation> {
        Ok(Evaluation {
            log_lik: (self.log_lik)(theta),
            property: (self.property)(theta),
        })
    }
}

/// Log of the Gaussian kernel `-sum((Y - y)^2 / (2 sigma^2))`.
pub fn gaussian_loglik(observed: &[f64], simulated: &[f64], sigma: &[f64]) -> Result<f64> {
    if simulated.len() != observed.len() {
        return Err(Error::DimensionMismatch {
            expected: observed.len(),
            found: simulated.len(),
        });
    }
    if sigma.len() != observed.len() {
        return Err(Error::DimensionMismatch {
            expected: observed.len(),
            found: sigma.len(),
        });
    }
    let mut acc = 0.0;
    for ((y_obs, y_sim), s) in observed.iter().zip(simulated).zip(sigma) {
        crate::error::check_param("sigma", *s, *s > 0.0, "observation sd must be positive")?;
        let z = (y_obs - y_sim) / s;
        acc -= 0.5 * z * z;
    }
    Ok(acc)
}

/// Current point with its cached evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub theta: Vec<f64>,
    pub log_lik: f64,
    pub property: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MhDiagnostics {
    pub proposals: u64,
    pub accepted: u64,
    pub out_of_box: u64,
    pub eval_failures: u64,
}

impl MhDiagnostics {
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposals as f64
        }
    }
}

/// One Metropolis–Hastings transition. Returns whether the proposal was
/// accepted; on rejection `state` is left untouched.
pub fn mh_step<T, P>(
    state: &mut ChainState,
    proposal: &P,
    prior: &PriorBox,
    target: &T,
    rng: &mut ChainRng,
    diag: &mut MhDiagnostics,
) -> bool
where
    T: Target + ?Sized,
    P: Proposal + ?Sized,
{
    diag.proposals += 1;
    let candidate = proposal.propose(&state.theta, rng);
    if !prior.contains(&candidate) {
        diag.out_of_box += 1;
        return false;
    }
    let eval = match target.evaluate(&candidate) {
        Ok(e) if !e.log_lik.is_nan() => e,
        _ => {
            diag.eval_failures += 1;
            return false;
        }
    };
    let log_ratio = eval.log_lik - state.log_lik;
    let accept = log_ratio >= 0.0 || rng.random::<f64>() < log_ratio.exp();
    if accept {
        diag.accepted += 1;
        *state = ChainState {
            theta: candidate,
            log_lik: eval.log_lik,
            property: eval.property,
        };
    }
    accept
}

/// Result of [`MhChain::run`].
#[derive(Debug, Clone)]
pub struct ChainRun {
    pub trajectory: Trajectory,
    /// Post-burn-in parameter vectors, when requested.
    pub states: Option<Vec<Vec<f64>>>,
    pub diagnostics: MhDiagnostics,
}

impl ChainRun {
    /// Column `k` of the recorded states.
    pub fn coordinate(&self, k: usize) -> Option<Vec<f64>> {
        self.states
            .as_ref()
            .map(|s| s.iter().map(|theta| theta[k]).collect())
    }
}

/// How many uniform draws to try before giving up on an initial point.
const INIT_ATTEMPTS: usize = 1000;

/// A seeded chain over a borrowed target, proposal and prior.
pub struct MhChain<'a, T: ?Sized, P: ?Sized> {
    target: &'a T,
    proposal: &'a P,
    prior: &'a PriorBox,
    state: ChainState,
    rng: ChainRng,
    diagnostics: MhDiagnostics,
    emitted: u64,
}

impl<'a, T, P> MhChain<'a, T, P>
where
    T: Target + ?Sized,
    P: Proposal + ?Sized,
{
    /// Starts at `init`, or at a uniform draw from the prior box when `None`.
    pub fn new(
        target: &'a T,
        proposal: &'a P,
        prior: &'a PriorBox,
        init: Option<Vec<f64>>,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = seeded_rng(seed);
        let state = match init {
            Some(theta) => {
                if !prior.contains(&theta) {
                    return Err(Error::InitOutOfBox);
                }
                let eval = target.evaluate(&theta)?;
                ChainState {
                    theta,
                    log_lik: eval.log_lik,
                    property: eval.property,
                }
            }
            None => {
                let mut found = None;
                for _ in 0..INIT_ATTEMPTS {
                    let theta = prior.sample_uniform(&mut rng);
                    if let Ok(eval) = target.evaluate(&theta) {
                        if eval.log_lik.is_finite() {
                            found = Some(ChainState {
                                theta,
                                log_lik: eval.log_lik,
                                property: eval.property,
                            });
                            break;
                        }
                    }
                }
                found.ok_or(Error::InitOutOfBox)?
            }
        };
        Ok(Self {
            target,
            proposal,
            prior,
            state,
            rng,
            diagnostics: MhDiagnostics::default(),
            emitted: 0,
        })
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn diagnostics(&self) -> MhDiagnostics {
        self.diagnostics
    }

    pub fn step(&mut self) -> bool {
        mh_step(
            &mut self.state,
            self.proposal,
            self.prior,
            self.target,
            &mut self.rng,
            &mut self.diagnostics,
        )
    }

    /// Runs `count` steps without recording anything.
    pub fn advance(&mut self, count: u64) {
        for _ in 0..count {
            self.step();
        }
    }

    /// Discards `burn_in` steps, then records the property at each of the
    /// next `steps` states.
    pub fn run(&mut self, steps: usize, burn_in: u64, record_states: bool) -> Result<ChainRun> {
        self.advance(burn_in);
        let mut values = Vec::with_capacity(steps);
        let mut states = record_states.then(|| Vec::with_capacity(steps));
        for _ in 0..steps {
            self.step();
            values.push(self.state.property);
            if let Some(s) = states.as_mut() {
                s.push(self.state.theta.clone());
            }
        }
        Ok(ChainRun {
            trajectory: Trajectory::new(values, burn_in as usize)?,
            states,
            diagnostics: self.diagnostics,
        })
    }
}

impl<T, P> SampleSource for MhChain<'_, T, P>
where
    T: Target + ?Sized,
    P: Proposal + ?Sized,
{
    fn next_sample(&mut self) -> Result<f64> {
        self.step();
        self.emitted += 1;
        let v = self.state.property;
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::SampleOutOfRange {
                index: self.emitted as usize - 1,
                value: v,
            });
        }
        Ok(v)
    }

    fn consumed(&self) -> u64 {
        self.emitted
    }
}

/// Convenience wrapper: builds a chain and runs it.
#[allow(clippy::too_many_arguments)]
pub fn run_chain<T, P>(
    target: &T,
    proposal: &P,
    prior: &PriorBox,
    init: Option<Vec<f64>>,
    steps: usize,
    burn_in: u64,
    seed: u64,
    record_states: bool,
) -> Result<ChainRun>
where
    T: Target + ?Sized,
    P: Proposal + ?Sized,
{
    MhChain::new(target, proposal, prior, init, seed)?.run(steps, burn_in, record_states)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic_target() -> impl Target {
        FnTarget::new(
            |t: &[f64]| -0.5 * ((t[0] - 10.0) / 4.0).powi(2),
            |t: &[f64]| f64::from(t[0] >= 12.0),
        )
    }

    #[test]
    fn loglik_examples() {
        assert_eq!(gaussian_loglik(&[1.0, 2.0], &[1.0, 2.0], &[0.1, 0.3]).unwrap(), 0.0);
        let v = gaussian_loglik(&[1.0], &[0.0], &[std::f64::consts::FRAC_1_SQRT_2]).unwrap();
        assert!((v + 1.0).abs() < 1e-12);
        let a = gaussian_loglik(&[1.0], &[0.7], &[0.2]).unwrap();
        let b = gaussian_loglik(&[1.0, 3.0], &[0.7, 2.9], &[0.2, 0.5]).unwrap();
        assert!(b <= a);
    }

    #[test]
    fn loglik_errors() {
        assert!(gaussian_loglik(&[1.0], &[1.0], &[0.0]).is_err());
        assert!(gaussian_loglik(&[1.0, 2.0], &[1.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn uphill_always_accepted() {
        let target = FnTarget::new(|t: &[f64]| t[0], |_: &[f64]| 0.0);
        let prior = PriorBox::new(vec![-1e9], vec![1e9]).unwrap();
        let proposal = LatticeProposal::new(vec![1.0]);
        let mut state = ChainState {
            theta: vec![0.0],
            log_lik: 0.0,
            property: 0.0,
        };
        let mut rng = seeded_rng(1);
        let mut diag = MhDiagnostics::default();
        for k in 1..=50 {
            assert!(mh_step(&mut state, &proposal, &prior, &target, &mut rng, &mut diag));
            assert_eq!(state.theta[0], k as f64);
        }
    }

    #[test]
    fn out_of_box_rejected_and_state_untouched() {
        let target = FnTarget::new(|_: &[f64]| 0.0, |_: &[f64]| 1.0);
        let prior = PriorBox::new(vec![0.0], vec![1.0]).unwrap();
        let proposal = LatticeProposal::new(vec![5.0]);
        let mut state = ChainState {
            theta: vec![0.123_456_789],
            log_lik: -3.25,
            property: 0.5,
        };
        let before = state.clone();
        let mut rng = seeded_rng(2);
        let mut diag = MhDiagnostics::default();
        for _ in 0..20 {
            assert!(!mh_step(&mut state, &proposal, &prior, &target, &mut rng, &mut diag));
        }
        assert_eq!(state.theta[0].to_bits(), before.theta[0].to_bits());
        assert_eq!(state, before);
        assert_eq!(diag.out_of_box, 20);
    }

    #[test]
    fn evaluation_failure_is_rejection() {
        struct Failing;
        impl Target for Failing {
            fn evaluate(&self, theta: &[f64]) -> Result<Evaluation> {
                if theta[0] > 0.5 {
                    Err(Error::Divergence { time: 1.0 })
                } else {
                    Ok(Evaluation {
                        log_lik: 0.0,
                        property: 0.0,
                    })
                }
            }
        }
        let prior = PriorBox::new(vec![0.0], vec![2.0]).unwrap();
        let proposal = LatticeProposal::new(vec![1.0]);
        let mut chain = MhChain::new(&Failing, &proposal, &prior, Some(vec![0.25]), 3).unwrap();
        chain.advance(10);
        assert_eq!(chain.state().theta, vec![0.25]);
        assert_eq!(chain.diagnostics().eval_failures, 10);
    }

    #[test]
    fn run_chain_shapes() {
        let target = FnTarget::new(|_: &[f64]| 0.0, |_: &[f64]| 1.0);
        let prior = PriorBox::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let proposal = GaussianProposal::new(vec![0.1, 0.1]).unwrap();
        let run = run_chain(&target, &proposal, &prior, None, 500, 100, 4, true).unwrap();
        assert_eq!(run.trajectory.len(), 500);
        assert!(run.trajectory.iter().all(|&v| v == 1.0));
        assert_eq!(run.states.as_ref().unwrap().len(), 500);
        assert_eq!(run.diagnostics.proposals, 600);

        let empty = run_chain(&target, &proposal, &prior, None, 0, 10, 4, false).unwrap();
        assert!(empty.trajectory.is_empty());
    }

    #[test]
    fn init_out_of_box_rejected() {
        let target = quadratic_target();
        let prior = PriorBox::new(vec![0.0], vec![20.0]).unwrap();
        let proposal = LatticeProposal::new(vec![-1.0, 1.0]);
        assert!(matches!(
            MhChain::new(&target, &proposal, &prior, Some(vec![21.0]), 1),
            Err(Error::InitOutOfBox)
        ));
    }

    #[test]
    fn deterministic_in_seed() {
        let target = quadratic_target();
        let prior = PriorBox::new(vec![0.0], vec![20.0]).unwrap();
        let proposal = GaussianProposal::new(vec![1.5]).unwrap();
        let a = run_chain(&target, &proposal, &prior, None, 2000, 10, 8, true).unwrap();
        let b = run_chain(&target, &proposal, &prior, None, 2000, 10, 8, true).unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(a.trajectory, b.trajectory);
    }

    #[test]
    fn prior_box_validation() {
        assert!(PriorBox::new(vec![0.0, 1.0], vec![1.0, 1.0]).is_err());
        assert!(PriorBox::new(vec![0.0], vec![1.0, 2.0]).is_err());
        assert!(GaussianProposal::new(vec![0.1, 0.0]).is_err());
    }
}

//! JAK-STAT pathway model: STAT phosphorylation by Epo-activated receptors,
//! dimerisation, nuclear import and delayed export through a chain of `K`
//! compartments.
//!
//! State layout is `[STAT, STATp, STATpd, X_1..X_K, STATn]`; Epo is a
//! constant input. Integration is fixed-step classical RK4 so that the
//! likelihood and the threshold property are deterministic functions of the
//! parameters.
//!
//! Two modelling choices differ from a literal reading of the species table:
//! Epo is held at its initial amount (it has no equation), and the default
//! initial STAT is 3.0 rather than 0, since with no STAT every species stays
//! at zero. Because `STATn` always equals `sum(X_j)`, nuclear STAT can never
//! exceed half the conserved pool, so the threshold 1 is reachable only when
//! the pool exceeds 2.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::chain::seeded_rng;
use crate::csvio::{fmt_f64, CsvTable};
use crate::error::{check_param, Error, Result};
use crate::mh::{gaussian_loglik, Evaluation, GaussianProposal, PriorBox, Target};

const STAT: usize = 0;
const STATP: usize = 1;
const STATPD: usize = 2;
const X_START: usize = 3;

/// Number of observation time points in synthesized data.
pub const SYNTH_POINTS: usize = 18;

/// Parameter names in prior/proposal order.
pub const PARAM_NAMES: [&str; 4] = ["k1", "k2", "k3", "k4"];

/// Prior ranges and proposal scales for `(k1, k2, k3, k4)`.
pub const PRIOR_LO: [f64; 4] = [0.0, 0.0, 0.0, 0.0];
pub const PRIOR_HI: [f64; 4] = [5.0, 30.0, 1.0, 5.0];
pub const SIGMA_MH: [f64; 4] = [0.02, 0.5, 0.01, 0.02];

/// Synthetic "true" parameters used to generate data. Not fitted to any
/// measured dataset.
pub const REFERENCE_PARAMS: JakStatParams = JakStatParams {
    k1: 0.5,
    k2: 2.0,
    k3: 0.1,
    k4: 0.5,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JakStatParams {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
}

impl JakStatParams {
    pub fn from_slice(theta: &[f64]) -> Result<Self> {
        match theta {
            [k1, k2, k3, k4] => Ok(Self {
                k1: *k1,
                k2: *k2,
                k3: *k3,
                k4: *k4,
            }),
            _ => Err(Error::DimensionMismatch {
                expected: 4,
                found: theta.len(),
            }),
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        vec![self.k1, self.k2, self.k3, self.k4]
    }
}

pub fn default_prior() -> PriorBox {
    PriorBox::new(PRIOR_LO.to_vec(), PRIOR_HI.to_vec()).expect("static prior box is valid")
}

pub fn default_proposal() -> GaussianProposal {
    GaussianProposal::new(SIGMA_MH.to_vec()).expect("static proposal scales are positive")
}

/// Fixed model inputs and integrator settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSettings {
    pub epo: f64,
    pub init_stat: f64,
    /// Number of delay compartments `K`.
    pub delay_compartments: usize,
    /// RK4 step in minutes.
    pub dt: f64,
    pub t_end: f64,
    /// Level of nuclear STAT the property asks about.
    pub threshold: f64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            epo: 2.0,
            init_stat: 3.0,
            delay_compartments: 10,
            dt: 0.01,
            t_end: 60.0,
            threshold: 1.0,
        }
    }
}

impl ModelSettings {
    pub fn validate(&self) -> Result<()> {
        check_param("dt", self.dt, self.dt > 0.0, "must be positive")?;
        check_param("t_end", self.t_end, self.t_end > 0.0, "must be positive")?;
        check_param(
            "K",
            self.delay_compartments as f64,
            self.delay_compartments >= 1,
            "need at least one delay compartment",
        )?;
        check_param("epo", self.epo, self.epo >= 0.0, "must be nonnegative")?;
        check_param(
            "init.stat",
            self.init_stat,
            self.init_stat >= 0.0,
            "must be nonnegative",
        )?;
        Ok(())
    }

    pub fn initial_state(&self) -> JakStatState {
        let mut y = vec![0.0; self.delay_compartments + 4];
        y[STAT] = self.init_stat;
        JakStatState { epo: self.epo, y }
    }
}

/// Species concentrations. Epo is carried along but never changes.
#[derive(Debug, Clone, PartialEq)]
pub struct JakStatState {
    pub epo: f64,
    /// `[STAT, STATp, STATpd, X_1..X_K, STATn]`.
    pub y: Vec<f64>,
}

impl JakStatState {
    pub fn zeros(delay_compartments: usize) -> Self {
        Self {
            epo: 0.0,
            y: vec![0.0; delay_compartments + 4],
        }
    }

    pub fn delay_compartments(&self) -> usize {
        self.y.len() - 4
    }

    pub fn stat(&self) -> f64 {
        self.y[STAT]
    }

    pub fn statp(&self) -> f64 {
        self.y[STATP]
    }

    pub fn statpd(&self) -> f64 {
        self.y[STATPD]
    }

    pub fn x(&self) -> &[f64] {
        &self.y[X_START..self.y.len() - 1]
    }

    pub fn statn(&self) -> f64 {
        self.y[self.y.len() - 1]
    }

    /// `STAT + STATp + 2 STATpd + 2 sum(X_j)`, invariant under the dynamics.
    pub fn conserved_pool(&self) -> f64 {
        conserved(&self.y)
    }
}

fn conserved(y: &[f64]) -> f64 {
    let k = y.len() - 4;
    let delay: f64 = y[X_START..X_START + k].iter().sum();
    y[STAT] + y[STATP] + 2.0 * y[STATPD] + 2.0 * delay
}

fn rhs_into(y: &[f64], epo: f64, p: &JakStatParams, dy: &mut [f64]) {
    let k = y.len() - 4;
    let last_x = X_START + k - 1;
    let statn = X_START + k;
    let phosph = p.k1 * y[STAT] * epo;
    let dimer = p.k2 * y[STATP] * y[STATP];
    let import = p.k3 * y[STATPD];
    let export = p.k4 * y[last_x];

    dy[STAT] = -phosph + 2.0 * export;
    dy[STATP] = phosph - dimer;
    dy[STATPD] = -import + 0.5 * dimer;
    dy[X_START] = import - p.k4 * y[X_START];
    for j in X_START + 1..=last_x {
        dy[j] = p.k4 * y[j - 1] - p.k4 * y[j];
    }
    dy[statn] = import - export;
}

/// Time derivative of `state.y` (Epo is constant).
pub fn ode_rhs(state: &JakStatState, params: &JakStatParams) -> Vec<f64> {
    let mut dy = vec![0.0; state.y.len()];
    rhs_into(&state.y, state.epo, params, &mut dy);
    dy
}

/// `y1` = total phosphorylated STAT, `y2` = total cytoplasmic STAT.
pub fn observables(state: &JakStatState) -> (f64, f64) {
    observables_of(&state.y)
}

fn observables_of(y: &[f64]) -> (f64, f64) {
    let y1 = y[STATP] + 2.0 * y[STATPD];
    (y1, y[STAT] + y1)
}

struct Rk4Scratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Scratch {
    fn new(n: usize) -> Self {
        Self {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }

    /// Advances `y` by one step of size `h`; leaves `k1` holding `f(y_old)`.
    fn step(&mut self, y: &mut [f64], h: f64, epo: f64, p: &JakStatParams) {
        let n = y.len();
        rhs_into(y, epo, p, &mut self.k1);
        for i in 0..n {
            self.tmp[i] = y[i] + 0.5 * h * self.k1[i];
        }
        rhs_into(&self.tmp, epo, p, &mut self.k2);
        for i in 0..n {
            self.tmp[i] = y[i] + 0.5 * h * self.k2[i];
        }
        rhs_into(&self.tmp, epo, p, &mut self.k3);
        for i in 0..n {
            self.tmp[i] = y[i] + h * self.k3[i];
        }
        rhs_into(&self.tmp, epo, p, &mut self.k4);
        for i in 0..n {
            y[i] += h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }
}

/// Uniform grid on `[0, t_end]` with step as close to `dt` as possible
/// without exceeding it: `steps = ceil(t_end/dt)` up to a 1e-9 tolerance.
fn grid(t_end: f64, dt: f64) -> (usize, f64) {
    let steps = ((t_end / dt) - 1e-9).ceil().max(1.0) as usize;
    (steps, t_end / steps as f64)
}

/// States at every grid time.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl DenseTrajectory {
    pub fn last(&self) -> &[f64] {
        self.states.last().expect("trajectory holds the initial state")
    }
}

/// Fixed-step RK4 from 0 to `t_end`, recording every step.
pub fn integrate(
    params: &JakStatParams,
    init: &JakStatState,
    t_end: f64,
    dt: f64,
) -> Result<DenseTrajectory> {
    check_param("dt", dt, dt > 0.0, "must be positive")?;
    check_param("t_end", t_end, t_end > 0.0, "must be positive")?;
    let (steps, h) = grid(t_end, dt);
    let mut y = init.y.clone();
    let mut scratch = Rk4Scratch::new(y.len());
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    times.push(0.0);
    states.push(y.clone());
    for s in 1..=steps {
        scratch.step(&mut y, h, init.epo, params);
        let t = s as f64 * h;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { time: t });
        }
        times.push(t);
        states.push(y.clone());
    }
    Ok(DenseTrajectory { times, states })
}

/// Observables at requested times and the grid maximum of nuclear STAT.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulated {
    pub y1: Vec<f64>,
    pub y2: Vec<f64>,
    pub max_statn: f64,
}

/// Integrates over `[0, t_end]` and reads the observables at `obs_times`
/// by cubic Hermite interpolation between the bracketing grid nodes (using
/// the vector field for the slopes, so the interpolant is fourth-order like
/// the integrator). All `obs_times` must be sorted and inside `[0, t_end]`.
pub fn simulate(
    params: &JakStatParams,
    settings: &ModelSettings,
    obs_times: &[f64],
) -> Result<Simulated> {
    let init = settings.initial_state();
    let (steps, h) = grid(settings.t_end, settings.dt);
    let epo = init.epo;
    let mut y = init.y;
    let n = y.len();
    let statn = n - 1;
    let mut scratch = Rk4Scratch::new(n);
    let mut prev = y.clone();
    let mut slope_prev = vec![0.0; n];
    let mut slope_next = vec![0.0; n];
    let mut out1 = Vec::with_capacity(obs_times.len());
    let mut out2 = Vec::with_capacity(obs_times.len());
    let mut next_obs = 0;
    let mut max_statn = y[statn];

    // Observations at t = 0 come straight from the initial state.
    while next_obs < obs_times.len() && obs_times[next_obs] <= 0.0 {
        let (a, b) = observables_of(&y);
        out1.push(a);
        out2.push(b);
        next_obs += 1;
    }

    for s in 1..=steps {
        prev.copy_from_slice(&y);
        scratch.step(&mut y, h, epo, params);
        let t = s as f64 * h;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { time: t });
        }
        max_statn = max_statn.max(y[statn]);

        let t_prev = (s - 1) as f64 * h;
        if next_obs < obs_times.len() && obs_times[next_obs] <= t + 1e-9 * h {
            slope_prev.copy_from_slice(&scratch.k1);
            rhs_into(&y, epo, params, &mut slope_next);
            while next_obs < obs_times.len() && obs_times[next_obs] <= t + 1e-9 * h {
                let u = ((obs_times[next_obs] - t_prev) / h).clamp(0.0, 1.0);
                let interp = |i: usize| hermite(u, h, prev[i], slope_prev[i], y[i], slope_next[i]);
                let (stat, statp, statpd) = (interp(STAT), interp(STATP), interp(STATPD));
                let y1 = statp + 2.0 * statpd;
                out1.push(y1);
                out2.push(stat + y1);
                next_obs += 1;
            }
        }
    }
    if next_obs < obs_times.len() {
        return Err(Error::Config(format!(
            "observation time {} lies beyond t_end = {}",
            obs_times[next_obs], settings.t_end
        )));
    }
    Ok(Simulated {
        y1: out1,
        y2: out2,
        max_statn,
    })
}

fn hermite(u: f64, h: f64, y0: f64, m0: f64, y1: f64, m1: f64) -> f64 {
    let u2 = u * u;
    let u3 = u2 * u;
    let h00 = 2.0 * u3 - 3.0 * u2 + 1.0;
    let h10 = u3 - 2.0 * u2 + u;
    let h01 = -2.0 * u3 + 3.0 * u2;
    let h11 = u3 - u2;
    h00 * y0 + h10 * h * m0 + h01 * y1 + h11 * h * m1
}

/// Threshold verdict for one parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PropertyValue {
    pub reached: bool,
    /// Integration failed; `reached` is then `false`.
    pub diverged: bool,
}

impl PropertyValue {
    pub fn as_f64(&self) -> f64 {
        f64::from(u8::from(self.reached))
    }
}

/// Whether nuclear STAT reaches `settings.threshold` on the integration
/// grid over `[0, t_end]`.
pub fn property_f(params: &JakStatParams, settings: &ModelSettings) -> PropertyValue {
    match simulate(params, settings, &[]) {
        Ok(sim) => PropertyValue {
            reached: sim.max_statn >= settings.threshold,
            diverged: false,
        },
        Err(_) => PropertyValue {
            reached: false,
            diverged: true,
        },
    }
}

/// Measurements of the two observables with their standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub times: Vec<f64>,
    pub y1: Vec<f64>,
    pub sd1: Vec<f64>,
    pub y2: Vec<f64>,
    pub sd2: Vec<f64>,
}

impl ObservationSet {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.times.len();
        for col in [&self.y1, &self.sd1, &self.y2, &self.sd2] {
            if col.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: col.len(),
                });
            }
        }
        if let Some(w) = self.times.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::Config(format!(
                "observation times must increase strictly ({} then {})",
                w[0], w[1]
            )));
        }
        if self.sd1.iter().chain(&self.sd2).any(|s| !(*s > 0.0)) {
            return Err(Error::Config("observation sd must be positive".into()));
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,y1,sd1,y2,sd2")?;
        for j in 0..self.len() {
            writeln!(
                out,
                "{},{},{},{},{}",
                fmt_f64(self.times[j]),
                fmt_f64(self.y1[j]),
                fmt_f64(self.sd1[j]),
                fmt_f64(self.y2[j]),
                fmt_f64(self.sd2[j])
            )?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(file)
    }
}

/// Parses `t,y1,sd1,y2,sd2`, rejecting non-increasing times and
/// nonpositive standard deviations with the offending line number.
pub fn load_observations(path: &Path) -> Result<ObservationSet> {
    let table = CsvTable::load(path)?;
    let cols: Vec<usize> = ["t", "y1", "sd1", "y2", "sd2"]
        .iter()
        .map(|c| table.index_of(c))
        .collect::<Result<_>>()?;
    let mut obs = ObservationSet {
        times: Vec::new(),
        y1: Vec::new(),
        sd1: Vec::new(),
        y2: Vec::new(),
        sd2: Vec::new(),
    };
    let bad = |i: usize, reason: String| Error::Parse {
        path: path.to_path_buf(),
        line: table.line_of(i),
        reason,
    };
    for (i, row) in table.rows().iter().enumerate() {
        let [t, y1, sd1, y2, sd2] = [0, 1, 2, 3, 4].map(|k| row[cols[k]]);
        if let Some(&last) = obs.times.last() {
            if t <= last {
                return Err(bad(i, format!("time {t} does not exceed previous time {last}")));
            }
        }
        if !(sd1 > 0.0) || !(sd2 > 0.0) {
            return Err(bad(i, "standard deviations must be positive".into()));
        }
        if [t, y1, y2].iter().any(|v| !v.is_finite()) {
            return Err(bad(i, "non-finite value".into()));
        }
        obs.times.push(t);
        obs.y1.push(y1);
        obs.sd1.push(sd1);
        obs.y2.push(y2);
        obs.sd2.push(sd2);
    }
    Ok(obs)
}

/// `SYNTH_POINTS` evenly spaced times in `(0, t_end]`.
pub fn synth_times(t_end: f64) -> Vec<f64> {
    (1..=SYNTH_POINTS)
        .map(|j| t_end * j as f64 / SYNTH_POINTS as f64)
        .collect()
}

/// Simulates the observables at [`synth_times`] and adds independent
/// Gaussian noise with standard deviation `noise_sd[i]` for observable `i`.
///
/// The recorded sd equals the noise sd; a zero noise level is recorded as
/// sd 1 so the set stays usable in a likelihood.
pub fn synthesize_data(
    ref_params: &JakStatParams,
    settings: &ModelSettings,
    noise_sd: [f64; 2],
    seed: u64,
) -> Result<ObservationSet> {
    for sd in noise_sd {
        check_param("noise_sd", sd, sd >= 0.0, "must be nonnegative")?;
    }
    let times = synth_times(settings.t_end);
    let sim = simulate(ref_params, settings, &times)?;
    let mut rng = seeded_rng(seed);
    let mut noisy = |clean: &[f64], sd: f64| -> Vec<f64> {
        clean
            .iter()
            .map(|v| {
                let z: f64 = rng.sample(StandardNormal);
                v + sd * z
            })
            .collect()
    };
    let y1 = noisy(&sim.y1, noise_sd[0]);
    let y2 = noisy(&sim.y2, noise_sd[1]);
    let recorded = |sd: f64| if sd > 0.0 { sd } else { 1.0 };
    Ok(ObservationSet {
        sd1: vec![recorded(noise_sd[0]); times.len()],
        sd2: vec![recorded(noise_sd[1]); times.len()],
        times,
        y1,
        y2,
    })
}

/// Posterior over `(k1..k4)` given observations, with the threshold
/// property as the recorded function.
#[derive(Debug, Clone)]
pub struct JakStatPosterior {
    settings: ModelSettings,
    observed: Vec<f64>,
    sigma: Vec<f64>,
    times: Vec<f64>,
}

impl JakStatPosterior {
    pub fn new(settings: ModelSettings, data: &ObservationSet) -> Result<Self> {
        settings.validate()?;
        data.validate()?;
        if let Some(&t) = data.times.iter().find(|&&t| t < 0.0 || t > settings.t_end) {
            return Err(Error::Config(format!(
                "observation time {t} outside [0, {}]",
                settings.t_end
            )));
        }
        let observed = data.y1.iter().chain(&data.y2).copied().collect();
        let sigma = data.sd1.iter().chain(&data.sd2).copied().collect();
        Ok(Self {
            settings,
            observed,
            sigma,
            times: data.times.clone(),
        })
    }

    pub fn settings(&self) -> &ModelSettings {
        &self.settings
    }

    pub fn log_likelihood(&self, params: &JakStatParams) -> Result<f64> {
        Ok(self.evaluate_params(params)?.log_lik)
    }

    fn evaluate_params(&self, params: &JakStatParams) -> Result<Evaluation> {
        let sim = simulate(params, &self.settings, &self.times)?;
        let simulated: Vec<f64> = sim.y1.iter().chain(&sim.y2).copied().collect();
        let log_lik = gaussian_loglik(&self.observed, &simulated, &self.sigma)?;
        Ok(Evaluation {
            log_lik,
            property: f64::from(u8::from(sim.max_statn >= self.settings.threshold)),
        })
    }
}

impl Target for JakStatPosterior {
    fn evaluate(&self, theta: &[f64]) -> Result<Evaluation> {
        self.evaluate_params(&JakStatParams::from_slice(theta)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state_with(f: impl FnOnce(&mut Vec<f64>), epo: f64) -> JakStatState {
        let mut s = JakStatState::zeros(10);
        s.epo = epo;
        f(&mut s.y);
        s
    }

    #[test]
    fn zero_state_has_zero_derivative() {
        let s = state_with(|_| {}, 2.0);
        let d = ode_rhs(&s, &REFERENCE_PARAMS);
        assert!(d.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_phosphorylation_term() {
        let s = state_with(|y| y[STAT] = 1.0, 2.0);
        let p = JakStatParams {
            k1: 0.5,
            k2: 0.0,
            k3: 0.0,
            k4: 0.0,
        };
        let d = ode_rhs(&s, &p);
        assert_eq!(d[STAT], -1.0);
        assert_eq!(d[STATP], 1.0);
        assert!(d[2..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conserved_combination_has_zero_derivative() {
        let mut rng = seeded_rng(17);
        for _ in 0..1000 {
            let mut s = JakStatState::zeros(10);
            s.epo = rng.random::<f64>() * 3.0;
            for v in s.y.iter_mut() {
                *v = rng.random::<f64>() * 2.0;
            }
            let p = JakStatParams {
                k1: rng.random::<f64>() * 5.0,
                k2: rng.random::<f64>() * 30.0,
                k3: rng.random::<f64>(),
                k4: rng.random::<f64>() * 5.0,
            };
            let d = ode_rhs(&s, &p);
            let dc = conserved(&d);
            let scale: f64 = d.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
            assert!(dc.abs() <= 1e-13 * scale, "{dc}");
        }
    }

    #[test]
    fn zero_rates_keep_state_constant() {
        let p = JakStatParams {
            k1: 0.0,
            k2: 0.0,
            k3: 0.0,
            k4: 0.0,
        };
        let init = ModelSettings::default().initial_state();
        let traj = integrate(&p, &init, 60.0, 0.01).unwrap();
        assert_eq!(traj.times.len(), 6001);
        assert!(traj.states.iter().all(|s| *s == init.y));
    }

    #[test]
    fn observables_read_off_coefficients() {
        assert_eq!(observables(&JakStatState::zeros(10)), (0.0, 0.0));
        let s = state_with(|y| y[STATP] = 1.0, 0.0);
        assert_eq!(observables(&s), (1.0, 1.0));
        let s = state_with(
            |y| {
                y[STAT] = 0.7;
                y[STATP] = 0.2;
                y[STATPD] = 0.4;
            },
            0.0,
        );
        let (y1, y2) = observables(&s);
        assert!((y2 - y1 - 0.7).abs() < 1e-15);
    }

    #[test]
    fn property_examples() {
        let zero = JakStatParams {
            k1: 0.0,
            k2: 0.0,
            k3: 0.0,
            k4: 0.0,
        };
        let settings = ModelSettings::default();
        assert!(!property_f(&zero, &settings).reached);

        // No export: nuclear STAT accumulates half of the conserved pool.
        let fast = JakStatParams {
            k1: 5.0,
            k2: 30.0,
            k3: 1.0,
            k4: 0.0,
        };
        let rich = ModelSettings {
            init_stat: 2.5,
            ..settings
        };
        assert!(property_f(&fast, &rich).reached);
        let poor = ModelSettings {
            init_stat: 1.9,
            ..settings
        };
        assert!(!property_f(&fast, &poor).reached);
    }

    #[test]
    fn property_monotone_in_initial_stat() {
        let p = JakStatParams {
            k1: 1.0,
            k2: 5.0,
            k3: 0.3,
            k4: 0.0,
        };
        let mut last = false;
        for init_stat in [0.5, 1.0, 1.5, 2.0, 2.2, 2.6, 3.0, 4.0] {
            let settings = ModelSettings {
                init_stat,
                ..ModelSettings::default()
            };
            let reached = property_f(&p, &settings).reached;
            assert!(reached || !last, "verdict dropped at init_stat {init_stat}");
            last = reached;
        }
        assert!(last);
    }

    #[test]
    fn statn_tracks_delay_chain() {
        let settings = ModelSettings::default();
        let traj = integrate(&REFERENCE_PARAMS, &settings.initial_state(), 60.0, 0.01).unwrap();
        for y in traj.states.iter().step_by(500) {
            let s = JakStatState { epo: 2.0, y: y.clone() };
            let delay: f64 = s.x().iter().sum();
            assert!((s.statn() - delay).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolated_observables_match_grid_values() {
        let settings = ModelSettings::default();
        // On-grid times read the node; off-grid times sit between neighbours.
        let times = [1.0, 10.0 / 3.0, 60.0];
        let sim = simulate(&REFERENCE_PARAMS, &settings, &times).unwrap();
        let fine = integrate(&REFERENCE_PARAMS, &settings.initial_state(), 60.0, 0.01).unwrap();
        let at = |t: f64| {
            let i = (t / 0.01).round() as usize;
            observables_of(&fine.states[i])
        };
        assert!((sim.y1[0] - at(1.0).0).abs() < 1e-12);
        assert!((sim.y2[2] - at(60.0).1).abs() < 1e-12);
        let lo = observables_of(&fine.states[333]).0;
        let hi = observables_of(&fine.states[334]).0;
        assert!(sim.y1[1] >= lo.min(hi) - 1e-9 && sim.y1[1] <= lo.max(hi) + 1e-9);
    }

    #[test]
    fn synthesize_without_noise_is_exact() {
        let settings = ModelSettings::default();
        let data = synthesize_data(&REFERENCE_PARAMS, &settings, [0.0, 0.0], 1).unwrap();
        assert_eq!(data.len(), SYNTH_POINTS);
        let sim = simulate(&REFERENCE_PARAMS, &settings, &data.times).unwrap();
        assert_eq!(data.y1, sim.y1);
        assert_eq!(data.y2, sim.y2);
        let post = JakStatPosterior::new(settings, &data).unwrap();
        assert_eq!(post.log_likelihood(&REFERENCE_PARAMS).unwrap(), 0.0);
    }

    #[test]
    fn loglik_at_truth_behaves_like_half_chi_square() {
        // -loglik is half a chi-square with 36 degrees of freedom: mean 18, sd sqrt(18).
        let settings = ModelSettings::default();
        let seeds = 100;
        let values: Vec<f64> = (0..seeds)
            .map(|seed| {
                let data = synthesize_data(&REFERENCE_PARAMS, &settings, [0.1, 0.1], seed).unwrap();
                JakStatPosterior::new(settings, &data)
                    .unwrap()
                    .log_likelihood(&REFERENCE_PARAMS)
                    .unwrap()
            })
            .collect();
        let mean = values.iter().sum::<f64>() / seeds as f64;
        let half_width = 3.0 * 18f64.sqrt() / (seeds as f64).sqrt();
        assert!((mean + 18.0).abs() <= half_width, "mean {mean}");
    }

    #[test]
    fn observation_csv_roundtrip_and_validation() {
        let settings = ModelSettings::default();
        let data = synthesize_data(&REFERENCE_PARAMS, &settings, [0.1, 0.05], 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("obs.csv");
        data.save(&path).unwrap();
        let back = load_observations(&path).unwrap();
        assert_eq!(back, data);
        assert_eq!(back.len(), 18);

        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "t,y1,sd1,y2,sd2\n1,0.5,0.1,0.5,0.1\n2,0.5,0,0.5,0.1\n").unwrap();
        match load_observations(&bad).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        std::fs::write(&bad, "t,y1,sd1,y2,sd2\n2,0.5,0.1,0.5,0.1\n1,0.5,0.1,0.5,0.1\n").unwrap();
        assert!(matches!(
            load_observations(&bad),
            Err(Error::Parse { line: 3, .. })
        ));
        std::fs::write(&bad, "t,y1,sd1,y2,sd2\n1,abc,0.1,0.5,0.1\n").unwrap();
        assert!(matches!(
            load_observations(&bad),
            Err(Error::Parse { line: 2, .. })
        ));
    }
}

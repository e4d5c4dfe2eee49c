//! Replicated runs over seeded chains, and the CSV files they produce.
//!
//! Chain `c` of a run uses seed `seed + c` and owns its sampler, so chains
//! run on a work pool without sharing state. Results are collected in chain
//! order and every table is rendered after the join, which keeps the output
//! bytes independent of the number of workers.
//!
//! Per chain, [`cmd_case_study`] runs the requested burn-in, draws `steps`
//! samples, estimates the spectral gap (drawing more when the estimator
//! asks), extends the burn-in to `ceil(30 / gamma)` if needed, and then runs
//! every test cell on the same post-burn-in path. Tests that need more
//! samples than were drawn extend the path, up to `max_samples`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::chain::{chain_seed, FiniteChain, FiniteChainSource, Init, SampleSource};
use crate::config::{GammaChoice, MeanChoice, RunConfig, SourceKind};
use crate::csvio::fmt_f64;
use crate::error::{Error, Result};
use crate::hyptest::{
    burn_in_for, conservative_gamma, expected_stop_indiff, expected_stop_noindiff,
    fixed_error_bound, fixed_length_test, g_threshold, m_threshold, required_n, seq_indiff_test,
    seq_noindiff_test, Schedule, TestConfig, TestOutcome,
};
use crate::jakstat::{
    load_observations, synthesize_data, JakStatParams, JakStatPosterior, ObservationSet, PARAM_NAMES,
};
use crate::mh::{GaussianProposal, MhChain, PriorBox};
use crate::spectral::{estimate_gap, exact_gap_finite, GapEstimate, GapOutcome};

pub const MANIFEST: &str = "manifest.txt";
pub const DECISIONS: &str = "decisions.csv";
pub const ERROR_RATES: &str = "error_rates.csv";
pub const STOPPING_TIMES: &str = "stopping_times.csv";
pub const GAP: &str = "gap.csv";
pub const GAP_TRACE: &str = "gap_trace.csv";
pub const BOUNDS: &str = "bounds.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TestKind {
    /// Fixed-length test at a given `n`.
    Fixed,
    /// Fixed-length test at `required_n(epsilon, gamma, delta)`.
    FixedRequired,
    SeqIndiff,
    SeqNoIndiff,
}

impl TestKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TestKind::Fixed => "fixed",
            TestKind::FixedRequired => "fixed_req",
            TestKind::SeqIndiff => "seq_indiff",
            TestKind::SeqNoIndiff => "seq_noindiff",
        }
    }
}

/// One test configuration applied to every chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub test: TestKind,
    pub r: f64,
    pub delta: Option<f64>,
    pub epsilon: Option<f64>,
    /// Sample size of a [`TestKind::Fixed`] cell.
    pub n: Option<u64>,
}

/// Result of one cell on one chain; `None` when the chain hit `max_samples`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub cell: Cell,
    pub outcome: Option<TestOutcome>,
    pub consumed: u64,
}

/// Everything one chain contributes to the tables.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainReport {
    pub chain_id: usize,
    pub gap: GapEstimate,
    /// The estimator still asked for more samples when `gap.max_n` was reached.
    pub needs_more: bool,
    pub gamma_used: f64,
    pub burn_in: u64,
    pub acceptance_rate: Option<f64>,
    pub results: Vec<CellResult>,
    /// Sum and count of the post-burn-in samples drawn.
    pub sample_sum: f64,
    pub sample_count: usize,
}

enum Driver<'a> {
    Oracle(FiniteChainSource<'a>),
    Mh(MhChain<'a, JakStatPosterior, GaussianProposal>),
    Replay,
}

/// Post-burn-in samples of one chain, extended on demand.
struct ChainBuffer<'a> {
    values: Vec<f64>,
    /// Per-coordinate parameter paths, kept only while estimating the gap.
    coords: Option<Vec<Vec<f64>>>,
    driver: Driver<'a>,
    cap: usize,
}

impl ChainBuffer<'_> {
    fn push_one(&mut self) -> Result<()> {
        if self.values.len() >= self.cap {
            return Err(Error::SourceExhausted {
                consumed: self.values.len() as u64,
            });
        }
        let v = match &mut self.driver {
            Driver::Oracle(src) => src.next_sample()?,
            Driver::Mh(chain) => {
                let v = chain.next_sample()?;
                if let Some(coords) = self.coords.as_mut() {
                    for (path, x) in coords.iter_mut().zip(&chain.state().theta) {
                        path.push(*x);
                    }
                }
                v
            }
            Driver::Replay => {
                return Err(Error::SourceExhausted {
                    consumed: self.values.len() as u64,
                })
            }
        };
        self.values.push(v);
        Ok(())
    }

    fn fill_to(&mut self, n: usize) -> Result<()> {
        while self.values.len() < n {
            self.push_one()?;
        }
        Ok(())
    }

    /// Moves the first `count` samples into the burn-in.
    fn discard_front(&mut self, count: usize) -> Result<()> {
        self.fill_to(count)?;
        self.values.drain(..count);
        if let Some(coords) = self.coords.as_mut() {
            for path in coords {
                path.drain(..count.min(path.len()));
            }
        }
        Ok(())
    }
}

/// Reads a chain's buffer from the start, extending it when needed.
struct BufferSource<'b, 'a> {
    buf: &'b mut ChainBuffer<'a>,
    pos: usize,
}

impl SampleSource for BufferSource<'_, '_> {
    fn next_sample(&mut self) -> Result<f64> {
        if self.pos == self.buf.values.len() {
            self.buf.push_one()?;
        }
        let v = self.buf.values[self.pos];
        self.pos += 1;
        Ok(v)
    }

    fn consumed(&self) -> u64 {
        self.pos as u64
    }
}

/// Read-only state shared by all chains of a run.
pub struct Context<'a> {
    cfg: &'a RunConfig,
    oracle: Option<FiniteChain>,
    exact_gamma: Option<f64>,
    posterior: Option<JakStatPosterior>,
    prior: PriorBox,
    proposal: GaussianProposal,
    replay: Option<&'a [f64]>,
}

impl<'a> Context<'a> {
    /// Builds the sample source described by `cfg`, or replays `replay` as
    /// a single chain of post-burn-in samples when given.
    pub fn new(cfg: &'a RunConfig, replay: Option<&'a [f64]>) -> Result<Self> {
        let prior = PriorBox::new(cfg.prior_lo.to_vec(), cfg.prior_hi.to_vec())?;
        let proposal = GaussianProposal::new(cfg.sigma_mh.to_vec())?;
        let (mut oracle, mut exact_gamma, mut posterior) = (None, None, None);
        if replay.is_none() {
            match cfg.source {
                SourceKind::Oracle => {
                    let chain = FiniteChain::two_state(cfg.oracle_p, cfg.oracle_q)?;
                    exact_gamma = Some(exact_gap_finite(&chain)?.gamma);
                    oracle = Some(chain);
                }
                SourceKind::JakStat => {
                    let data = observation_data(cfg)?;
                    posterior = Some(JakStatPosterior::new(cfg.model, &data)?);
                }
            }
        } else if cfg.gamma == GammaChoice::Exact {
            return Err(Error::Config("gamma = exact needs an oracle source".into()));
        }
        Ok(Self {
            cfg,
            oracle,
            exact_gamma,
            posterior,
            prior,
            proposal,
            replay,
        })
    }

    /// Chains to run: one for a replayed trajectory.
    pub fn chain_count(&self) -> usize {
        if self.replay.is_some() {
            1
        } else {
            self.cfg.chains
        }
    }

    fn buffer(&self, chain_id: usize) -> Result<ChainBuffer<'_>> {
        let cfg = self.cfg;
        let seed = chain_seed(cfg.seed, chain_id);
        if let Some(values) = self.replay {
            return Ok(ChainBuffer {
                values: values.to_vec(),
                coords: None,
                driver: Driver::Replay,
                cap: values.len(),
            });
        }
        let driver = if let Some(chain) = &self.oracle {
            let mut src = FiniteChainSource::new(chain, seed, &Init::Stationary)?;
            for _ in 0..cfg.burn_in {
                src.step();
            }
            Driver::Oracle(src)
        } else {
            let posterior = self.posterior.as_ref().expect("context has a source");
            let mut chain = MhChain::new(posterior, &self.proposal, &self.prior, None, seed)?;
            chain.advance(cfg.burn_in);
            Driver::Mh(chain)
        };
        let coords = matches!(driver, Driver::Mh(_)).then(|| vec![Vec::new(); PARAM_NAMES.len()]);
        Ok(ChainBuffer {
            values: Vec::with_capacity(cfg.steps),
            coords,
            driver,
            cap: cfg.max_samples,
        })
    }

    /// Gap estimate on the buffer, drawing more samples while the estimator
    /// asks for them and `gap.max_n` allows.
    fn estimate(&self, buf: &mut ChainBuffer<'_>) -> Result<(GapEstimate, bool)> {
        loop {
            let outcome = match &buf.coords {
                Some(coords) => {
                    let functions: Vec<(&str, &[f64])> = PARAM_NAMES
                        .iter()
                        .zip(coords)
                        .map(|(name, path)| (*name, path.as_slice()))
                        .collect();
                    estimate_gap(&functions)?
                }
                None => estimate_gap(&[("f", buf.values.as_slice())])?,
            };
            match outcome {
                GapOutcome::Accepted(est) => return Ok((est, false)),
                GapOutcome::NeedsMoreSamples {
                    provisional,
                    target_n,
                } => {
                    let have = buf.values.len();
                    if target_n <= have || target_n > self.cfg.gap_max_n.min(buf.cap) {
                        return Ok((provisional, true));
                    }
                    buf.fill_to(target_n)?;
                }
            }
        }
    }

    fn gamma_for(&self, estimate: &GapEstimate) -> f64 {
        match self.cfg.gamma {
            GammaChoice::Estimate => conservative_gamma(estimate.gamma_star_hat, self.cfg.gamma_safety),
            GammaChoice::Exact => self.exact_gamma.expect("validated in Context::new"),
            GammaChoice::Fixed(g) => g,
        }
    }

    /// Burn-in, gap estimate and every cell for one chain.
    pub fn run_chain(&self, chain_id: usize, cells: &[Cell]) -> Result<ChainReport> {
        let mut buf = self.buffer(chain_id)?;
        let initial = self.cfg.steps.min(buf.cap);
        buf.fill_to(initial)?;
        let (gap, needs_more) = self.estimate(&mut buf)?;
        let gamma_used = self.gamma_for(&gap);
        buf.coords = None;

        let burn_in = if self.replay.is_some() {
            0
        } else {
            let target = burn_in_for(gamma_used, self.cfg.burn_in);
            buf.discard_front((target - self.cfg.burn_in) as usize)?;
            target
        };

        let mut results = Vec::with_capacity(cells.len());
        for cell in cells {
            let mut src = BufferSource {
                buf: &mut buf,
                pos: 0,
            };
            let outcome = match run_cell(&mut src, cell, gamma_used, self.cfg) {
                Ok(o) => Some(o),
                Err(Error::SourceExhausted { .. }) => None,
                Err(e) => return Err(e),
            };
            results.push(CellResult {
                cell: *cell,
                outcome,
                consumed: src.pos as u64,
            });
        }
        let acceptance_rate = match &buf.driver {
            Driver::Mh(chain) => Some(chain.diagnostics().acceptance_rate()),
            _ => None,
        };
        Ok(ChainReport {
            chain_id,
            gap,
            needs_more,
            gamma_used,
            burn_in,
            acceptance_rate,
            sample_sum: buf.values.iter().sum(),
            sample_count: buf.values.len(),
            results,
        })
    }

    /// Runs every chain on a pool of `cfg.parallel` workers (0: pool default).
    pub fn run_all(&self, cells: &[Cell]) -> Result<Vec<ChainReport>> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.cfg.parallel)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        let reports: Vec<Result<ChainReport>> = pool.install(|| {
            (0..self.chain_count())
                .into_par_iter()
                .map(|c| self.run_chain(c, cells))
                .collect()
        });
        reports
            .into_iter()
            .enumerate()
            .map(|(chain, r)| {
                r.map_err(|e| Error::Chain {
                    chain,
                    source: Box::new(e),
                })
            })
            .collect()
    }

    /// Exact stationary mean for the oracle.
    pub fn exact_mean(&self) -> Option<f64> {
        self.oracle.as_ref().map(FiniteChain::stationary_mean)
    }
}

/// Observation data: the configured file, or a synthetic set.
pub fn observation_data(cfg: &RunConfig) -> Result<ObservationSet> {
    match &cfg.data {
        Some(path) => load_observations(path),
        None => synthesize_data(
            &JakStatParams::from_slice(&cfg.synth_params)?,
            &cfg.model,
            [cfg.synth_sd; 2],
            cfg.synth_seed,
        ),
    }
}

fn run_cell<S: SampleSource + ?Sized>(
    src: &mut S,
    cell: &Cell,
    gamma: f64,
    cfg: &RunConfig,
) -> Result<TestOutcome> {
    match cell.test {
        TestKind::Fixed => fixed_length_test(src, cell.r, cell.n.expect("fixed cells carry n")),
        TestKind::FixedRequired => {
            let (eps, delta) = (cell.epsilon.unwrap(), cell.delta.unwrap());
            fixed_length_test(src, cell.r, required_n(eps, gamma, delta).max(1))
        }
        TestKind::SeqIndiff => {
            let eps = cell.epsilon.unwrap();
            let tc = TestConfig::new(cell.r, eps, cfg.xi_for(eps), gamma)?.with_delta(cell.delta.unwrap())?;
            seq_indiff_test(src, &tc)
        }
        TestKind::SeqNoIndiff => {
            let eps = cell.epsilon.unwrap();
            let tc = TestConfig::new(cell.r, eps, cfg.xi_for(eps), gamma)?;
            seq_noindiff_test(src, &tc, cfg.max_checks)
        }
    }
}

/// The case-study grid: fixed tests over `fixed_n_grid`, then fixed tests
/// at the required `n`, and both sequential tests, for every threshold.
pub fn case_study_cells(cfg: &RunConfig) -> Vec<Cell> {
    let mut cells = Vec::new();
    for &r in &cfg.threshold_r {
        for &n in &cfg.fixed_n_grid {
            cells.push(Cell {
                test: TestKind::Fixed,
                r,
                delta: None,
                epsilon: None,
                n: Some(n),
            });
        }
        for &eps in &cfg.epsilon {
            for &delta in &cfg.delta {
                for test in [TestKind::FixedRequired, TestKind::SeqIndiff] {
                    cells.push(Cell {
                        test,
                        r,
                        delta: Some(delta),
                        epsilon: Some(eps),
                        n: None,
                    });
                }
            }
            cells.push(Cell {
                test: TestKind::SeqNoIndiff,
                r,
                delta: None,
                epsilon: Some(eps),
                n: None,
            });
        }
    }
    cells
}

/// Reference mean for scoring: configured, exact, or pooled over chains.
pub fn reference_mean(cfg: &RunConfig, ctx: &Context<'_>, reports: &[ChainReport]) -> f64 {
    if let MeanChoice::Fixed(e) = cfg.e_hat {
        return e;
    }
    if let Some(e) = ctx.exact_mean() {
        return e;
    }
    let (sum, count) = reports
        .iter()
        .fold((0.0, 0usize), |(s, c), r| (s + r.sample_sum, c + r.sample_count));
    sum / count.max(1) as f64
}

/// Correct answer at threshold `r`: `Some(true)` for H0, `Some(false)` for
/// H1, `None` inside the indifference region, where any answer counts as right.
fn truth(e_hat: f64, r: f64, delta: Option<f64>) -> Option<bool> {
    let d = delta.unwrap_or(0.0);
    if e_hat >= r + d && e_hat > r {
        Some(true)
    } else if e_hat <= r - d && e_hat < r {
        Some(false)
    } else {
        None
    }
}

fn truth_label(t: Option<bool>) -> &'static str {
    match t {
        Some(true) => "H0",
        Some(false) => "H1",
        None => "either",
    }
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, c) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (c > 0).then(|| s / c as f64)
}

/// Rendered CSV tables keyed by file name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Tables {
    pub files: Vec<(&'static str, String)>,
}

impl Tables {
    pub fn get(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|(n, _)| *n == name).map(|(_, t)| t.as_str())
    }

    /// Writes every table into `dir`; on failure removes the ones written.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        for (name, text) in &self.files {
            let path = dir.join(name);
            if let Err(e) = fs::write(&path, text) {
                remove_all(&written);
                return Err(e.into());
            }
            written.push(path);
        }
        Ok(written)
    }
}

/// Best-effort cleanup of partial outputs.
pub fn remove_all(paths: &[PathBuf]) {
    for p in paths {
        let _ = fs::remove_file(p);
    }
}

/// `decisions.csv`: one row per chain and cell, in chain order.
pub fn decisions_table(reports: &[ChainReport]) -> String {
    let mut out = String::from("chain_id,decision,stopping_time,final_sum,gamma_used,test,r,delta,epsilon\n");
    for rep in reports {
        for res in &rep.results {
            let c = &res.cell;
            let (decision, t, sum) = match &res.outcome {
                Some(o) => (o.decision.as_str(), o.stopping_time, fmt_f64(o.final_sum)),
                None => ("Exhausted", res.consumed, String::new()),
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                rep.chain_id,
                decision,
                t,
                sum,
                fmt_f64(rep.gamma_used),
                c.test.as_str(),
                fmt_f64(c.r),
                opt_f64(c.delta),
                opt_f64(c.epsilon),
            );
        }
    }
    out
}

/// `decisions.csv` in the short form of the single-test commands.
pub fn single_test_decisions(reports: &[ChainReport]) -> String {
    let mut out = String::from("chain_id,decision,stopping_time,final_sum,gamma_used\n");
    for rep in reports {
        for res in &rep.results {
            let (decision, t, sum) = match &res.outcome {
                Some(o) => (o.decision.as_str(), o.stopping_time, fmt_f64(o.final_sum)),
                None => ("Exhausted", res.consumed, String::new()),
            };
            let _ = writeln!(out, "{},{},{},{},{}", rep.chain_id, decision, t, sum, fmt_f64(rep.gamma_used));
        }
    }
    out
}

/// Row of `error_rates.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRate {
    pub test: TestKind,
    pub r: f64,
    pub delta: Option<f64>,
    pub epsilon: Option<f64>,
    pub n: Option<u64>,
    pub truth: Option<bool>,
    pub chains: usize,
    pub decided: usize,
    pub errors: usize,
    pub error_rate: f64,
    pub bound: f64,
}

/// Empirical error per cell (and per `delta` for the fixed grid), with the
/// matching guarantee: `mean_c exp(-n gamma_c delta^2)` for fixed tests,
/// `epsilon` for the others.
pub fn error_rates(cfg: &RunConfig, cells: &[Cell], reports: &[ChainReport], e_hat: f64) -> Vec<ErrorRate> {
    let mut rows = Vec::new();
    for (idx, cell) in cells.iter().enumerate() {
        let outcomes = || reports.iter().map(move |rep| (rep, &rep.results[idx]));
        let deltas: Vec<Option<f64>> = match cell.test {
            TestKind::Fixed => cfg.delta.iter().map(|d| Some(*d)).collect(),
            _ => vec![cell.delta],
        };
        for delta in deltas {
            let t = truth(e_hat, cell.r, delta);
            let mut decided = 0;
            let mut errors = 0;
            for (_, res) in outcomes() {
                if let Some(choice) = res.outcome.and_then(|o| o.decision.chooses_h0()) {
                    decided += 1;
                    if t.is_some_and(|t| t != choice) {
                        errors += 1;
                    }
                }
            }
            let bound = match (cell.test, delta) {
                (TestKind::Fixed, Some(d)) => {
                    let n = cell.n.unwrap();
                    mean(outcomes().map(|(rep, _)| fixed_error_bound(rep.gamma_used, d, n))).unwrap_or(1.0)
                }
                (TestKind::FixedRequired, Some(d)) => {
                    let eps = cell.epsilon.unwrap();
                    mean(outcomes().map(|(rep, _)| {
                        let n = required_n(eps, rep.gamma_used, d).max(1);
                        fixed_error_bound(rep.gamma_used, d, n)
                    }))
                    .unwrap_or(1.0)
                }
                _ => cell.epsilon.unwrap_or(1.0),
            };
            rows.push(ErrorRate {
                test: cell.test,
                r: cell.r,
                delta,
                epsilon: cell.epsilon,
                n: cell.n,
                truth: t,
                chains: reports.len(),
                decided,
                errors,
                error_rate: errors as f64 / reports.len().max(1) as f64,
                bound,
            });
        }
    }
    rows
}

pub fn error_rates_table(rows: &[ErrorRate]) -> String {
    let mut out = String::from("test,r,delta,epsilon,n,truth,chains,decided,errors,error_rate,bound\n");
    for row in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            row.test.as_str(),
            fmt_f64(row.r),
            opt_f64(row.delta),
            opt_f64(row.epsilon),
            row.n.map(|n| n.to_string()).unwrap_or_default(),
            truth_label(row.truth),
            row.chains,
            row.decided,
            row.errors,
            fmt_f64(row.error_rate),
            fmt_f64(row.bound),
        );
    }
    out
}

/// Mean stopping times of the sequential cells, next to the mean sample
/// size the fixed test would need at the same `epsilon` and `delta`.
pub fn stopping_times_table(cells: &[Cell], reports: &[ChainReport]) -> String {
    let mut out = String::from(
        "test,r,delta,epsilon,chains,decided,exhausted,mean_stopping_time,mean_fixed_n\n",
    );
    for (idx, cell) in cells.iter().enumerate() {
        if !matches!(cell.test, TestKind::SeqIndiff | TestKind::SeqNoIndiff) {
            continue;
        }
        let outcomes: Vec<Option<TestOutcome>> = reports.iter().map(|rep| rep.results[idx].outcome).collect();
        let decided = outcomes
            .iter()
            .filter(|o| o.is_some_and(|o| o.decision.chooses_h0().is_some()))
            .count();
        let exhausted = outcomes.iter().filter(|o| o.is_none()).count();
        let mean_t = mean(outcomes.iter().flatten().map(|o| o.stopping_time as f64));
        let mean_fixed = match (cell.epsilon, cell.delta) {
            (Some(eps), Some(d)) => mean(reports.iter().map(|rep| required_n(eps, rep.gamma_used, d) as f64)),
            _ => None,
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            cell.test.as_str(),
            fmt_f64(cell.r),
            opt_f64(cell.delta),
            opt_f64(cell.epsilon),
            reports.len(),
            decided,
            exhausted,
            opt_f64(mean_t),
            opt_f64(mean_fixed),
        );
    }
    out
}

pub fn gap_table(reports: &[ChainReport]) -> String {
    let mut out = String::from(
        "chain_id,gamma_star_hat,eta_final,n_used,iterations,capped,needs_more,gamma_used,burn_in,acceptance_rate\n",
    );
    for rep in reports {
        let g = &rep.gap;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            rep.chain_id,
            fmt_f64(g.gamma_star_hat),
            g.eta_final,
            g.n_used,
            g.rounds,
            g.capped,
            rep.needs_more,
            fmt_f64(rep.gamma_used),
            rep.burn_in,
            opt_f64(rep.acceptance_rate),
        );
    }
    out
}

pub fn gap_trace_table(reports: &[ChainReport]) -> String {
    let mut out = String::from("chain_id,round,eta,gamma_min\n");
    for rep in reports {
        for (round, it) in rep.gap.trace.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{}", rep.chain_id, round + 1, it.eta, fmt_f64(it.gamma_min));
        }
    }
    out
}

/// Manifest text: the subcommand, every resolved key, extra `meta` pairs
/// such as the input path, and the outputs.
pub fn manifest_text(
    subcommand: &str,
    cfg: &RunConfig,
    out: &Path,
    outputs: &[&str],
    meta: &[(&str, String)],
) -> String {
    let mut text = format!("subcommand = {subcommand}\n");
    for (k, v) in cfg.to_pairs() {
        let _ = writeln!(text, "{k} = {v}");
    }
    for (k, v) in meta {
        let _ = writeln!(text, "{k} = {v}");
    }
    let _ = writeln!(text, "out = {}", out.display());
    let _ = writeln!(text, "# outputs: {}", outputs.join(", "));
    text
}

/// Writes `<out>/manifest.txt`, creating `out` if needed.
pub fn write_manifest(
    subcommand: &str,
    cfg: &RunConfig,
    out: &Path,
    outputs: &[&str],
    meta: &[(&str, String)],
) -> Result<PathBuf> {
    fs::create_dir_all(out)?;
    let path = out.join(MANIFEST);
    fs::write(&path, manifest_text(subcommand, cfg, out, outputs, meta))?;
    Ok(path)
}

/// Runs the case study and renders its tables.
pub fn case_study_tables(cfg: &RunConfig) -> Result<Tables> {
    let ctx = Context::new(cfg, None)?;
    let cells = case_study_cells(cfg);
    let reports = ctx.run_all(&cells)?;
    let e_hat = reference_mean(cfg, &ctx, &reports);
    let rates = error_rates(cfg, &cells, &reports, e_hat);
    Ok(Tables {
        files: vec![
            (DECISIONS, decisions_table(&reports)),
            (ERROR_RATES, error_rates_table(&rates)),
            (STOPPING_TIMES, stopping_times_table(&cells, &reports)),
            (GAP, gap_table(&reports)),
            (GAP_TRACE, gap_trace_table(&reports)),
        ],
    })
}

/// Case study with outputs in `out`: manifest first, tables after all
/// chains finish. Nothing but the manifest is left behind on failure.
pub fn cmd_case_study(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let names = [DECISIONS, ERROR_RATES, STOPPING_TIMES, GAP, GAP_TRACE];
    let manifest = write_manifest("case-study", cfg, out, &names, &[])?;
    let tables = case_study_tables(cfg)?;
    let mut written = vec![manifest];
    written.extend(tables.write_to(out)?);
    Ok(written)
}

/// The cell of a single-test command, built from the first `threshold_r`,
/// `delta` and `epsilon`. A fixed-length test uses `fixed_n` when set and
/// `required_n` otherwise.
pub fn single_test_cell(cfg: &RunConfig, test: TestKind) -> Cell {
    let (r, delta, epsilon) = (cfg.threshold_r[0], cfg.delta[0], cfg.epsilon[0]);
    match (test, cfg.fixed_n) {
        (TestKind::Fixed | TestKind::FixedRequired, Some(n)) => Cell {
            test: TestKind::Fixed,
            r,
            delta: None,
            epsilon: None,
            n: Some(n),
        },
        (TestKind::Fixed | TestKind::FixedRequired, None) => Cell {
            test: TestKind::FixedRequired,
            r,
            delta: Some(delta),
            epsilon: Some(epsilon),
            n: None,
        },
        (TestKind::SeqIndiff, _) => Cell {
            test,
            r,
            delta: Some(delta),
            epsilon: Some(epsilon),
            n: None,
        },
        (TestKind::SeqNoIndiff, _) => Cell {
            test,
            r,
            delta: None,
            epsilon: Some(epsilon),
            n: None,
        },
    }
}

/// Runs one test on every chain of `ctx`.
pub fn single_test_tables(ctx: &Context<'_>, cfg: &RunConfig, test: TestKind) -> Result<String> {
    let cells = [single_test_cell(cfg, test)];
    Ok(single_test_decisions(&ctx.run_all(&cells)?))
}

/// `gap.csv` of the gap-estimate command: an `all` row per chain with the
/// combined estimate, then one row per function with its implied gap.
pub fn gap_estimate_table<'e>(rows: impl IntoIterator<Item = (usize, &'e GapEstimate, bool)>) -> String {
    let mut out = String::from("chain_id,function,gamma_star_hat,eta_final,n_used,autocov_ratio,needs_more\n");
    for (chain_id, est, needs_more) in rows {
        let _ = writeln!(
            out,
            "{chain_id},all,{},{},{},,{needs_more}",
            fmt_f64(est.gamma_star_hat),
            est.eta_final,
            est.n_used
        );
        for f in &est.per_function {
            let _ = writeln!(
                out,
                "{chain_id},{},{},{},{},{},{needs_more}",
                f.name,
                opt_f64(f.implied_gap),
                est.eta_final,
                est.n_used,
                opt_f64(f.ratio),
            );
        }
    }
    out
}

/// Gap estimate per chain, without running any test.
pub fn gap_only_table(ctx: &Context<'_>) -> Result<String> {
    let reports = ctx.run_all(&[])?;
    Ok(gap_estimate_table(reports.iter().map(|r| (r.chain_id, &r.gap, r.needs_more))))
}

/// Row of `bounds.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundsRow {
    pub epsilon: f64,
    pub gamma: f64,
    pub delta: f64,
    pub big_delta: f64,
    pub xi: f64,
    pub n_fixed: u64,
    pub m: Option<f64>,
    pub cap_indiff: Option<f64>,
    pub n0_noindiff: u64,
    pub g_first: f64,
    pub expected_stop_indiff: Option<f64>,
    pub expected_stop_noindiff: Option<f64>,
    /// Why some columns are blank.
    pub note: String,
}

/// Formula values over `bounds.epsilon x bounds.gamma x bounds.delta`
/// (x `bounds.big_delta` when set). Rows outside the range where the
/// sequential guarantees are proven keep their fixed-test columns and
/// leave the rest blank.
pub fn bounds_rows(cfg: &RunConfig) -> Vec<BoundsRow> {
    let mut rows = Vec::new();
    for &epsilon in &cfg.bounds_epsilon {
        for &gamma in &cfg.bounds_gamma {
            for &delta in &cfg.bounds_delta {
                let big_deltas = cfg.bounds_big_delta.clone().unwrap_or_else(|| vec![delta]);
                for big_delta in big_deltas {
                    rows.push(bounds_row(cfg, epsilon, gamma, delta, big_delta));
                }
            }
        }
    }
    rows
}

fn bounds_row(cfg: &RunConfig, epsilon: f64, gamma: f64, delta: f64, big_delta: f64) -> BoundsRow {
    let xi = cfg.xi_for(epsilon);
    let mut notes = Vec::new();
    let (m, cap, stop_indiff) = match m_threshold(epsilon, xi, gamma, delta) {
        Ok(m) => (
            Some(m),
            Some(6.0 * m / delta),
            expected_stop_indiff(m, xi, gamma, big_delta).ok(),
        ),
        Err(e) => {
            notes.push(e.to_string());
            (None, None, None)
        }
    };
    let n0 = (100.0 / gamma).floor() as u64;
    let schedule = Schedule::new(n0, xi);
    let first = schedule.points().next().map_or(schedule.n0(), |(_, n)| n);
    let stop_noindiff = match expected_stop_noindiff(epsilon, xi, gamma, big_delta, &schedule) {
        Ok(v) => Some(v),
        Err(e) => {
            notes.push(e.to_string());
            None
        }
    };
    BoundsRow {
        epsilon,
        gamma,
        delta,
        big_delta,
        xi,
        n_fixed: required_n(epsilon, gamma, delta),
        m,
        cap_indiff: cap,
        n0_noindiff: schedule.n0(),
        g_first: g_threshold(1, epsilon, gamma, first),
        expected_stop_indiff: stop_indiff,
        expected_stop_noindiff: stop_noindiff,
        note: notes.join("; ").replace(',', ";"),
    }
}

pub fn bounds_table(rows: &[BoundsRow]) -> String {
    let mut out = String::from(
        "epsilon,gamma,delta,big_delta,xi,n_fixed,m,cap_indiff,n0_noindiff,g_first,\
         expected_stop_indiff,expected_stop_noindiff,note\n",
    );
    for row in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            fmt_f64(row.epsilon),
            fmt_f64(row.gamma),
            fmt_f64(row.delta),
            fmt_f64(row.big_delta),
            fmt_f64(row.xi),
            row.n_fixed,
            opt_f64(row.m),
            opt_f64(row.cap_indiff),
            row.n0_noindiff,
            fmt_f64(row.g_first),
            opt_f64(row.expected_stop_indiff),
            opt_f64(row.expected_stop_noindiff),
            row.note,
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::KeyValues;

    fn config(text: &str) -> RunConfig {
        RunConfig::resolve(&KeyValues::parse(text, Path::new("t")).unwrap(), &KeyValues::new()).unwrap()
    }

    #[test]
    fn single_chain_has_one_row_per_cell() {
        let cfg = config("chains = 1\nsteps = 5000\nthreshold_r = 0.3,0.7\nfixed_n_grid = 100,400\n");
        let tables = case_study_tables(&cfg).unwrap();
        let cells = case_study_cells(&cfg);
        // per r: 2 fixed + fixed_req + seq_indiff + seq_noindiff
        assert_eq!(cells.len(), 10);
        let decisions = tables.get(DECISIONS).unwrap();
        assert_eq!(decisions.lines().count(), 1 + cells.len());
        let rates = tables.get(ERROR_RATES).unwrap();
        assert_eq!(rates.lines().count(), 1 + cells.len());
        let stops = tables.get(STOPPING_TIMES).unwrap();
        assert_eq!(stops.lines().count(), 1 + 4);
        assert_eq!(tables.get(GAP).unwrap().lines().count(), 2);
    }

    #[test]
    fn truth_respects_indifference_region() {
        assert_eq!(truth(0.5, 0.3, Some(0.05)), Some(true));
        assert_eq!(truth(0.5, 0.7, Some(0.05)), Some(false));
        assert_eq!(truth(0.5, 0.47, Some(0.05)), None);
        assert_eq!(truth(0.5, 0.5, None), None);
        assert_eq!(truth(0.5, 0.49, None), Some(true));
    }

    #[test]
    fn exhausted_source_is_reported_not_fatal() {
        let cfg = config("chains = 1\nsteps = 2000\nmax_samples = 2000\nthreshold_r = 0.45\ndelta = 0.04\nfixed_n_grid = 100\ngamma = exact\n");
        let tables = case_study_tables(&cfg).unwrap();
        let decisions = tables.get(DECISIONS).unwrap();
        assert!(decisions.contains("Exhausted"), "{decisions}");
    }

    #[test]
    fn bounds_examples() {
        let cfg = config("bounds.epsilon = 0.01\nbounds.gamma = 0.01\nbounds.delta = 0.05\nxi = 0.3\n");
        let rows = bounds_rows(&cfg);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].n_fixed, 184_207);
        assert!((rows[0].m.unwrap() - 3597.7).abs() < 0.1);

        let cfg = config("bounds.epsilon = 1\nbounds.gamma = 0.2\nbounds.delta = 0.05\n");
        let rows = bounds_rows(&cfg);
        assert_eq!(rows[0].n_fixed, 0);
        assert!(rows[0].m.is_none());
        assert!(!rows[0].note.is_empty());
        let table = bounds_table(&rows);
        let header_cols = table.lines().next().unwrap().split(',').count();
        assert!(table.lines().all(|l| l.split(',').count() == header_cols));

        let cfg = config("bounds.epsilon = 0.001,0.01,0.1\nbounds.gamma = 0.1\nbounds.delta = 0.02,0.05,0.1\n");
        assert_eq!(bounds_rows(&cfg).len(), 9);
    }

    #[test]
    fn manifest_resolves_to_same_config() {
        let cfg = config("chains = 2\nseed = 11\nthreshold_r = 0.3\n");
        let text = manifest_text("case-study", &cfg, Path::new("out"), &[DECISIONS], &[("input", "x.csv".into())]);
        let again = RunConfig::resolve(&KeyValues::parse(&text, Path::new("m")).unwrap(), &KeyValues::new()).unwrap();
        assert_eq!(cfg, again);
        assert!(text.starts_with("subcommand = case-study\n"));
    }
}

//! Trajectories, sample sources and finite-state oracle chains.
//!
//! All randomness flows through [`ChainRng`], which is ChaCha8 seeded with
//! `rand_chacha`'s `seed_from_u64`. ChaCha8 output is specified bit-for-bit
//! and independent of platform endianness, so trajectories (and every CSV
//! derived from them) reproduce exactly across machines. Parallel chains use
//! the seed `base_seed + chain_index` (wrapping).

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::csvio::{fmt_f64, parse_f64, CsvTable};
use crate::error::{Error, Result};

/// The generator behind every stochastic component.
pub type ChainRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> ChainRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Seed for chain `index` of a replicated run.
pub fn chain_seed(base_seed: u64, index: usize) -> u64 {
    base_seed.wrapping_add(index as u64)
}

/// Post-burn-in samples `f(X_1), ..., f(X_n)`, each in `[0, 1]`.
///
/// Burn-in samples are never stored; `burn_in` only records how many were
/// discarded before the first retained sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    values: Vec<f64>,
    burn_in: usize,
}

impl Trajectory {
    pub fn new(values: Vec<f64>, burn_in: usize) -> Result<Self> {
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::SampleOutOfRange { index, value });
        }
        Ok(Self { values, burn_in })
    }

    pub fn empty() -> Self {
        Self {
            values: Vec::new(),
            burn_in: 0,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Empirical mean; `NaN` for an empty trajectory.
    pub fn mean(&self) -> f64 {
        self.sum() / self.values.len() as f64
    }

    /// Appends samples, keeping the `[0, 1]` invariant.
    pub fn extend_from(&mut self, more: &[f64]) -> Result<()> {
        let offset = self.values.len();
        for (i, &v) in more.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::SampleOutOfRange {
                    index: offset + i,
                    value: v,
                });
            }
        }
        self.values.extend_from_slice(more);
        Ok(())
    }

    /// Writes `step,f` with 1-based steps and 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "step,f")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(out, "{},{}", i + 1, fmt_f64(*v))?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(file)
    }

    /// Reads the `f` column of a trajectory CSV. Extra columns are ignored.
    pub fn load_csv(path: &Path) -> Result<Self> {
        let table = CsvTable::load(path)?;
        let column = table.column("f")?;
        Self::new(column, 0).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            reason: e.to_string(),
        })
    }
}

impl std::ops::Deref for Trajectory {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.values
    }
}

/// Pull interface over a stream of samples in `[0, 1]`.
///
/// Implementations own their RNG; the same seed yields the same stream no
/// matter how the caller batches its reads.
pub trait SampleSource {
    fn next_sample(&mut self) -> Result<f64>;

    /// Samples handed out so far.
    fn consumed(&self) -> u64;

    /// Sum of the next `count` samples.
    fn take_sum(&mut self, count: u64) -> Result<f64> {
        let mut acc = 0.0;
        for _ in 0..count {
            acc += self.next_sample()?;
        }
        Ok(acc)
    }
}

/// Replays a recorded series.
#[derive(Debug, Clone)]
pub struct ReplaySource<'a> {
    values: &'a [f64],
    pos: usize,
}

impl<'a> ReplaySource<'a> {
    pub fn new(values: &'a [f64]) -> Self {
        Self { values, pos: 0 }
    }
}

impl SampleSource for ReplaySource<'_> {
    fn next_sample(&mut self) -> Result<f64> {
        let v = *self.values.get(self.pos).ok_or(Error::SourceExhausted {
            consumed: self.pos as u64,
        })?;
        self.pos += 1;
        Ok(v)
    }

    fn consumed(&self) -> u64 {
        self.pos as u64
    }
}

/// Where a finite-chain simulation starts.
#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// Draw `X_0` from the stationary distribution.
    Stationary,
    State(usize),
    Distribution(Vec<f64>),
}

const ROW_SUM_TOL: f64 = 1e-12;
const STATIONARY_TOL: f64 = 1e-10;
const BALANCE_TOL: f64 = 1e-10;

/// Finite-state chain with its stationary law and a bounded observable.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteChain {
    kernel: Vec<Vec<f64>>,
    stationary: Vec<f64>,
    f_values: Vec<f64>,
}

impl FiniteChain {
    /// Validates the kernel, `pi P = pi` and `f` in `[0, 1]`.
    pub fn new(kernel: Vec<Vec<f64>>, stationary: Vec<f64>, f_values: Vec<f64>) -> Result<Self> {
        validate_kernel(&kernel)?;
        let s = kernel.len();
        if stationary.len() != s {
            return Err(Error::DimensionMismatch {
                expected: s,
                found: stationary.len(),
            });
        }
        if f_values.len() != s {
            return Err(Error::DimensionMismatch {
                expected: s,
                found: f_values.len(),
            });
        }
        if stationary.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::InvalidStationary("negative or NaN mass".into()));
        }
        let total: f64 = stationary.iter().sum();
        if (total - 1.0).abs() > STATIONARY_TOL {
            return Err(Error::InvalidStationary(format!("sums to {total}")));
        }
        for y in 0..s {
            let flow: f64 = (0..s).map(|x| stationary[x] * kernel[x][y]).sum();
            if (flow - stationary[y]).abs() > STATIONARY_TOL {
                return Err(Error::InvalidStationary(format!(
                    "(pi P)[{y}] = {flow} differs from pi[{y}] = {}",
                    stationary[y]
                )));
            }
        }
        if let Some((index, &value)) = f_values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::SampleOutOfRange { index, value });
        }
        Ok(Self {
            kernel,
            stationary,
            f_values,
        })
    }

    /// Builds the chain with `pi` from [`stationary_of`].
    pub fn from_kernel(kernel: Vec<Vec<f64>>, f_values: Vec<f64>) -> Result<Self> {
        let pi = stationary_of(&kernel)?;
        Self::new(kernel, pi, f_values)
    }

    /// Two-state chain `0 -> 1` with probability `p`, `1 -> 0` with
    /// probability `q`, observing the indicator of state 1.
    pub fn two_state(p: f64, q: f64) -> Result<Self> {
        crate::error::check_param("p", p, p > 0.0 && p <= 1.0, "must lie in (0, 1]")?;
        crate::error::check_param("q", q, q > 0.0 && q <= 1.0, "must lie in (0, 1]")?;
        let kernel = vec![vec![1.0 - p, p], vec![q, 1.0 - q]];
        let stationary = vec![q / (p + q), p / (p + q)];
        Self::new(kernel, stationary, vec![0.0, 1.0])
    }

    pub fn num_states(&self) -> usize {
        self.kernel.len()
    }

    pub fn kernel(&self) -> &[Vec<f64>] {
        &self.kernel
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    pub fn f_values(&self) -> &[f64] {
        &self.f_values
    }

    /// `E_pi f`.
    pub fn stationary_mean(&self) -> f64 {
        self.stationary
            .iter()
            .zip(&self.f_values)
            .map(|(p, f)| p * f)
            .sum()
    }

    /// Same kernel and stationary law with a different observable.
    pub fn with_f(&self, f_values: Vec<f64>) -> Result<Self> {
        Self::new(self.kernel.clone(), self.stationary.clone(), f_values)
    }

    fn draw_from(weights: &[f64], rng: &mut ChainRng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        // u landed in the rounding slack of the last cumulative sum.
        weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
    }

    fn initial_state(&self, init: &Init, rng: &mut ChainRng) -> Result<usize> {
        match init {
            Init::Stationary => Ok(Self::draw_from(&self.stationary, rng)),
            Init::State(s) if *s < self.num_states() => Ok(*s),
            Init::State(s) => Err(Error::DimensionMismatch {
                expected: self.num_states(),
                found: *s,
            }),
            Init::Distribution(d) => {
                if d.len() != self.num_states() {
                    return Err(Error::DimensionMismatch {
                        expected: self.num_states(),
                        found: d.len(),
                    });
                }
                Ok(Self::draw_from(d, rng))
            }
        }
    }
}

fn validate_kernel(kernel: &[Vec<f64>]) -> Result<()> {
    let s = kernel.len();
    if s == 0 {
        return Err(Error::InvalidKernel {
            row: 0,
            reason: "kernel has no states".into(),
        });
    }
    for (row, entries) in kernel.iter().enumerate() {
        if entries.len() != s {
            return Err(Error::InvalidKernel {
                row,
                reason: format!("has {} entries, expected {s}", entries.len()),
            });
        }
        if let Some(v) = entries.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::InvalidKernel {
                row,
                reason: format!("entry {v} is negative or NaN"),
            });
        }
        let sum: f64 = entries.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::InvalidKernel {
                row,
                reason: format!("sums to {sum}"),
            });
        }
    }
    Ok(())
}

/// Streams `f(X_1), f(X_2), ...` from a finite chain.
#[derive(Debug, Clone)]
pub struct FiniteChainSource<'a> {
    chain: &'a FiniteChain,
    rng: ChainRng,
    state: usize,
    consumed: u64,
}

impl<'a> FiniteChainSource<'a> {
    pub fn new(chain: &'a FiniteChain, seed: u64, init: &Init) -> Result<Self> {
        let mut rng = seeded_rng(seed);
        let state = chain.initial_state(init, &mut rng)?;
        Ok(Self {
            chain,
            rng,
            state,
            consumed: 0,
        })
    }

    pub fn state(&self) -> usize {
        self.state
    }

    /// Advances one transition and returns the new state.
    pub fn step(&mut self) -> usize {
        self.state = FiniteChain::draw_from(&self.chain.kernel[self.state], &mut self.rng);
        self.state
    }
}

impl SampleSource for FiniteChainSource<'_> {
    fn next_sample(&mut self) -> Result<f64> {
        let s = self.step();
        self.consumed += 1;
        Ok(self.chain.f_values[s])
    }

    fn consumed(&self) -> u64 {
        self.consumed
    }
}

/// Simulates `n` transitions from `init` and records `f` along the path.
pub fn simulate_finite(chain: &FiniteChain, n: usize, seed: u64, init: &Init) -> Result<Trajectory> {
    crate::error::check_param("n", n as f64, n >= 1, "must be at least 1")?;
    let mut src = FiniteChainSource::new(chain, seed, init)?;
    let values = (0..n)
        .map(|_| src.next_sample())
        .collect::<Result<Vec<_>>>()?;
    Ok(Trajectory { values, burn_in: 0 })
}

/// Unique stationary distribution of an irreducible kernel.
///
/// Solves `pi (P - I) = 0` together with `sum(pi) = 1` as an overdetermined
/// linear system; a rank-deficient system means more than one stationary
/// law, i.e. a reducible kernel.
pub fn stationary_of(kernel: &[Vec<f64>]) -> Result<Vec<f64>> {
    validate_kernel(kernel)?;
    let s = kernel.len();
    let mut a = DMatrix::<f64>::zeros(s + 1, s);
    for x in 0..s {
        for y in 0..s {
            // Row y of (P^T - I).
            a[(y, x)] = kernel[x][y] - if x == y { 1.0 } else { 0.0 };
        }
    }
    for x in 0..s {
        a[(s, x)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(s + 1);
    b[s] = 1.0;

    let svd = a.svd(true, true);
    let smallest = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
    if smallest < 1e-10 {
        return Err(Error::Reducible);
    }
    let pi = svd
        .solve(&b, 1e-14)
        .map_err(|e| Error::InvalidStationary(e.to_string()))?;
    let mut pi: Vec<f64> = pi.iter().map(|&v| if v.abs() < 1e-15 { 0.0 } else { v }).collect();
    if pi.iter().any(|&v| v < -1e-10) {
        return Err(Error::Reducible);
    }
    for v in &mut pi {
        *v = v.max(0.0);
    }
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|v| *v /= total);
    Ok(pi)
}

/// Detailed-balance verdict and the largest `|pi(x)P(x,y) - pi(y)P(y,x)|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetailedBalance {
    pub reversible: bool,
    pub max_violation: f64,
}

pub fn check_detailed_balance(chain: &FiniteChain) -> DetailedBalance {
    let s = chain.num_states();
    let pi = &chain.stationary;
    let p = &chain.kernel;
    let mut worst = 0.0_f64;
    for x in 0..s {
        for y in (x + 1)..s {
            worst = worst.max((pi[x] * p[x][y] - pi[y] * p[y][x]).abs());
        }
    }
    DetailedBalance {
        reversible: worst <= BALANCE_TOL,
        max_violation: worst,
    }
}

/// Reads a kernel written one row per line, entries separated by commas or
/// whitespace. Blank lines and `#` comments are skipped.
pub fn load_kernel(path: &Path) -> Result<Vec<Vec<f64>>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| parse_f64(t, path, i + 1))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

//! Flat `key = value` run configuration.
//!
//! A config file holds one `key = value` pair per line; `#` starts a
//! comment and lists are comma-separated. Values resolve as
//! command-line override, then file, then the default in [`DEFAULTS`].
//! [`RunConfig::to_pairs`] lists every resolved key in a fixed order, and
//! feeding those pairs back through [`RunConfig::resolve`] gives the same
//! config, which is what makes a run manifest re-runnable.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::jakstat::{ModelSettings, PRIOR_HI, PRIOR_LO, REFERENCE_PARAMS, SIGMA_MH};

/// Every recognised key with its default, in manifest order.
pub const DEFAULTS: &[(&str, &str)] = &[
    ("source", "oracle"),
    ("oracle.p", "0.1"),
    ("oracle.q", "0.1"),
    ("chains", "100"),
    ("parallel", "0"),
    ("seed", "1"),
    ("steps", "100000"),
    ("burn_in", "1000"),
    ("k1.lo", "0"),
    ("k1.hi", "5"),
    ("k1.sigma_mh", "0.02"),
    ("k2.lo", "0"),
    ("k2.hi", "30"),
    ("k2.sigma_mh", "0.5"),
    ("k3.lo", "0"),
    ("k3.hi", "1"),
    ("k3.sigma_mh", "0.01"),
    ("k4.lo", "0"),
    ("k4.hi", "5"),
    ("k4.sigma_mh", "0.02"),
    ("threshold_r", "0.3,0.35,0.4,0.6,0.65,0.7"),
    ("delta", "0.05"),
    ("epsilon", "0.01"),
    ("xi", "auto"),
    ("gamma", "estimate"),
    ("gamma_safety", "1"),
    ("e_hat", "auto"),
    ("max_checks", "none"),
    ("fixed_n_grid", "500,1000,2000,4000,8000"),
    ("fixed_n", "required"),
    ("gap.max_n", "1000000"),
    ("max_samples", "10000000"),
    ("init.stat", "3"),
    ("epo", "2"),
    ("K", "10"),
    ("dt", "0.01"),
    ("t_end", "60"),
    ("threshold", "1"),
    ("data", "none"),
    ("synth.params", "0.5,2,0.1,0.5"),
    ("synth.sd", "0.05"),
    ("synth.seed", "2024"),
    ("bounds.epsilon", "0.001,0.01,0.1"),
    ("bounds.gamma", "0.01,0.05,0.2"),
    ("bounds.delta", "0.025,0.05,0.1"),
    ("bounds.big_delta", "none"),
];

/// Keys a manifest carries besides the config proper.
pub const META_KEYS: &[&str] = &["subcommand", "out", "input", "columns"];

/// Raw key-value pairs from a file or the command line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses `key = value` lines. `origin` names the source in errors.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut kv = Self::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |reason: String| Error::Parse {
                path: origin.to_path_buf(),
                line: idx + 1,
                reason,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(parse_err("empty key".into()));
            }
            if kv.entries.insert(key.to_owned(), value.trim().to_owned()).is_some() {
                return Err(parse_err(format!("duplicate key `{key}`")));
            }
        }
        Ok(kv)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path)
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_owned(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

/// Where chain samples come from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SourceKind {
    /// Two-state chain flipping `0 -> 1` with probability `oracle_p` and
    /// `1 -> 0` with `oracle_q`; `f` indicates state 1.
    Oracle,
    /// Metropolis–Hastings on the JAK-STAT posterior.
    JakStat,
}

/// Spectral gap fed to the tests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaChoice {
    /// Per-chain estimate times `gamma_safety`.
    Estimate,
    /// Exact gap of the oracle chain.
    Exact,
    Fixed(f64),
}

/// Reference mean used to score decisions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeanChoice {
    /// Oracle: exact stationary mean. MH: pooled average over all chains.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub source: SourceKind,
    pub oracle_p: f64,
    pub oracle_q: f64,
    pub chains: usize,
    /// Worker threads; 0 lets the pool decide.
    pub parallel: usize,
    pub seed: u64,
    /// Post-burn-in samples drawn up front for gap estimation.
    pub steps: usize,
    /// Minimum burn-in; the run uses at least `ceil(30 / gamma)`.
    pub burn_in: u64,
    pub prior_lo: [f64; 4],
    pub prior_hi: [f64; 4],
    pub sigma_mh: [f64; 4],
    pub threshold_r: Vec<f64>,
    pub delta: Vec<f64>,
    pub epsilon: Vec<f64>,
    /// `None` selects the default growth for each epsilon.
    pub xi: Option<f64>,
    pub gamma: GammaChoice,
    pub gamma_safety: f64,
    pub e_hat: MeanChoice,
    pub max_checks: Option<u32>,
    pub fixed_n_grid: Vec<u64>,
    /// Sample size of the single fixed-length test; `None` uses `required_n`.
    pub fixed_n: Option<u64>,
    pub gap_max_n: usize,
    /// Per-chain cap on samples handed to the tests.
    pub max_samples: usize,
    pub model: ModelSettings,
    pub data: Option<PathBuf>,
    pub synth_params: [f64; 4],
    pub synth_sd: f64,
    pub synth_seed: u64,
    pub bounds_epsilon: Vec<f64>,
    pub bounds_gamma: Vec<f64>,
    pub bounds_delta: Vec<f64>,
    /// Distances `|r - E f|` for the stopping-time columns; `None` uses `delta`.
    pub bounds_big_delta: Option<Vec<f64>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::resolve(&KeyValues::new(), &KeyValues::new()).expect("defaults are valid")
    }
}

fn invalid(key: &str, value: &str, what: &str) -> Error {
    Error::Config(format!("{key} = `{value}`: {what}"))
}

fn scalar<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| invalid(key, value, &format!("expected {}", std::any::type_name::<T>())))
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    let items: Vec<T> = value
        .split(',')
        .map(|s| scalar(key, s.trim()))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(invalid(key, value, "empty list"));
    }
    Ok(items)
}

fn optional<T>(value: &str, parse: impl FnOnce(&str) -> Result<T>) -> Result<Option<T>> {
    if value == "none" {
        Ok(None)
    } else {
        parse(value).map(Some)
    }
}

fn join<T: Display>(items: &[T]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn four(key: &str, value: &str) -> Result<[f64; 4]> {
    let v: Vec<f64> = list(key, value)?;
    v.try_into()
        .map_err(|_| invalid(key, value, "expected four values k1,k2,k3,k4"))
}

impl RunConfig {
    /// Merges defaults, then `file`, then `overrides`, and parses the result.
    pub fn resolve(file: &KeyValues, overrides: &KeyValues) -> Result<Self> {
        let mut merged: BTreeMap<&str, &str> = DEFAULTS.iter().copied().collect();
        for (k, v) in file.iter().chain(overrides.iter()) {
            if META_KEYS.contains(&k) {
                continue;
            }
            match merged.get_mut(k) {
                Some(slot) => *slot = v,
                None => return Err(Error::Config(format!("unknown key `{k}`"))),
            }
        }
        let get = |key: &str| merged[key];
        let num = |key: &str| scalar::<f64>(key, get(key));

        let source = match get("source") {
            "oracle" => SourceKind::Oracle,
            "jakstat" => SourceKind::JakStat,
            other => return Err(invalid("source", other, "expected `oracle` or `jakstat`")),
        };
        let mut prior_lo = PRIOR_LO;
        let mut prior_hi = PRIOR_HI;
        let mut sigma_mh = SIGMA_MH;
        for i in 0..4 {
            prior_lo[i] = num(&format!("k{}.lo", i + 1))?;
            prior_hi[i] = num(&format!("k{}.hi", i + 1))?;
            sigma_mh[i] = num(&format!("k{}.sigma_mh", i + 1))?;
        }
        let gamma = match get("gamma") {
            "estimate" => GammaChoice::Estimate,
            "exact" => GammaChoice::Exact,
            v => GammaChoice::Fixed(scalar("gamma", v)?),
        };
        let e_hat = match get("e_hat") {
            "auto" => MeanChoice::Auto,
            v => MeanChoice::Fixed(scalar("e_hat", v)?),
        };
        let xi = match get("xi") {
            "auto" => None,
            v => Some(scalar("xi", v)?),
        };
        let model = ModelSettings {
            epo: num("epo")?,
            init_stat: num("init.stat")?,
            delay_compartments: scalar("K", get("K"))?,
            dt: num("dt")?,
            t_end: num("t_end")?,
            threshold: num("threshold")?,
        };

        let cfg = Self {
            source,
            oracle_p: num("oracle.p")?,
            oracle_q: num("oracle.q")?,
            chains: scalar("chains", get("chains"))?,
            parallel: scalar("parallel", get("parallel"))?,
            seed: scalar("seed", get("seed"))?,
            steps: scalar("steps", get("steps"))?,
            burn_in: scalar("burn_in", get("burn_in"))?,
            prior_lo,
            prior_hi,
            sigma_mh,
            threshold_r: list("threshold_r", get("threshold_r"))?,
            delta: list("delta", get("delta"))?,
            epsilon: list("epsilon", get("epsilon"))?,
            xi,
            gamma,
            gamma_safety: num("gamma_safety")?,
            e_hat,
            max_checks: optional(get("max_checks"), |v| scalar("max_checks", v))?,
            fixed_n_grid: list("fixed_n_grid", get("fixed_n_grid"))?,
            fixed_n: match get("fixed_n") {
                "required" => None,
                v => Some(scalar("fixed_n", v)?),
            },
            gap_max_n: scalar("gap.max_n", get("gap.max_n"))?,
            max_samples: scalar("max_samples", get("max_samples"))?,
            model,
            data: optional(get("data"), |v| Ok(PathBuf::from(v)))?,
            synth_params: four("synth.params", get("synth.params"))?,
            synth_sd: num("synth.sd")?,
            synth_seed: scalar("synth.seed", get("synth.seed"))?,
            bounds_epsilon: list("bounds.epsilon", get("bounds.epsilon"))?,
            bounds_gamma: list("bounds.gamma", get("bounds.gamma"))?,
            bounds_delta: list("bounds.delta", get("bounds.delta"))?,
            bounds_big_delta: optional(get("bounds.big_delta"), |v| list("bounds.big_delta", v))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        let (p, q) = (self.oracle_p, self.oracle_q);
        if !(p > 0.0 && p <= 1.0 && q > 0.0 && q <= 1.0) {
            return fail(format!("oracle.p = {p}, oracle.q = {q}: both must lie in (0, 1]"));
        }
        if self.chains == 0 {
            return fail("chains must be at least 1".into());
        }
        if self.steps < 3 {
            return fail("steps must be at least 3".into());
        }
        for i in 0..4 {
            if !(self.prior_lo[i] < self.prior_hi[i]) {
                return fail(format!("k{}.lo must be below k{}.hi", i + 1, i + 1));
            }
            if !(self.sigma_mh[i] > 0.0) {
                return fail(format!("k{}.sigma_mh must be positive", i + 1));
            }
        }
        if let Some(r) = self.threshold_r.iter().find(|r| !(**r > 0.0 && **r < 1.0)) {
            return fail(format!("threshold_r value {r} must lie in (0, 1)"));
        }
        for &d in &self.delta {
            if let Some(r) = self.threshold_r.iter().find(|r| !(d > 0.0 && d < r.min(1.0 - **r))) {
                return fail(format!("delta value {d} must lie in (0, min(r, 1 - r)) for r = {r}"));
            }
        }
        if let Some(e) = self.epsilon.iter().find(|e| !(**e > 0.0 && **e <= 0.4)) {
            return fail(format!("epsilon value {e} must lie in (0, 0.4]"));
        }
        if let Some(xi) = self.xi {
            if !(xi > 0.0 && xi <= 0.4) {
                return fail(format!("xi = {xi} must lie in (0, 0.4]"));
            }
        }
        if let GammaChoice::Fixed(g) = self.gamma {
            if !(g > 0.0 && g <= 1.0) {
                return fail(format!("gamma = {g} must lie in (0, 1]"));
            }
        }
        if self.gamma == GammaChoice::Exact && self.source == SourceKind::JakStat {
            return fail("gamma = exact needs source = oracle".into());
        }
        if !(self.gamma_safety > 0.0 && self.gamma_safety <= 1.0) {
            return fail(format!("gamma_safety = {} must lie in (0, 1]", self.gamma_safety));
        }
        if let MeanChoice::Fixed(e) = self.e_hat {
            if !(0.0..=1.0).contains(&e) {
                return fail(format!("e_hat = {e} must lie in [0, 1]"));
            }
        }
        if self.max_checks == Some(0) {
            return fail("max_checks must be at least 1".into());
        }
        if self.fixed_n_grid.contains(&0) || self.fixed_n == Some(0) {
            return fail("fixed_n_grid entries must be positive".into());
        }
        if self.max_samples < self.steps {
            return fail("max_samples must be at least steps".into());
        }
        if !(self.synth_sd >= 0.0) {
            return fail("synth.sd must be nonnegative".into());
        }
        if let Some(e) = self.bounds_epsilon.iter().find(|e| !(**e > 0.0 && **e <= 1.0)) {
            return fail(format!("bounds.epsilon value {e} must lie in (0, 1]"));
        }
        if let Some(g) = self.bounds_gamma.iter().find(|g| !(**g > 0.0 && **g <= 1.0)) {
            return fail(format!("bounds.gamma value {g} must lie in (0, 1]"));
        }
        let positive = |v: &[f64]| v.iter().all(|x| *x > 0.0);
        if !positive(&self.bounds_delta) || !self.bounds_big_delta.as_deref().map_or(true, positive) {
            return fail("bounds.delta and bounds.big_delta values must be positive".into());
        }
        self.model.validate().map_err(|e| Error::Config(e.to_string()))
    }

    /// Growth factor for tests run at `epsilon`.
    pub fn xi_for(&self, epsilon: f64) -> f64 {
        self.xi
            .unwrap_or_else(|| crate::hyptest::xi_default(epsilon))
    }

    /// Every key with its resolved value, in [`DEFAULTS`] order.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let source = match self.source {
            SourceKind::Oracle => "oracle",
            SourceKind::JakStat => "jakstat",
        };
        let mut out: Vec<(&'static str, String)> = vec![
            ("source", source.into()),
            ("oracle.p", self.oracle_p.to_string()),
            ("oracle.q", self.oracle_q.to_string()),
            ("chains", self.chains.to_string()),
            ("parallel", self.parallel.to_string()),
            ("seed", self.seed.to_string()),
            ("steps", self.steps.to_string()),
            ("burn_in", self.burn_in.to_string()),
        ];
        const PRIOR_KEYS: [[&str; 3]; 4] = [
            ["k1.lo", "k1.hi", "k1.sigma_mh"],
            ["k2.lo", "k2.hi", "k2.sigma_mh"],
            ["k3.lo", "k3.hi", "k3.sigma_mh"],
            ["k4.lo", "k4.hi", "k4.sigma_mh"],
        ];
        for (i, keys) in PRIOR_KEYS.iter().enumerate() {
            out.push((keys[0], self.prior_lo[i].to_string()));
            out.push((keys[1], self.prior_hi[i].to_string()));
            out.push((keys[2], self.sigma_mh[i].to_string()));
        }
        let opt = |v: Option<String>| v.unwrap_or_else(|| "none".into());
        out.extend([
            ("threshold_r", join(&self.threshold_r)),
            ("delta", join(&self.delta)),
            ("epsilon", join(&self.epsilon)),
            ("xi", self.xi.map_or("auto".into(), |x| x.to_string())),
            (
                "gamma",
                match self.gamma {
                    GammaChoice::Estimate => "estimate".into(),
                    GammaChoice::Exact => "exact".into(),
                    GammaChoice::Fixed(g) => g.to_string(),
                },
            ),
            ("gamma_safety", self.gamma_safety.to_string()),
            (
                "e_hat",
                match self.e_hat {
                    MeanChoice::Auto => "auto".into(),
                    MeanChoice::Fixed(e) => e.to_string(),
                },
            ),
            ("max_checks", opt(self.max_checks.map(|c| c.to_string()))),
            ("fixed_n_grid", join(&self.fixed_n_grid)),
            ("fixed_n", self.fixed_n.map_or("required".into(), |n| n.to_string())),
            ("gap.max_n", self.gap_max_n.to_string()),
            ("max_samples", self.max_samples.to_string()),
            ("init.stat", self.model.init_stat.to_string()),
            ("epo", self.model.epo.to_string()),
            ("K", self.model.delay_compartments.to_string()),
            ("dt", self.model.dt.to_string()),
            ("t_end", self.model.t_end.to_string()),
            ("threshold", self.model.threshold.to_string()),
            ("data", opt(self.data.as_ref().map(|p| p.display().to_string()))),
            ("synth.params", join(&self.synth_params)),
            ("synth.sd", self.synth_sd.to_string()),
            ("synth.seed", self.synth_seed.to_string()),
            ("bounds.epsilon", join(&self.bounds_epsilon)),
            ("bounds.gamma", join(&self.bounds_gamma)),
            ("bounds.delta", join(&self.bounds_delta)),
            ("bounds.big_delta", opt(self.bounds_big_delta.as_deref().map(join))),
        ]);
        debug_assert_eq!(out.len(), DEFAULTS.len());
        out
    }

    /// Default synthetic-data parameters match the reference point.
    pub fn reference_params() -> [f64; 4] {
        let p = REFERENCE_PARAMS;
        [p.k1, p.k2, p.k3, p.k4]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.source, SourceKind::Oracle);
        assert_eq!((cfg.oracle_p, cfg.oracle_q), (0.1, 0.1));
        assert_eq!(cfg.chains, 100);
        assert_eq!(cfg.steps, 100_000);
        assert_eq!(cfg.prior_hi, PRIOR_HI);
        assert_eq!(cfg.sigma_mh, SIGMA_MH);
        assert_eq!(cfg.model, ModelSettings::default());
        assert_eq!(cfg.synth_params, RunConfig::reference_params());
        assert_eq!(cfg.xi, None);
        assert!((cfg.xi_for(0.01) - 0.313_277_247_663_631_5).abs() < 1e-12);
    }

    #[test]
    fn parse_comments_blank_lines_and_errors() {
        let kv = KeyValues::parse("# header\n\nseed = 7  # trailing\nchains=3\n", Path::new("x")).unwrap();
        assert_eq!(kv.get("seed"), Some("7"));
        assert_eq!(kv.get("chains"), Some("3"));
        match KeyValues::parse("seed = 1\nnot a pair\n", Path::new("cfg.txt")) {
            Err(Error::Parse { path, line, .. }) => {
                assert_eq!(path, Path::new("cfg.txt"));
                assert_eq!(line, 2);
            }
            other => panic!("{other:?}"),
        }
        assert!(KeyValues::parse("seed = 1\nseed = 2\n", Path::new("x")).is_err());
    }

    #[test]
    fn precedence_override_file_default() {
        let file = KeyValues::parse("seed = 5\nchains = 4\n", Path::new("f")).unwrap();
        let mut cli = KeyValues::new();
        cli.set("seed", 9);
        let cfg = RunConfig::resolve(&file, &cli).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.chains, 4);
        assert_eq!(cfg.steps, 100_000);
    }

    #[test]
    fn unknown_and_malformed_keys_rejected() {
        let bad = KeyValues::parse("sede = 1\n", Path::new("f")).unwrap();
        assert!(matches!(
            RunConfig::resolve(&bad, &KeyValues::new()),
            Err(Error::Config(_))
        ));
        for text in [
            "chains = many",
            "chains = 0",
            "threshold_r = 0.3,1.2",
            "threshold_r = 0.1\ndelta = 0.1",
            "epsilon = 0.5",
            "xi = 0.5",
            "bounds.epsilon = 1.5",
            "source = mcmc",
            "gamma = 1.5",
            "k2.lo = 40",
            "source = jakstat\ngamma = exact",
            "synth.params = 1,2,3",
        ] {
            let kv = KeyValues::parse(text, Path::new("f")).unwrap();
            assert!(RunConfig::resolve(&kv, &KeyValues::new()).is_err(), "{text}");
        }
    }

    #[test]
    fn pairs_roundtrip_through_resolve() {
        let text = "source = jakstat\noracle.q = 0.3\nchains = 3\nthreshold_r = 0.25,0.75\nxi = 0.2\n\
                    gamma = 0.15\ne_hat = 0.8875\nmax_checks = 12\ndata = obs.csv\n\
                    bounds.big_delta = 0.1,0.2\nK = 6\n";
        let cfg = RunConfig::resolve(&KeyValues::parse(text, Path::new("f")).unwrap(), &KeyValues::new()).unwrap();
        let mut kv = KeyValues::new();
        for (k, v) in cfg.to_pairs() {
            kv.set(k, v);
        }
        kv.set("subcommand", "case-study");
        kv.set("out", "somewhere");
        let again = RunConfig::resolve(&kv, &KeyValues::new()).unwrap();
        assert_eq!(cfg, again);
        let keys: Vec<&str> = cfg.to_pairs().into_iter().map(|(k, _)| k).collect();
        let expected: Vec<&str> = DEFAULTS.iter().map(|(k, _)| *k).collect();
        assert_eq!(keys, expected);
    }

    #[test]
    fn float_values_roundtrip_exactly() {
        let mut kv = KeyValues::new();
        kv.set("oracle.p", 0.1f64 + 0.2);
        let cfg = RunConfig::resolve(&kv, &KeyValues::new()).unwrap();
        let pairs = cfg.to_pairs();
        let p = &pairs.iter().find(|(k, _)| *k == "oracle.p").unwrap().1;
        assert_eq!(p.parse::<f64>().unwrap(), 0.1 + 0.2);
    }
}

//! `mchyp`: certified threshold tests on MCMC output from the command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context as _};
use clap::{Args, Parser, Subcommand};

use mcmc_hyptest::chain::Trajectory;
use mcmc_hyptest::config::{KeyValues, RunConfig};
use mcmc_hyptest::csvio::CsvTable;
use mcmc_hyptest::harness::{self, Context, TestKind};
use mcmc_hyptest::spectral::{estimate_gap, GapOutcome};

#[derive(Parser)]
#[command(name = "mchyp", version, about = "Certified threshold tests for MCMC estimates")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed; chain c uses seed + c.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, or a `.csv` file for single-table commands.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Number of independent chains.
    #[arg(long, global = true)]
    chains: Option<usize>,
    /// Worker threads (0: one per core).
    #[arg(long, global = true)]
    parallel: Option<usize>,
    /// Extra `key=value` override; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the absolute spectral gap from a trajectory or fresh chains.
    GapEstimate {
        #[command(flatten)]
        input: InputArg,
        /// Columns of a multi-column CSV to use as functions.
        #[arg(long, value_delimiter = ',')]
        columns: Option<Vec<String>>,
    },
    /// Fixed-length test.
    TestFixed {
        #[command(flatten)]
        input: InputArg,
        #[command(flatten)]
        test: TestArgs,
        /// Sample size (default: the size that guarantees `--eps`).
        #[arg(long)]
        n: Option<u64>,
    },
    /// Sequential test with indifference region.
    TestSeq {
        #[command(flatten)]
        input: InputArg,
        #[command(flatten)]
        test: TestArgs,
    },
    /// Sequential test without indifference region.
    TestSeqNi {
        #[command(flatten)]
        input: InputArg,
        #[command(flatten)]
        test: TestArgs,
        /// Give up after this many checks.
        #[arg(long)]
        max_checks: Option<u32>,
    },
    /// Replicated case study: decisions, error rates, stopping times and gaps.
    CaseStudy,
    /// Tabulate thresholds, sample sizes and stopping-time bounds.
    Bounds,
    /// Write a synthetic JAK-STAT observation set.
    SynthData,
}

#[derive(Args)]
struct InputArg {
    /// Trajectory `.csv`, `oracle:p=..,q=..`, or a model config file.
    #[arg(long)]
    input: Option<String>,
}

#[derive(Args)]
struct TestArgs {
    /// Threshold r in (0, 1).
    #[arg(long)]
    r: Option<f64>,
    /// Half-width of the indifference region.
    #[arg(long)]
    delta: Option<f64>,
    /// Error probability.
    #[arg(long)]
    eps: Option<f64>,
    /// Growth rate of the check schedule.
    #[arg(long)]
    xi: Option<f64>,
    /// Spectral gap fed to the test (default: estimated from the input).
    #[arg(long)]
    gamma: Option<f64>,
}

/// Failure class, mapped to the exit code.
enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Config(e) | Failure::Runtime(e) => e,
        }
    }
}

trait OrConfig<T> {
    fn or_config(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> OrConfig<T> for Result<T, E> {
    fn or_config(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Config(e.into()))
    }
}

trait OrRuntime<T> {
    fn or_runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> OrRuntime<T> for Result<T, E> {
    fn or_runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

/// What `--input` names.
enum Input {
    Trajectory(PathBuf),
    /// Oracle spec or model config, already merged into the config.
    Generated,
}

/// Everything resolved before any computation.
struct Resolved {
    cfg: RunConfig,
    input: Option<Input>,
    input_text: Option<String>,
    columns: Option<Vec<String>>,
}

fn subcommand_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::GapEstimate { .. } => "gap-estimate",
        Command::TestFixed { .. } => "test-fixed",
        Command::TestSeq { .. } => "test-seq",
        Command::TestSeqNi { .. } => "test-seq-ni",
        Command::CaseStudy => "case-study",
        Command::Bounds => "bounds",
        Command::SynthData => "synth-data",
    }
}

fn parse_oracle(spec: &str) -> anyhow::Result<KeyValues> {
    let mut kv = KeyValues::new();
    kv.set("source", "oracle");
    for part in spec.split(',').filter(|p| !p.trim().is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| anyhow!("oracle spec part `{part}` is not `key=value`"))?;
        let key = match k.trim() {
            "p" => "oracle.p",
            "q" => "oracle.q",
            other => bail!("unknown oracle parameter `{other}` (expected p or q)"),
        };
        kv.set(key, v.trim());
    }
    Ok(kv)
}

fn resolve(cli: &Cli) -> Result<Resolved, Failure> {
    let file = match &cli.global.config {
        Some(path) => KeyValues::load(path)
            .with_context(|| format!("reading config {}", path.display()))
            .or_config()?,
        None => KeyValues::new(),
    };

    let (input_arg, columns_arg) = match &cli.command {
        Command::GapEstimate { input, columns } => (input.input.clone(), columns.clone()),
        Command::TestFixed { input, .. }
        | Command::TestSeq { input, .. }
        | Command::TestSeqNi { input, .. } => (input.input.clone(), None),
        _ => (None, None),
    };
    // A manifest passed as --config carries the input of the run it records.
    let input_text = input_arg.or_else(|| file.get("input").map(str::to_owned));
    let columns = columns_arg.or_else(|| {
        file.get("columns")
            .map(|c| c.split(',').map(|s| s.trim().to_owned()).collect())
    });

    // Layers: defaults < --config < input model/oracle < flags.
    let mut layer = file.clone();
    let mut input = None;
    if let Some(text) = &input_text {
        if let Some(spec) = text.strip_prefix("oracle:") {
            for (k, v) in parse_oracle(spec).or_config()?.iter() {
                layer.set(k, v);
            }
            input = Some(Input::Generated);
        } else if text.ends_with(".csv") {
            input = Some(Input::Trajectory(PathBuf::from(text)));
        } else {
            let model = KeyValues::load(Path::new(text))
                .with_context(|| format!("reading model config {text}"))
                .or_config()?;
            if model.get("source").is_none() {
                layer.set("source", "jakstat");
            }
            for (k, v) in model.iter() {
                layer.set(k, v);
            }
            input = Some(Input::Generated);
        }
    }

    let mut flags = KeyValues::new();
    let g = &cli.global;
    if let Some(v) = g.seed {
        flags.set("seed", v);
    }
    if let Some(v) = g.chains {
        flags.set("chains", v);
    }
    if let Some(v) = g.parallel {
        flags.set("parallel", v);
    }
    let test_args = match &cli.command {
        Command::TestFixed { test, n, .. } => {
            if let Some(n) = n {
                flags.set("fixed_n", n);
            }
            Some(test)
        }
        Command::TestSeq { test, .. } => Some(test),
        Command::TestSeqNi {
            test, max_checks, ..
        } => {
            if let Some(c) = max_checks {
                flags.set("max_checks", c);
            }
            Some(test)
        }
        _ => None,
    };
    if let Some(t) = test_args {
        let pairs = [
            ("threshold_r", t.r),
            ("delta", t.delta),
            ("epsilon", t.eps),
            ("xi", t.xi),
            ("gamma", t.gamma),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                flags.set(key, v);
            }
        }
    }
    for item in &g.set {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| anyhow!("--set expects KEY=VALUE, got `{item}`"))
            .or_config()?;
        flags.set(k.trim(), v.trim());
    }

    let cfg = RunConfig::resolve(&layer, &flags).or_config()?;
    Ok(Resolved {
        cfg,
        input,
        input_text,
        columns,
    })
}

/// Output file for single-table commands, and the directory that receives
/// the manifest (none when `--out` names a file).
fn single_output(out: &Option<PathBuf>, default_name: &str) -> (PathBuf, Option<PathBuf>) {
    match out {
        Some(p) if p.extension().is_some_and(|e| e == "csv") => (p.clone(), None),
        Some(dir) => (dir.join(default_name), Some(dir.clone())),
        None => (PathBuf::from("out").join(default_name), Some(PathBuf::from("out"))),
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).or_runtime()?;
    }
    std::fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .or_runtime()
}

fn load_trajectory(path: &Path) -> Result<Trajectory, Failure> {
    Trajectory::load_csv(path)
        .with_context(|| format!("reading trajectory {}", path.display()))
        .or_config()
}

fn gap_from_csv(path: &Path, columns: Option<&[String]>) -> Result<String, Failure> {
    let table = CsvTable::load(path)
        .with_context(|| format!("reading {}", path.display()))
        .or_config()?;
    let names: Vec<String> = match columns {
        Some(c) => c.to_vec(),
        None => table
            .headers()
            .iter()
            .filter(|h| h.as_str() != "step")
            .cloned()
            .collect(),
    };
    let mut series = Vec::with_capacity(names.len());
    for name in &names {
        series.push(table.column(name).or_config()?);
    }
    let functions: Vec<(&str, &[f64])> = names
        .iter()
        .zip(&series)
        .map(|(n, s)| (n.as_str(), s.as_slice()))
        .collect();
    let outcome = estimate_gap(&functions).map_err(classify)?;
    let needs_more = matches!(outcome, GapOutcome::NeedsMoreSamples { .. });
    if let GapOutcome::NeedsMoreSamples { target_n, .. } = &outcome {
        eprintln!(
            "warning: trajectory too short for the estimate; about {target_n} samples are needed"
        );
    }
    Ok(harness::gap_estimate_table([(0, outcome.estimate(), needs_more)]))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let name = subcommand_name(&cli.command);
    let resolved = resolve(&cli)?;
    let cfg = &resolved.cfg;
    let mut meta = Vec::new();
    if let Some(text) = &resolved.input_text {
        meta.push(("input", text.clone()));
    }
    if let Some(cols) = &resolved.columns {
        meta.push(("columns", cols.join(",")));
    }

    match &cli.command {
        Command::CaseStudy => {
            let out = cli.global.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            let names = [
                harness::DECISIONS,
                harness::ERROR_RATES,
                harness::STOPPING_TIMES,
                harness::GAP,
                harness::GAP_TRACE,
            ];
            harness::write_manifest(name, cfg, &out, &names, &meta).or_runtime()?;
            let tables = harness::case_study_tables(cfg)
                .map_err(classify)?;
            tables.write_to(&out).or_runtime()?;
            eprintln!("wrote {} tables to {}", tables.files.len(), out.display());
        }
        Command::Bounds => {
            let (file, dir) = single_output(&cli.global.out, harness::BOUNDS);
            if let Some(dir) = &dir {
                harness::write_manifest(name, cfg, dir, &[harness::BOUNDS], &meta).or_runtime()?;
            }
            write_file(&file, &harness::bounds_table(&harness::bounds_rows(cfg)))?;
        }
        Command::SynthData => {
            let (file, dir) = single_output(&cli.global.out, "data.csv");
            if let Some(dir) = &dir {
                harness::write_manifest(name, cfg, dir, &["data.csv"], &meta).or_runtime()?;
            }
            let mut synth = cfg.clone();
            synth.data = None;
            let data = harness::observation_data(&synth).map_err(classify)?;
            let mut text = Vec::new();
            data.write_csv(&mut text).or_runtime()?;
            write_file(&file, &String::from_utf8(text).or_runtime()?)?;
        }
        Command::GapEstimate { .. } => {
            let (file, dir) = single_output(&cli.global.out, harness::GAP);
            if let Some(dir) = &dir {
                harness::write_manifest(name, cfg, dir, &[harness::GAP], &meta).or_runtime()?;
            }
            let text = match &resolved.input {
                Some(Input::Trajectory(path)) => gap_from_csv(path, resolved.columns.as_deref())?,
                _ => {
                    let ctx = Context::new(cfg, None).map_err(classify)?;
                    harness::gap_only_table(&ctx).map_err(classify)?
                }
            };
            write_file(&file, &text)?;
        }
        Command::TestFixed { .. } | Command::TestSeq { .. } | Command::TestSeqNi { .. } => {
            let kind = match &cli.command {
                Command::TestFixed { .. } => TestKind::Fixed,
                Command::TestSeq { .. } => TestKind::SeqIndiff,
                _ => TestKind::SeqNoIndiff,
            };
            let (file, dir) = single_output(&cli.global.out, harness::DECISIONS);
            if let Some(dir) = &dir {
                harness::write_manifest(name, cfg, dir, &[harness::DECISIONS], &meta).or_runtime()?;
            }
            let trajectory = match &resolved.input {
                Some(Input::Trajectory(path)) => Some(load_trajectory(path)?),
                _ => None,
            };
            let ctx = Context::new(cfg, trajectory.as_ref().map(|t| t.values())).map_err(classify)?;
            let text = harness::single_test_tables(&ctx, cfg, kind).map_err(classify)?;
            write_file(&file, &text)?;
        }
    }
    Ok(())
}

/// Config-shaped library errors exit with 2, the rest with 3.
fn classify(e: mcmc_hyptest::Error) -> Failure {
    use mcmc_hyptest::Error as E;
    match e {
        E::Config(_) | E::Parse { .. } | E::InvalidParameter { .. } => Failure::Config(e.into()),
        other => Failure::Runtime(other.into()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}

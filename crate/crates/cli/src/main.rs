//! `multitree` command-line front end.
//!
//! Exit codes: 0 success, 1 a `check` found a problem, 2 usage, config or parse error.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use multitree::config::FileConfig;
use multitree::experiments::{
    bound_experiment, run_batch, BatchSpec, BoundTrialResult, ExperimentError, Metric, Scenario,
    DEFAULT_PERCENTILES,
};
use multitree::metrics::{converged_state_report, is_converged};
use multitree::serial::{parse_state, write_state, LoadError};
use multitree::sim::{run, samples_to_csv, ConfigError, ProfileKind, SimConfig};
use multitree::DepthMode;
use serde_json::json;

const SEED_ENV: &str = "MULTITREE_SEED";

#[derive(Parser)]
#[command(name = "multitree", version, about = "Multi-tree streaming overlay simulator")]
struct Cli {
    /// Flat TOML config file; flags given on the command line win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one overlay and record its metrics.
    Run(RunArgs),
    /// Repeat a simulation and aggregate worst-percentile curves.
    Batch(BatchArgs),
    /// Measure single-tree convergence times against the logarithmic bound.
    Bound(BoundArgs),
    /// Load a saved overlay and report on it.
    Check(CheckArgs),
}

#[derive(Args)]
struct SimFlags {
    #[arg(long)]
    nodes: Option<u32>,
    #[arg(long)]
    colors: Option<u32>,
    #[arg(long)]
    need: Option<u32>,
    /// tight | loose | server_client | polarized
    #[arg(long)]
    profile: Option<ProfileKind>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    r: Option<u32>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    record_interval: Option<f64>,
    /// Falls back to the config file, then $MULTITREE_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    /// instantaneous | distributed
    #[arg(long)]
    depth_mode: Option<DepthMode>,
    /// Output directory.
    #[arg(long, default_value = "multitree-out")]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    sim: SimFlags,
}

#[derive(Args)]
struct BatchArgs {
    #[command(flatten)]
    sim: SimFlags,
    /// tight | source_coding | loose | server_client | polarized
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    repeats: Option<u32>,
    #[arg(long, value_delimiter = ',')]
    percentiles: Option<Vec<f64>>,
    /// coverage | max_depth | cycles | buffered_depth_error
    #[arg(long, value_delimiter = ',')]
    metrics: Option<Vec<Metric>>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    jobs: Option<usize>,
    /// Test every final state for convergence.
    #[arg(long)]
    check_convergence: bool,
}

#[derive(Args)]
struct BoundArgs {
    #[arg(long, value_delimiter = ',')]
    nodes_list: Option<Vec<u32>>,
    #[arg(long)]
    trials: Option<u32>,
    #[arg(long, value_delimiter = ',')]
    epsilons: Option<Vec<f64>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "multitree-out")]
    out: PathBuf,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    state: PathBuf,
    #[arg(long)]
    depth_mode: Option<DepthMode>,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("cannot write {path}: {source}")]
    Write { path: String, source: std::io::Error },
    #[error("check failed")]
    CheckFailed,
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::CheckFailed => 1,
            _ => 2,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Names the flag responsible for a rejected config.
fn config_error(e: ConfigError) -> CliError {
    let flag = match e {
        ConfigError::Need { .. } => "--need",
        ConfigError::Colors { .. } => "--colors",
        ConfigError::TooFewNodes(_) => "--nodes",
        ConfigError::Horizon(_) => "--horizon",
        ConfigError::RecordInterval(_) => "--record-interval",
        ConfigError::ClockRate(_) => "clock_rate",
        ConfigError::Alpha(_) => "--alpha",
        ConfigError::Ratio(_) => "--r",
        _ => "--profile",
    };
    usage(format!("{flag}: {e}"))
}

fn experiment_error(e: ExperimentError) -> CliError {
    let flag = match e {
        ExperimentError::Config(inner) => return config_error(inner),
        ExperimentError::NoRepeats => "--repeats",
        ExperimentError::Percentile(_) | ExperimentError::NoPercentiles => "--percentiles",
        ExperimentError::NoMetrics => "--metrics",
        ExperimentError::UnknownScenario(_) => "--scenario",
        ExperimentError::SourceCoding { .. } => "--need/--colors",
        ExperimentError::BoundShape => "--nodes-list/--trials",
        ExperimentError::Pool(_) => "--jobs",
    };
    usage(format!("{flag}: {e}"))
}

fn env_seed() -> Result<Option<u64>, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s.trim().parse().map(Some).map_err(|_| usage(format!("{SEED_ENV}: `{s}` is not a seed"))),
        Err(_) => Ok(None),
    }
}

fn resolve_seed(flag: Option<u64>, file: &FileConfig) -> Result<u64, CliError> {
    match flag.or(file.seed) {
        Some(s) => Ok(s),
        None => Ok(env_seed()?.unwrap_or(0)),
    }
}

fn parse_profile(file: &FileConfig) -> Result<Option<ProfileKind>, CliError> {
    file.profile.as_deref().map(|p| p.parse().map_err(|e: String| usage(format!("profile: {e}")))).transpose()
}

fn sim_config(flags: &SimFlags, file: &FileConfig) -> Result<SimConfig, CliError> {
    let d = SimConfig::default();
    let profile = match flags.profile {
        Some(p) => p,
        None => parse_profile(file)?.unwrap_or(ProfileKind::Tight),
    };
    let alpha = flags.alpha.or(file.alpha).unwrap_or(0.0);
    let r = flags.r.or(file.r).unwrap_or(2);
    let cfg = SimConfig {
        n: flags.nodes.or(file.nodes).unwrap_or(d.n),
        m: flags.colors.or(file.colors).unwrap_or(d.m),
        k: flags.need.or(file.need).unwrap_or(d.k),
        degree_profile: profile.with_params(alpha, r),
        depth_mode: flags.depth_mode.or(file.depth_mode).unwrap_or(d.depth_mode),
        horizon: flags.horizon.or(file.horizon).unwrap_or(d.horizon),
        record_interval: flags.record_interval.or(file.record_interval).unwrap_or(d.record_interval),
        seed: resolve_seed(flags.seed, file)?,
        clock_rate: file.clock_rate.unwrap_or(d.clock_rate),
    };
    cfg.validate().map_err(config_error)?;
    Ok(cfg)
}

/// Writes through a temp file in the target directory, then renames.
fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let err = |source| CliError::Write { path: path.display().to_string(), source };
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(err)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(err)?;
    tmp.write_all(contents.as_bytes()).map_err(err)?;
    tmp.persist(path).map_err(|e| err(e.error))?;
    Ok(())
}

fn cmd_run(args: &RunArgs, file: &FileConfig) -> Result<(), CliError> {
    let cfg = sim_config(&args.sim, file)?;
    let res = run(&cfg).map_err(config_error)?;
    let metrics = args.sim.out.join("metrics.csv");
    let state = args.sim.out.join("final_state.txt");
    write_atomic(&metrics, &samples_to_csv(&res.samples))?;
    write_atomic(&state, &write_state(&res.final_state))?;
    let last = res.samples.last().expect("record grid starts at t=0");
    println!(
        "{} events; coverage {:.4}, max depth {} at t={}",
        res.events, last.fraction_fully_covered, last.max_tree_depth, last.time
    );
    println!("wrote {} and {}", metrics.display(), state.display());
    Ok(())
}

fn batch_spec(args: &BatchArgs, file: &FileConfig) -> Result<BatchSpec, CliError> {
    let flags = &args.sim;
    let mut spec = match args.scenario.as_deref().or(file.scenario.as_deref()) {
        Some(name) => {
            let (dk, dm) = if name == "source_coding" { (3, 4) } else { (2, 2) };
            let scenario = Scenario::from_name(
                name,
                flags.need.or(file.need).unwrap_or(dk),
                flags.colors.or(file.colors).unwrap_or(dm),
                flags.alpha.or(file.alpha).unwrap_or(0.0),
                flags.r.or(file.r).unwrap_or(2),
            )
            .map_err(experiment_error)?;
            let mut spec = scenario.batch_spec(resolve_seed(flags.seed, file)?).map_err(experiment_error)?;
            let base = &mut spec.base;
            base.n = flags.nodes.or(file.nodes).unwrap_or(base.n);
            base.horizon = flags.horizon.or(file.horizon).unwrap_or(base.horizon);
            base.record_interval = flags.record_interval.or(file.record_interval).unwrap_or(base.record_interval);
            base.depth_mode = flags.depth_mode.or(file.depth_mode).unwrap_or(base.depth_mode);
            base.clock_rate = file.clock_rate.unwrap_or(base.clock_rate);
            spec
        }
        None => BatchSpec::new(sim_config(flags, file)?, 500),
    };
    spec.repeats = args.repeats.or(file.repeats).unwrap_or(spec.repeats);
    spec.percentiles = args.percentiles.clone().or(file.percentiles.clone()).unwrap_or(DEFAULT_PERCENTILES.to_vec());
    spec.metrics = match (&args.metrics, &file.metrics) {
        (Some(m), _) => m.clone(),
        (None, Some(names)) => names
            .iter()
            .map(|n| n.parse().map_err(|e: String| usage(format!("metrics: {e}"))))
            .collect::<Result<_, _>>()?,
        (None, None) => spec.metrics,
    };
    spec.jobs = args.jobs.or(file.jobs).unwrap_or(0);
    spec.check_convergence = args.check_convergence || file.check_convergence.unwrap_or(false);
    spec.validate().map_err(experiment_error)?;
    Ok(spec)
}

fn cmd_batch(args: &BatchArgs, file: &FileConfig) -> Result<(), CliError> {
    let spec = batch_spec(args, file)?;
    let result = run_batch(&spec).map_err(experiment_error)?;
    for &metric in &spec.metrics {
        let csv = result.csv(metric).expect("batch records every requested metric");
        write_atomic(&args.sim.out.join(format!("{}.csv", metric.name())), &csv)?;
    }
    let summary = serde_json::to_string_pretty(&result.summary).expect("summary serializes");
    write_atomic(&args.sim.out.join("summary.json"), &(summary + "\n"))?;
    println!(
        "{} runs in {:.1}s; {:.1}% fully covered at the horizon",
        spec.repeats,
        result.summary.wall_time_secs,
        100.0 * result.summary.fully_covered_fraction
    );
    println!("wrote {} metric CSVs and summary.json to {}", spec.metrics.len(), args.sim.out.display());
    Ok(())
}

fn cmd_bound(args: &BoundArgs, file: &FileConfig) -> Result<(), CliError> {
    let sizes = args.nodes_list.clone().or(file.nodes_list.clone()).unwrap_or(vec![64, 256, 1024]);
    let trials = args.trials.or(file.trials).unwrap_or(200);
    let epsilons = args.epsilons.clone().or(file.epsilons.clone()).unwrap_or(vec![1.0, 2.0, 3.0]);
    let seed = resolve_seed(args.seed, file)?;
    if sizes.is_empty() {
        return Err(usage("--nodes-list: at least one size is required"));
    }
    if let Some(e) = epsilons.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
        return Err(usage(format!("--epsilons: {e} is not a non-negative number")));
    }

    let mut rows = String::from("n,trial,T\n");
    let mut entries = Vec::new();
    let mut medians = Vec::new();
    for &n in &sizes {
        let res: BoundTrialResult = bound_experiment(n, trials, seed, &epsilons).map_err(experiment_error)?;
        for (i, t) in res.t_samples.iter().enumerate() {
            writeln!(rows, "{n},{i},{t}").unwrap();
        }
        for &(eps, frac) in &res.empirical_tail {
            let bound = 3.0 * (-eps).exp();
            entries.push(json!({
                "n": n,
                "epsilon": eps,
                "threshold": BoundTrialResult::threshold(n, eps),
                "fraction_above": frac,
                "bound": bound,
                "within_bound": frac < bound,
            }));
        }
        medians.push(json!({ "n": n, "median": res.median() }));
        println!("N={n}: median T {:.2}, tail {:?}", res.median(), res.empirical_tail);
    }
    let summary = json!({ "seed": seed, "trials": trials, "medians": medians, "tail": entries });
    write_atomic(&args.out.join("bound_times.csv"), &rows)?;
    write_atomic(&args.out.join("bound_tail.json"), &(serde_json::to_string_pretty(&summary).unwrap() + "\n"))?;
    println!("wrote bound_times.csv and bound_tail.json to {}", args.out.display());
    Ok(())
}

fn cmd_check(args: &CheckArgs, file: &FileConfig) -> Result<(), CliError> {
    let mode = args.depth_mode.or(file.depth_mode).unwrap_or(DepthMode::Distributed);
    let path = args.state.display();
    let text = std::fs::read_to_string(&args.state).map_err(|e| usage(format!("--state: cannot read {path}: {e}")))?;
    let state = match parse_state(&text) {
        Ok(s) => s,
        Err(LoadError::Structure(report)) => {
            println!("link invariants: FAIL\n{report}");
            return Err(CliError::CheckFailed);
        }
        Err(e) => return Err(usage(format!("{path}: {e}"))),
    };
    let invariants = state.check_assumption1();
    println!("link invariants: {}", if invariants.is_ok() { "PASS" } else { "FAIL" });
    if !invariants.is_ok() {
        println!("{invariants}");
    }
    let converged = is_converged(&state, mode);
    println!("converged ({}): {}", mode.as_str(), if converged { "PASS" } else { "FAIL" });
    let report = converged_state_report(&state);
    println!("{report}");
    if invariants.is_ok() && converged && report.all_passed() {
        Ok(())
    } else {
        Err(CliError::CheckFailed)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let file = match &cli.config {
        Some(path) => match FileConfig::load(path) {
            Ok(f) => f,
            Err(e) => {
                eprintln!("error: --config: {e}");
                return ExitCode::from(2);
            }
        },
        None => FileConfig::default(),
    };
    let outcome = match &cli.command {
        Command::Run(a) => cmd_run(a, &file),
        Command::Batch(a) => cmd_batch(a, &file),
        Command::Bound(a) => cmd_bound(a, &file),
        Command::Check(a) => cmd_check(a, &file),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::CheckFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

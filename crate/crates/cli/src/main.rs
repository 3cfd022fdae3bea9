use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use slocal_cli::config::{ExperimentConfig, MetricKind, PartialConfig};
use slocal_cli::error::{CliError, CliResult};
use slocal_cli::experiment::{eval_dir, run_experiment};
use slocal_cli::grid::grid_search;
use slocal_cli::presets::{self, SearchGrid};
use slocal_core::concavity::{self, A0Params};
use slocal_core::schedule::{sigma_from_a0, ScheduleSpec};
use slocal_core::targets::TargetSpec;

#[derive(Parser)]
#[command(name = "slocal", version, about = "Stochastic-localization samplers and benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its artifacts.
    Run(RunArgs),
    /// Report the log-concavity window of a target under a schedule.
    Concavity(ConcavityArgs),
    /// Search (t0, eta) over a named or explicit grid.
    Grid(GridArgs),
    /// Recompute metrics from a run directory.
    Eval(EvalArgs),
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// TOML file with any of the settings below (snake_case keys).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    target: Option<String>,
    /// slips | ideal | ais | smc
    #[arg(long)]
    algo: Option<String>,
    /// standard | geom-inf:<a1> | geom:<a1>,<a2>
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    t0: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    /// SDE steps (annealing levels for ais/smc).
    #[arg(long)]
    k: Option<usize>,
    /// MCMC steps per estimate (per level for ais/smc).
    #[arg(long)]
    mcmc_steps: Option<usize>,
    #[arg(long)]
    n_init: Option<usize>,
    /// Independent runs (particles for ais/smc).
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    burn_frac: Option<f64>,
    /// Time grid for the ideal integrator: snr | uniform.
    #[arg(long)]
    grid_mode: Option<String>,
    /// Comma-separated metric names.
    #[arg(long, value_delimiter = ',')]
    metrics: Option<Vec<String>>,
    #[arg(long)]
    reference_samples: Option<usize>,
    /// Entropic regularisation.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    projections: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn layers(&self, preset: Option<String>) -> CliResult<(PartialConfig, PartialConfig)> {
        let file = match &self.config {
            Some(p) => PartialConfig::from_file(p)?,
            None => PartialConfig::default(),
        };
        let flags = PartialConfig {
            preset,
            target: self.target.clone(),
            algo: self.algo.clone(),
            schedule: self.schedule.clone(),
            t0: self.t0,
            eta: self.eta,
            k: self.k,
            mcmc_steps: self.mcmc_steps,
            n_init: self.n_init,
            runs: self.runs,
            seed: self.seed,
            burn_frac: self.burn_frac,
            grid: self.grid_mode.clone(),
            metrics: self.metrics.clone(),
            reference_samples: self.reference_samples,
            eps: self.eps,
            projections: self.projections,
            out: self.out.clone(),
        };
        Ok((file, flags))
    }
}

#[derive(Args)]
struct RunArgs {
    /// Selected hyper-parameters, e.g. table4:gmm8:standard.
    #[arg(long)]
    preset: Option<String>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct GridArgs {
    /// Search grid, e.g. table3:gmm or table3:phi4:geom11.
    #[arg(long)]
    preset: Option<String>,
    /// Explicit t0 values (used with --etas instead of a preset).
    #[arg(long, value_delimiter = ',')]
    t0s: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    etas: Option<Vec<f64>>,
    /// Ranking metric; defaults to the first configured metric.
    #[arg(long)]
    metric: Option<String>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct ConcavityArgs {
    #[arg(long)]
    target: String,
    #[arg(long, default_value = "standard")]
    schedule: String,
    /// Weight of a two-mode mixture, for the tighter radius.
    #[arg(long)]
    weight: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    /// Run directory with config.json and samples.csv.
    #[arg(long)]
    dir: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("slocal-out")
}

fn print_json(v: &impl serde::Serialize) -> CliResult<()> {
    use std::io::Write;
    let text = serde_json::to_string_pretty(v)?;
    // A closed stdout (e.g. piped into `head`) is not an error.
    let _ = writeln!(std::io::stdout().lock(), "{text}");
    Ok(())
}

fn run(args: RunArgs) -> CliResult<()> {
    let (file, flags) = args.config.layers(args.preset)?;
    let (cfg, out) = ExperimentConfig::resolve(file, flags)?;
    let dir = out.unwrap_or_else(default_out);
    let art = run_experiment(&cfg, &dir)?;
    print_json(&json!({
        "dir": art.dir,
        "config_hash": art.config_hash,
        "metrics": art.metrics,
    }))
}

fn grid(args: GridArgs) -> CliResult<()> {
    let (file, flags) = args.config.layers(None)?;
    let (cfg, out) = ExperimentConfig::resolve(file, flags)?;
    let search = match (&args.preset, &args.t0s, &args.etas) {
        (Some(p), None, None) => presets::table3(p, &cfg.schedule_spec()?)?,
        (None, t0s, etas) => SearchGrid {
            t0s: t0s.clone().unwrap_or_else(|| vec![cfg.t0]),
            etas: etas.clone().unwrap_or_else(|| vec![cfg.eta]),
        },
        _ => return Err(CliError::key("preset", "give either a grid preset or explicit --t0s/--etas")),
    };
    let metric: MetricKind = match &args.metric {
        Some(m) => m.parse()?,
        None => *cfg
            .metrics
            .first()
            .ok_or_else(|| CliError::key("metric", "no ranking metric"))?,
    };
    let rows = grid_search(&cfg, &search, metric, &out.unwrap_or_else(default_out))?;
    print_json(&rows)
}

fn concavity_report(args: ConcavityArgs) -> CliResult<()> {
    let spec: TargetSpec = args.target.parse().map_err(|e| CliError::key("target", e))?;
    let schedule: ScheduleSpec = args.schedule.parse().map_err(|e| CliError::key("schedule", e))?;
    let target = spec.build()?;
    let a0 = target.a0();
    let sigma = sigma_from_a0(a0.r, a0.tau)?;
    let mut params = A0Params::new(target.dim(), a0.r, a0.tau, sigma)?;
    if let Some(w) = args.weight {
        params = params.with_refinement(w)?;
    }
    let report = concavity::report(&params, &schedule)?;
    let log_snr = |t: f64| if t.is_finite() && t > 0.0 { schedule.log_snr(t).ok() } else { None };
    print_json(&json!({
        "target": spec.to_string(),
        "schedule": schedule.to_string(),
        "d": params.d,
        "r": params.r,
        "tau": params.tau,
        "sigma": sigma,
        "t_q": report.t_q,
        "t_p": report.t_p,
        "log_snr_t_q": log_snr(report.t_q),
        "log_snr_t_p": log_snr(report.t_p),
        "duality": report.duality,
        "suggested_t0": report.suggested_t0,
    }))
}

fn eval(args: EvalArgs) -> CliResult<()> {
    print_json(&eval_dir(&args.dir)?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Concavity(a) => concavity_report(a),
        Command::Grid(a) => grid(a),
        Command::Eval(a) => eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

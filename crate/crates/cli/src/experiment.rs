//! Running one configured experiment and persisting its artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::{json, Value};
use slocal_core::baselines::{ais_run, smc_run, systematic_resample, AnnealConfig, AnnealPath};
use slocal_core::ideal::{run_ideal, IdealConfig};
use slocal_core::metrics::{self, MetricRecord};
use slocal_core::rng::{self, derive_key, Phase};
use slocal_core::schedule::sigma_from_a0;
use slocal_core::slips::{run_batch, SlipsConfig};
use slocal_core::targets::{benchmark_gmm, eight_gaussians, load_dataset, Target, TargetSpec};

use rand::Rng;

use crate::config::{Algo, ExperimentConfig, MetricKind};
use crate::error::{CliError, CliResult};

pub const SAMPLES_FILE: &str = "samples.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";
pub const PLOTDATA_FILE: &str = "plotdata.csv";
pub const CONFIG_FILE: &str = "config.json";
pub const INCOMPLETE_FILE: &str = "INCOMPLETE";

const REFERENCE_TAG: u64 = 0x7265_6665_7265_6e63;

/// Draws produced by a sampler, before metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub samples: Vec<Vec<f64>>,
    /// Unnormalised importance log-weights (AIS only).
    pub log_weights: Option<Vec<f64>>,
    pub log_z: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub config_hash: String,
    pub samples: SampleSet,
    pub metrics: Vec<MetricRecord>,
    pub diagnostics: Value,
}

fn build_target(spec: &TargetSpec) -> CliResult<Arc<dyn Target>> {
    spec.build().map_err(|e| match e {
        slocal_core::Error::Io(m) => CliError::key("target", m),
        other => other.into(),
    })
}

/// Runs the configured sampler; returns draws and a diagnostics object.
pub fn sample(cfg: &ExperimentConfig) -> CliResult<(SampleSet, Value)> {
    let spec = cfg.target_spec()?;
    let schedule = cfg.schedule_spec()?;
    let target = build_target(&spec)?;
    match cfg.algo {
        Algo::Slips => {
            let sc = SlipsConfig {
                schedule,
                t0: cfg.t0,
                eta: cfg.eta,
                k: cfg.k,
                l: cfg.mcmc_steps,
                n_init: cfg.n_init,
                burn_frac: cfg.burn_frac,
                n_runs: cfg.runs,
                seed: cfg.seed,
                ..SlipsConfig::default()
            };
            let sigma = sc.sigma(target.as_ref())?;
            let out = run_batch(&sc, &target)?;
            let diag = json!({
                "sigma": sigma,
                "successful_runs": out.samples.len(),
                "batch": out.diagnostics,
            });
            Ok((
                SampleSet {
                    samples: out.samples,
                    log_weights: None,
                    log_z: None,
                },
                diag,
            ))
        }
        Algo::Ideal => {
            let mixture = match spec {
                TargetSpec::Gmm { d } => benchmark_gmm(d),
                TargetSpec::EightGaussians => eight_gaussians(),
                _ => return Err(CliError::key("algo", "ideal needs an analytic mixture target")),
            };
            let sigma = sigma_from_a0(mixture.a0.r, mixture.a0.tau)?;
            let ic = IdealConfig {
                spec: schedule,
                sigma,
                t0: cfg.t0,
                eta: cfg.eta,
                k: cfg.k,
                n_runs: cfg.runs,
                grid_mode: cfg.grid,
                seed: cfg.seed,
            };
            let samples = run_ideal(&mixture.mixture, &ic)?;
            Ok((
                SampleSet {
                    samples,
                    log_weights: None,
                    log_z: None,
                },
                json!({ "sigma": sigma, "grid": cfg.grid }),
            ))
        }
        Algo::Ais | Algo::Smc => {
            let path = AnnealPath::for_target(target.as_ref(), cfg.k);
            let ac = AnnealConfig {
                k: cfg.k,
                n_particles: cfg.runs,
                mcmc_steps: cfg.mcmc_steps,
                seed: cfg.seed,
                ..AnnealConfig::default()
            };
            let out = if cfg.algo == Algo::Ais {
                ais_run(target.as_ref(), path, &ac)?
            } else {
                smc_run(target.as_ref(), path, &ac)?
            };
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            let diag = json!({
                "rho0_var": path.rho0_var,
                "ess": out.ess,
                "resamples": out.resamples,
                "acceptance": out.acceptance,
                "warnings": out.warnings,
            });
            // stored weights are unnormalised so that log Z can be recovered
            let log_weights = (cfg.algo == Algo::Ais).then(|| {
                let n = out.log_weights.len() as f64;
                out.log_weights.iter().map(|w| w + out.log_z + n.ln()).collect()
            });
            Ok((
                SampleSet {
                    samples: out.samples,
                    log_weights,
                    log_z: Some(out.log_z),
                },
                diag,
            ))
        }
    }
}

fn unweighted(set: &SampleSet, seed: u64) -> Vec<Vec<f64>> {
    match &set.log_weights {
        None => set.samples.clone(),
        Some(lw) => {
            let u: f64 = rng::stream(seed, u64::MAX, Phase::Resample).random();
            systematic_resample(lw, u)
                .into_iter()
                .map(|i| set.samples[i].clone())
                .collect()
        }
    }
}

fn weighted_fraction<F: Fn(&[f64]) -> bool>(set: &SampleSet, f: F) -> f64 {
    match &set.log_weights {
        None => set.samples.iter().filter(|x| f(x)).count() as f64 / set.samples.len() as f64,
        Some(lw) => {
            let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = lw.iter().map(|w| (w - max).exp()).sum();
            set.samples
                .iter()
                .zip(lw)
                .filter(|(x, _)| f(x))
                .map(|(_, w)| (w - max).exp())
                .sum::<f64>()
                / total
        }
    }
}

/// Metric records for a sample set; a pure function of the configuration
/// and the draws.
pub fn compute_metrics(cfg: &ExperimentConfig, set: &SampleSet) -> CliResult<Vec<MetricRecord>> {
    if set.samples.is_empty() {
        return Err(CliError::Runtime("no samples to evaluate".into()));
    }
    let hash = cfg.hash();
    let spec = cfg.target_spec()?;
    let n = set.samples.len();
    let record = |metric: &str, value: f64| MetricRecord {
        metric: metric.to_string(),
        value,
        n,
        seed: cfg.seed,
        config_hash: hash.clone(),
    };
    let draws = unweighted(set, cfg.seed);
    let mut reference: Option<Vec<Vec<f64>>> = None;
    let mut out = Vec::new();
    for m in &cfg.metrics {
        if m.needs_reference() && reference.is_none() {
            let target = build_target(&spec)?;
            let seed = derive_key(&[cfg.seed, REFERENCE_TAG]);
            reference = Some(
                target
                    .sample_exact(cfg.reference_samples, seed)
                    .ok_or_else(|| CliError::key("metrics", format!("{m} needs exact samples of {}", cfg.target)))?,
            );
        }
        let value = match m {
            MetricKind::SlicedW2 => metrics::sliced_w2(&draws, reference.as_ref().unwrap(), cfg.projections, cfg.seed)?,
            MetricKind::SlicedKs => metrics::sliced_ks(&draws, reference.as_ref().unwrap(), cfg.projections, cfg.seed)?,
            MetricKind::EntropicW2 => {
                let ot = metrics::entropic_ot(&draws, reference.as_ref().unwrap(), cfg.eps)?;
                if !ot.converged {
                    eprintln!("warning: entropic OT stopped with marginal residual {:e}", ot.residual);
                }
                ot.distance()
            }
            MetricKind::ModeWeight => weighted_fraction(set, |x| x.iter().all(|&v| v < 0.0)),
            MetricKind::PredictiveLl => {
                let TargetSpec::LogReg { path } = &spec else {
                    return Err(CliError::key("metrics", "predictive-ll needs a logreg target"));
                };
                let data = load_dataset(Path::new(path)).map_err(|e| CliError::key("target", e))?;
                let (_, test) = data.split_train_test();
                metrics::predictive_ll(&draws, &test)?
            }
            MetricKind::ModeRatio => {
                let value = metrics::phi4_mode_ratio(&draws)?;
                if let TargetSpec::Phi4 { h } = spec {
                    for order in [0u8, 2] {
                        if let Ok(r) = metrics::phi4_laplace_ratio(h, order) {
                            out.push(record(&format!("laplace-ratio-{order}"), r));
                        }
                    }
                }
                value
            }
            MetricKind::LogZ => set
                .log_z
                .ok_or_else(|| CliError::key("metrics", "log-z needs an ais or smc run"))?,
        };
        out.push(record(m.name(), value));
    }
    Ok(out)
}

/// Writes `samples.csv`: comment lines with the config hash (and `log Z`
/// when known), then a header row and one row per draw.
pub fn write_samples(path: &Path, hash: &str, set: &SampleSet) -> CliResult<()> {
    let mut text = format!("# config_hash={hash}\n");
    if let Some(z) = set.log_z {
        text.push_str(&format!("# log_z={z}\n"));
    }
    let d = set.samples.first().map_or(0, |x| x.len());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
    if set.log_weights.is_some() {
        header.push("log_weight".into());
    }
    w.write_record(&header)?;
    for (i, x) in set.samples.iter().enumerate() {
        let mut row: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        if let Some(lw) = &set.log_weights {
            row.push(lw[i].to_string());
        }
        w.write_record(&row)?;
    }
    text.push_str(&String::from_utf8(w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))?).expect("csv is utf-8"));
    fs::write(path, text)?;
    Ok(())
}

/// Reads `samples.csv`; returns the embedded config hash and the draws.
pub fn read_samples(path: &Path) -> CliResult<(String, SampleSet)> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    let mut hash = None;
    let mut log_z = None;
    for line in text.lines().take_while(|l| l.starts_with('#')) {
        let body = line.trim_start_matches('#').trim();
        if let Some(h) = body.strip_prefix("config_hash=") {
            hash = Some(h.to_string());
        } else if let Some(z) = body.strip_prefix("log_z=") {
            log_z = Some(z.parse::<f64>().map_err(|e| CliError::Validation(format!("bad log_z line: {e}")))?);
        }
    }
    let hash = hash.ok_or_else(|| CliError::Validation(format!("{} has no config hash", path.display())))?;
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let weighted = r.headers()?.iter().next_back() == Some("log_weight");
    let mut samples = Vec::new();
    let mut weights = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let mut row = rec
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| CliError::Validation(format!("{} row {}: {e}", path.display(), i + 1)))?;
        if weighted {
            weights.push(row.pop().unwrap_or(f64::NAN));
        }
        samples.push(row);
    }
    Ok((
        hash,
        SampleSet {
            samples,
            log_weights: weighted.then_some(weights),
            log_z,
        },
    ))
}

fn plot_rows(cfg: &ExperimentConfig, dim: usize, records: &[MetricRecord], diag: &Value) -> Vec<(String, f64, f64)> {
    let mut rows = Vec::new();
    for r in records {
        rows.push((format!("{}:dimension", r.metric), dim as f64, r.value));
        rows.push((format!("{}:budget", r.metric), (cfg.k * cfg.mcmc_steps) as f64, r.value));
    }
    let batch = &diag["batch"];
    if let (Some(times), Some(acc), Some(steps)) = (
        batch["grid_times"].as_array(),
        batch["mean_acceptance"].as_array(),
        batch["mean_step_size"].as_array(),
    ) {
        for ((t, a), s) in times.iter().zip(acc).zip(steps) {
            if let (Some(t), Some(a), Some(s)) = (t.as_f64(), a.as_f64(), s.as_f64()) {
                rows.push(("acceptance".into(), t, a));
                rows.push(("step-size".into(), t, s));
            }
        }
    }
    rows
}

pub fn write_plotdata(path: &Path, rows: &[(String, f64, f64)]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["series", "x", "y"])?;
    for (s, x, y) in rows {
        w.write_record([s.clone(), x.to_string(), y.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn write_json(path: &Path, v: &impl serde::Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Runs the experiment and writes all artifacts under `dir`. An
/// `INCOMPLETE` marker is present until every file has been written and
/// keeps the error message on failure.
pub fn run_experiment(cfg: &ExperimentConfig, dir: &Path) -> CliResult<RunArtifacts> {
    cfg.validate()?;
    fs::create_dir_all(dir)?;
    let marker = dir.join(INCOMPLETE_FILE);
    fs::write(&marker, "running\n")?;
    let result = run_inner(cfg, dir);
    match &result {
        Ok(_) => fs::remove_file(&marker)?,
        Err(e) => fs::write(&marker, format!("{e}\n"))?,
    }
    result
}

fn run_inner(cfg: &ExperimentConfig, dir: &Path) -> CliResult<RunArtifacts> {
    let hash = cfg.hash();
    write_json(&dir.join(CONFIG_FILE), cfg)?;
    let (set, mut diag) = sample(cfg)?;
    write_samples(&dir.join(SAMPLES_FILE), &hash, &set)?;
    let records = compute_metrics(cfg, &set)?;
    write_json(&dir.join(METRICS_FILE), &records)?;
    diag["config_hash"] = json!(hash);
    diag["algo"] = json!(cfg.algo);
    write_json(&dir.join(DIAGNOSTICS_FILE), &diag)?;
    let dim = set.samples.first().map_or(0, |x| x.len());
    write_plotdata(&dir.join(PLOTDATA_FILE), &plot_rows(cfg, dim, &records, &diag))?;
    Ok(RunArtifacts {
        dir: dir.to_path_buf(),
        config_hash: hash,
        samples: set,
        metrics: records,
        diagnostics: diag,
    })
}

/// Recomputes metrics from a run directory's `config.json` and
/// `samples.csv`.
pub fn eval_dir(dir: &Path) -> CliResult<Vec<MetricRecord>> {
    let cfg_text = fs::read_to_string(dir.join(CONFIG_FILE))
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", dir.join(CONFIG_FILE).display())))?;
    let cfg: ExperimentConfig =
        serde_json::from_str(&cfg_text).map_err(|e| CliError::Validation(format!("{CONFIG_FILE}: {e}")))?;
    cfg.validate()?;
    let (hash, set) = read_samples(&dir.join(SAMPLES_FILE))?;
    if hash != cfg.hash() {
        return Err(CliError::Validation(format!(
            "{SAMPLES_FILE} was produced by config {hash}, not {}",
            cfg.hash()
        )));
    }
    compute_metrics(&cfg, &set)
}

//! Experiment configuration with layered sources:
//! flags > config file > preset > defaults.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use slocal_core::ideal::GridMode;
use slocal_core::schedule::ScheduleSpec;
use slocal_core::targets::TargetSpec;

use crate::error::{CliError, CliResult};
use crate::presets;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algo {
    Slips,
    Ideal,
    Ais,
    Smc,
}

impl FromStr for Algo {
    type Err = CliError;
    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "slips" => Ok(Algo::Slips),
            "ideal" => Ok(Algo::Ideal),
            "ais" => Ok(Algo::Ais),
            "smc" => Ok(Algo::Smc),
            _ => Err(CliError::key("algo", format!("unknown algorithm '{s}' (slips, ideal, ais, smc)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    SlicedW2,
    SlicedKs,
    EntropicW2,
    ModeWeight,
    PredictiveLl,
    ModeRatio,
    LogZ,
}

impl MetricKind {
    pub const ALL: [MetricKind; 7] = [
        MetricKind::SlicedW2,
        MetricKind::SlicedKs,
        MetricKind::EntropicW2,
        MetricKind::ModeWeight,
        MetricKind::PredictiveLl,
        MetricKind::ModeRatio,
        MetricKind::LogZ,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::SlicedW2 => "sliced-w2",
            MetricKind::SlicedKs => "sliced-ks",
            MetricKind::EntropicW2 => "entropic-w2",
            MetricKind::ModeWeight => "mode-weight",
            MetricKind::PredictiveLl => "predictive-ll",
            MetricKind::ModeRatio => "mode-ratio",
            MetricKind::LogZ => "log-z",
        }
    }

    pub fn needs_reference(self) -> bool {
        matches!(self, MetricKind::SlicedW2 | MetricKind::SlicedKs | MetricKind::EntropicW2)
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricKind {
    type Err = CliError;
    fn from_str(s: &str) -> CliResult<Self> {
        MetricKind::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| CliError::key("metrics", format!("unknown metric '{s}'")))
    }
}

/// Every setting optional; one layer of the configuration stack.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialConfig {
    pub preset: Option<String>,
    pub target: Option<String>,
    pub algo: Option<String>,
    pub schedule: Option<String>,
    pub t0: Option<f64>,
    pub eta: Option<f64>,
    pub k: Option<usize>,
    pub mcmc_steps: Option<usize>,
    pub n_init: Option<usize>,
    pub runs: Option<usize>,
    pub seed: Option<u64>,
    pub burn_frac: Option<f64>,
    pub grid: Option<String>,
    pub metrics: Option<Vec<String>>,
    pub reference_samples: Option<usize>,
    pub eps: Option<f64>,
    pub projections: Option<usize>,
    pub out: Option<PathBuf>,
}

impl PartialConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Validation(format!("config file: {}", e.message())))
    }

    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Fields set in `over` win.
    pub fn overlay(self, over: PartialConfig) -> PartialConfig {
        PartialConfig {
            preset: over.preset.or(self.preset),
            target: over.target.or(self.target),
            algo: over.algo.or(self.algo),
            schedule: over.schedule.or(self.schedule),
            t0: over.t0.or(self.t0),
            eta: over.eta.or(self.eta),
            k: over.k.or(self.k),
            mcmc_steps: over.mcmc_steps.or(self.mcmc_steps),
            n_init: over.n_init.or(self.n_init),
            runs: over.runs.or(self.runs),
            seed: over.seed.or(self.seed),
            burn_frac: over.burn_frac.or(self.burn_frac),
            grid: over.grid.or(self.grid),
            metrics: over.metrics.or(self.metrics),
            reference_samples: over.reference_samples.or(self.reference_samples),
            eps: over.eps.or(self.eps),
            projections: over.projections.or(self.projections),
            out: over.out.or(self.out),
        }
    }
}

/// Fully resolved experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub target: String,
    pub algo: Algo,
    pub schedule: String,
    pub t0: f64,
    pub eta: f64,
    pub k: usize,
    pub mcmc_steps: usize,
    pub n_init: usize,
    pub runs: usize,
    pub seed: u64,
    pub burn_frac: f64,
    pub grid: GridMode,
    pub metrics: Vec<MetricKind>,
    /// Exact draws for sample metrics; defaults to `runs`.
    pub reference_samples: usize,
    pub eps: f64,
    pub projections: usize,
}

fn default_metrics(target: &TargetSpec, algo: Algo) -> Vec<MetricKind> {
    let mut m = match target {
        TargetSpec::Gmm { .. } => vec![MetricKind::ModeWeight, MetricKind::SlicedW2],
        TargetSpec::EightGaussians | TargetSpec::Rings => vec![MetricKind::EntropicW2],
        TargetSpec::Funnel => vec![MetricKind::SlicedKs],
        TargetSpec::LogReg { .. } => vec![MetricKind::PredictiveLl],
        TargetSpec::Phi4 { .. } => vec![MetricKind::ModeRatio],
    };
    if matches!(algo, Algo::Ais | Algo::Smc) {
        m.push(MetricKind::LogZ);
    }
    m
}

fn parse_key<T: FromStr>(key: &str, value: &str) -> CliResult<T>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| CliError::key(key, e))
}

impl ExperimentConfig {
    /// Merges `flags` over `file` over the named preset over defaults, and
    /// validates the result.
    pub fn resolve(file: PartialConfig, flags: PartialConfig) -> CliResult<(Self, Option<PathBuf>)> {
        let merged = file.overlay(flags);
        let preset = match &merged.preset {
            Some(name) => Some(presets::table4(name)?),
            None => None,
        };
        let target_str = merged
            .target
            .clone()
            .or_else(|| preset.as_ref().and_then(|p| p.target.clone()))
            .ok_or_else(|| CliError::key("target", "no target given"))?;
        let target: TargetSpec = parse_key("target", &target_str)?;
        let algo = match &merged.algo {
            Some(a) => a.parse()?,
            None => Algo::Slips,
        };
        let schedule = match &merged.schedule {
            Some(s) => parse_key::<ScheduleSpec>("schedule", s)?,
            None => preset.as_ref().map(|p| p.schedule).unwrap_or(ScheduleSpec::STANDARD),
        };
        let runs = merged.runs.unwrap_or(1024);
        let metrics = match &merged.metrics {
            Some(list) => list.iter().map(|m| m.trim().parse()).collect::<CliResult<Vec<MetricKind>>>()?,
            None => default_metrics(&target, algo),
        };
        let cfg = ExperimentConfig {
            target: target.to_string(),
            algo,
            schedule: schedule.to_string(),
            t0: merged.t0.or(preset.as_ref().map(|p| p.t0)).unwrap_or(0.4),
            eta: merged.eta.or(preset.as_ref().map(|p| p.eta)).unwrap_or(5.0),
            k: merged.k.unwrap_or(128),
            mcmc_steps: merged.mcmc_steps.unwrap_or_else(|| presets::default_mcmc_steps(&target)),
            n_init: merged.n_init.unwrap_or(20),
            runs,
            seed: merged.seed.unwrap_or(0),
            burn_frac: merged.burn_frac.unwrap_or(0.5),
            grid: match &merged.grid {
                Some(g) => parse_key("grid", g)?,
                None => GridMode::Snr,
            },
            metrics,
            reference_samples: merged.reference_samples.unwrap_or(runs),
            eps: merged.eps.unwrap_or(0.05),
            projections: merged.projections.unwrap_or(slocal_core::metrics::DEFAULT_PROJECTIONS),
        };
        cfg.validate()?;
        Ok((cfg, merged.out))
    }

    pub fn target_spec(&self) -> CliResult<TargetSpec> {
        parse_key("target", &self.target)
    }

    pub fn schedule_spec(&self) -> CliResult<ScheduleSpec> {
        parse_key("schedule", &self.schedule)
    }

    pub fn validate(&self) -> CliResult<()> {
        let target = self.target_spec()?;
        let schedule = self.schedule_spec()?;
        schedule.validate().map_err(|e| CliError::key("schedule", e))?;
        if self.runs == 0 {
            return Err(CliError::key("runs", "must be at least 1"));
        }
        if self.k == 0 {
            return Err(CliError::key("k", "must be at least 1"));
        }
        if self.mcmc_steps == 0 {
            return Err(CliError::key("mcmc_steps", "must be at least 1"));
        }
        if !(self.t0 > 0.0 && self.t0 < schedule.t_gen()) {
            return Err(CliError::key("t0", format!("{} outside (0, {})", self.t0, schedule.t_gen())));
        }
        if !self.eta.is_finite() {
            return Err(CliError::key("eta", "must be finite"));
        }
        if matches!(self.algo, Algo::Slips | Algo::Ideal) {
            let t_end = schedule.t_of_log_snr(self.eta).map_err(|e| CliError::key("eta", e))?;
            if self.t0 >= t_end {
                return Err(CliError::key("t0", format!("{} must be below T_eta = {t_end}", self.t0)));
            }
        }
        if !(0.0..1.0).contains(&self.burn_frac) {
            return Err(CliError::key("burn_frac", "must lie in [0, 1)"));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(CliError::key("eps", "must be positive"));
        }
        if self.projections == 0 {
            return Err(CliError::key("projections", "must be at least 1"));
        }
        if self.algo == Algo::Ideal && !matches!(target, TargetSpec::Gmm { .. } | TargetSpec::EightGaussians) {
            return Err(CliError::key("algo", "ideal needs an analytic mixture target (gmm:<d> or 8gauss)"));
        }
        let has_exact = matches!(
            target,
            TargetSpec::Gmm { .. } | TargetSpec::EightGaussians | TargetSpec::Rings | TargetSpec::Funnel
        );
        for m in &self.metrics {
            let ok = match m {
                m if m.needs_reference() => has_exact,
                MetricKind::ModeWeight => matches!(target, TargetSpec::Gmm { .. }),
                MetricKind::PredictiveLl => matches!(target, TargetSpec::LogReg { .. }),
                MetricKind::ModeRatio => matches!(target, TargetSpec::Phi4 { .. }),
                MetricKind::LogZ => matches!(self.algo, Algo::Ais | Algo::Smc),
                _ => true,
            };
            if !ok {
                return Err(CliError::key("metrics", format!("{m} is not available for {} with {:?}", self.target, self.algo)));
            }
        }
        let cap = slocal_core::metrics::SINKHORN_SIZE_CAP;
        if self.metrics.contains(&MetricKind::EntropicW2) && (self.runs > cap || self.reference_samples > cap) {
            return Err(CliError::key("runs", format!("entropic-w2 supports at most {cap} samples per side")));
        }
        if self.metrics.iter().any(|m| m.needs_reference()) && self.reference_samples == 0 {
            return Err(CliError::key("reference_samples", "must be at least 1"));
        }
        if let TargetSpec::LogReg { path } = &target {
            if !Path::new(path).is_file() {
                return Err(CliError::key("target", format!("dataset file '{path}' not found")));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        format!("{:x}", Sha256::digest(json.as_bytes()))
    }
}

//! Benchmark targets.

mod dataset;
mod funnel;
mod logreg;
mod mixture;
mod phi4;
mod rings;

use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dataset::{load_dataset, parse_dataset, LabeledDataset};
pub use funnel::Funnel;
pub use logreg::{bernoulli_log_lik, BayesianLogReg};
pub use mixture::{benchmark_gmm, eight_gaussians, MixtureTarget};
pub use phi4::Phi4;
pub use rings::Rings;

/// Constants of the log-concavity-outside-a-compact assumption.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct A0 {
    pub r: f64,
    pub tau: f64,
}

/// Anything with a differentiable, possibly unnormalised, log-density.
pub trait LogDensity: Send + Sync {
    fn dim(&self) -> usize;

    /// Returns `log pi(x)` and writes `grad log pi(x)` into `grad`.
    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;

    fn log_density(&self, x: &[f64]) -> f64 {
        let mut g = vec![0.0; self.dim()];
        self.log_density_and_grad(x, &mut g)
    }

    fn grad_log_density(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        self.log_density_and_grad(x, &mut g);
        g
    }
}

pub trait Target: LogDensity {
    fn name(&self) -> String;

    fn a0(&self) -> A0;

    /// i.i.d. ground-truth samples when the target admits them.
    fn sample_exact(&self, _n: usize, _seed: u64) -> Option<Vec<Vec<f64>>> {
        None
    }

    /// Weight of the mode selected by [`crate::metrics::mode_weight`].
    fn known_mode_weight(&self) -> Option<f64> {
        None
    }

    fn mean(&self) -> Option<Vec<f64>> {
        None
    }
}

/// Parsed `target` selector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TargetSpec {
    Gmm { d: usize },
    EightGaussians,
    Rings,
    Funnel,
    LogReg { path: String },
    Phi4 { h: f64 },
}

impl FromStr for TargetSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = |why: &str| Error::InvalidConfig(format!("target '{s}': {why}"));
        match s {
            "8gauss" => return Ok(TargetSpec::EightGaussians),
            "rings" => return Ok(TargetSpec::Rings),
            "funnel" => return Ok(TargetSpec::Funnel),
            _ => {}
        }
        if let Some(d) = s.strip_prefix("gmm:") {
            let d: usize = d.parse().map_err(|_| bad("dimension must be an integer"))?;
            if d == 0 {
                return Err(bad("dimension must be at least 1"));
            }
            return Ok(TargetSpec::Gmm { d });
        }
        if let Some(p) = s.strip_prefix("logreg:") {
            if p.is_empty() {
                return Err(bad("missing dataset path"));
            }
            return Ok(TargetSpec::LogReg { path: p.to_string() });
        }
        if let Some(h) = s.strip_prefix("phi4:") {
            let h: f64 = h.parse().map_err(|_| bad("field h must be a number"))?;
            if !h.is_finite() {
                return Err(bad("field h must be finite"));
            }
            return Ok(TargetSpec::Phi4 { h });
        }
        Err(bad("unknown target"))
    }
}

impl std::fmt::Display for TargetSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TargetSpec::Gmm { d } => write!(f, "gmm:{d}"),
            TargetSpec::EightGaussians => write!(f, "8gauss"),
            TargetSpec::Rings => write!(f, "rings"),
            TargetSpec::Funnel => write!(f, "funnel"),
            TargetSpec::LogReg { path } => write!(f, "logreg:{path}"),
            TargetSpec::Phi4 { h } => write!(f, "phi4:{h}"),
        }
    }
}

impl TargetSpec {
    pub fn build(&self) -> Result<Arc<dyn Target>> {
        Ok(match self {
            TargetSpec::Gmm { d } => Arc::new(benchmark_gmm(*d)),
            TargetSpec::EightGaussians => Arc::new(eight_gaussians()),
            TargetSpec::Rings => Arc::new(Rings::new()),
            TargetSpec::Funnel => Arc::new(Funnel::new()),
            TargetSpec::LogReg { path } => {
                let (train, _) = load_dataset(std::path::Path::new(path))?.split_train_test();
                Arc::new(BayesianLogReg::new(train)?.with_label(self.to_string()))
            }
            TargetSpec::Phi4 { h } => Arc::new(Phi4::new(*h)),
        })
    }
}

/// Central-difference check used by the per-target tests.
#[cfg(test)]
pub(crate) fn max_grad_error<T: LogDensity + ?Sized>(t: &T, x: &[f64]) -> f64 {
    let g = t.grad_log_density(x);
    let mut worst: f64 = 0.0;
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let h = 1e-5 * x[i].abs().max(1.0);
        xp[i] = x[i] + h;
        let fp = t.log_density(&xp);
        xp[i] = x[i] - h;
        let fm = t.log_density(&xp);
        xp[i] = x[i];
        let fd = (fp - fm) / (2.0 * h);
        let scale = g.iter().map(|v| v.abs()).fold(1.0, f64::max);
        worst = worst.max((fd - g[i]).abs() / scale);
    }
    worst
}

//! The sampler: Langevin-within-Langevin initialisation at `t0`, then an
//! Euler-Maruyama pass over the SNR-adapted grid in which every step uses a
//! Monte Carlo estimate of the denoiser `E[X | Y_t]`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{denoiser_oracle, IsotropicMixture};
use crate::mcmc::{run_chain_with, ChainOptions, ChainState, Kernel, StepController};
use crate::rng::{self, fill_standard_normal, Phase};
use crate::schedule::{sigma_from_a0, snr_grid, ScheduleSpec, TimeGrid};
use crate::targets::{LogDensity, Target};

/// Fraction of aborted runs above which a batch fails.
pub const MAX_ABORT_FRAC: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlipsConfig {
    pub schedule: ScheduleSpec,
    pub t0: f64,
    pub eta: f64,
    /// Number of SDE steps.
    pub k: usize,
    /// MCMC steps per denoiser estimate.
    pub l: usize,
    /// Outer ULA steps of the initialisation.
    pub n_init: usize,
    pub burn_frac: f64,
    pub n_runs: usize,
    pub seed: u64,
    pub sigma_override: Option<f64>,
    pub controller: StepController,
    pub freeze_adaptation: bool,
}

impl Default for SlipsConfig {
    fn default() -> Self {
        SlipsConfig {
            schedule: ScheduleSpec::STANDARD,
            t0: 0.4,
            eta: 5.0,
            k: 128,
            l: 32,
            n_init: 20,
            burn_frac: 0.5,
            n_runs: 1024,
            seed: 0,
            sigma_override: None,
            controller: StepController::default(),
            freeze_adaptation: false,
        }
    }
}

impl SlipsConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.k == 0 || self.l == 0 {
            return Err(Error::InvalidConfig("K and L must be at least 1".into()));
        }
        if self.n_runs == 0 {
            return Err(Error::InvalidConfig("n_runs must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.burn_frac) {
            return Err(Error::InvalidConfig(format!("burn_frac must lie in [0, 1), got {}", self.burn_frac)));
        }
        if let Some(s) = self.sigma_override {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidConfig(format!("sigma override must be positive, got {s}")));
            }
        }
        let c = &self.controller;
        if !(c.target_rate > 0.0 && c.target_rate < 1.0) || !(c.adjust_factor > 1.0) {
            return Err(Error::InvalidConfig("step controller needs 0 < rate < 1 and factor > 1".into()));
        }
        let t_end = self.schedule.t_of_log_snr(self.eta)?;
        if !(self.t0 > 0.0 && self.t0 < t_end) {
            return Err(Error::InvalidConfig(format!(
                "t0={} must lie in (0, T_eta={t_end})",
                self.t0
            )));
        }
        Ok(())
    }

    pub fn sigma<T: Target + ?Sized>(&self, target: &T) -> Result<f64> {
        match self.sigma_override {
            Some(s) => Ok(s),
            None => {
                let a0 = target.a0();
                sigma_from_a0(a0.r, a0.tau)
            }
        }
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        snr_grid(&self.schedule, self.t0, self.eta, self.k)
    }

    fn chain_options(&self) -> ChainOptions {
        ChainOptions {
            kernel: Kernel::Mala,
            burn_frac: self.burn_frac,
            controller: Some(self.controller),
            freeze_after_burn: self.freeze_adaptation,
        }
    }
}

/// `pi(x) N(x; center, precision^{-1} I)` up to a constant.
pub struct Posterior<'a, T: LogDensity + ?Sized> {
    pub target: &'a T,
    pub center: &'a [f64],
    pub precision: f64,
}

impl<T: LogDensity + ?Sized> LogDensity for Posterior<'_, T> {
    fn dim(&self) -> usize {
        self.target.dim()
    }

    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let lp = self.target.log_density_and_grad(x, grad);
        let mut quad = 0.0;
        for ((g, xi), ci) in grad.iter_mut().zip(x).zip(self.center) {
            let r = xi - ci;
            quad += r * r;
            *g -= self.precision * r;
        }
        lp - 0.5 * self.precision * quad
    }
}

/// Result of one denoiser estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub value: Vec<f64>,
    pub acceptance: f64,
    pub step_size: f64,
    pub all_rejected: bool,
}

/// Source of denoiser estimates along a run.
pub trait DenoiserEstimator: Sync {
    type State: Send;

    /// Fresh per-run state; `x0` is the initial posterior guess `Y / alpha(t0)`.
    fn start(&self, x0: &[f64], seed: u64, run: u64) -> Self::State;

    /// Estimate `E[X | Y_t = y]`.
    fn estimate(&self, state: &mut Self::State, t: f64, y: &[f64]) -> Result<Estimate>;
}

/// Persistent-chain MALA estimator.
pub struct McmcDenoiser<'a, T: Target + ?Sized> {
    pub target: &'a T,
    pub schedule: ScheduleSpec,
    pub sigma: f64,
    pub l: usize,
    pub options: ChainOptions,
    pub initial_step: f64,
}

impl<'a, T: Target + ?Sized> McmcDenoiser<'a, T> {
    pub fn new(target: &'a T, cfg: &SlipsConfig, sigma: f64) -> Result<Self> {
        let g0 = cfg.schedule.g(cfg.t0)?;
        Ok(McmcDenoiser {
            target,
            schedule: cfg.schedule,
            sigma,
            l: cfg.l,
            options: cfg.chain_options(),
            initial_step: sigma * sigma / (g0 * g0),
        })
    }
}

impl<T: Target + ?Sized> DenoiserEstimator for McmcDenoiser<'_, T> {
    type State = ChainState;

    fn start(&self, x0: &[f64], seed: u64, run: u64) -> ChainState {
        ChainState::new(x0.to_vec(), self.initial_step, rng::stream(seed, run, Phase::Posterior))
    }

    fn estimate(&self, chain: &mut ChainState, t: f64, y: &[f64]) -> Result<Estimate> {
        let g = self.schedule.g(t)?;
        let alpha = self.schedule.alpha(t)?;
        let center: Vec<f64> = y.iter().map(|v| v / alpha).collect();
        let post = Posterior {
            target: self.target,
            center: &center,
            precision: g * g / (self.sigma * self.sigma),
        };
        chain.invalidate();
        chain.reset_counters();
        let d = y.len();
        let mut sum = vec![0.0; d];
        let mut kept = 0usize;
        run_chain_with(&post, chain, self.l, &self.options, |_, x| {
            for (s, v) in sum.iter_mut().zip(x) {
                *s += v;
            }
            kept += 1;
        });
        let value = sum.into_iter().map(|s| s / kept as f64).collect();
        Ok(Estimate {
            value,
            acceptance: chain.acceptance_rate(),
            step_size: chain.step_size,
            all_rejected: chain.accepts == 0,
        })
    }
}

/// Exact denoiser of an isotropic mixture, for oracle runs.
pub struct OracleDenoiser {
    pub mixture: IsotropicMixture,
    pub schedule: ScheduleSpec,
    pub sigma: f64,
}

impl DenoiserEstimator for OracleDenoiser {
    type State = ();

    fn start(&self, _x0: &[f64], _seed: u64, _run: u64) {}

    fn estimate(&self, _state: &mut (), t: f64, y: &[f64]) -> Result<Estimate> {
        Ok(Estimate {
            value: denoiser_oracle(&self.mixture, &self.schedule, self.sigma, t, y)?,
            acceptance: 1.0,
            step_size: 0.0,
            all_rejected: false,
        })
    }
}

/// Per-run trace.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunDiagnostics {
    /// Time of every denoiser estimate after initialisation, in order.
    pub estimation_times: Vec<f64>,
    pub acceptance: Vec<f64>,
    pub step_sizes: Vec<f64>,
    pub init_acceptance: Vec<f64>,
    /// Estimates whose chain rejected every proposal.
    pub all_rejected: usize,
}

/// Per-run state of the sampler.
pub struct SlipsRunState<S> {
    pub y: Vec<f64>,
    pub estimator_state: S,
    pub k: usize,
    pub diagnostics: RunDiagnostics,
}

fn check_finite(v: &[f64], what: &str, run: u64) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("run {run}: non-finite {what}")))
    }
}

/// Algorithm-2 style initialisation: ULA on `p_{t0}` driven by score
/// estimates `(alpha(t0) U - Y) / (sigma^2 t0)`.
pub fn init_observation<E: DenoiserEstimator>(
    cfg: &SlipsConfig,
    estimator: &E,
    sigma: f64,
    d: usize,
    run: u64,
) -> Result<SlipsRunState<E::State>> {
    let t0 = cfg.t0;
    let alpha0 = cfg.schedule.alpha(t0)?;
    let mut r = rng::stream(cfg.seed, run, Phase::Init);
    let var0 = sigma * sigma * t0;
    let mut y = vec![0.0; d];
    fill_standard_normal(&mut r, &mut y);
    y.iter_mut().for_each(|v| *v *= var0.sqrt());
    let x0: Vec<f64> = y.iter().map(|v| v / alpha0).collect();
    let mut state = estimator.start(&x0, cfg.seed, run);
    let mut diagnostics = RunDiagnostics::default();
    let lambda = 0.5 * var0;
    let noise = (2.0 * lambda).sqrt();
    let mut z = vec![0.0; d];
    for _ in 0..cfg.n_init {
        let est = estimator.estimate(&mut state, t0, &y)?;
        diagnostics.init_acceptance.push(est.acceptance);
        diagnostics.all_rejected += est.all_rejected as usize;
        let score: Vec<f64> = est
            .value
            .iter()
            .zip(&y)
            .map(|(u, yi)| (alpha0 * u - yi) / var0)
            .collect();
        check_finite(&score, "initialisation score", run)?;
        fill_standard_normal(&mut r, &mut z);
        for ((yi, si), zi) in y.iter_mut().zip(&score).zip(&z) {
            *yi += lambda * si + noise * zi;
        }
    }
    Ok(SlipsRunState {
        y,
        estimator_state: state,
        k: 0,
        diagnostics,
    })
}

/// `Y <- Y + w_k U + sigma sqrt(delta_k) z`, in place.
pub fn sde_step(y: &mut [f64], grid: &TimeGrid, k: usize, u: &[f64], sigma: f64, z: &[f64]) {
    let w = grid.weights[k];
    let s = sigma * grid.deltas[k].sqrt();
    for ((yi, ui), zi) in y.iter_mut().zip(u).zip(z) {
        *yi += w * ui + s * zi;
    }
}

/// One full run; returns the final denoiser estimate.
pub fn run_one<E: DenoiserEstimator>(
    cfg: &SlipsConfig,
    estimator: &E,
    sigma: f64,
    grid: &TimeGrid,
    d: usize,
    run: u64,
) -> Result<(Vec<f64>, RunDiagnostics)> {
    let mut st = init_observation(cfg, estimator, sigma, d, run)?;
    let mut r = rng::stream(cfg.seed, run, Phase::Sde);
    let mut z = vec![0.0; d];
    for k in 0..grid.steps() {
        let t = grid.times[k];
        let est = estimator.estimate(&mut st.estimator_state, t, &st.y)?;
        check_finite(&est.value, "denoiser estimate", run)?;
        record(&mut st.diagnostics, t, &est);
        fill_standard_normal(&mut r, &mut z);
        sde_step(&mut st.y, grid, k, &est.value, sigma, &z);
        check_finite(&st.y, "observation", run)?;
        st.k = k + 1;
    }
    let t_end = grid.end();
    let est = estimator.estimate(&mut st.estimator_state, t_end, &st.y)?;
    check_finite(&est.value, "final denoiser estimate", run)?;
    record(&mut st.diagnostics, t_end, &est);
    Ok((est.value, st.diagnostics))
}

fn record(diag: &mut RunDiagnostics, t: f64, est: &Estimate) {
    diag.estimation_times.push(t);
    diag.acceptance.push(est.acceptance);
    diag.step_sizes.push(est.step_size);
    diag.all_rejected += est.all_rejected as usize;
}

/// Aggregated batch diagnostics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchDiagnostics {
    pub grid_times: Vec<f64>,
    /// Mean acceptance per estimation over successful runs.
    pub mean_acceptance: Vec<f64>,
    pub mean_step_size: Vec<f64>,
    pub mean_init_acceptance: f64,
    pub all_rejected_estimates: usize,
    pub aborted_runs: Vec<u64>,
    pub abort_messages: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct BatchOutput {
    /// Samples of successful runs, in run order.
    pub samples: Vec<Vec<f64>>,
    pub run_ids: Vec<u64>,
    pub diagnostics: BatchDiagnostics,
    pub per_run: Vec<RunDiagnostics>,
}

/// Worker count from `SLOCAL_THREADS`, if set.
pub fn thread_limit() -> Option<usize> {
    std::env::var("SLOCAL_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Runs `f` in a pool capped by `SLOCAL_THREADS` (or the global pool).
pub fn with_pool<R: Send, F: FnOnce() -> R + Send>(f: F) -> R {
    match thread_limit() {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
        None => f(),
    }
}

/// `n_runs` independent runs with a caller-supplied estimator.
pub fn run_batch_with<E: DenoiserEstimator>(cfg: &SlipsConfig, estimator: &E, sigma: f64, d: usize) -> Result<BatchOutput> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let results: Vec<Result<(Vec<f64>, RunDiagnostics)>> = with_pool(|| {
        (0..cfg.n_runs as u64)
            .into_par_iter()
            .map(|run| run_one(cfg, estimator, sigma, &grid, d, run))
            .collect()
    });
    let mut samples = Vec::with_capacity(cfg.n_runs);
    let mut run_ids = Vec::with_capacity(cfg.n_runs);
    let mut per_run = Vec::with_capacity(cfg.n_runs);
    let mut diagnostics = BatchDiagnostics {
        grid_times: grid.times.clone(),
        ..Default::default()
    };
    for (run, res) in results.into_iter().enumerate() {
        match res {
            Ok((x, diag)) => {
                samples.push(x);
                run_ids.push(run as u64);
                per_run.push(diag);
            }
            Err(e) => {
                diagnostics.aborted_runs.push(run as u64);
                diagnostics.abort_messages.push(e.to_string());
            }
        }
    }
    let aborted = diagnostics.aborted_runs.len();
    if aborted as f64 > MAX_ABORT_FRAC * cfg.n_runs as f64 {
        return Err(Error::Numeric(format!(
            "{aborted} of {} runs aborted (first: {})",
            cfg.n_runs,
            diagnostics.abort_messages.first().map(String::as_str).unwrap_or("")
        )));
    }
    let n_est = grid.times.len();
    let ok = per_run.len().max(1) as f64;
    diagnostics.mean_acceptance = (0..n_est)
        .map(|i| per_run.iter().map(|p| p.acceptance[i]).sum::<f64>() / ok)
        .collect();
    diagnostics.mean_step_size = (0..n_est)
        .map(|i| per_run.iter().map(|p| p.step_sizes[i]).sum::<f64>() / ok)
        .collect();
    let init_count: usize = per_run.iter().map(|p| p.init_acceptance.len()).sum();
    diagnostics.mean_init_acceptance = if init_count == 0 {
        0.0
    } else {
        per_run.iter().flat_map(|p| p.init_acceptance.iter()).sum::<f64>() / init_count as f64
    };
    diagnostics.all_rejected_estimates = per_run.iter().map(|p| p.all_rejected).sum();
    Ok(BatchOutput {
        samples,
        run_ids,
        diagnostics,
        per_run,
    })
}

/// `n_runs` independent runs with MCMC denoiser estimates.
pub fn run_batch(cfg: &SlipsConfig, target: &Arc<dyn Target>) -> Result<BatchOutput> {
    let sigma = cfg.sigma(target.as_ref())?;
    let est = McmcDenoiser::new(target.as_ref(), cfg, sigma)?;
    run_batch_with(cfg, &est, sigma, target.dim())
}

/// Single run with MCMC denoiser estimates.
pub fn run(cfg: &SlipsConfig, target: &dyn Target, run_id: u64) -> Result<(Vec<f64>, RunDiagnostics)> {
    cfg.validate()?;
    let sigma = cfg.sigma(target)?;
    let est = McmcDenoiser::new(target, cfg, sigma)?;
    run_one(cfg, &est, sigma, &cfg.grid()?, target.dim(), run_id)
}

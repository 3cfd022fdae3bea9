//! Annealed importance sampling and sequential Monte Carlo with MALA moves
//! along the linear geometric path from a wide Gaussian to the target.

use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::log_sum_exp;
use crate::mcmc::{mala_step, ChainState, StepController};
use crate::rng::{self, fill_standard_normal, Phase};
use crate::slips::with_pool;
use crate::targets::{LogDensity, Target};

/// `rho_k ∝ rho_0^(1 - beta_k) pi^(beta_k)` with `beta_k = k / K` and
/// `rho_0 = N(0, rho0_var I)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnealPath {
    pub rho0_var: f64,
    pub k: usize,
}

impl AnnealPath {
    /// Starting variance `R^2 d`.
    pub fn for_target(target: &dyn Target, k: usize) -> Self {
        AnnealPath {
            rho0_var: target.a0().r.powi(2) * target.dim() as f64,
            k,
        }
    }

    pub fn betas(&self) -> Vec<f64> {
        (0..=self.k).map(|i| i as f64 / self.k as f64).collect()
    }

    /// Normalised `log rho_0(x)`.
    pub fn log_rho0(&self, x: &[f64]) -> f64 {
        let ss: f64 = x.iter().map(|v| v * v).sum();
        -0.5 * ss / self.rho0_var - 0.5 * x.len() as f64 * (2.0 * PI * self.rho0_var).ln()
    }
}

/// One intermediate density of the path.
pub struct Annealed<'a, T: LogDensity + ?Sized> {
    pub target: &'a T,
    pub path: AnnealPath,
    pub beta: f64,
}

impl<T: LogDensity + ?Sized> LogDensity for Annealed<'_, T> {
    fn dim(&self) -> usize {
        self.target.dim()
    }

    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let lp = self.target.log_density_and_grad(x, grad);
        let v = self.path.rho0_var;
        for (g, xi) in grad.iter_mut().zip(x) {
            *g = self.beta * *g - (1.0 - self.beta) * xi / v;
        }
        self.beta * lp + (1.0 - self.beta) * self.path.log_rho0(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnealConfig {
    pub k: usize,
    pub n_particles: usize,
    pub mcmc_steps: usize,
    pub seed: u64,
    /// Starting MALA step; defaults to `R^2` of the target.
    pub initial_step: Option<f64>,
    pub controller: Option<StepController>,
    pub ess_threshold: f64,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        AnnealConfig {
            k: 128,
            n_particles: 4096,
            mcmc_steps: 32,
            seed: 0,
            initial_step: None,
            controller: Some(StepController::default()),
            ess_threshold: 0.5,
        }
    }
}

impl AnnealConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if self.n_particles < 1 {
            return Err(Error::InvalidConfig("n_particles must be at least 1".into()));
        }
        if let Some(s) = self.initial_step {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidConfig(format!("initial_step must be positive, got {s}")));
            }
        }
        if !(0.0..=1.0).contains(&self.ess_threshold) {
            return Err(Error::InvalidConfig("ess_threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnealOutput {
    pub samples: Vec<Vec<f64>>,
    /// Self-normalised log-weights (log-sum-exp 0). Uniform for SMC.
    pub log_weights: Vec<f64>,
    /// Estimate of `log Z` for the target relative to the normalised `rho_0`.
    pub log_z: f64,
    /// ESS of the final weights before any final resampling.
    pub ess: f64,
    pub resamples: usize,
    pub acceptance: f64,
    pub warnings: Vec<String>,
}

/// Kish effective sample size of unnormalised log-weights.
pub fn ess(log_w: &[f64]) -> f64 {
    let lse = log_sum_exp(log_w);
    let lse2 = log_sum_exp(&log_w.iter().map(|w| 2.0 * w).collect::<Vec<_>>());
    (2.0 * lse - lse2).exp()
}

/// Systematic resampling with a single uniform offset `u` in `[0, 1)`.
pub fn systematic_resample(log_w: &[f64], u: f64) -> Vec<usize> {
    let n = log_w.len();
    let lse = log_sum_exp(log_w);
    let mut out = Vec::with_capacity(n);
    let mut cum = 0.0;
    let mut i = 0;
    for k in 0..n {
        let point = (k as f64 + u) / n as f64;
        while i < n - 1 && cum + (log_w[i] - lse).exp() <= point {
            cum += (log_w[i] - lse).exp();
            i += 1;
        }
        out.push(i);
    }
    out
}

struct Particle {
    position: Vec<f64>,
    accepts: u64,
    proposals: u64,
}

fn init_particles(path: &AnnealPath, d: usize, cfg: &AnnealConfig) -> Vec<Particle> {
    let sd = path.rho0_var.sqrt();
    (0..cfg.n_particles as u64)
        .map(|i| {
            let mut r = rng::stream(cfg.seed, i, Phase::Init);
            let mut x = vec![0.0; d];
            fill_standard_normal(&mut r, &mut x);
            x.iter_mut().for_each(|v| *v *= sd);
            Particle {
                position: x,
                accepts: 0,
                proposals: 0,
            }
        })
        .collect()
}

/// Weight increments for moving from `beta_prev` to `beta`, then MALA moves
/// targeting the new level with the shared `step`. Returns the mean MH
/// acceptance probability of the moves.
#[allow(clippy::too_many_arguments)]
fn advance<T: LogDensity + ?Sized>(
    target: &T,
    path: &AnnealPath,
    particles: &mut [Particle],
    log_w: &mut [f64],
    level: usize,
    betas: &[f64],
    step: f64,
    cfg: &AnnealConfig,
) -> f64 {
    let (beta_prev, beta) = (betas[level - 1], betas[level]);
    let level_density = Annealed { target, path: *path, beta };
    let prob_sum: f64 = particles
        .par_iter_mut()
        .zip(log_w.par_iter_mut())
        .enumerate()
        .map(|(i, (p, w))| {
            let increment = (beta - beta_prev) * (target.log_density(&p.position) - path.log_rho0(&p.position));
            *w += if increment.is_nan() { f64::NEG_INFINITY } else { increment };
            let stream = rng::substream(cfg.seed, i as u64, Phase::Anneal, level as u64);
            let mut state = ChainState::new(std::mem::take(&mut p.position), step, stream);
            for _ in 0..cfg.mcmc_steps {
                mala_step(&level_density, &mut state);
            }
            p.accepts += state.accepts;
            p.proposals += state.proposals;
            p.position = state.position;
            state.accept_prob_sum
        })
        .sum();
    let moves = (particles.len() * cfg.mcmc_steps).max(1);
    prob_sum / moves as f64
}

/// Population-level step update between levels: the per-move geometric rule
/// of the controller applied `mcmc_steps` times at the mean acceptance
/// probability. Keeping one step per level for all particles leaves every
/// kernel invariant for its level, so the weights stay exact.
fn next_step(step: f64, mean_accept: f64, cfg: &AnnealConfig) -> f64 {
    match &cfg.controller {
        Some(c) if cfg.mcmc_steps > 0 => {
            let r = c.target_rate;
            let a = if mean_accept.is_finite() { mean_accept.clamp(0.0, 1.0) } else { 0.0 };
            step * c.adjust_factor.powf(cfg.mcmc_steps as f64 * (a - r) / (1.0 - r))
        }
        _ => step,
    }
}

fn log_mean_exp(log_w: &[f64]) -> f64 {
    log_sum_exp(log_w) - (log_w.len() as f64).ln()
}

fn normalise(log_w: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(log_w);
    log_w.iter().map(|w| w - lse).collect()
}

fn acceptance(particles: &[Particle]) -> f64 {
    let (a, p) = particles
        .iter()
        .fold((0u64, 0u64), |(a, p), q| (a + q.accepts, p + q.proposals));
    if p == 0 {
        0.0
    } else {
        a as f64 / p as f64
    }
}

fn degenerate_warning(ess: f64, warnings: &mut Vec<String>) {
    if ess < 2.0 {
        warnings.push(format!("degenerate importance weights (ESS = {ess:.3})"));
    }
}

fn default_step(path: &AnnealPath, d: usize) -> f64 {
    path.rho0_var / d as f64
}

/// Annealed importance sampling.
pub fn ais_run<T: LogDensity + ?Sized>(target: &T, path: AnnealPath, cfg: &AnnealConfig) -> Result<AnnealOutput> {
    cfg.validate()?;
    let d = target.dim();
    let betas = AnnealPath { k: cfg.k, ..path }.betas();
    let path = AnnealPath { k: cfg.k, ..path };
    let mut particles = init_particles(&path, d, cfg);
    let mut step = cfg.initial_step.unwrap_or_else(|| default_step(&path, d));
    let mut log_w = vec![0.0; cfg.n_particles];
    with_pool(|| {
        for level in 1..=cfg.k {
            let accept = advance(target, &path, &mut particles, &mut log_w, level, &betas, step, cfg);
            step = next_step(step, accept, cfg);
        }
    });
    let log_z = log_mean_exp(&log_w);
    if !log_z.is_finite() {
        return Err(Error::Numeric("all importance weights vanished".into()));
    }
    let e = ess(&log_w);
    let mut warnings = Vec::new();
    degenerate_warning(e, &mut warnings);
    Ok(AnnealOutput {
        acceptance: acceptance(&particles),
        samples: particles.into_iter().map(|p| p.position).collect(),
        log_weights: normalise(&log_w),
        log_z,
        ess: e,
        resamples: 0,
        warnings,
    })
}

fn resample_particles(particles: &mut Vec<Particle>, log_w: &[f64], u: f64) {
    let idx = systematic_resample(log_w, u);
    let next: Vec<Particle> = idx
        .iter()
        .map(|&i| Particle {
            position: particles[i].position.clone(),
            accepts: 0,
            proposals: 0,
        })
        .collect();
    let (a, p) = particles
        .iter()
        .fold((0u64, 0u64), |(a, p), q| (a + q.accepts, p + q.proposals));
    *particles = next;
    // keep the running acceptance totals on the first slot
    particles[0].accepts = a;
    particles[0].proposals = p;
}

/// Sequential Monte Carlo: the AIS recursion with systematic resampling
/// whenever the ESS falls below `ess_threshold * N`, and a final resampling
/// so that the returned particles are unweighted.
pub fn smc_run<T: LogDensity + ?Sized>(target: &T, path: AnnealPath, cfg: &AnnealConfig) -> Result<AnnealOutput> {
    cfg.validate()?;
    let d = target.dim();
    let path = AnnealPath { k: cfg.k, ..path };
    let betas = path.betas();
    let n = cfg.n_particles;
    let mut particles = init_particles(&path, d, cfg);
    let mut step = cfg.initial_step.unwrap_or_else(|| default_step(&path, d));
    let mut log_w = vec![0.0; n];
    let mut log_z = 0.0;
    let mut resamples = 0;
    let mut warnings = Vec::new();
    let resample_draw = |level: usize| -> f64 { rng::stream(cfg.seed, level as u64, Phase::Resample).random::<f64>() };
    with_pool(|| -> Result<()> {
        for level in 1..=cfg.k {
            let accept = advance(target, &path, &mut particles, &mut log_w, level, &betas, step, cfg);
            step = next_step(step, accept, cfg);
            // resample after the move so the next increment starts from
            // equally weighted particles
            let e = ess(&log_w);
            if !e.is_finite() {
                return Err(Error::Numeric(format!("all importance weights vanished at level {level}")));
            }
            if level < cfg.k && e < cfg.ess_threshold * n as f64 {
                degenerate_warning(e, &mut warnings);
                log_z += log_mean_exp(&log_w);
                resample_particles(&mut particles, &log_w, resample_draw(level));
                log_w.iter_mut().for_each(|w| *w = 0.0);
                resamples += 1;
            }
        }
        Ok(())
    })?;
    log_z += log_mean_exp(&log_w);
    let e = ess(&log_w);
    degenerate_warning(e, &mut warnings);
    let spread = log_w.iter().fold(0.0f64, |m, w| m.max((w - log_w[0]).abs()));
    if spread > 1e-12 {
        resample_particles(&mut particles, &log_w, resample_draw(cfg.k));
        resamples += 1;
    }
    Ok(AnnealOutput {
        acceptance: acceptance(&particles),
        samples: particles.into_iter().map(|p| p.position).collect(),
        log_weights: vec![-(n as f64).ln(); n],
        log_z,
        ess: e,
        resamples,
        warnings,
    })
}

/// Self-normalised weighted mean of `f` over the particles.
pub fn weighted_mean<F: Fn(&[f64]) -> f64>(out: &AnnealOutput, f: F) -> f64 {
    out.samples
        .iter()
        .zip(&out.log_weights)
        .map(|(x, w)| w.exp() * f(x))
        .sum()
}

/// Unweighted draws from AIS output by systematic resampling.
pub fn resample_output(out: &AnnealOutput, seed: u64) -> Vec<Vec<f64>> {
    let u: f64 = rng::stream(seed, u64::MAX, Phase::Resample).random();
    systematic_resample(&out.log_weights, u)
        .into_iter()
        .map(|i| out.samples[i].clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::{benchmark_gmm, MixtureTarget};

    /// Unnormalised `c * N(mu, s^2)` in one dimension.
    struct ScaledGaussian {
        mu: f64,
        s: f64,
        log_c: f64,
    }

    impl LogDensity for ScaledGaussian {
        fn dim(&self) -> usize {
            1
        }

        fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
            let z = (x[0] - self.mu) / self.s;
            grad[0] = -z / self.s;
            self.log_c - 0.5 * z * z - (self.s * (2.0 * PI).sqrt()).ln()
        }
    }

    fn cfg(k: usize, n: usize, steps: usize, seed: u64) -> AnnealConfig {
        AnnealConfig {
            k,
            n_particles: n,
            mcmc_steps: steps,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn identical_endpoints_give_zero_increments() {
        let path = AnnealPath { rho0_var: 2.0, k: 8 };
        let rho0 = ScaledGaussian {
            mu: 0.0,
            s: 2f64.sqrt(),
            log_c: 0.0,
        };
        let out = ais_run(&rho0, path, &cfg(8, 64, 2, 1)).unwrap();
        assert!(out.log_z.abs() < 1e-12);
        assert!((out.ess - 64.0).abs() < 1e-9);
        let smc = smc_run(&rho0, path, &cfg(8, 64, 2, 1)).unwrap();
        assert_eq!(smc.resamples, 0);
    }

    #[test]
    fn path_endpoints() {
        let path = AnnealPath { rho0_var: 1.0, k: 4 };
        let b = path.betas();
        assert_eq!(b.first(), Some(&0.0));
        assert_eq!(b.last(), Some(&1.0));
        assert!(b.windows(2).all(|w| w[1] > w[0]));
        let t = ScaledGaussian {
            mu: 1.0,
            s: 0.5,
            log_c: 0.3,
        };
        let at_end = Annealed {
            target: &t,
            path,
            beta: 1.0,
        };
        assert_eq!(at_end.log_density(&[0.2]), t.log_density(&[0.2]));
    }

    #[test]
    fn single_level_is_importance_sampling() {
        let t = ScaledGaussian {
            mu: 0.5,
            s: 0.8,
            log_c: 1.0,
        };
        let path = AnnealPath { rho0_var: 4.0, k: 1 };
        let out = ais_run(&t, path, &cfg(1, 16, 3, 5)).unwrap();
        let draws = init_particles(&path, 1, &cfg(1, 16, 3, 5));
        let lw: Vec<f64> = draws
            .iter()
            .map(|p| t.log_density(&p.position) - path.log_rho0(&p.position))
            .collect();
        assert!((out.log_z - log_mean_exp(&lw)).abs() < 1e-12);
    }

    #[test]
    fn ess_and_resampling() {
        assert!((ess(&[0.3; 10]) - 10.0).abs() < 1e-12);
        assert!((ess(&[0.0, f64::NEG_INFINITY, f64::NEG_INFINITY]) - 1.0).abs() < 1e-12);
        assert_eq!(systematic_resample(&[0.0; 4], 0.5), vec![0, 1, 2, 3]);
        let lw = [0.0, f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY];
        assert_eq!(systematic_resample(&lw, 0.1), vec![0, 0, 2, 2]);
    }

    #[test]
    fn smc_returns_uniform_weights() {
        let t = ScaledGaussian {
            mu: 2.0,
            s: 0.3,
            log_c: 0.0,
        };
        let out = smc_run(&t, AnnealPath { rho0_var: 9.0, k: 16 }, &cfg(16, 256, 4, 2)).unwrap();
        assert!(out.resamples > 0);
        assert!(out.log_weights.iter().all(|&w| w == out.log_weights[0]));
        let m = out.samples.iter().map(|x| x[0]).sum::<f64>() / 256.0;
        assert!((m - 2.0).abs() < 0.1);
    }

    #[test]
    fn ais_normalising_constant_is_unbiased() {
        let t = ScaledGaussian {
            mu: 1.5,
            s: 0.5,
            log_c: 2f64.ln(),
        };
        let path = AnnealPath { rho0_var: 4.0, k: 16 };
        let out = ais_run(&t, path, &cfg(16, 4096, 3, 7)).unwrap();
        // weights are self-normalised; recover exp(log w) from log_z
        let w: Vec<f64> = out.log_weights.iter().map(|lw| (lw + out.log_z).exp() * 4096.0).collect();
        let mean = w.iter().sum::<f64>() / 4096.0;
        let sd = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4095.0).sqrt();
        assert!((mean - 2.0).abs() < 3.0 * sd / 4096f64.sqrt() + 1e-12, "{mean} ± {sd}");
    }

    #[test]
    fn ais_mode_weight_on_two_mode_mixture() {
        let target: MixtureTarget = benchmark_gmm(1);
        let path = AnnealPath::for_target(&target, 64);
        let out = ais_run(&target, path, &cfg(64, 4096, 4, 3)).unwrap();
        let w = weighted_mean(&out, |x| if x[0] < 0.0 { 1.0 } else { 0.0 });
        let se = (0.5f64 / out.ess).sqrt();
        assert!((w - 2.0 / 3.0).abs() < 4.0 * se, "w = {w}, ess = {}", out.ess);
    }

    #[test]
    fn deterministic_per_seed() {
        let t = ScaledGaussian {
            mu: 0.0,
            s: 1.0,
            log_c: 0.0,
        };
        let path = AnnealPath { rho0_var: 3.0, k: 4 };
        let a = smc_run(&t, path, &cfg(4, 32, 2, 9)).unwrap();
        let b = smc_run(&t, path, &cfg(4, 32, 2, 9)).unwrap();
        assert_eq!(a.samples, b.samples);
    }
}

//! Closed forms for isotropic Gaussian mixtures pushed through the
//! observation process `Y_t = alpha(t) X + sigma W_t`.

use rand::Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Phase};
use crate::schedule::ScheduleSpec;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `sum_i w_i N(m_i, gamma_i^2 I_d)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotropicMixture {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub gammas: Vec<f64>,
}

/// Posterior of `X` given `Y_t = y`; every component is isotropic.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMixture {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<f64>,
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl IsotropicMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, gammas: Vec<f64>) -> Result<Self> {
        let n = weights.len();
        if n == 0 || means.len() != n || gammas.len() != n {
            return Err(Error::InvalidConfig(
                "mixture needs matching non-empty weights, means and gammas".into(),
            ));
        }
        let d = means[0].len();
        if d == 0 || means.iter().any(|m| m.len() != d) {
            return Err(Error::InvalidConfig("mixture means must share a positive dimension".into()));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig("mixture weights must be non-negative and sum to 1".into()));
        }
        if gammas.iter().any(|&g| !(g > 0.0) || !g.is_finite()) {
            return Err(Error::InvalidConfig("mixture gammas must be positive".into()));
        }
        Ok(IsotropicMixture {
            weights,
            means,
            gammas,
        })
    }

    /// Single Gaussian `N(m, gamma^2 I)`.
    pub fn gaussian(mean: Vec<f64>, gamma: f64) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![gamma])
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (w, m) in self.weights.iter().zip(&self.means) {
            for (o, v) in out.iter_mut().zip(m) {
                *o += w * v;
            }
        }
        out
    }

    fn log_terms(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim() as f64;
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.gammas)
            .map(|((&w, m), &g)| {
                let v = g * g;
                w.ln() - 0.5 * d * (LN_2PI + v.ln()) - 0.5 * sq_dist(x, m) / v
            })
            .collect()
    }

    /// Normalised log-density.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        log_sum_exp(&self.log_terms(x))
    }

    /// Log-density and its gradient in one pass.
    pub fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let terms = self.log_terms(x);
        let lse = log_sum_exp(&terms);
        grad.iter_mut().for_each(|g| *g = 0.0);
        for ((lt, m), &g) in terms.iter().zip(&self.means).zip(&self.gammas) {
            let r = (lt - lse).exp();
            if r == 0.0 {
                continue;
            }
            let inv = 1.0 / (g * g);
            for ((o, xi), mi) in grad.iter_mut().zip(x).zip(m) {
                *o += r * (mi - xi) * inv;
            }
        }
        lse
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let i = if self.components() == 1 {
            0
        } else {
            WeightedIndex::new(&self.weights)
                .expect("weights validated")
                .sample(rng)
        };
        self.means[i]
            .iter()
            .map(|&m| {
                let z: f64 = StandardNormal.sample(rng);
                m + self.gammas[i] * z
            })
            .collect()
    }

    /// `n` i.i.d. draws, each from its own stream so the result does not
    /// depend on evaluation order.
    pub fn sample_exact(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| {
                let mut r = rng::stream(seed, i as u64, Phase::Exact);
                self.sample(&mut r)
            })
            .collect()
    }
}

fn check_time(spec: &ScheduleSpec, sigma: f64, t: f64) -> Result<(f64, f64)> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidConfig(format!("sigma must be positive, got {sigma}")));
    }
    Ok((spec.g(t)?, spec.alpha(t)?))
}

/// Law of `Y_t`.
pub fn obs_marginal(
    mix: &IsotropicMixture,
    spec: &ScheduleSpec,
    sigma: f64,
    t: f64,
) -> Result<IsotropicMixture> {
    let (g, alpha) = check_time(spec, sigma, t)?;
    let means = mix
        .means
        .iter()
        .map(|m| m.iter().map(|v| alpha * v).collect())
        .collect();
    let gammas = mix
        .gammas
        .iter()
        .map(|&gm| (t * (g * g * gm * gm + sigma * sigma)).sqrt())
        .collect();
    Ok(IsotropicMixture {
        weights: mix.weights.clone(),
        means,
        gammas,
    })
}

/// `grad_y log p_t(y)`.
pub fn obs_score(
    mix: &IsotropicMixture,
    spec: &ScheduleSpec,
    sigma: f64,
    t: f64,
    y: &[f64],
) -> Result<Vec<f64>> {
    let marg = obs_marginal(mix, spec, sigma, t)?;
    let mut out = vec![0.0; y.len()];
    marg.log_density_and_grad(y, &mut out);
    Ok(out)
}

pub fn posterior(
    mix: &IsotropicMixture,
    spec: &ScheduleSpec,
    sigma: f64,
    t: f64,
    y: &[f64],
) -> Result<PosteriorMixture> {
    let (g, alpha) = check_time(spec, sigma, t)?;
    let d = mix.dim() as f64;
    let s2 = sigma * sigma;
    let g2 = g * g;
    let obs: Vec<f64> = y.iter().map(|v| v / alpha).collect();
    let logw: Vec<f64> = mix
        .weights
        .iter()
        .zip(&mix.means)
        .zip(&mix.gammas)
        .map(|((&w, m), &gm)| {
            let v = gm * gm + s2 / g2;
            w.ln() - 0.5 * d * v.ln() - 0.5 * sq_dist(&obs, m) / v
        })
        .collect();
    let lse = log_sum_exp(&logw);
    let weights = logw.iter().map(|l| (l - lse).exp()).collect();
    let mut means = Vec::with_capacity(mix.components());
    let mut variances = Vec::with_capacity(mix.components());
    for (m, &gm) in mix.means.iter().zip(&mix.gammas) {
        let gm2 = gm * gm;
        let var = gm2 * s2 / (s2 + g2 * gm2);
        // var * (m / gm^2 + g^2 / sigma^2 * y / alpha)
        let mean = m
            .iter()
            .zip(&obs)
            .map(|(mi, oi)| var * (mi / gm2 + g2 / s2 * oi))
            .collect();
        means.push(mean);
        variances.push(var);
    }
    Ok(PosteriorMixture {
        weights,
        means,
        variances,
    })
}

impl PosteriorMixture {
    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.means[0].len()];
        for (w, m) in self.weights.iter().zip(&self.means) {
            for (o, v) in out.iter_mut().zip(m) {
                *o += w * v;
            }
        }
        out
    }
}

/// `E[X | Y_t = y]`.
pub fn denoiser_oracle(
    mix: &IsotropicMixture,
    spec: &ScheduleSpec,
    sigma: f64,
    t: f64,
    y: &[f64],
) -> Result<Vec<f64>> {
    Ok(posterior(mix, spec, sigma, t, y)?.mean())
}

/// Tweedie's formula: `y / alpha + sigma^2 t / alpha * score`.
pub fn tweedie_denoiser(
    mix: &IsotropicMixture,
    spec: &ScheduleSpec,
    sigma: f64,
    t: f64,
    y: &[f64],
) -> Result<Vec<f64>> {
    let alpha = spec.alpha(t)?;
    let score = obs_score(mix, spec, sigma, t, y)?;
    Ok(y
        .iter()
        .zip(&score)
        .map(|(yi, si)| yi / alpha + sigma * sigma * t / alpha * si)
        .collect())
}

/// Localisation bound `sigma sqrt(d) / g(t)` shared by `Y_t / alpha(t)` and
/// the denoiser.
pub fn localization_bound(spec: &ScheduleSpec, sigma: f64, d: usize, t: f64) -> Result<f64> {
    Ok(sigma * (d as f64).sqrt() / spec.g(t)?)
}

/// Exact `W2(Law(Y_t / alpha(t)), N(m, gamma^2 I))`.
pub fn gaussian_obs_w2(spec: &ScheduleSpec, sigma: f64, gamma: f64, d: usize, t: f64) -> Result<f64> {
    let g = spec.g(t)?;
    let ratio = sigma * sigma / (gamma * gamma * g * g);
    Ok(gamma * ((1.0 + ratio).sqrt() - 1.0).abs() * (d as f64).sqrt())
}

/// Exact `W2(Law(u_t(Y_t)), N(m, gamma^2 I))`.
pub fn gaussian_denoiser_w2(
    spec: &ScheduleSpec,
    sigma: f64,
    gamma: f64,
    d: usize,
    t: f64,
) -> Result<f64> {
    let g = spec.g(t)?;
    let ratio = sigma * sigma / (gamma * gamma * g * g);
    Ok(gamma * (1.0 - 1.0 / (1.0 + ratio).sqrt()).abs() * (d as f64).sqrt())
}

/// W2 between two isotropic Gaussians.
pub fn gaussian_w2(m1: &[f64], gamma1: f64, m2: &[f64], gamma2: f64) -> f64 {
    let d = m1.len() as f64;
    (sq_dist(m1, m2) + d * (gamma1 - gamma2).powi(2)).sqrt()
}

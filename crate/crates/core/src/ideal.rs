//! Exponential-integrator discretisation of the score-form observation SDE
//! `dY = (alpha'/alpha) (Y + sigma^2 t grad log p_t(Y)) dt + sigma dB`
//! with the score frozen over each step.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{obs_score, IsotropicMixture};
use crate::rng::{self, fill_standard_normal, Phase};
use crate::schedule::{snr_grid, uniform_grid, ScheduleSpec, TimeGrid};

/// Coefficients of one EI step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EiStepCoeffs {
    /// `alpha(t_{k+1}) / alpha(t_k)`
    pub multiplier: f64,
    pub noise_std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridMode {
    Snr,
    Uniform,
}

impl std::str::FromStr for GridMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "snr" => Ok(GridMode::Snr),
            "uniform" => Ok(GridMode::Uniform),
            _ => Err(Error::InvalidConfig(format!("unknown grid mode '{s}'"))),
        }
    }
}

pub fn build_grid(spec: &ScheduleSpec, t0: f64, eta: f64, k: usize, mode: GridMode) -> Result<TimeGrid> {
    match mode {
        GridMode::Snr => snr_grid(spec, t0, eta, k),
        GridMode::Uniform => uniform_grid(spec, t0, eta, k),
    }
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let diff = left + right - whole;
    if depth == 0 || diff.abs() <= 15.0 * tol {
        return left + right + diff / 15.0;
    }
    adaptive(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + adaptive(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// `int_s^t du / alpha(u)^2` by adaptive Simpson in `v = ln u` on 16 equal
/// pieces.
pub fn inverse_alpha_sq_integral(spec: &ScheduleSpec, s: f64, t: f64) -> Result<f64> {
    spec.alpha(s)?;
    spec.alpha(t)?;
    let f = |v: f64| {
        let u = v.exp();
        let a = spec.alpha(u).unwrap_or(f64::NAN);
        u / (a * a)
    };
    let (lo, hi) = (s.ln(), t.ln());
    let pieces = 16;
    let h = (hi - lo) / pieces as f64;
    // crude pass for the tolerance scale
    let rough: f64 = (0..pieces)
        .map(|i| {
            let a = lo + h * i as f64;
            let b = a + h;
            simpson(a, b, f(a), f(0.5 * (a + b)), f(b))
        })
        .sum();
    let tol = (1e-13 * rough.abs()).max(1e-300) / pieces as f64;
    let mut total = 0.0;
    for i in 0..pieces {
        let a = lo + h * i as f64;
        let b = if i + 1 == pieces { hi } else { a + h };
        let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
        let whole = simpson(a, b, fa, fm, fb);
        total += adaptive(&f, a, b, fa, fm, fb, whole, tol, 40);
    }
    if !total.is_finite() {
        return Err(Error::Numeric("EI noise quadrature produced a non-finite value".into()));
    }
    Ok(total)
}

/// Noise variance of an EI step from the quadrature form.
pub fn noise_variance_quadrature(spec: &ScheduleSpec, s: f64, t: f64, sigma: f64) -> Result<f64> {
    let a = spec.alpha(t)?;
    Ok(sigma * sigma * a * a * inverse_alpha_sq_integral(spec, s, t)?)
}

/// Noise variance from the closed forms where one is available.
fn noise_variance(spec: &ScheduleSpec, s: f64, t: f64, sigma: f64) -> Result<f64> {
    let s2 = sigma * sigma;
    match *spec {
        ScheduleSpec::GeomInf { alpha1 } => {
            let r = (t / s).powf(alpha1);
            Ok(s2 * t * (r - 1.0) / alpha1)
        }
        ScheduleSpec::Geom { alpha1, alpha2 } if alpha1 == 1.0 && alpha2 == 1.0 => {
            Ok(s2 * (t * t / (1.0 - t) * (s / t).ln() + t * (t - s) / (s * (1.0 - t))))
        }
        ScheduleSpec::Geom { alpha1, alpha2 } if alpha1 == 2.0 && alpha2 == 1.0 => {
            Ok(s2 * t * (t - s) * (t + s - 2.0 * s * t) / (2.0 * s * s * (1.0 - t)))
        }
        ScheduleSpec::Geom { alpha1, alpha2 } if alpha1 == 1.0 && alpha2 == 2.0 => {
            let omt = 1.0 - t;
            Ok(s2 / (omt * omt) * ((t - s) * (t * t + t / s) + 2.0 * t * t * (s / t).ln()))
        }
        ScheduleSpec::Geom { .. } => noise_variance_quadrature(spec, s, t, sigma),
    }
}

pub fn ei_coeffs(spec: &ScheduleSpec, s: f64, t: f64, sigma: f64) -> Result<EiStepCoeffs> {
    if !(s < t) {
        return Err(Error::InvalidConfig(format!("EI step needs t_k < t_(k+1), got {s} >= {t}")));
    }
    let multiplier = spec.alpha(t)? / spec.alpha(s)?;
    // tiny negative values come from cancellation on near-degenerate steps
    let var = noise_variance(spec, s, t, sigma)?.max(0.0);
    Ok(EiStepCoeffs {
        multiplier,
        noise_std: var.sqrt(),
    })
}

/// `y' = C y + (C - 1) sigma^2 t_k score + noise_std z`, in place.
pub fn ei_step_with(coeffs: &EiStepCoeffs, s: f64, sigma: f64, y: &mut [f64], score: &[f64], z: &[f64]) {
    let c = coeffs.multiplier;
    let drift = (c - 1.0) * sigma * sigma * s;
    for ((yi, si), zi) in y.iter_mut().zip(score).zip(z) {
        *yi = c * *yi + drift * si + coeffs.noise_std * zi;
    }
}

/// Configuration of an exact-score integration.
#[derive(Debug, Clone)]
pub struct IdealConfig {
    pub spec: ScheduleSpec,
    pub sigma: f64,
    pub t0: f64,
    pub eta: f64,
    pub k: usize,
    pub n_runs: usize,
    pub grid_mode: GridMode,
    pub seed: u64,
}

/// Integrates `n_runs` independent paths from `N(0, sigma^2 t0 I)` with the
/// analytic mixture score and returns `Y_T / alpha(T)` per run.
pub fn run_ideal(mix: &IsotropicMixture, cfg: &IdealConfig) -> Result<Vec<Vec<f64>>> {
    let grid = build_grid(&cfg.spec, cfg.t0, cfg.eta, cfg.k, cfg.grid_mode)?;
    let coeffs: Vec<EiStepCoeffs> = grid
        .times
        .windows(2)
        .map(|w| ei_coeffs(&cfg.spec, w[0], w[1], cfg.sigma))
        .collect::<Result<_>>()?;
    let alpha_end = cfg.spec.alpha(grid.end())?;
    let d = mix.dim();
    let init_std = cfg.sigma * cfg.t0.sqrt();
    (0..cfg.n_runs)
        .into_par_iter()
        .map(|run| {
            let mut r = rng::stream(cfg.seed, run as u64, Phase::Ideal);
            let mut y = vec![0.0; d];
            fill_standard_normal(&mut r, &mut y);
            y.iter_mut().for_each(|v| *v *= init_std);
            let mut z = vec![0.0; d];
            for (k, c) in coeffs.iter().enumerate() {
                let s = grid.times[k];
                let score = obs_score(mix, &cfg.spec, cfg.sigma, s, &y)?;
                fill_standard_normal(&mut r, &mut z);
                ei_step_with(c, s, cfg.sigma, &mut y, &score, &z);
            }
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("ideal run {run} diverged")));
            }
            Ok(y.iter().map(|v| v / alpha_end).collect())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn standard_examples() {
        let c = ei_coeffs(&ScheduleSpec::STANDARD, 1.0, 2.0, 1.0).unwrap();
        assert!((c.noise_std.powi(2) - 2.0).abs() < 1e-14);
        let c = ei_coeffs(&ScheduleSpec::STANDARD, 0.5, 2.0, 1.0).unwrap();
        assert!((c.multiplier - 4.0).abs() < 1e-14);
        let c = ei_coeffs(&ScheduleSpec::STANDARD, 1.0, 1.0 + 1e-12, 1.0).unwrap();
        assert!((c.multiplier - 1.0).abs() < 1e-11 && c.noise_std < 1e-5);
        assert!(ei_coeffs(&ScheduleSpec::STANDARD, 2.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn geom_multiplier_closed_form() {
        let spec = ScheduleSpec::geom(2.0, 1.0).unwrap();
        let (s, t) = (0.2, 0.7);
        let c = ei_coeffs(&spec, s, t, 1.0).unwrap();
        let want = (t / s).powf(1.5) * ((1.0 - s) / (1.0 - t)).powf(0.5);
        assert!(rel(c.multiplier, want) < 1e-14);
    }

    #[test]
    fn geom21_example_against_quadrature() {
        let spec = ScheduleSpec::geom(2.0, 1.0).unwrap();
        let (s, t): (f64, f64) = (0.25, 0.5);
        let want = t * ((t / s - 1.0) / (1.0 - t)).sqrt() * ((s + t) / (2.0 * s * t) - 1.0).sqrt();
        let c = ei_coeffs(&spec, s, t, 1.0).unwrap();
        assert!(rel(c.noise_std, want) < 1e-13);
        let q = noise_variance_quadrature(&spec, s, t, 1.0).unwrap().sqrt();
        assert!(rel(q, want) < 1e-9);
    }

    #[test]
    fn zero_score_scales_state() {
        let c = ei_coeffs(&ScheduleSpec::STANDARD, 0.5, 1.5, 2.0).unwrap();
        let mut y = vec![1.0, -2.0];
        ei_step_with(&c, 0.5, 2.0, &mut y, &[0.0, 0.0], &[0.0, 0.0]);
        assert!((y[0] - 3.0).abs() < 1e-14 && (y[1] + 6.0).abs() < 1e-14);
    }

    /// Exact moments of the frozen-drift linear SDE over one step.
    #[test]
    fn one_step_matches_frozen_drift_solution() {
        let gamma: f64 = 0.8;
        let sigma: f64 = 1.3;
        let m = 0.7;
        for spec in [
            ScheduleSpec::STANDARD,
            ScheduleSpec::geom(1.0, 1.0).unwrap(),
            ScheduleSpec::geom(2.0, 1.0).unwrap(),
            ScheduleSpec::geom(1.5, 0.5).unwrap(),
        ] {
            let (s, t) = (0.2, 0.6);
            let (a_s, a_t) = (spec.alpha(s).unwrap(), spec.alpha(t).unwrap());
            let c = ei_coeffs(&spec, s, t, sigma).unwrap();
            // y' is affine in y: y' = A y + B + noise
            let v = a_s * a_s * gamma * gamma + sigma * sigma * s;
            let slope = c.multiplier - (c.multiplier - 1.0) * sigma * sigma * s / v;
            let offset = (c.multiplier - 1.0) * sigma * sigma * s * a_s * m / v;
            let (mu0, var0) = (0.4, 0.9);
            // frozen-drift oracle: dY = (a'/a)(Y + sigma^2 s S(Y)) dt + sigma dB with S frozen as a
            // function of the start point, solved via variation of constants
            let mean_oracle = a_t / a_s * mu0 + (a_t / a_s - 1.0) * sigma * sigma * s * (a_s * m - mu0) / v;
            let noise_oracle = sigma * sigma * a_t * a_t * inverse_alpha_sq_integral(&spec, s, t).unwrap();
            let var_oracle = slope * slope * var0 + noise_oracle;
            assert!(rel(slope * mu0 + offset, mean_oracle) < 1e-10);
            assert!(rel(slope * slope * var0 + c.noise_std.powi(2), var_oracle) < 1e-10);
        }
    }

    #[test]
    fn composed_steps_keep_the_mean_exact() {
        // the marginal mean alpha(t) m is propagated exactly on any grid
        let (gamma, sigma, m): (f64, f64, f64) = (0.6, 1.1, -0.9);
        for spec in [ScheduleSpec::STANDARD, ScheduleSpec::geom(1.0, 1.0).unwrap(), ScheduleSpec::geom(1.0, 2.0).unwrap()] {
            let grid = snr_grid(&spec, spec.t_of_log_snr(-4.0).unwrap(), 5.0, 37).unwrap();
            let mut mu = spec.alpha(grid.start()).unwrap() * m;
            for w in grid.times.windows(2) {
                let (s, t) = (w[0], w[1]);
                let c = ei_coeffs(&spec, s, t, sigma).unwrap();
                let a_s = spec.alpha(s).unwrap();
                let v = a_s * a_s * gamma * gamma + sigma * sigma * s;
                mu = c.multiplier * mu + (c.multiplier - 1.0) * sigma * sigma * s * (a_s * m - mu) / v;
                let exact = spec.alpha(t).unwrap() * m;
                assert!(rel(mu, exact) < 1e-8);
            }
        }
    }

    #[test]
    fn endpoints_from_log_snr_levels() {
        for spec in [ScheduleSpec::STANDARD, ScheduleSpec::geom(1.0, 1.0).unwrap(), ScheduleSpec::geom(2.0, 1.0).unwrap()] {
            let t0 = spec.t_of_log_snr(-4.0).unwrap();
            let grid = snr_grid(&spec, t0, 5.0, 8).unwrap();
            assert!((spec.log_snr(grid.start()).unwrap() + 4.0).abs() < 1e-10);
            assert!((spec.log_snr(grid.end()).unwrap() - 5.0).abs() < 1e-10);
        }
    }

    #[test]
    fn single_gaussian_moments() {
        let gamma = 0.5;
        let m = vec![1.0, -1.0];
        let mix = IsotropicMixture::gaussian(m.clone(), gamma).unwrap();
        let sigma = (0.25f64 + 1.0).sqrt();
        let spec = ScheduleSpec::STANDARD;
        let cfg = IdealConfig {
            spec,
            sigma,
            t0: spec.t_of_log_snr(-4.0).unwrap(),
            eta: 5.0,
            k: 256,
            n_runs: 4000,
            grid_mode: GridMode::Snr,
            seed: 3,
        };
        let xs = run_ideal(&mix, &cfg).unwrap();
        let n = xs.len() as f64;
        let t_end = spec.t_of_log_snr(5.0).unwrap();
        let want_var = gamma * gamma + sigma * sigma / spec.g(t_end).unwrap().powi(2);
        for j in 0..2 {
            let mean = xs.iter().map(|x| x[j]).sum::<f64>() / n;
            let var = xs.iter().map(|x| (x[j] - mean).powi(2)).sum::<f64>() / n;
            assert!((mean - m[j]).abs() < 4.0 * (want_var / n).sqrt());
            assert!((var - want_var).abs() < 0.1 * want_var);
        }
    }

    fn special_spec() -> impl Strategy<Value = ScheduleSpec> {
        prop_oneof![
            Just(ScheduleSpec::Geom { alpha1: 1.0, alpha2: 1.0 }),
            Just(ScheduleSpec::Geom { alpha1: 2.0, alpha2: 1.0 }),
            Just(ScheduleSpec::Geom { alpha1: 1.0, alpha2: 2.0 }),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn specialisations_agree_with_quadrature(spec in special_spec(), a in 0.01f64..0.98, frac in 0.001f64..1.0, sigma in 0.5f64..3.0) {
            let s = a;
            let t = a + frac * (0.99 - a);
            prop_assume!(t > s * (1.0 + 1e-6));
            let closed = noise_variance(&spec, s, t, sigma).unwrap();
            let quad = noise_variance_quadrature(&spec, s, t, sigma).unwrap();
            prop_assert!(rel(closed, quad) < 1e-8, "{} {} {} {} {}", spec, s, t, closed, quad);
        }

        #[test]
        fn geom_inf_agrees_with_quadrature(a1 in 1.0f64..3.0, s in 0.01f64..10.0, r in 1.001f64..5.0) {
            let spec = ScheduleSpec::GeomInf { alpha1: a1 };
            let closed = noise_variance(&spec, s, s * r, 1.0).unwrap();
            let quad = noise_variance_quadrature(&spec, s, s * r, 1.0).unwrap();
            prop_assert!(rel(closed, quad) < 1e-8);
        }
    }
}

//! Denoising schedules and the time grids built on top of them.
//!
//! A schedule fixes `g(t)` and therefore `alpha(t) = sqrt(t) g(t)`. With the
//! noise scale chosen as `sigma = sqrt(R_pi / d)` the signal-to-noise ratio of
//! the observation process is exactly `g(t)^2`, so `log_snr(t) = 2 ln g(t)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BISECTION_LO: f64 = 1e-15;
const BISECTION_HI: f64 = 1.0 - 1e-15;
const BISECTION_ITERS: usize = 200;

/// The two admissible schedule families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScheduleSpec {
    /// `g(t) = t^{a1/2}` on `(0, inf)`.
    GeomInf { alpha1: f64 },
    /// `g(t) = t^{a1/2} (1-t)^{-a2/2}` on `(0, 1)`.
    Geom { alpha1: f64, alpha2: f64 },
}

impl ScheduleSpec {
    pub const STANDARD: ScheduleSpec = ScheduleSpec::GeomInf { alpha1: 1.0 };

    pub fn geom_inf(alpha1: f64) -> Result<Self> {
        let s = ScheduleSpec::GeomInf { alpha1 };
        s.validate()?;
        Ok(s)
    }

    pub fn geom(alpha1: f64, alpha2: f64) -> Result<Self> {
        let s = ScheduleSpec::Geom { alpha1, alpha2 };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ScheduleSpec::GeomInf { alpha1 } => {
                if !(alpha1 >= 1.0) || !alpha1.is_finite() {
                    return Err(Error::InvalidConfig(format!(
                        "geom-inf requires alpha1 >= 1, got {alpha1}"
                    )));
                }
            }
            ScheduleSpec::Geom { alpha1, alpha2 } => {
                if !(alpha1 >= 1.0) || !alpha1.is_finite() {
                    return Err(Error::InvalidConfig(format!(
                        "geom requires alpha1 >= 1, got {alpha1}"
                    )));
                }
                if !(alpha2 > 0.0) || !alpha2.is_finite() {
                    return Err(Error::InvalidConfig(format!(
                        "geom requires alpha2 > 0, got {alpha2}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// End of the generative time horizon.
    pub fn t_gen(&self) -> f64 {
        match self {
            ScheduleSpec::GeomInf { .. } => f64::INFINITY,
            ScheduleSpec::Geom { .. } => 1.0,
        }
    }

    /// Small-t exponent: `g(t) ~ t^{beta/2}` as `t -> 0`.
    pub fn small_t_exponent(&self) -> f64 {
        match *self {
            ScheduleSpec::GeomInf { alpha1 } | ScheduleSpec::Geom { alpha1, .. } => alpha1,
        }
    }

    fn check(&self, t: f64) -> Result<()> {
        if t > 0.0 && t < self.t_gen() {
            Ok(())
        } else {
            Err(Error::Domain {
                t,
                t_gen: self.t_gen(),
            })
        }
    }

    fn ln_g_unchecked(&self, t: f64) -> f64 {
        match *self {
            ScheduleSpec::GeomInf { alpha1 } => 0.5 * alpha1 * t.ln(),
            ScheduleSpec::Geom { alpha1, alpha2 } => {
                0.5 * alpha1 * t.ln() - 0.5 * alpha2 * (-t).ln_1p()
            }
        }
    }

    pub fn g(&self, t: f64) -> Result<f64> {
        self.check(t)?;
        Ok(self.ln_g_unchecked(t).exp())
    }

    pub fn alpha(&self, t: f64) -> Result<f64> {
        self.check(t)?;
        Ok((0.5 * t.ln() + self.ln_g_unchecked(t)).exp())
    }

    /// Logarithmic derivative `alpha'(t) / alpha(t)`.
    pub fn alpha_log_derivative(&self, t: f64) -> Result<f64> {
        self.check(t)?;
        Ok(match *self {
            ScheduleSpec::GeomInf { alpha1 } => (alpha1 + 1.0) / (2.0 * t),
            ScheduleSpec::Geom { alpha1, alpha2 } => {
                (alpha1 + 1.0) / (2.0 * t) + alpha2 / (2.0 * (1.0 - t))
            }
        })
    }

    /// `(alpha(t), alpha'(t))` from the closed forms of each family.
    pub fn alpha_and_dot(&self, t: f64) -> Result<(f64, f64)> {
        self.check(t)?;
        match *self {
            ScheduleSpec::GeomInf { alpha1 } => {
                let p = 0.5 * (alpha1 + 1.0);
                let alpha = t.powf(p);
                let dot = p * t.powf(p - 1.0);
                Ok((alpha, dot))
            }
            ScheduleSpec::Geom { alpha1, alpha2 } => {
                let p = 0.5 * (alpha1 + 1.0);
                let q = 0.5 * alpha2;
                let alpha = t.powf(p) * (1.0 - t).powf(-q);
                // d/dt [t^p (1-t)^-q] = t^{p-1} (1-t)^{-q-1} (p (1-t) + q t)
                let dot = t.powf(p - 1.0) * (1.0 - t).powf(-q - 1.0) * (p * (1.0 - t) + q * t);
                Ok((alpha, dot))
            }
        }
    }

    pub fn log_snr(&self, t: f64) -> Result<f64> {
        self.check(t)?;
        Ok(2.0 * self.ln_g_unchecked(t))
    }

    /// Unique `t` with `log_snr(t) = eta`.
    pub fn t_of_log_snr(&self, eta: f64) -> Result<f64> {
        if !eta.is_finite() {
            return Err(Error::Numeric(format!("non-finite log-SNR level {eta}")));
        }
        match *self {
            ScheduleSpec::GeomInf { alpha1 } => Ok((eta / alpha1).exp()),
            ScheduleSpec::Geom { alpha1, alpha2 } if alpha1 == alpha2 => {
                // alpha1 * logit(t) = eta
                Ok(logistic(eta / alpha1))
            }
            ScheduleSpec::Geom { alpha1, alpha2 } => invert_geom(alpha1, alpha2, eta),
        }
    }

    /// Inverse of `g` on `(0, inf)`.
    pub fn g_inv(&self, u: f64) -> Result<f64> {
        if !(u > 0.0) {
            return Err(Error::Numeric(format!("g^-1 undefined at {u}")));
        }
        self.t_of_log_snr(2.0 * u.ln())
    }
}

fn logistic(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Bisection in logit coordinates on `[1e-15, 1 - 1e-15]`.
///
/// In `u = logit(t)` the log-SNR reads `a1 u - (a1 - a2) ln(1 + e^u)`, whose
/// slope is bounded by `max(a1, a2)`, so the residual tracks the bracket width.
fn invert_geom(alpha1: f64, alpha2: f64, eta: f64) -> Result<f64> {
    let f = |u: f64| {
        let softplus = if u > 0.0 {
            u + (-u).exp().ln_1p()
        } else {
            u.exp().ln_1p()
        };
        alpha1 * u - (alpha1 - alpha2) * softplus - eta
    };
    let logit = |t: f64| (t / (1.0 - t)).ln();
    let (mut lo, mut hi) = (logit(BISECTION_LO), logit(BISECTION_HI));
    let (flo, fhi) = (f(lo), f(hi));
    if flo > 0.0 || fhi < 0.0 {
        return Err(Error::Numeric(format!(
            "log-SNR level {eta} outside the representable bracket"
        )));
    }
    for _ in 0..BISECTION_ITERS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let u = 0.5 * (lo + hi);
    let residual = f(u).abs();
    if residual > 1e-12 {
        return Err(Error::Numeric(format!(
            "schedule inversion did not converge (residual {residual:e})"
        )));
    }
    Ok(logistic(u))
}

impl fmt::Display for ScheduleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ScheduleSpec::GeomInf { alpha1: 1.0 } => write!(f, "standard"),
            ScheduleSpec::GeomInf { alpha1 } => write!(f, "geom-inf:{alpha1}"),
            ScheduleSpec::Geom { alpha1, alpha2 } => write!(f, "geom:{alpha1},{alpha2}"),
        }
    }
}

impl FromStr for ScheduleSpec {
    type Err = Error;

    /// Accepts `standard`, `geom-inf:<a1>` and `geom:<a1>,<a2>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::InvalidConfig(format!("unrecognised schedule '{s}'"));
        let num = |v: &str| v.trim().parse::<f64>().map_err(|_| bad());
        if s == "standard" {
            return Ok(ScheduleSpec::STANDARD);
        }
        if let Some(rest) = s.strip_prefix("geom-inf:") {
            return ScheduleSpec::geom_inf(num(rest)?);
        }
        if let Some(rest) = s.strip_prefix("geom:") {
            let (a, b) = rest.split_once(',').ok_or_else(bad)?;
            return ScheduleSpec::geom(num(a)?, num(b)?);
        }
        Err(bad())
    }
}

/// `sigma = sqrt(R^2 + tau^2)`: the scalar-variance bound `d (R^2 + tau^2)`
/// divided by `d` under the square root.
pub fn sigma_from_a0(r: f64, tau: f64) -> Result<f64> {
    if !(r >= 0.0 && tau >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "A0 constants must be non-negative (R={r}, tau={tau})"
        )));
    }
    if r == 0.0 && tau == 0.0 {
        return Err(Error::InvalidConfig("R and tau cannot both be zero".into()));
    }
    Ok(r.hypot(tau))
}

/// Increasing discretisation of `[t_0, t_K]` with the Euler-Maruyama
/// coefficients of every step.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    pub times: Vec<f64>,
    /// `t_{k+1} - t_k`
    pub deltas: Vec<f64>,
    /// `alpha(t_{k+1}) - alpha(t_k)`
    pub weights: Vec<f64>,
}

impl TimeGrid {
    fn from_times(spec: &ScheduleSpec, times: Vec<f64>) -> Result<Self> {
        let alphas = times
            .iter()
            .map(|&t| spec.alpha(t))
            .collect::<Result<Vec<_>>>()?;
        let deltas = times.windows(2).map(|w| w[1] - w[0]).collect();
        let weights = alphas.windows(2).map(|w| w[1] - w[0]).collect();
        Ok(TimeGrid {
            times,
            deltas,
            weights,
        })
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().expect("grid has at least two points")
    }
}

/// Grid with equal log-SNR increments between `t0` and `T_eta`.
pub fn snr_grid(spec: &ScheduleSpec, t0: f64, eta: f64, k: usize) -> Result<TimeGrid> {
    if k == 0 {
        return Err(Error::InvalidConfig("grid needs at least one step".into()));
    }
    let ls0 = spec.log_snr(t0)?;
    let t_end = spec.t_of_log_snr(eta)?;
    if ls0 >= eta || t0 >= t_end {
        return Err(Error::InvalidConfig(format!(
            "t0={t0} must lie before T_eta={t_end} (eta={eta})"
        )));
    }
    let step = (eta - ls0) / k as f64;
    let mut times = Vec::with_capacity(k + 1);
    times.push(t0);
    for i in 1..k {
        times.push(spec.t_of_log_snr(ls0 + step * i as f64)?);
    }
    times.push(t_end);
    TimeGrid::from_times(spec, times)
}

/// Grid with equal time increments between `t0` and `T_eta`.
pub fn uniform_grid(spec: &ScheduleSpec, t0: f64, eta: f64, k: usize) -> Result<TimeGrid> {
    if k == 0 {
        return Err(Error::InvalidConfig("grid needs at least one step".into()));
    }
    spec.log_snr(t0)?;
    let t_end = spec.t_of_log_snr(eta)?;
    if t0 >= t_end {
        return Err(Error::InvalidConfig(format!(
            "t0={t0} must lie before T_eta={t_end} (eta={eta})"
        )));
    }
    let h = (t_end - t0) / k as f64;
    let mut times: Vec<f64> = (0..k).map(|i| t0 + h * i as f64).collect();
    times.push(t_end);
    TimeGrid::from_times(spec, times)
}

//! Log-concavity windows of the observation marginal `p_t` and of the
//! posterior `q_t(. | y)`.
//!
//! `zeta_p` and `zeta_q` bound the largest Hessian eigenvalue of `log p_t` and
//! `log q_t`. `p_t` is log-concave for `t <= t_p` and `q_t` for `t >= t_q`; both
//! hold at once on `[t_q, t_p]` when that window is non-empty.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::ScheduleSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct A0Params {
    pub d: usize,
    pub r: f64,
    pub tau: f64,
    pub sigma: f64,
    /// Weight `w` of a two-mode mixture, enabling the tighter radius
    /// `R / (2 max(w, 1 - w))`.
    pub refinement: Option<f64>,
}

impl A0Params {
    pub fn new(d: usize, r: f64, tau: f64, sigma: f64) -> Result<Self> {
        let p = A0Params {
            d,
            r,
            tau,
            sigma,
            refinement: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_refinement(mut self, w: f64) -> Result<Self> {
        if !(w > 0.0 && w < 1.0) {
            return Err(Error::InvalidConfig(format!("mixture weight must lie in (0, 1), got {w}")));
        }
        self.refinement = Some(w);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || !(self.r > 0.0) || !(self.tau >= 0.0) || !(self.sigma > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "need d >= 1, R > 0, tau >= 0, sigma > 0 (got d={}, R={}, tau={}, sigma={})",
                self.d, self.r, self.tau, self.sigma
            )));
        }
        Ok(())
    }

    /// Radius entering the bounds.
    pub fn effective_r(&self) -> f64 {
        match self.refinement {
            Some(w) => self.r / (2.0 * w.max(1.0 - w)),
            None => self.r,
        }
    }

    fn d_r2(&self) -> f64 {
        let r = self.effective_r();
        self.d as f64 * r * r
    }
}

fn require_tau(p: &A0Params) -> Result<()> {
    if p.tau > 0.0 {
        Ok(())
    } else {
        Err(Error::Undefined("the Hessian bounds divide by tau, which is 0".into()))
    }
}

/// `alpha^2 d R^2 / (alpha^2 tau^2 + sigma^2 t)^2 - 1 / (alpha^2 tau^2 + sigma^2 t)`.
pub fn zeta_p(p: &A0Params, spec: &ScheduleSpec, t: f64) -> Result<f64> {
    require_tau(p)?;
    let a = spec.alpha(t)?;
    let v = a * a * p.tau * p.tau + p.sigma * p.sigma * t;
    Ok(a * a * p.d_r2() / (v * v) - 1.0 / v)
}

/// `d R^2 / tau^4 - 1 / tau^2 - g^2 / sigma^2`.
pub fn zeta_q(p: &A0Params, spec: &ScheduleSpec, t: f64) -> Result<f64> {
    require_tau(p)?;
    let g = spec.g(t)?;
    let tau2 = p.tau * p.tau;
    Ok(p.d_r2() / (tau2 * tau2) - 1.0 / tau2 - g * g / (p.sigma * p.sigma))
}

/// `(t_q, t_p)`.
pub fn t_p_t_q(p: &A0Params, spec: &ScheduleSpec) -> Result<(f64, f64)> {
    p.validate()?;
    let excess = p.d_r2() - p.tau * p.tau;
    if excess <= 0.0 {
        return Ok((0.0, spec.t_gen()));
    }
    if p.tau == 0.0 {
        // no posterior bound without tau; the marginal window is still defined
        let t_p = spec.g_inv(p.sigma / excess.sqrt())?;
        return Ok((spec.t_gen(), t_p));
    }
    let root = excess.sqrt();
    let t_p = spec.g_inv(p.sigma / root)?;
    let t_q = spec.g_inv(p.sigma * root / (p.tau * p.tau))?;
    Ok((t_q, t_p))
}

/// `d R^2 < 2 tau^2` (with the refined radius when a weight is given).
pub fn duality_holds(p: &A0Params) -> bool {
    p.d_r2() < 2.0 * p.tau * p.tau
}

/// Summary used by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcavityReport {
    pub t_q: f64,
    pub t_p: f64,
    pub duality: bool,
    /// Midpoint of the window when it is non-empty and bounded.
    pub suggested_t0: Option<f64>,
}

pub fn report(p: &A0Params, spec: &ScheduleSpec) -> Result<ConcavityReport> {
    let (t_q, t_p) = t_p_t_q(p, spec)?;
    let duality = duality_holds(p);
    let mid = 0.5 * (t_q + t_p);
    Ok(ConcavityReport {
        t_q,
        t_p,
        duality,
        suggested_t0: (duality && mid.is_finite() && mid > 0.0).then_some(mid),
    })
}

/// `2 / (1 + cosh f)` without overflow.
pub fn two_over_one_plus_cosh(f: f64) -> f64 {
    let e = (-f.abs()).exp();
    4.0 * e / ((1.0 + e) * (1.0 + e))
}

/// Which log-density of the two-mode mixture to differentiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HessianKind {
    /// `log p_t(y)` at the observation `y`.
    Marginal,
    /// `log q_t(x | y)` at `x` (independent of `y`).
    Posterior,
}

/// Two-mode mixture `w N(-a 1, gamma^2 I) + (1 - w) N(a 1, gamma^2 I)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoModeMixture {
    pub a: f64,
    pub gamma: f64,
    pub w: f64,
}

impl TwoModeMixture {
    /// Exact Hessian as a dense row-major `d x d` matrix.
    pub fn hessian(&self, kind: HessianKind, spec: &ScheduleSpec, sigma: f64, t: f64, point: &[f64]) -> Result<Vec<Vec<f64>>> {
        let d = point.len();
        let sum: f64 = point.iter().sum();
        let shift = (1.0 / self.w - 1.0).ln();
        let (rank_one, diag) = match kind {
            HessianKind::Marginal => {
                let alpha = spec.alpha(t)?;
                let v = alpha * alpha * self.gamma * self.gamma + sigma * sigma * t;
                let big_g = 2.0 * alpha * self.a * sum / v + shift;
                let c = alpha * alpha * self.a * self.a / (v * v) * two_over_one_plus_cosh(big_g);
                (c, -1.0 / v)
            }
            HessianKind::Posterior => {
                let g = spec.g(t)?;
                let g2 = self.gamma * self.gamma;
                let f = 2.0 * self.a * sum / g2 + shift;
                let c = self.a * self.a / (g2 * g2) * two_over_one_plus_cosh(f);
                (c, -(1.0 / g2 + g * g / (sigma * sigma)))
            }
        };
        Ok((0..d)
            .map(|i| (0..d).map(|j| rank_one + if i == j { diag } else { 0.0 }).collect())
            .collect())
    }

    /// Largest eigenvalue: the rank-one direction `1` carries `d c`.
    pub fn max_eigenvalue(&self, kind: HessianKind, spec: &ScheduleSpec, sigma: f64, t: f64, point: &[f64]) -> Result<f64> {
        let h = self.hessian(kind, spec, sigma, t, point)?;
        let d = point.len();
        let c = if d > 1 { h[0][1] } else { 0.0 };
        let diag = h[0][0] - c;
        Ok(diag + d as f64 * c.max(0.0))
    }

    /// A0 constants: `R = 2 max(w, 1 - w) a`, `tau = gamma`.
    pub fn a0_params(&self, d: usize, sigma: f64) -> Result<A0Params> {
        A0Params::new(d, 2.0 * self.w.max(1.0 - self.w) * self.a, self.gamma, sigma)?.with_refinement(self.w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::{obs_score, IsotropicMixture};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn zeta_q_example_and_monotonicity() {
        let p = A0Params::new(1, 1.0, 1.0, 1.0).unwrap();
        for &t in &[0.1, 1.0, 7.0] {
            assert!((zeta_q(&p, &ScheduleSpec::STANDARD, t).unwrap() + t).abs() < 1e-14);
        }
        let spec = ScheduleSpec::geom(2.0, 1.0).unwrap();
        let mut prev = f64::INFINITY;
        for i in 1..100 {
            let z = zeta_q(&p, &spec, i as f64 / 100.0).unwrap();
            assert!(z < prev);
            prev = z;
        }
        let zero_tau = A0Params::new(3, 1.0, 0.0, 1.0).unwrap();
        assert!(matches!(zeta_q(&zero_tau, &spec, 0.5), Err(Error::Undefined(_))));
        assert!(matches!(zeta_p(&zero_tau, &spec, 0.5), Err(Error::Undefined(_))));
    }

    #[test]
    fn zeta_p_changes_sign_at_t_p() {
        let p = A0Params::new(3, 0.9, 0.5, 1.1).unwrap();
        for spec in [ScheduleSpec::STANDARD, ScheduleSpec::geom(1.0, 1.0).unwrap(), ScheduleSpec::geom(2.0, 1.0).unwrap()] {
            let (t_q, t_p) = t_p_t_q(&p, &spec).unwrap();
            let (mut lo, mut hi) = (1e-9, if spec.t_gen().is_finite() { 1.0 - 1e-12 } else { 1e6 });
            assert!(zeta_p(&p, &spec, lo).unwrap() < 0.0);
            assert!(zeta_p(&p, &spec, hi).unwrap() > 0.0);
            for _ in 0..200 {
                let m = 0.5 * (lo + hi);
                if zeta_p(&p, &spec, m).unwrap() < 0.0 {
                    lo = m
                } else {
                    hi = m
                }
            }
            assert!((lo - t_p).abs() < 1e-9 * t_p.max(1.0));
            assert!(zeta_q(&p, &spec, t_q).unwrap().abs() < 1e-10);
        }
    }

    #[test]
    fn window_examples() {
        let spec = ScheduleSpec::STANDARD;
        let p = A0Params::new(1, 0.5, 1.0, 1.0).unwrap();
        assert_eq!(t_p_t_q(&p, &spec).unwrap(), (0.0, f64::INFINITY));
        let p = A0Params::new(1, 2f64.sqrt(), 1.0, 1.0).unwrap();
        let (t_q, t_p) = t_p_t_q(&p, &spec).unwrap();
        assert!((t_q - 1.0).abs() < 1e-14 && (t_p - 1.0).abs() < 1e-14);
        let p = A0Params::new(1, 3f64.sqrt(), 1.0, 1.0).unwrap();
        let (t_q, t_p) = t_p_t_q(&p, &spec).unwrap();
        assert!((t_p - 0.5).abs() < 1e-14 && (t_q - 2.0).abs() < 1e-14);
    }

    #[test]
    fn duality_examples() {
        assert!(duality_holds(&A0Params::new(1, 1.0, 1.0, 1.0).unwrap()));
        assert!(!duality_holds(&A0Params::new(2, 1.0, 1.0, 1.0).unwrap()));
        let base = A0Params::new(2, 1.0, 1.0, 1.0).unwrap();
        let half = base.with_refinement(0.5).unwrap();
        assert_eq!(half.effective_r(), 1.0);
        assert_eq!(duality_holds(&half), duality_holds(&base));
        // a lopsided mixture shrinks the radius and restores duality
        assert!(duality_holds(&base.with_refinement(0.9).unwrap()));
    }

    #[test]
    fn report_midpoint() {
        let p = A0Params::new(1, 1.2, 1.0, 1.0).unwrap();
        let r = report(&p, &ScheduleSpec::STANDARD).unwrap();
        assert!(r.duality && r.t_q < r.t_p);
        assert!((r.suggested_t0.unwrap() - 0.5 * (r.t_q + r.t_p)).abs() < 1e-15);
        let bad = report(&A0Params::new(4, 1.0, 0.5, 1.0).unwrap(), &ScheduleSpec::STANDARD).unwrap();
        assert!(!bad.duality && bad.suggested_t0.is_none());
    }

    #[test]
    fn stable_cosh_term() {
        assert!((two_over_one_plus_cosh(0.0) - 1.0).abs() < 1e-16);
        assert!((two_over_one_plus_cosh(1.3) - 2.0 / (1.0 + 1.3f64.cosh())).abs() < 1e-15);
        assert!(two_over_one_plus_cosh(800.0) == 0.0);
        assert!(two_over_one_plus_cosh(-800.0).is_finite());
    }

    #[test]
    fn posterior_hessian_limit_and_balance() {
        let m = TwoModeMixture { a: 0.7, gamma: 0.4, w: 0.5 };
        let spec = ScheduleSpec::STANDARD;
        let far = vec![1e4; 3];
        let h = m.hessian(HessianKind::Posterior, &spec, 1.2, 2.0, &far).unwrap();
        let want = -(1.0 / 0.16 + 2.0 / 1.44);
        assert!((h[0][0] - want).abs() < 1e-12 && h[0][1].abs() < 1e-300);
        assert_eq!((1.0f64 / 0.5 - 1.0).ln(), 0.0);
    }

    fn mixture_of(m: &TwoModeMixture, d: usize) -> IsotropicMixture {
        IsotropicMixture::new(vec![m.w, 1.0 - m.w], vec![vec![-m.a; d], vec![m.a; d]], vec![m.gamma; 2]).unwrap()
    }

    fn posterior_grad(mix: &IsotropicMixture, spec: &ScheduleSpec, sigma: f64, t: f64, y: &[f64], x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        mix.log_density_and_grad(x, &mut g);
        let (gt, a) = (spec.g(t).unwrap(), spec.alpha(t).unwrap());
        for i in 0..x.len() {
            g[i] -= gt * gt / (sigma * sigma) * (x[i] - y[i] / a);
        }
        g
    }

    #[test]
    fn hessians_match_finite_differences() {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let spec = ScheduleSpec::geom(1.0, 1.0).unwrap();
        for _ in 0..50 {
            let d = r.random_range(1..5usize);
            let m = TwoModeMixture {
                a: r.random_range(0.2..1.5),
                gamma: r.random_range(0.3..1.0),
                w: r.random_range(0.1..0.9),
            };
            let sigma = r.random_range(0.5..2.0);
            let t = r.random_range(0.05..0.95);
            let y: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
            let x: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
            let mix = mixture_of(&m, d);
            let hm = m.hessian(HessianKind::Marginal, &spec, sigma, t, &y).unwrap();
            let hq = m.hessian(HessianKind::Posterior, &spec, sigma, t, &x).unwrap();
            let h = 1e-5;
            for j in 0..d {
                let mut yp = y.clone();
                let mut ym = y.clone();
                yp[j] += h;
                ym[j] -= h;
                let sp = obs_score(&mix, &spec, sigma, t, &yp).unwrap();
                let sm = obs_score(&mix, &spec, sigma, t, &ym).unwrap();
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                let qp = posterior_grad(&mix, &spec, sigma, t, &y, &xp);
                let qm = posterior_grad(&mix, &spec, sigma, t, &y, &xm);
                for i in 0..d {
                    let fd = (sp[i] - sm[i]) / (2.0 * h);
                    let scale = hm[i][i].abs().max(1.0);
                    assert!((fd - hm[i][j]).abs() <= 1e-5 * scale, "marginal {fd} vs {}", hm[i][j]);
                    let fd = (qp[i] - qm[i]) / (2.0 * h);
                    let scale = hq[i][i].abs().max(1.0);
                    assert!((fd - hq[i][j]).abs() <= 1e-5 * scale, "posterior {fd} vs {}", hq[i][j]);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn bounds_dominate_exact_spectra(d in 1usize..6, a in 0.1f64..1.5, gamma in 0.2f64..1.0, w in 0.05f64..0.95,
                                         sigma in 0.3f64..2.0, t in 0.01f64..0.99, u in -2.0f64..2.0) {
            let m = TwoModeMixture { a, gamma, w };
            let spec = ScheduleSpec::geom(1.0, 1.0).unwrap();
            let p = m.a0_params(d, sigma).unwrap();
            let point = vec![u; d];
            let lp = m.max_eigenvalue(HessianKind::Marginal, &spec, sigma, t, &point).unwrap();
            let lq = m.max_eigenvalue(HessianKind::Posterior, &spec, sigma, t, &point).unwrap();
            let zp = zeta_p(&p, &spec, t).unwrap();
            let zq = zeta_q(&p, &spec, t).unwrap();
            prop_assert!(lp <= zp + 1e-12 * zp.abs().max(1.0));
            prop_assert!(lq <= zq + 1e-12 * zq.abs().max(1.0));
        }

        #[test]
        fn window_order_matches_duality(d in 1usize..50, r in 0.01f64..3.0, tau in 0.01f64..3.0, sigma in 0.1f64..3.0) {
            let p = A0Params::new(d, r, tau, sigma).unwrap();
            let (t_q, t_p) = t_p_t_q(&p, &ScheduleSpec::STANDARD).unwrap();
            prop_assert_eq!(t_q < t_p, duality_holds(&p));
            if d as f64 * r * r > tau * tau {
                prop_assert!(zeta_q(&p, &ScheduleSpec::STANDARD, t_q).unwrap().abs() < 1e-10 * (d as f64 * r * r / tau.powi(4)).max(1.0));
            }
        }
    }
}

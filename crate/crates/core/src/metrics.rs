//! Sample-quality metrics and target-specific estimators.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, fill_standard_normal, Phase};
use crate::targets::{bernoulli_log_lik, LabeledDataset, LogDensity, Phi4};

pub const DEFAULT_PROJECTIONS: usize = 128;
pub const SINKHORN_SIZE_CAP: usize = 4096;

pub use crate::gmm::gaussian_w2;

/// One line of a metrics report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub metric: String,
    pub value: f64,
    pub n: usize,
    pub seed: u64,
    pub config_hash: String,
}

fn check_sets(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<usize> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidConfig("sample sets must be non-empty".into()));
    }
    let d = a[0].len();
    if a.iter().chain(b).any(|x| x.len() != d) {
        return Err(Error::InvalidConfig("sample sets must share one dimension".into()));
    }
    if a.iter().chain(b).flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("sample sets contain non-finite entries".into()));
    }
    Ok(d)
}

/// Unit directions drawn from the projection stream of `seed`.
pub fn projections(d: usize, n_proj: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng::stream(seed, 0, Phase::Projection);
    (0..n_proj)
        .map(|_| loop {
            let mut v = vec![0.0; d];
            fill_standard_normal(&mut r, &mut v);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break v.into_iter().map(|x| x / norm).collect();
            }
        })
        .collect()
}

fn project_sorted(xs: &[Vec<f64>], dir: &[f64]) -> Vec<f64> {
    let mut p: Vec<f64> = xs
        .iter()
        .map(|x| x.iter().zip(dir).map(|(a, b)| a * b).sum())
        .collect();
    p.sort_by(|a, b| a.total_cmp(b));
    p
}

/// Squared 1-D W2 between sorted empirical measures of any sizes, by
/// integrating the squared quantile difference over `[0, 1]`.
pub fn w2_sq_1d(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut u = 0.0;
    let mut total = 0.0;
    while i < n && j < m {
        let next_a = (i + 1) as f64 / n as f64;
        let next_b = (j + 1) as f64 / m as f64;
        let next = next_a.min(next_b);
        total += (next - u) * (a[i] - b[j]).powi(2);
        u = next;
        // advance both on ties so the last cell is not counted twice
        if next_a <= next {
            i += 1;
        }
        if next_b <= next {
            j += 1;
        }
    }
    total
}

/// Max gap between the empirical CDFs of two sorted samples.
pub fn ks_1d(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut best: f64 = 0.0;
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&p), Some(&q)) => p.min(q),
            (Some(&p), None) => p,
            (None, Some(&q)) => q,
            (None, None) => break,
        };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        best = best.max((i as f64 / n - j as f64 / m).abs());
    }
    best
}

/// Root of the mean squared 1-D W2 over random projections.
pub fn sliced_w2(a: &[Vec<f64>], b: &[Vec<f64>], n_proj: usize, seed: u64) -> Result<f64> {
    let d = check_sets(a, b)?;
    let dirs = projections(d, n_proj.max(1), seed);
    let mean = dirs
        .iter()
        .map(|dir| w2_sq_1d(&project_sorted(a, dir), &project_sorted(b, dir)))
        .sum::<f64>()
        / dirs.len() as f64;
    Ok(mean.sqrt())
}

/// Mean over random projections of the 1-D Kolmogorov-Smirnov distance.
pub fn sliced_ks(a: &[Vec<f64>], b: &[Vec<f64>], n_proj: usize, seed: u64) -> Result<f64> {
    let d = check_sets(a, b)?;
    let dirs = projections(d, n_proj.max(1), seed);
    Ok(dirs
        .iter()
        .map(|dir| ks_1d(&project_sorted(a, dir), &project_sorted(b, dir)))
        .sum::<f64>()
        / dirs.len() as f64)
}

/// Entropic optimal transport between uniform empirical measures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropicOt {
    /// `min <P, C> - eps H(P)` with `H(P) = -sum P log P`, evaluated through
    /// the dual so that marginal error enters only at second order.
    pub objective: f64,
    pub transport_cost: f64,
    pub entropy: f64,
    /// L1 marginal violation at exit.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl EntropicOt {
    /// Square root of the objective, clipped at 0.
    pub fn distance(&self) -> f64 {
        self.objective.max(0.0).sqrt()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Log-domain Sinkhorn along a geometric annealing path for the
/// regularisation, finished by damped Newton steps on the dual at `eps`.
/// Converged when the L1 row-marginal error is at most 1e-6.
pub fn entropic_ot(a: &[Vec<f64>], b: &[Vec<f64>], eps: f64) -> Result<EntropicOt> {
    check_sets(a, b)?;
    if !(eps > 0.0) {
        return Err(Error::InvalidConfig(format!("regularisation must be positive, got {eps}")));
    }
    if a.len() > SINKHORN_SIZE_CAP || b.len() > SINKHORN_SIZE_CAP {
        return Err(Error::InvalidConfig(format!(
            "entropic OT is capped at {SINKHORN_SIZE_CAP} points per side"
        )));
    }
    const TOL: f64 = 1e-6;
    const MAX_ITERS: usize = 10_000;
    let (n, m) = (a.len(), b.len());
    let cost: Vec<f64> = a.iter().flat_map(|x| b.iter().map(move |y| sq_dist(x, y))).collect();
    let cost_t: Vec<f64> = (0..m).flat_map(|j| (0..n).map(move |i| (i, j))).map(|(i, j)| cost[i * m + j]).collect();
    let c_max = cost.iter().copied().fold(0.0, f64::max);
    let (log_a, log_b) = (-(n as f64).ln(), -(m as f64).ln());

    let mut stages = vec![eps];
    let mut e = eps;
    while e < c_max {
        e *= 4.0;
        stages.push(e);
    }
    stages.reverse();

    // coarse Sinkhorn passes along the annealing path
    let mut g = vec![0.0; m];
    let mut f = soft_min(&cost, &g, stages[0], log_a);
    let mut iterations = 0;
    for &e in &stages[..stages.len() - 1] {
        for _ in 0..20 {
            g = soft_min(&cost_t, &f, e, log_b);
            let f_next = soft_min(&cost, &g, e, log_a);
            let residual = row_residual(&f, &f_next, e);
            f = f_next;
            iterations += 1;
            if residual <= 1e-2 {
                break;
            }
        }
    }

    // Newton iterations on the dual at the target regularisation, each
    // followed by an exact column projection
    let mut residual: f64;
    let mut plan;
    loop {
        g = soft_min(&cost_t, &f, eps, log_b);
        plan = gibbs_plan(&cost, &f, &g, eps);
        let rows: Vec<f64> = plan.par_chunks(m).map(|r| r.iter().sum()).collect();
        let grad_f: Vec<f64> = rows.iter().map(|r| 1.0 / n as f64 - r).collect();
        residual = grad_f.iter().map(|v| v.abs()).sum();
        if residual <= TOL || iterations >= MAX_ITERS {
            break;
        }
        iterations += 1;
        let cols = vec![1.0 / m as f64; m];
        let (df, dg) = newton_direction(&plan, &rows, &cols, &grad_f, eps, residual.min(0.1));
        let base = dual_value(&f, &g, &plan, eps);
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..30 {
            let cf: Vec<f64> = f.iter().zip(&df).map(|(x, d)| x + t * d).collect();
            let cg: Vec<f64> = g.iter().zip(&dg).map(|(x, d)| x + t * d).collect();
            let cand = dual_value(&cf, &cg, &gibbs_plan(&cost, &cf, &cg, eps), eps);
            if cand.is_finite() && cand >= base {
                f = cf;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            // fall back to a plain Sinkhorn row update
            f = soft_min(&cost, &g, eps, log_a);
        }
    }

    let mut transport_cost = 0.0;
    let mut entropy = 0.0;
    for (p, c) in plan.iter().zip(&cost) {
        if *p > 0.0 {
            transport_cost += p * c;
            entropy -= p * p.ln();
        }
    }
    Ok(EntropicOt {
        objective: dual_value(&f, &g, &plan, eps),
        transport_cost,
        entropy,
        residual,
        iterations,
        converged: residual <= TOL,
    })
}

fn row_residual(f: &[f64], f_next: &[f64], eps: f64) -> f64 {
    f.iter()
        .zip(f_next)
        .map(|(a, b)| ((a - b) / eps).exp_m1().abs())
        .sum::<f64>()
        / f.len() as f64
}

fn gibbs_plan(cost: &[f64], f: &[f64], g: &[f64], eps: f64) -> Vec<f64> {
    let m = g.len();
    let mut plan = vec![0.0; cost.len()];
    plan.par_chunks_mut(m).zip(cost.par_chunks(m)).zip(f.par_iter()).for_each(|((p, c), fi)| {
        for ((pj, cj), gj) in p.iter_mut().zip(c).zip(g) {
            *pj = ((fi + gj - cj) / eps).exp();
        }
    });
    plan
}

/// Dual objective for uniform marginals, given the Gibbs plan of `(f, g)`.
fn dual_value(f: &[f64], g: &[f64], plan: &[f64], eps: f64) -> f64 {
    let mass: f64 = plan.par_iter().sum();
    f.iter().sum::<f64>() / f.len() as f64 + g.iter().sum::<f64>() / g.len() as f64 - eps * (mass - 1.0)
}

/// Newton step for the dual: solves `[[diag(rows), P], [P^T, diag(cols)]] x
/// = eps * (grad_f, 0)` by Jacobi-preconditioned conjugate gradients.
fn newton_direction(plan: &[f64], rows: &[f64], cols: &[f64], grad_f: &[f64], eps: f64, rel_tol: f64) -> (Vec<f64>, Vec<f64>) {
    let (n, m) = (rows.len(), cols.len());
    let apply = |x: &[f64]| -> Vec<f64> {
        let (xf, xg) = x.split_at(n);
        let mut out: Vec<f64> = plan
            .par_chunks(m)
            .zip(xf.par_iter().zip(rows.par_iter()))
            .map(|(p, (xi, ri))| ri * xi + p.iter().zip(xg).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let mut tail: Vec<f64> = cols.iter().zip(xg).map(|(c, x)| c * x).collect();
        for (p, xi) in plan.chunks(m).zip(xf) {
            for (t, pj) in tail.iter_mut().zip(p) {
                *t += pj * xi;
            }
        }
        out.extend(tail);
        out
    };
    let diag: Vec<f64> = rows.iter().chain(cols).map(|v| v.max(1e-300)).collect();
    let rhs: Vec<f64> = grad_f.iter().map(|v| eps * v).chain(std::iter::repeat_n(0.0, m)).collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let rhs_norm = dot(&rhs, &rhs).sqrt();
    let mut x = vec![0.0; n + m];
    let mut r = rhs.clone();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(a, d)| a / d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for _ in 0..500 {
        if dot(&r, &r).sqrt() <= rel_tol * rhs_norm {
            break;
        }
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n + m {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        z = r.iter().zip(&diag).map(|(a, d)| a / d).collect();
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n + m {
            p[i] = z[i] + beta * p[i];
        }
    }
    let dg = x.split_off(n);
    (x, dg)
}

/// `eps * (log_marginal - LSE_j((other_j - C_ij) / eps))` for each row `i`
/// of the row-major matrix `cost`.
fn soft_min(cost: &[f64], other: &[f64], eps: f64, log_marginal: f64) -> Vec<f64> {
    let m = other.len();
    cost.par_chunks(m)
        .map(|row| {
            let mut max = f64::NEG_INFINITY;
            for (o, c) in other.iter().zip(row) {
                max = max.max((o - c) / eps);
            }
            let sum: f64 = other.iter().zip(row).map(|(o, c)| ((o - c) / eps - max).exp()).sum();
            eps * (log_marginal - max - sum.ln())
        })
        .collect()
}

/// `sqrt(max(0, <P, C> - eps H(P)))` at the regularised optimum.
pub fn entropic_w2(a: &[Vec<f64>], b: &[Vec<f64>], eps: f64) -> Result<f64> {
    Ok(entropic_ot(a, b, eps)?.distance())
}

/// Fraction of samples with every coordinate strictly negative.
pub fn mode_weight(samples: &[Vec<f64>]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidConfig("mode weight of an empty sample".into()));
    }
    let hits = samples.iter().filter(|x| x.iter().all(|&v| v < 0.0)).count();
    Ok(hits as f64 / samples.len() as f64)
}

/// Mean of `log p(y | x, theta)` over posterior samples and test points.
pub fn predictive_ll(samples: &[Vec<f64>], test: &LabeledDataset) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidConfig("predictive log-likelihood of an empty sample".into()));
    }
    if samples.iter().any(|s| s.len() != test.p() + 1) {
        return Err(Error::InvalidConfig(format!(
            "samples must have dimension {} for this dataset",
            test.p() + 1
        )));
    }
    let total: f64 = samples
        .iter()
        .map(|theta| {
            test.features
                .iter()
                .zip(&test.labels)
                .map(|(x, &y)| bernoulli_log_lik(theta, x, y))
                .sum::<f64>()
        })
        .sum();
    Ok(total / (samples.len() * test.n()) as f64)
}

/// Solves `T x = rhs` for symmetric tridiagonal `T` (diagonal `diag`,
/// off-diagonal `off`) by the Thomas algorithm.
pub fn solve_tridiagonal(diag: &[f64], off: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut x = vec![0.0; n];
    let mut denom = diag[0];
    if denom == 0.0 {
        return Err(Error::Numeric("singular tridiagonal system".into()));
    }
    c[0] = if n > 1 { off[0] / denom } else { 0.0 };
    x[0] = rhs[0] / denom;
    for i in 1..n {
        denom = diag[i] - off[i - 1] * c[i - 1];
        if denom == 0.0 {
            return Err(Error::Numeric("singular tridiagonal system".into()));
        }
        if i + 1 < n {
            c[i] = off[i] / denom;
        }
        x[i] = (rhs[i] - off[i - 1] * x[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    Ok(x)
}

/// `log det T` for symmetric positive-definite tridiagonal `T`, via the
/// pivots of its LDL^T factorisation; `None` if a pivot is not positive.
pub fn tridiagonal_logdet_spd(diag: &[f64], off: &[f64]) -> Option<f64> {
    let mut pivot = diag[0];
    if !(pivot > 0.0) {
        return None;
    }
    let mut total = pivot.ln();
    for i in 1..diag.len() {
        pivot = diag[i] - off[i - 1] * off[i - 1] / pivot;
        if !(pivot > 0.0) {
            return None;
        }
        total += pivot.ln();
    }
    Some(total)
}

/// Local maximum of `log pi_h` found by Levenberg-damped Newton steps from
/// `start`.
pub fn phi4_mode(model: &Phi4, start: &[f64]) -> Result<Vec<f64>> {
    const MAX_ITERS: usize = 500;
    let d = start.len();
    let mut x = start.to_vec();
    let mut grad = vec![0.0; d];
    let mut lp = model.log_density_and_grad(&x, &mut grad);
    let mut mu = 0.0;
    for _ in 0..MAX_ITERS {
        let gnorm = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gnorm <= 1e-8 {
            return Ok(x);
        }
        let (hd, ho) = model.hessian_tridiagonal(&x);
        // negated Hessian, shifted until positive definite
        let neg_off: Vec<f64> = ho.iter().map(|v| -v).collect();
        let mut accepted = false;
        for _ in 0..60 {
            let diag: Vec<f64> = hd.iter().map(|v| -v + mu).collect();
            if tridiagonal_logdet_spd(&diag, &neg_off).is_none() {
                mu = (mu * 10.0).max(1e-3);
                continue;
            }
            let step = solve_tridiagonal(&diag, &neg_off, &grad)?;
            let cand: Vec<f64> = x.iter().zip(&step).map(|(a, s)| a + s).collect();
            let mut cg = vec![0.0; d];
            let clp = model.log_density_and_grad(&cand, &mut cg);
            if clp.is_finite() && clp >= lp - 1e-12 * lp.abs() {
                x = cand;
                grad = cg;
                lp = clp;
                mu *= 0.1;
                if mu < 1e-12 {
                    mu = 0.0;
                }
                accepted = true;
                break;
            }
            mu = (mu * 10.0).max(1e-3);
        }
        if !accepted {
            break;
        }
    }
    let gnorm = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
    if gnorm <= 1e-8 {
        Ok(x)
    } else {
        Err(Error::Numeric(format!("phi4 mode search stalled with gradient norm {gnorm:e}")))
    }
}

/// Smoothed `sign * 1` profile pinned to 0 at both boundaries.
fn phi4_profile(d: usize, sign: f64) -> Vec<f64> {
    let width = 3.0;
    (1..=d)
        .map(|i| {
            let edge = i.min(d + 1 - i) as f64;
            sign * (edge / width).tanh()
        })
        .collect()
}

/// `(phi_-, phi_+)`.
pub fn phi4_modes(model: &Phi4) -> Result<(Vec<f64>, Vec<f64>)> {
    let minus = phi4_mode(model, &phi4_profile(model.d, -1.0))?;
    let plus = phi4_mode(model, &phi4_profile(model.d, 1.0))?;
    let mid = model.d / 2;
    if !(minus[mid] < 0.0 && plus[mid] > 0.0) {
        // a strong field removes the metastable mode and both searches land
        // on the same maximum
        return Err(Error::Numeric(format!("phi4 at h={} does not have two modes", model.h)));
    }
    Ok((minus, plus))
}

/// Laplace approximation of the mode-weight ratio `w_- / w_+` at order 0 or 2.
pub fn phi4_laplace_ratio(h: f64, order: u8) -> Result<f64> {
    let model = Phi4::new(h);
    phi4_laplace_ratio_for(&model, order)
}

pub fn phi4_laplace_ratio_for(model: &Phi4, order: u8) -> Result<f64> {
    if order != 0 && order != 2 {
        return Err(Error::InvalidConfig(format!("Laplace order must be 0 or 2, got {order}")));
    }
    let (minus, plus) = phi4_modes(model)?;
    let mut log_ratio = model.log_density(&minus) - model.log_density(&plus);
    if order == 2 {
        let logdet = |x: &[f64]| -> Result<f64> {
            let (hd, ho) = model.hessian_tridiagonal(x);
            let diag: Vec<f64> = hd.iter().map(|v| -v).collect();
            let off: Vec<f64> = ho.iter().map(|v| -v).collect();
            tridiagonal_logdet_spd(&diag, &off)
                .ok_or_else(|| Error::Numeric("phi4 mode is not a strict local maximum".into()))
        };
        log_ratio += -0.5 * (logdet(&minus)? - logdet(&plus)?);
    }
    Ok(log_ratio.exp())
}

/// Empirical `w_- / w_+` from the sign of the central site `phi[d / 2]`.
pub fn phi4_mode_ratio(samples: &[Vec<f64>]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidConfig("mode ratio of an empty sample".into()));
    }
    let mid = samples[0].len() / 2;
    let neg = samples.iter().filter(|x| x[mid] < 0.0).count();
    let pos = samples.iter().filter(|x| x[mid] > 0.0).count();
    if pos == 0 {
        return Ok(f64::INFINITY);
    }
    Ok(neg as f64 / pos as f64)
}

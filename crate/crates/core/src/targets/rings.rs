use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{LogDensity, Target, A0};
use crate::gmm::log_sum_exp;
use crate::rng::{self, Phase};

const RADIUS_FLOOR: f64 = 1e-6;
const RING_STD: f64 = 0.15;

/// Four concentric rings at radii 1..=4; the radius follows an equal-weight
/// mixture `N(i + 1, 0.15^2)` and the angle is uniform.
#[derive(Debug, Clone, Default)]
pub struct Rings;

impl Rings {
    pub fn new() -> Self {
        Rings
    }

    /// `(log p_r(r), d/dr log p_r(r))`, unnormalised.
    fn radial(r: f64) -> (f64, f64) {
        let v = RING_STD * RING_STD;
        let terms: Vec<f64> = (1..=4).map(|c| -0.5 * (r - c as f64).powi(2) / v).collect();
        let lse = log_sum_exp(&terms);
        let d = terms
            .iter()
            .enumerate()
            .map(|(i, lt)| (lt - lse).exp() * ((i + 1) as f64 - r) / v)
            .sum();
        (lse, d)
    }
}

impl LogDensity for Rings {
    fn dim(&self) -> usize {
        2
    }

    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let raw = x[0].hypot(x[1]);
        let r = raw.max(RADIUS_FLOOR);
        let (lp, dlp) = Self::radial(r);
        // the polar Jacobian contributes -log r
        let dr = dlp - 1.0 / r;
        if raw > RADIUS_FLOOR {
            grad[0] = dr * x[0] / raw;
            grad[1] = dr * x[1] / raw;
        } else {
            grad[0] = 0.0;
            grad[1] = 0.0;
        }
        lp - r.ln()
    }
}

impl Target for Rings {
    fn name(&self) -> String {
        "rings".into()
    }

    fn a0(&self) -> A0 {
        A0 {
            r: 4.0 / 2f64.sqrt(),
            tau: RING_STD,
        }
    }

    fn sample_exact(&self, n: usize, seed: u64) -> Option<Vec<Vec<f64>>> {
        Some(
            (0..n)
                .map(|i| {
                    let mut g = rng::stream(seed, i as u64, Phase::Exact);
                    let ring = g.random_range(1..=4) as f64;
                    let z: f64 = StandardNormal.sample(&mut g);
                    // radii stay positive: the nearest ring is 6.7 std away from 0
                    let r = (ring + RING_STD * z).abs();
                    let theta = g.random_range(0.0..std::f64::consts::TAU);
                    vec![r * theta.cos(), r * theta.sin()]
                })
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::max_grad_error;
    use rand::SeedableRng;

    #[test]
    fn nearest_ring_dominates() {
        let v = RING_STD * RING_STD;
        let terms: Vec<f64> = (1..=4).map(|c| -0.5 * (1.0 - c as f64).powi(2) / v).collect();
        let lse = log_sum_exp(&terms);
        assert!((terms[0] - lse).abs() < 1e-9);
    }

    #[test]
    fn rotational_symmetry() {
        let t = Rings::new();
        let mut g = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let r: f64 = g.random_range(0.01..5.0);
            assert!((t.log_density(&[r, 0.0]) - t.log_density(&[0.0, r])).abs() < 1e-10);
            let th: f64 = g.random_range(0.0..std::f64::consts::TAU);
            assert!((t.log_density(&[r * th.cos(), r * th.sin()]) - t.log_density(&[r, 0.0])).abs() < 1e-10);
        }
    }

    #[test]
    fn clamped_at_origin() {
        let t = Rings::new();
        let v = t.log_density(&[0.0, 0.0]);
        assert!(v.is_finite());
        assert!(t.grad_log_density(&[0.0, 0.0]).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let t = Rings::new();
        let mut g = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x: Vec<f64> = (0..2).map(|_| t.a0().r * g.sample::<f64, _>(StandardNormal)).collect();
            assert!(max_grad_error(&t, &x) <= 1e-5);
        }
    }

    #[test]
    fn exact_samples_sit_on_rings() {
        let xs = Rings::new().sample_exact(4000, 1).unwrap();
        let mean_r = xs.iter().map(|x| x[0].hypot(x[1])).sum::<f64>() / 4000.0;
        assert!((mean_r - 2.5).abs() < 0.1);
    }
}

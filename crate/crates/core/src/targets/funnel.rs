use rand_distr::{Distribution, StandardNormal};

use super::{LogDensity, Target, A0};
use crate::rng::{self, Phase};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Neal's funnel: `x_1 ~ N(0, 9)`, `x_i | x_1 ~ N(0, e^{x_1})` for the rest.
#[derive(Debug, Clone)]
pub struct Funnel {
    d: usize,
}

impl Default for Funnel {
    fn default() -> Self {
        Self::new()
    }
}

impl Funnel {
    pub fn new() -> Self {
        Funnel { d: 10 }
    }

    pub fn with_dim(d: usize) -> Self {
        assert!(d >= 2, "funnel needs at least two coordinates");
        Funnel { d }
    }
}

impl LogDensity for Funnel {
    fn dim(&self) -> usize {
        self.d
    }

    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let x1 = x[0];
        let k = (self.d - 1) as f64;
        let inv = (-x1).exp();
        let ss: f64 = x[1..].iter().map(|v| v * v).sum();
        let lp = -0.5 * (LN_2PI + 9f64.ln()) - x1 * x1 / 18.0 - 0.5 * k * (LN_2PI + x1) - 0.5 * ss * inv;
        grad[0] = -x1 / 9.0 - 0.5 * k + 0.5 * ss * inv;
        for (g, v) in grad[1..].iter_mut().zip(&x[1..]) {
            *g = -v * inv;
        }
        lp
    }
}

impl Target for Funnel {
    fn name(&self) -> String {
        "funnel".into()
    }

    fn a0(&self) -> A0 {
        A0 { r: 2.12, tau: 0.0 }
    }

    fn sample_exact(&self, n: usize, seed: u64) -> Option<Vec<Vec<f64>>> {
        Some(
            (0..n)
                .map(|i| {
                    let mut g = rng::stream(seed, i as u64, Phase::Exact);
                    let z: f64 = StandardNormal.sample(&mut g);
                    let x1 = 3.0 * z;
                    let s = (0.5 * x1).exp();
                    let mut x = vec![x1];
                    x.extend((1..self.d).map(|_| { let z: f64 = StandardNormal.sample(&mut g); s * z }));
                    x
                })
                .collect(),
        )
    }
}

use std::f64::consts::PI;

use super::{LogDensity, Target, A0};
use crate::gmm::IsotropicMixture;

/// Isotropic mixture exposed as a benchmark target.
#[derive(Debug, Clone)]
pub struct MixtureTarget {
    pub mixture: IsotropicMixture,
    pub a0: A0,
    pub label: String,
    pub mode_weight: Option<f64>,
}

impl LogDensity for MixtureTarget {
    fn dim(&self) -> usize {
        self.mixture.dim()
    }

    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.mixture.log_density_and_grad(x, grad)
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        self.mixture.log_density(x)
    }
}

impl Target for MixtureTarget {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn a0(&self) -> A0 {
        self.a0
    }

    fn sample_exact(&self, n: usize, seed: u64) -> Option<Vec<Vec<f64>>> {
        Some(self.mixture.sample_exact(n, seed))
    }

    fn known_mode_weight(&self) -> Option<f64> {
        self.mode_weight
    }

    fn mean(&self) -> Option<Vec<f64>> {
        Some(self.mixture.mean())
    }
}

/// Bimodal mixture `2/3 N(-2/3 1, 0.05 I) + 1/3 N(4/3 1, 0.05 I)`.
pub fn benchmark_gmm(d: usize) -> MixtureTarget {
    let gamma = 0.05f64.sqrt();
    let mixture = IsotropicMixture::new(
        vec![2.0 / 3.0, 1.0 / 3.0],
        vec![vec![-2.0 / 3.0; d], vec![4.0 / 3.0; d]],
        vec![gamma, gamma],
    )
    .expect("valid mixture");
    MixtureTarget {
        mixture,
        a0: A0 {
            r: 4.0 / 3.0,
            tau: gamma,
        },
        label: format!("gmm:{d}"),
        mode_weight: Some(2.0 / 3.0),
    }
}

/// Eight equally weighted Gaussians on a circle of radius 10.
pub fn eight_gaussians() -> MixtureTarget {
    let means = (0..8)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / 8.0;
            vec![10.0 * a.cos(), 10.0 * a.sin()]
        })
        .collect();
    let gamma = 0.7f64.sqrt();
    let mixture = IsotropicMixture::new(vec![0.125; 8], means, vec![gamma; 8]).expect("valid mixture");
    MixtureTarget {
        mixture,
        a0: A0 {
            r: 10.0 / 2f64.sqrt(),
            tau: gamma,
        },
        label: "8gauss".into(),
        mode_weight: None,
    }
}

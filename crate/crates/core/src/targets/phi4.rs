use super::{LogDensity, Target, A0};

/// One-dimensional phi^4 field with Dirichlet boundaries.
///
/// `log pi(phi) = -beta [ (a d / 2) sum (phi_i - phi_{i-1})^2
///                      + 1/(4 a d) sum (1 - phi_i^2)^2 + h sum phi_i ]`
/// with `phi_0 = phi_{d+1} = 0`.
#[derive(Debug, Clone)]
pub struct Phi4 {
    pub d: usize,
    pub a: f64,
    pub beta: f64,
    pub h: f64,
}

impl Phi4 {
    pub fn new(h: f64) -> Self {
        Phi4 {
            d: 100,
            a: 0.1,
            beta: 20.0,
            h,
        }
    }

    fn coupling(&self) -> f64 {
        self.a * self.d as f64
    }

    /// Diagonal and off-diagonal of the Hessian of `log pi`.
    pub fn hessian_tridiagonal(&self, phi: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let ad = self.coupling();
        let diag = phi
            .iter()
            .map(|p| -self.beta * (2.0 * ad + (3.0 * p * p - 1.0) / ad))
            .collect();
        let off = vec![self.beta * ad; phi.len().saturating_sub(1)];
        (diag, off)
    }
}

impl LogDensity for Phi4 {
    fn dim(&self) -> usize {
        self.d
    }

    fn log_density_and_grad(&self, phi: &[f64], grad: &mut [f64]) -> f64 {
        let ad = self.coupling();
        let n = phi.len();
        let at = |i: isize| -> f64 {
            if i < 0 || i as usize >= n {
                0.0
            } else {
                phi[i as usize]
            }
        };
        let mut kinetic = 0.0;
        for i in 0..=n as isize {
            let diff = at(i) - at(i - 1);
            kinetic += diff * diff;
        }
        let mut potential = 0.0;
        let mut field = 0.0;
        for (i, &p) in phi.iter().enumerate() {
            let q = 1.0 - p * p;
            potential += q * q;
            field += p;
            let lap = 2.0 * p - at(i as isize - 1) - at(i as isize + 1);
            grad[i] = -self.beta * (ad * lap - p * q / ad + self.h);
        }
        -self.beta * (0.5 * ad * kinetic + potential / (4.0 * ad) + self.h * field)
    }
}

impl Target for Phi4 {
    fn name(&self) -> String {
        format!("phi4:{}", self.h)
    }

    fn a0(&self) -> A0 {
        A0 { r: 4.5, tau: 1e-2 }
    }
}

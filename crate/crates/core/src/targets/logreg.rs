use super::{LabeledDataset, LogDensity, Target, A0};
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const BIAS_SCALE: f64 = 2.5;

/// Posterior over `(w, b)` for Bernoulli observations with
/// `P(y = 1 | x) = sigmoid(w.x + b)`, prior `N(0, I)` on `w`, `N(0, 2.5^2)` on `b`.
#[derive(Debug, Clone)]
pub struct BayesianLogReg {
    pub data: LabeledDataset,
    pub label: String,
}

/// `log(1 + e^z)` without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log p(y | x, theta)` with `theta = (w, b)`.
pub fn bernoulli_log_lik(theta: &[f64], x: &[f64], y: u8) -> f64 {
    let (w, b) = theta.split_at(theta.len() - 1);
    let z = w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>() + b[0];
    if y == 1 {
        -softplus(-z)
    } else {
        -softplus(z)
    }
}

impl BayesianLogReg {
    pub fn new(data: LabeledDataset) -> Result<Self> {
        if data.n() == 0 {
            return Err(Error::InvalidConfig("empty dataset".into()));
        }
        Ok(BayesianLogReg {
            data,
            label: "logreg".into(),
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }
}

impl LogDensity for BayesianLogReg {
    fn dim(&self) -> usize {
        self.data.p() + 1
    }

    fn log_density_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let p = self.data.p();
        let (w, b) = (&theta[..p], theta[p]);
        let mut lp = -0.5 * p as f64 * LN_2PI - 0.5 * w.iter().map(|v| v * v).sum::<f64>();
        lp += -0.5 * LN_2PI - BIAS_SCALE.ln() - 0.5 * b * b / (BIAS_SCALE * BIAS_SCALE);
        for (g, wi) in grad[..p].iter_mut().zip(w) {
            *g = -wi;
        }
        grad[p] = -b / (BIAS_SCALE * BIAS_SCALE);
        for (x, &y) in self.data.features.iter().zip(&self.data.labels) {
            let z = w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>() + b;
            lp += if y == 1 { -softplus(-z) } else { -softplus(z) };
            let resid = y as f64 - sigmoid(z);
            for (g, xi) in grad[..p].iter_mut().zip(x) {
                *g += resid * xi;
            }
            grad[p] += resid;
        }
        lp
    }
}

impl Target for BayesianLogReg {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn a0(&self) -> A0 {
        A0 {
            r: BIAS_SCALE / (self.dim() as f64).sqrt(),
            tau: 0.0,
        }
    }
}

//! Log densities used by the priors, with their derivatives.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use std::f64::consts::PI;

/// Normal distribution parametrised by mean and standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalPrior {
    pub mean: f64,
    pub sd: f64,
}

impl NormalPrior {
    pub fn new(mean: f64, sd: f64) -> Self {
        Self { mean, sd }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        normal_ln_pdf(x, self.mean, self.sd)
    }

    /// d/dx of [`ln_pdf`](Self::ln_pdf).
    pub fn d_ln_pdf(&self, x: f64) -> f64 {
        -(x - self.mean) / (self.sd * self.sd)
    }
}

/// Gamma distribution parametrised by shape and rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPrior {
    pub fn new(shape: f64, rate: f64) -> Self {
        Self { shape, rate }
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        self.shape * self.rate.ln() - ln_gamma(self.shape) + (self.shape - 1.0) * x.ln()
            - self.rate * x
    }

    /// Log density of `y = log x` (includes the Jacobian `x`) and its
    /// derivative with respect to `y`.
    pub fn ln_pdf_log_scale(&self, log_x: f64) -> (f64, f64) {
        let x = log_x.exp();
        let value =
            self.shape * self.rate.ln() - ln_gamma(self.shape) + self.shape * log_x - self.rate * x;
        (value, self.shape - self.rate * x)
    }
}

pub fn normal_ln_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - 0.5 * (2.0 * PI).ln()
}

/// Logistic log density with location `loc` and scale `scale`.
pub fn logistic_ln_pdf(x: f64, loc: f64, scale: f64) -> f64 {
    let z = (x - loc) / scale;
    // -z - 2 log(1 + e^{-z}), written to avoid overflow for large |z|.
    -z.abs() - 2.0 * (-z.abs()).exp().ln_1p() - scale.ln()
}

/// d/dx of [`logistic_ln_pdf`]; the derivative in `loc` is its negative.
pub fn logistic_d_ln_pdf(x: f64, loc: f64, scale: f64) -> f64 {
    let z = (x - loc) / scale;
    -(0.5 * z).tanh() / scale
}

//! Bayesian M-spline hazard model.
//!
//! ```text
//! h(t | x) = eta(x) * sum_i p_i(x) b_i(t)
//! eta(x)   = exp(log_eta + beta' x)
//! log(p_i / p_1) = gamma_i(x) = mu_i + delta_i' x + sigma * eps_i,   gamma_1 = 0
//! ```
//!
//! `b_i` is the M-spline basis scaled by the boundary span `U - L`, so the
//! calibrated constant coefficients give `h(t) = eta` exactly and `eta` reads
//! as a typical hazard rate.
//!
//! Sampling happens on an unconstrained vector laid out as
//!
//! ```text
//! [log_eta, beta_1..beta_S, log_sigma, eps_2..eps_n,
//!  delta_{2,1}..delta_{n,1}, ..., delta_{2,S}..delta_{n,S}, log_tau_1..log_tau_S]
//! ```
//!
//! where `beta` is present whenever covariates are modelled and `delta`,
//! `log_tau` only in non-proportional-hazards mode. Priors on `sigma` and
//! `tau` include the Jacobian of the log transform.

use crate::basis::{quantile_sorted, BasisError, MSplineBasis, SplineConfig};
use crate::data::SurvivalDataset;
use crate::dist::{logistic_d_ln_pdf, logistic_ln_pdf, GammaPrior, NormalPrior};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error("dimension mismatch: {what} expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("time must be non-negative, got {0}")]
    NegativeTime(f64),
    #[error("non-positive observation time {time} in row {row}")]
    NonPositiveTime { row: usize, time: f64 },
    #[error("non-finite log posterior; offending parameter index {index} ({name})")]
    NonFinite { index: usize, name: String },
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CoefPrior {
    #[default]
    RandomWalk,
    Exchangeable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CovariateMode {
    #[default]
    None,
    ProportionalHazards,
    NonProportionalHazards,
}

/// Full model definition: basis, priors and covariate handling.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub coef_prior: CoefPrior,
    pub covariate_mode: CovariateMode,
    pub covariate_names: Vec<String>,
    pub prior_log_eta: NormalPrior,
    pub prior_sigma: GammaPrior,
    pub prior_beta: NormalPrior,
    pub prior_tau: GammaPrior,
    basis: MSplineBasis,
    /// `mu_i = log(p*_i / p*_1)`, so `mu[0] == 0`.
    mu: Vec<f64>,
    rw_weights: Vec<f64>,
}

impl ModelSpec {
    /// Builds a spec with the default priors: `log eta ~ N(0, 20)`,
    /// `sigma ~ Gamma(2, 1)`, `beta ~ N(0, 20)`, `tau ~ Gamma(2, 1)`.
    pub fn new(
        spline: SplineConfig,
        coef_prior: CoefPrior,
        covariate_mode: CovariateMode,
        covariate_names: Vec<String>,
    ) -> Result<Self, ModelError> {
        let basis = MSplineBasis::new(spline)?;
        let p = basis.constant_coefs()?;
        let mu = p.iter().map(|pi| (pi / p[0]).ln()).collect();
        let rw_weights = basis.random_walk_weights();
        let covariate_names = match covariate_mode {
            CovariateMode::None => Vec::new(),
            _ => covariate_names,
        };
        Ok(Self {
            coef_prior,
            covariate_mode,
            covariate_names,
            prior_log_eta: NormalPrior::new(0.0, 20.0),
            prior_sigma: GammaPrior::new(2.0, 1.0),
            prior_beta: NormalPrior::new(0.0, 20.0),
            prior_tau: GammaPrior::new(2.0, 1.0),
            basis,
            mu,
            rw_weights,
        })
    }

    pub fn with_sigma_prior(mut self, prior: GammaPrior) -> Self {
        self.prior_sigma = prior;
        self
    }

    pub fn with_tau_prior(mut self, prior: GammaPrior) -> Self {
        self.prior_tau = prior;
        self
    }

    pub fn with_log_eta_prior(mut self, prior: NormalPrior) -> Self {
        self.prior_log_eta = prior;
        self
    }

    pub fn with_beta_prior(mut self, prior: NormalPrior) -> Self {
        self.prior_beta = prior;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let gammas = [("sigma", self.prior_sigma), ("tau", self.prior_tau)];
        for (name, g) in gammas {
            if !(g.shape > 0.0 && g.rate > 0.0) {
                return Err(ModelError::InvalidPrior(format!(
                    "{name} prior needs positive shape and rate"
                )));
            }
        }
        for (name, n) in [("log_eta", self.prior_log_eta), ("beta", self.prior_beta)] {
            if !(n.sd > 0.0) {
                return Err(ModelError::InvalidPrior(format!(
                    "{name} prior needs sd > 0"
                )));
            }
        }
        Ok(())
    }

    pub fn basis(&self) -> &MSplineBasis {
        &self.basis
    }

    pub fn spline(&self) -> &SplineConfig {
        self.basis.config()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn random_walk_weights(&self) -> &[f64] {
        &self.rw_weights
    }

    /// Number of basis terms `n`.
    pub fn n_basis(&self) -> usize {
        self.basis.len()
    }

    /// Number of modelled covariates (zero when covariates are ignored).
    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn has_delta(&self) -> bool {
        self.covariate_mode == CovariateMode::NonProportionalHazards
    }

    /// Factor turning the unit-integral M-spline into the hazard basis.
    pub fn hazard_scale(&self) -> f64 {
        self.basis.config().span()
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout {
            n_basis: self.n_basis(),
            n_cov: self.n_covariates(),
            non_ph: self.has_delta(),
        }
    }

    /// Hazard-scale basis values `b_i(t)`.
    pub fn hazard_basis_into(&self, t: f64, out: &mut [f64]) {
        self.basis.mspline_into(t, out);
        let s = self.hazard_scale();
        out.iter_mut().for_each(|v| *v *= s);
    }

    /// Hazard-scale integrated basis `int_0^t b_i`.
    pub fn cumhaz_basis_into(&self, t: f64, out: &mut [f64]) {
        self.basis.ispline_into(t, out);
        let s = self.hazard_scale();
        out.iter_mut().for_each(|v| *v *= s);
    }
}

/// Positions of each parameter block in the unconstrained vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub n_basis: usize,
    pub n_cov: usize,
    pub non_ph: bool,
}

impl ParamLayout {
    pub fn log_eta(&self) -> usize {
        0
    }
    pub fn beta(&self) -> std::ops::Range<usize> {
        1..1 + self.n_cov
    }
    pub fn log_sigma(&self) -> usize {
        1 + self.n_cov
    }
    pub fn eps(&self) -> std::ops::Range<usize> {
        let s = self.log_sigma() + 1;
        s..s + self.n_basis - 1
    }
    /// Index of `delta_{i,s}` for basis term `i >= 1` (0-based) and covariate `s`.
    pub fn delta(&self, i: usize, s: usize) -> usize {
        debug_assert!(self.non_ph && i >= 1);
        self.eps().end + s * (self.n_basis - 1) + (i - 1)
    }
    pub fn log_tau(&self) -> std::ops::Range<usize> {
        let s = self.eps().end
            + if self.non_ph {
                self.n_cov * (self.n_basis - 1)
            } else {
                0
            };
        s..s + if self.non_ph { self.n_cov } else { 0 }
    }
    pub fn dim(&self) -> usize {
        self.log_tau().end
    }
}

/// Model parameters in their natural blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub log_eta: f64,
    pub beta: Vec<f64>,
    pub log_sigma: f64,
    /// `eps_2..eps_n`; `eps_1` is fixed at zero.
    pub eps: Vec<f64>,
    /// `delta[s][i - 1]` for `i = 2..n`; `delta_{1,s}` is fixed at zero.
    pub delta: Vec<Vec<f64>>,
    pub log_tau: Vec<f64>,
}

impl ParamVector {
    /// The prior-mean point: `eps = 0`, `delta = 0`, scale parameters at
    /// their prior means.
    pub fn prior_mean(spec: &ModelSpec) -> Self {
        let l = spec.layout();
        Self {
            log_eta: spec.prior_log_eta.mean,
            beta: vec![spec.prior_beta.mean; l.n_cov],
            log_sigma: spec.prior_sigma.mean().ln(),
            eps: vec![0.0; l.n_basis - 1],
            delta: if l.non_ph {
                vec![vec![0.0; l.n_basis - 1]; l.n_cov]
            } else {
                Vec::new()
            },
            log_tau: if l.non_ph {
                vec![spec.prior_tau.mean().ln(); l.n_cov]
            } else {
                Vec::new()
            },
        }
    }

    pub fn from_unconstrained(layout: ParamLayout, theta: &[f64]) -> Result<Self, ModelError> {
        if theta.len() != layout.dim() {
            return Err(ModelError::Dimension {
                what: "parameter vector",
                expected: layout.dim(),
                got: theta.len(),
            });
        }
        let n1 = layout.n_basis - 1;
        Ok(Self {
            log_eta: theta[layout.log_eta()],
            beta: theta[layout.beta()].to_vec(),
            log_sigma: theta[layout.log_sigma()],
            eps: theta[layout.eps()].to_vec(),
            delta: if layout.non_ph {
                (0..layout.n_cov)
                    .map(|s| {
                        let start = layout.delta(1, s);
                        theta[start..start + n1].to_vec()
                    })
                    .collect()
            } else {
                Vec::new()
            },
            log_tau: theta[layout.log_tau()].to_vec(),
        })
    }

    pub fn to_unconstrained(&self) -> Vec<f64> {
        let mut out = vec![self.log_eta];
        out.extend_from_slice(&self.beta);
        out.push(self.log_sigma);
        out.extend_from_slice(&self.eps);
        for d in &self.delta {
            out.extend_from_slice(d);
        }
        out.extend_from_slice(&self.log_tau);
        out
    }

    pub fn sigma(&self) -> f64 {
        self.log_sigma.exp()
    }

    fn check(&self, spec: &ModelSpec) -> Result<(), ModelError> {
        let l = spec.layout();
        let checks = [
            ("beta", l.n_cov, self.beta.len()),
            ("eps", l.n_basis - 1, self.eps.len()),
            (
                "delta",
                if l.non_ph { l.n_cov } else { 0 },
                self.delta.len(),
            ),
            (
                "log_tau",
                if l.non_ph { l.n_cov } else { 0 },
                self.log_tau.len(),
            ),
        ];
        for (what, expected, got) in checks {
            if expected != got {
                return Err(ModelError::Dimension {
                    what,
                    expected,
                    got,
                });
            }
        }
        if let Some(d) = self.delta.iter().find(|d| d.len() != l.n_basis - 1) {
            return Err(ModelError::Dimension {
                what: "delta row",
                expected: l.n_basis - 1,
                got: d.len(),
            });
        }
        Ok(())
    }
}

/// Human-readable names for every entry of the unconstrained vector.
pub fn parameter_names(spec: &ModelSpec) -> Vec<String> {
    let l = spec.layout();
    let mut names = vec!["log_eta".to_string()];
    names.extend(spec.covariate_names.iter().map(|c| format!("beta[{c}]")));
    names.push("log_sigma".into());
    names.extend((2..=l.n_basis).map(|i| format!("eps[{i}]")));
    if l.non_ph {
        for c in &spec.covariate_names {
            names.extend((2..=l.n_basis).map(|i| format!("delta[{i},{c}]")));
        }
        names.extend(spec.covariate_names.iter().map(|c| format!("log_tau[{c}]")));
    }
    names
}

fn check_covariates(spec: &ModelSpec, x: &[f64]) -> Result<(), ModelError> {
    if x.len() != spec.n_covariates() {
        return Err(ModelError::Dimension {
            what: "covariate vector",
            expected: spec.n_covariates(),
            got: x.len(),
        });
    }
    Ok(())
}

/// Softmax of `gamma` into `out`.
fn softmax_into(gamma: &[f64], out: &mut [f64]) {
    let max = gamma.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, g) in out.iter_mut().zip(gamma) {
        *o = (g - max).exp();
        z += *o;
    }
    out.iter_mut().for_each(|o| *o /= z);
}

/// `gamma_i(x) = mu_i + delta_i' x + sigma eps_i` with `gamma_1 = 0`.
fn gamma_into(params: &ParamVector, spec: &ModelSpec, x: &[f64], out: &mut [f64]) {
    let sigma = params.sigma();
    out[0] = 0.0;
    for (i, o) in out.iter_mut().enumerate().skip(1) {
        let mut g = spec.mu[i] + sigma * params.eps[i - 1];
        for (s, xs) in x.iter().enumerate().take(params.delta.len()) {
            g += params.delta[s][i - 1] * xs;
        }
        *o = g;
    }
}

/// Spline coefficients `p(x)` on the simplex.
pub fn coefficients(
    params: &ParamVector,
    spec: &ModelSpec,
    x: &[f64],
) -> Result<Vec<f64>, ModelError> {
    params.check(spec)?;
    check_covariates(spec, x)?;
    let n = spec.n_basis();
    let mut gamma = vec![0.0; n];
    gamma_into(params, spec, x, &mut gamma);
    let mut p = vec![0.0; n];
    softmax_into(&gamma, &mut p);
    Ok(p)
}

/// Scale `eta(x) = exp(log_eta + beta' x)`.
pub fn scale(params: &ParamVector, x: &[f64]) -> f64 {
    (params.log_eta + params.beta.iter().zip(x).map(|(b, x)| b * x).sum::<f64>()).exp()
}

pub fn hazard(
    params: &ParamVector,
    spec: &ModelSpec,
    x: &[f64],
    t: f64,
) -> Result<f64, ModelError> {
    if t < 0.0 {
        return Err(ModelError::NegativeTime(t));
    }
    let p = coefficients(params, spec, x)?;
    let mut b = vec![0.0; p.len()];
    spec.hazard_basis_into(t, &mut b);
    Ok(scale(params, x) * dot(&p, &b))
}

pub fn cumhaz(
    params: &ParamVector,
    spec: &ModelSpec,
    x: &[f64],
    t: f64,
) -> Result<f64, ModelError> {
    if t < 0.0 {
        return Err(ModelError::NegativeTime(t));
    }
    let p = coefficients(params, spec, x)?;
    let mut ib = vec![0.0; p.len()];
    spec.cumhaz_basis_into(t, &mut ib);
    Ok(scale(params, x) * dot(&p, &ib))
}

pub fn survival(
    params: &ParamVector,
    spec: &ModelSpec,
    x: &[f64],
    t: f64,
) -> Result<f64, ModelError> {
    Ok((-cumhaz(params, spec, x, t)?).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Sum of the prior log densities on the unconstrained scale.
pub fn log_prior(params: &ParamVector, spec: &ModelSpec) -> Result<f64, ModelError> {
    params.check(spec)?;
    let mut lp = spec.prior_log_eta.ln_pdf(params.log_eta);
    lp += params
        .beta
        .iter()
        .map(|&b| spec.prior_beta.ln_pdf(b))
        .sum::<f64>();
    lp += spec.prior_sigma.ln_pdf_log_scale(params.log_sigma).0;
    lp += eps_log_prior(&params.eps, spec);
    for (d, &lt) in params.delta.iter().zip(&params.log_tau) {
        let tau = lt.exp();
        lp += d
            .iter()
            .map(|&v| crate::dist::normal_ln_pdf(v, 0.0, tau))
            .sum::<f64>();
        lp += spec.prior_tau.ln_pdf_log_scale(lt).0;
    }
    Ok(lp)
}

fn eps_log_prior(eps: &[f64], spec: &ModelSpec) -> f64 {
    match spec.coef_prior {
        CoefPrior::Exchangeable => eps.iter().map(|&e| logistic_ln_pdf(e, 0.0, 1.0)).sum(),
        CoefPrior::RandomWalk => {
            let mut prev = 0.0;
            let mut lp = 0.0;
            for (k, &e) in eps.iter().enumerate() {
                lp += logistic_ln_pdf(e, prev, spec.rw_weights[k + 1]);
                prev = e;
            }
            lp
        }
    }
}

/// `sum_rows [event * log h(t, x) - H(t, x)]`, evaluated directly.
pub fn log_likelihood(
    params: &ParamVector,
    spec: &ModelSpec,
    data: &SurvivalDataset,
) -> Result<f64, ModelError> {
    let mut ll = 0.0;
    for (row, (t, event, x)) in data.rows().enumerate() {
        if t <= 0.0 {
            return Err(ModelError::NonPositiveTime {
                row: row + 1,
                time: t,
            });
        }
        let x = &x[..spec.n_covariates()];
        if event {
            ll += hazard(params, spec, x, t)?.ln();
        }
        ll -= cumhaz(params, spec, x, t)?;
    }
    Ok(ll)
}

/// Log posterior and its gradient with respect to the unconstrained vector.
pub fn log_posterior_and_gradient(
    params: &ParamVector,
    spec: &ModelSpec,
    data: &SurvivalDataset,
) -> Result<(f64, Vec<f64>), ModelError> {
    params.check(spec)?;
    let post = Posterior::new(spec.clone(), data)?;
    let theta = params.to_unconstrained();
    let mut grad = vec![0.0; theta.len()];
    let lp = post.log_density_and_gradient(&theta, &mut grad)?;
    Ok((lp, grad))
}

/// A differentiable log density on `R^d`.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Returns the log density at `theta` and writes its gradient to `grad`.
    fn log_density_and_gradient(&self, theta: &[f64], grad: &mut [f64]) -> Result<f64, ModelError>;
}

/// Rows sharing one covariate vector, with parameter-free sums cached.
#[derive(Debug, Clone)]
struct CovariateGroup {
    x: Vec<f64>,
    n_events: f64,
    /// Hazard-scale basis at each event time, row-major (`n_events * n`).
    event_basis: Vec<f64>,
    /// `sum_rows int_0^t b_i`.
    cumhaz_basis_sum: Vec<f64>,
}

/// Posterior of a [`ModelSpec`] given a dataset, with the basis evaluated
/// once at every observed time.
#[derive(Debug, Clone)]
pub struct Posterior {
    spec: ModelSpec,
    layout: ParamLayout,
    groups: Vec<CovariateGroup>,
    names: Vec<String>,
}

impl Posterior {
    pub fn new(spec: ModelSpec, data: &SurvivalDataset) -> Result<Self, ModelError> {
        spec.validate()?;
        let p = spec.n_covariates();
        if data.n_covariates() < p {
            return Err(ModelError::Dimension {
                what: "dataset covariates",
                expected: p,
                got: data.n_covariates(),
            });
        }
        let n = spec.n_basis();
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut groups: Vec<CovariateGroup> = Vec::new();
        let mut b = vec![0.0; n];
        for (row, (t, event, x)) in data.rows().enumerate() {
            if t <= 0.0 {
                return Err(ModelError::NonPositiveTime {
                    row: row + 1,
                    time: t,
                });
            }
            let x = &x[..p];
            let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
            let g = *index.entry(key).or_insert_with(|| {
                groups.push(CovariateGroup {
                    x: x.to_vec(),
                    n_events: 0.0,
                    event_basis: Vec::new(),
                    cumhaz_basis_sum: vec![0.0; n],
                });
                groups.len() - 1
            });
            let group = &mut groups[g];
            spec.cumhaz_basis_into(t, &mut b);
            group
                .cumhaz_basis_sum
                .iter_mut()
                .zip(&b)
                .for_each(|(s, v)| *s += v);
            if event {
                spec.hazard_basis_into(t, &mut b);
                group.event_basis.extend_from_slice(&b);
                group.n_events += 1.0;
            }
        }
        let names = parameter_names(&spec);
        Ok(Self {
            layout: spec.layout(),
            spec,
            groups,
            names,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layout(&self) -> ParamLayout {
        self.layout
    }

    pub fn parameter_names(&self) -> &[String] {
        &self.names
    }

    fn non_finite(&self, theta: &[f64], grad: &[f64]) -> ModelError {
        let index = theta
            .iter()
            .position(|v| !v.is_finite())
            .or_else(|| grad.iter().position(|v| !v.is_finite()))
            .or_else(|| {
                // Largest-magnitude entry is the usual culprit for overflow.
                theta
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
                    .map(|(i, _)| i)
            })
            .unwrap_or(0);
        ModelError::NonFinite {
            index,
            name: self.names.get(index).cloned().unwrap_or_default(),
        }
    }
}

impl LogDensity for Posterior {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn log_density_and_gradient(&self, theta: &[f64], grad: &mut [f64]) -> Result<f64, ModelError> {
        let l = self.layout;
        let spec = &self.spec;
        if theta.len() != l.dim() || grad.len() != l.dim() {
            return Err(ModelError::Dimension {
                what: "parameter vector",
                expected: l.dim(),
                got: theta.len(),
            });
        }
        grad.fill(0.0);
        let n = l.n_basis;
        let log_eta = theta[l.log_eta()];
        let beta = &theta[l.beta()];
        let log_sigma = theta[l.log_sigma()];
        let sigma = log_sigma.exp();
        let eps = &theta[l.eps()];

        // Priors.
        let mut lp = spec.prior_log_eta.ln_pdf(log_eta);
        grad[l.log_eta()] += spec.prior_log_eta.d_ln_pdf(log_eta);
        for (k, &b) in beta.iter().enumerate() {
            lp += spec.prior_beta.ln_pdf(b);
            grad[l.beta().start + k] += spec.prior_beta.d_ln_pdf(b);
        }
        let (v, d) = spec.prior_sigma.ln_pdf_log_scale(log_sigma);
        lp += v;
        grad[l.log_sigma()] += d;
        let e0 = l.eps().start;
        match spec.coef_prior {
            CoefPrior::Exchangeable => {
                for (k, &e) in eps.iter().enumerate() {
                    lp += logistic_ln_pdf(e, 0.0, 1.0);
                    grad[e0 + k] += logistic_d_ln_pdf(e, 0.0, 1.0);
                }
            }
            CoefPrior::RandomWalk => {
                let mut prev = 0.0;
                for (k, &e) in eps.iter().enumerate() {
                    let w = spec.rw_weights[k + 1];
                    lp += logistic_ln_pdf(e, prev, w);
                    let d = logistic_d_ln_pdf(e, prev, w);
                    grad[e0 + k] += d;
                    if k > 0 {
                        grad[e0 + k - 1] -= d;
                    }
                    prev = e;
                }
            }
        }
        if l.non_ph {
            for s in 0..l.n_cov {
                let lt_idx = l.log_tau().start + s;
                let log_tau = theta[lt_idx];
                let tau = log_tau.exp();
                let (v, d) = spec.prior_tau.ln_pdf_log_scale(log_tau);
                lp += v;
                grad[lt_idx] += d;
                for i in 1..n {
                    let idx = l.delta(i, s);
                    let z = theta[idx] / tau;
                    lp += -0.5 * z * z - log_tau - 0.5 * (2.0 * std::f64::consts::PI).ln();
                    grad[idx] -= z / tau;
                    grad[lt_idx] += z * z - 1.0;
                }
            }
        }

        // Likelihood, one covariate pattern at a time.
        let mut gamma = vec![0.0; n];
        let mut p = vec![0.0; n];
        let mut acc = vec![0.0; n];
        let mut dgamma = vec![0.0; n];
        for group in &self.groups {
            let x = &group.x;
            gamma[0] = 0.0;
            for i in 1..n {
                let mut g = spec.mu[i] + sigma * eps[i - 1];
                if l.non_ph {
                    for (s, xs) in x.iter().enumerate() {
                        g += theta[l.delta(i, s)] * xs;
                    }
                }
                gamma[i] = g;
            }
            softmax_into(&gamma, &mut p);
            let lin = log_eta + beta.iter().zip(x).map(|(b, x)| b * x).sum::<f64>();
            let eta = lin.exp();

            acc.fill(0.0);
            let mut log_sum = 0.0;
            for row in group.event_basis.chunks_exact(n) {
                let bt = dot(&p, row);
                log_sum += bt.ln();
                let inv = 1.0 / bt;
                acc.iter_mut().zip(row).for_each(|(a, b)| *a += b * inv);
            }
            let it = dot(&p, &group.cumhaz_basis_sum);
            lp += group.n_events * lin + log_sum - eta * it;

            let d_lin = group.n_events - eta * it;
            grad[l.log_eta()] += d_lin;
            for (k, xs) in x.iter().enumerate() {
                grad[l.beta().start + k] += xs * d_lin;
            }
            for j in 0..n {
                dgamma[j] = p[j] * (acc[j] - group.n_events)
                    - eta * p[j] * (group.cumhaz_basis_sum[j] - it);
            }
            for i in 1..n {
                grad[e0 + i - 1] += sigma * dgamma[i];
                grad[l.log_sigma()] += sigma * eps[i - 1] * dgamma[i];
                if l.non_ph {
                    for (s, xs) in x.iter().enumerate() {
                        grad[l.delta(i, s)] += dgamma[i] * xs;
                    }
                }
            }
        }

        if !lp.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(self.non_finite(theta, grad));
        }
        Ok(lp)
    }
}

/// One draw from the prior. `eps` follows the logistic random walk or the
/// exchangeable logistic prior, and `delta_s ~ N(0, tau_s)` elementwise.
pub fn sample_prior<R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> ParamVector {
    let l = spec.layout();
    let logistic = |rng: &mut R, loc: f64, scale: f64| {
        let u: f64 = rng.random_range(f64::EPSILON..1.0);
        loc + scale * (u / (1.0 - u)).ln()
    };
    let normal = |rng: &mut R, p: NormalPrior| p.mean + p.sd * rng.sample::<f64, _>(StandardNormal);
    let gamma = |rng: &mut R, p: GammaPrior| {
        Gamma::new(p.shape, 1.0 / p.rate)
            .expect("validated prior")
            .sample(rng)
    };
    let log_eta = normal(rng, spec.prior_log_eta);
    let beta = (0..l.n_cov).map(|_| normal(rng, spec.prior_beta)).collect();
    let log_sigma = gamma(rng, spec.prior_sigma).ln();
    let mut eps = Vec::with_capacity(l.n_basis - 1);
    let mut prev = 0.0;
    for k in 0..l.n_basis - 1 {
        let e = match spec.coef_prior {
            CoefPrior::Exchangeable => logistic(rng, 0.0, 1.0),
            CoefPrior::RandomWalk => logistic(rng, prev, spec.rw_weights[k + 1]),
        };
        eps.push(e);
        prev = e;
    }
    let (mut delta, mut log_tau) = (Vec::new(), Vec::new());
    if l.non_ph {
        for _ in 0..l.n_cov {
            let tau = gamma(rng, spec.prior_tau);
            delta.push(
                (0..l.n_basis - 1)
                    .map(|_| tau * rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            );
            log_tau.push(tau.ln());
        }
    }
    ParamVector {
        log_eta,
        beta,
        log_sigma,
        eps,
        delta,
        log_tau,
    }
}

/// Ratio of the 90% to the 10% quantile of `h(t | x)` over `grid_points`
/// evenly spaced times strictly inside the boundary span. It measures how
/// far the hazard departs from a constant and does not depend on `eta`.
pub fn hazard_quantile_ratio(
    params: &ParamVector,
    spec: &ModelSpec,
    x: &[f64],
    grid_points: usize,
) -> Result<f64, ModelError> {
    let p = coefficients(params, spec, x)?;
    let cfg = spec.spline();
    let mut b = vec![0.0; p.len()];
    let mut h: Vec<f64> = (1..=grid_points)
        .map(|k| {
            let t = cfg.lower() + cfg.span() * k as f64 / (grid_points + 1) as f64;
            spec.hazard_basis_into(t, &mut b);
            dot(&p, &b)
        })
        .collect();
    h.sort_by(|a, b| a.total_cmp(b));
    Ok(quantile_sorted(&h, 0.9) / quantile_sorted(&h, 0.1))
}

/// Declarative model settings, resolved against a dataset by [`ModelConfig::build`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub df: usize,
    pub degree: usize,
    pub bsmooth: bool,
    pub coef_prior: CoefPrior,
    pub covariate_mode: CovariateMode,
    pub prior_sigma: GammaPrior,
    pub prior_tau: GammaPrior,
    pub prior_log_eta: NormalPrior,
    pub prior_beta: NormalPrior,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            df: 10,
            degree: 3,
            bsmooth: true,
            coef_prior: CoefPrior::RandomWalk,
            covariate_mode: CovariateMode::None,
            prior_sigma: GammaPrior::new(2.0, 1.0),
            prior_tau: GammaPrior::new(2.0, 1.0),
            prior_log_eta: NormalPrior::new(0.0, 20.0),
            prior_beta: NormalPrior::new(0.0, 20.0),
        }
    }
}

impl ModelConfig {
    /// Places knots at event-time quantiles with boundaries `(0, max time)`
    /// and takes covariate names from the dataset.
    pub fn build(&self, data: &SurvivalDataset) -> Result<ModelSpec, ModelError> {
        let spline = crate::basis::make_knots_with_upper(
            &data.event_times(),
            data.max_time(),
            self.df,
            self.degree,
            self.bsmooth,
        )?;
        let names = match self.covariate_mode {
            CovariateMode::None => Vec::new(),
            _ => data.covariate_names().to_vec(),
        };
        let spec = ModelSpec::new(spline, self.coef_prior, self.covariate_mode, names)?
            .with_sigma_prior(self.prior_sigma)
            .with_tau_prior(self.prior_tau)
            .with_log_eta_prior(self.prior_log_eta)
            .with_beta_prior(self.prior_beta);
        spec.validate()?;
        Ok(spec)
    }
}

//! Posterior inference: mode finding with a Laplace approximation, and
//! multi-chain NUTS with convergence diagnostics.

pub mod diagnostics;
pub mod nuts;
pub mod optim;

use crate::data::SurvivalDataset;
use crate::model::{LogDensity, ModelError, ModelSpec, ParamLayout, ParamVector, Posterior};
use diagnostics::ParamDiagnostics;
use nalgebra::{DMatrix, DVector};
use nuts::NutsOptions;
use optim::{minimize_bfgs, OptimizerOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

/// R-hat threshold used for the convergence flag.
pub const RHAT_THRESHOLD: f64 = 1.05;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("dataset has no events")]
    NoEvents,
    #[error("no chain could be initialised after {attempts} attempts")]
    InitFailed { attempts: usize },
    #[error("Hessian is not positive definite even with jitter {jitter}")]
    NotPositiveDefinite { jitter: f64 },
    #[error("invalid options: {0}")]
    InvalidOptions(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    #[default]
    Mcmc,
    Laplace,
}

impl std::fmt::Display for FitMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FitMethod::Mcmc => "mcmc",
            FitMethod::Laplace => "laplace",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub method: FitMethod,
    pub chains: usize,
    /// Kept draws per chain; Laplace returns `chains * kept_draws_per_chain`.
    pub kept_draws_per_chain: usize,
    pub warmup: usize,
    pub seed: u64,
    pub optimizer: OptimizerOptions,
    pub max_tree_depth: usize,
    pub target_accept: f64,
    /// Half-width of the uniform perturbation applied to chain starts.
    pub init_radius: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            method: FitMethod::Mcmc,
            chains: 4,
            kept_draws_per_chain: 2000,
            warmup: 2000,
            seed: 1,
            optimizer: OptimizerOptions::default(),
            max_tree_depth: 10,
            target_accept: 0.8,
            init_radius: 0.5,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<(), InferenceError> {
        if self.chains == 0 {
            return Err(InferenceError::InvalidOptions(
                "chains must be at least 1".into(),
            ));
        }
        if self.kept_draws_per_chain == 0 {
            return Err(InferenceError::InvalidOptions(
                "draws must be positive".into(),
            ));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(InferenceError::InvalidOptions(
                "target_accept must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Posterior mode with the Hessian in unconstrained coordinates.
#[derive(Debug, Clone)]
pub struct MapFit {
    pub mode: Vec<f64>,
    pub log_posterior: f64,
    /// Hessian of the negative log posterior at the mode.
    pub hessian: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
    pub names: Vec<String>,
}

impl MapFit {
    pub fn params(&self, layout: ParamLayout) -> Result<ParamVector, ModelError> {
        ParamVector::from_unconstrained(layout, &self.mode)
    }
}

/// Kept draws on the unconstrained scale with diagnostics.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub method: FitMethod,
    pub names: Vec<String>,
    /// Row-major, one row per draw, chains stacked in order.
    pub draws: Vec<Vec<f64>>,
    pub chains: usize,
    /// Per-parameter diagnostics; `None` for Laplace draws.
    pub diagnostics: Option<Vec<ParamDiagnostics>>,
    pub divergence_count: usize,
    pub converged: bool,
    pub runtime_seconds: f64,
    /// Diagonal jitter added to the Hessian (Laplace only).
    pub jitter: Option<f64>,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d[j]).collect()
    }

    pub fn params(&self, layout: ParamLayout) -> Result<Vec<ParamVector>, ModelError> {
        self.draws
            .iter()
            .map(|d| ParamVector::from_unconstrained(layout, d))
            .collect()
    }

    pub fn rhat_max(&self) -> f64 {
        self.diagnostics
            .as_ref()
            .map(|d| d.iter().map(|x| x.rhat).fold(f64::NEG_INFINITY, f64::max))
            .unwrap_or(f64::NAN)
    }

    pub fn ess_bulk_min(&self) -> f64 {
        self.diagnostics
            .as_ref()
            .map(|d| d.iter().map(|x| x.ess_bulk).fold(f64::INFINITY, f64::min))
            .unwrap_or(f64::NAN)
    }

    pub fn ess_tail_min(&self) -> f64 {
        self.diagnostics
            .as_ref()
            .map(|d| d.iter().map(|x| x.ess_tail).fold(f64::INFINITY, f64::min))
            .unwrap_or(f64::NAN)
    }
}

/// Adapts a [`LogDensity`] into a minimisation objective.
fn negative_log_density<D: LogDensity>(
    target: &D,
) -> impl Fn(&[f64], &mut [f64]) -> Option<f64> + '_ {
    move |x, g| {
        let lp = target.log_density_and_gradient(x, g).ok()?;
        if !lp.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return None;
        }
        g.iter_mut().for_each(|v| *v = -*v);
        Some(-lp)
    }
}

/// Posterior mode of any differentiable density starting from `x0`.
pub fn find_mode<D: LogDensity>(
    target: &D,
    x0: &[f64],
    opts: &OptimizerOptions,
) -> (optim::Minimum, DMatrix<f64>) {
    let obj = negative_log_density(target);
    let m = minimize_bfgs(&obj, x0, opts);
    let h = hessian(target, &m.x);
    (m, h)
}

/// Hessian of `-log p` by central differences of the analytic gradient,
/// symmetrised.
pub fn hessian<D: LogDensity>(target: &D, x: &[f64]) -> DMatrix<f64> {
    let d = x.len();
    let mut h = DMatrix::zeros(d, d);
    let mut xp = x.to_vec();
    let mut gp = vec![0.0; d];
    let mut gm = vec![0.0; d];
    for j in 0..d {
        let step = 1e-5 * x[j].abs().max(1.0);
        xp[j] = x[j] + step;
        let okp = target.log_density_and_gradient(&xp, &mut gp).is_ok();
        xp[j] = x[j] - step;
        let okm = target.log_density_and_gradient(&xp, &mut gm).is_ok();
        xp[j] = x[j];
        for i in 0..d {
            h[(i, j)] = if okp && okm {
                -(gp[i] - gm[i]) / (2.0 * step)
            } else {
                f64::NAN
            };
        }
    }
    0.5 * (&h + h.transpose())
}

/// The posterior density of the model parameters, written in unconstrained
/// coordinates but without the log-transform Jacobians, so that its maximum
/// is the mode for `sigma` and `tau` on their natural scale.
struct ModeObjective {
    post: Posterior,
    log_scales: Vec<usize>,
}

impl ModeObjective {
    fn new(post: Posterior) -> Self {
        let layout = post.layout();
        let mut log_scales = vec![layout.log_sigma()];
        log_scales.extend(layout.log_tau());
        Self { post, log_scales }
    }
}

impl LogDensity for ModeObjective {
    fn dim(&self) -> usize {
        self.post.dim()
    }

    fn log_density_and_gradient(&self, theta: &[f64], grad: &mut [f64]) -> Result<f64, ModelError> {
        let mut lp = self.post.log_density_and_gradient(theta, grad)?;
        for &i in &self.log_scales {
            lp -= theta[i];
            grad[i] -= 1.0;
        }
        Ok(lp)
    }
}

/// Posterior mode of the model parameters and the Hessian of the same
/// objective in unconstrained coordinates, which is where the Laplace
/// approximation draws.
pub fn fit_map(
    spec: &ModelSpec,
    data: &SurvivalDataset,
    opts: &FitOptions,
) -> Result<MapFit, InferenceError> {
    if data.n_events() == 0 {
        return Err(InferenceError::NoEvents);
    }
    let target = ModeObjective::new(Posterior::new(spec.clone(), data)?);
    let x0 = ParamVector::prior_mean(spec).to_unconstrained();
    let (m, h) = find_mode(&target, &x0, &opts.optimizer);
    if !m.converged {
        log::warn!(
            "optimizer stopped after {} iterations with gradient norm {:.3e}",
            m.iterations,
            m.grad_norm()
        );
    }
    Ok(MapFit {
        log_posterior: -m.f,
        grad_norm: m.grad_norm(),
        mode: m.x,
        hessian: h,
        converged: m.converged,
        iterations: m.iterations,
        names: target.post.parameter_names().to_vec(),
    })
}

/// Cholesky factor of `h + jitter * I` for the smallest power-of-ten
/// jitter (starting from zero) that makes it positive definite.
pub fn jittered_cholesky(
    h: &DMatrix<f64>,
) -> Result<(nalgebra::Cholesky<f64, nalgebra::Dyn>, f64), InferenceError> {
    if h.iter().any(|v| !v.is_finite()) {
        return Err(InferenceError::NotPositiveDefinite { jitter: f64::NAN });
    }
    let scale = h
        .diagonal()
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1.0);
    let mut jitter = 0.0;
    for k in -10..=3 {
        let m = h + DMatrix::identity(h.nrows(), h.ncols()) * jitter;
        if let Some(c) = m.cholesky() {
            return Ok((c, jitter));
        }
        jitter = 10f64.powi(k) * scale;
    }
    Err(InferenceError::NotPositiveDefinite { jitter })
}

/// Draws from `N(mode, H^{-1})`.
pub fn laplace_sample(
    map: &MapFit,
    n_draws: usize,
    seed: u64,
) -> Result<PosteriorDraws, InferenceError> {
    let start = Instant::now();
    let (chol, jitter) = jittered_cholesky(&map.hessian)?;
    if jitter > 0.0 {
        log::warn!("Hessian needed diagonal jitter {jitter:.1e}");
    }
    let lt = chol.l().transpose();
    let d = map.mode.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws = Vec::with_capacity(n_draws);
    for _ in 0..n_draws {
        let z = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        // H = L L', so L'^{-1} z has covariance H^{-1}.
        let dx = lt
            .solve_upper_triangular(&z)
            .expect("triangular factor is non-singular");
        draws.push(map.mode.iter().zip(dx.iter()).map(|(m, v)| m + v).collect());
    }
    Ok(PosteriorDraws {
        method: FitMethod::Laplace,
        names: map.names.clone(),
        draws,
        chains: 1,
        diagnostics: None,
        divergence_count: 0,
        converged: map.converged,
        runtime_seconds: start.elapsed().as_secs_f64(),
        jitter: Some(jitter),
    })
}

/// The RNG for chain `chain` of a run seeded by `seed`.
pub fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

/// Runs NUTS chains in parallel on any log density. `init` proposes a
/// starting point; it is retried until the density is finite.
pub fn sample_nuts<D, F>(
    target: &D,
    names: Vec<String>,
    init: F,
    opts: &FitOptions,
) -> Result<PosteriorDraws, InferenceError>
where
    D: LogDensity,
    F: Fn(&mut ChaCha8Rng) -> Vec<f64> + Sync,
{
    opts.validate()?;
    const INIT_ATTEMPTS: usize = 100;
    let start = Instant::now();
    let nuts_opts = NutsOptions {
        warmup: opts.warmup,
        draws: opts.kept_draws_per_chain,
        max_depth: opts.max_tree_depth,
        target_accept: opts.target_accept,
    };
    let dim = target.dim();
    let results: Vec<Result<nuts::ChainOutput, InferenceError>> = (0..opts.chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = chain_rng(opts.seed, c);
            let mut g = vec![0.0; dim];
            let mut x0 = None;
            for _ in 0..INIT_ATTEMPTS {
                let x = init(&mut rng);
                if matches!(target.log_density_and_gradient(&x, &mut g), Ok(v) if v.is_finite()) {
                    x0 = Some(x);
                    break;
                }
            }
            let x0 = x0.ok_or(InferenceError::InitFailed {
                attempts: INIT_ATTEMPTS,
            })?;
            Ok(nuts::run_chain(target, &x0, &nuts_opts, &mut rng)?)
        })
        .collect();
    let outputs: Vec<nuts::ChainOutput> = results.into_iter().collect::<Result<_, _>>()?;

    let per_param: Vec<ParamDiagnostics> = (0..dim)
        .map(|j| {
            let chains: Vec<Vec<f64>> = outputs
                .iter()
                .map(|o| o.draws.iter().map(|d| d[j]).collect())
                .collect();
            diagnostics::diagnose(&chains)
        })
        .collect();
    let rhat_max = per_param
        .iter()
        .map(|d| d.rhat)
        .fold(f64::NEG_INFINITY, f64::max);
    let divergence_count = outputs.iter().map(|o| o.divergences).sum();
    let draws = outputs.into_iter().flat_map(|o| o.draws).collect();
    Ok(PosteriorDraws {
        method: FitMethod::Mcmc,
        names,
        draws,
        chains: opts.chains,
        diagnostics: Some(per_param),
        divergence_count,
        // A NaN R-hat (for example a single chain too short to split) is not converged.
        converged: rhat_max <= RHAT_THRESHOLD,
        runtime_seconds: start.elapsed().as_secs_f64(),
        jitter: None,
    })
}

pub fn mcmc_sample(
    spec: &ModelSpec,
    data: &SurvivalDataset,
    opts: &FitOptions,
) -> Result<PosteriorDraws, InferenceError> {
    if data.n_events() == 0 {
        return Err(InferenceError::NoEvents);
    }
    let post = Posterior::new(spec.clone(), data)?;
    let center = ParamVector::prior_mean(spec).to_unconstrained();
    let r = opts.init_radius;
    let init = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        center
            .iter()
            .map(|c| c + rng.random_range(-r..=r))
            .collect()
    };
    sample_nuts(&post, post.parameter_names().to_vec(), init, opts)
}

/// Fits by the method in `opts`.
pub fn fit(
    spec: &ModelSpec,
    data: &SurvivalDataset,
    opts: &FitOptions,
) -> Result<PosteriorDraws, InferenceError> {
    opts.validate()?;
    match opts.method {
        FitMethod::Mcmc => mcmc_sample(spec, data, opts),
        FitMethod::Laplace => {
            let start = Instant::now();
            let map = fit_map(spec, data, opts)?;
            let mut draws =
                laplace_sample(&map, opts.chains * opts.kept_draws_per_chain, opts.seed)?;
            draws.runtime_seconds = start.elapsed().as_secs_f64();
            Ok(draws)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quadratic {
        precision: DMatrix<f64>,
    }

    impl LogDensity for Quadratic {
        fn dim(&self) -> usize {
            self.precision.nrows()
        }
        fn log_density_and_gradient(&self, x: &[f64], g: &mut [f64]) -> Result<f64, ModelError> {
            let v = DVector::from_column_slice(x);
            let pv = &self.precision * &v;
            g.iter_mut().zip(pv.iter()).for_each(|(g, p)| *g = -p);
            Ok(-0.5 * v.dot(&pv))
        }
    }

    #[test]
    fn finite_difference_hessian_of_quadratic() {
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let q = Quadratic {
            precision: p.clone(),
        };
        let h = hessian(&q, &[0.3, -0.2]);
        assert!((h - p).amax() < 1e-8);
    }

    #[test]
    fn jitter_restores_positive_definiteness() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-9]);
        let (_, jitter) = jittered_cholesky(&h).unwrap();
        assert!(jitter > 0.0 && jitter <= 1e-8);
        let (_, zero) = jittered_cholesky(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(zero, 0.0);
    }

    #[test]
    fn chain_streams_differ() {
        let a: f64 = chain_rng(5, 0).random();
        let b: f64 = chain_rng(5, 1).random();
        let c: f64 = chain_rng(5, 0).random();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }
}

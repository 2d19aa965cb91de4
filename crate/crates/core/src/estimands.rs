//! Survival-scale estimands per posterior draw and their summaries.
//!
//! Point estimates are posterior medians; intervals are equal-tailed 95%
//! quantile intervals using linear interpolation between order statistics
//! (the "type 7" rule).

use crate::basis::quantile_sorted;
use crate::model::{self, ModelError, ModelSpec, ParamVector};
use crate::quadrature::GaussLegendre;
use serde::{Deserialize, Serialize};

pub const DEFAULT_QUAD_NODES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimandSummary {
    pub name: String,
    pub point: f64,
    pub sd: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Median, SD and equal-tailed 95% interval of `values`.
pub fn summarize(name: &str, values: &[f64]) -> EstimandSummary {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let sd = if sorted.len() > 1 {
        (sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    EstimandSummary {
        name: name.to_string(),
        point: quantile_sorted(&sorted, 0.5),
        sd,
        ci_low: quantile_sorted(&sorted, 0.025),
        ci_high: quantile_sorted(&sorted, 0.975),
    }
}

/// RMST evaluator with the integrated basis cached at the quadrature nodes,
/// so each draw costs one softmax and `nodes * n_basis` multiplications.
#[derive(Debug, Clone)]
pub struct RmstCalculator<'a> {
    spec: &'a ModelSpec,
    horizon: f64,
    weights: Vec<f64>,
    /// Row-major `nodes x n_basis`.
    cumhaz_basis: Vec<f64>,
}

impl<'a> RmstCalculator<'a> {
    pub fn new(spec: &'a ModelSpec, horizon: f64, quad_nodes: usize) -> Self {
        let n = spec.n_basis();
        let rule = GaussLegendre::new(quad_nodes);
        let mut weights = Vec::with_capacity(quad_nodes);
        let mut cumhaz_basis = vec![0.0; quad_nodes * n];
        for (k, (t, w)) in rule.mapped(0.0, horizon.max(0.0)).enumerate() {
            weights.push(w);
            spec.cumhaz_basis_into(t, &mut cumhaz_basis[k * n..(k + 1) * n]);
        }
        Self {
            spec,
            horizon,
            weights,
            cumhaz_basis,
        }
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn rmst(&self, params: &ParamVector, x: &[f64]) -> Result<f64, ModelError> {
        if self.horizon <= 0.0 {
            return Ok(0.0);
        }
        let p = model::coefficients(params, self.spec, x)?;
        let eta = model::scale(params, x);
        let n = p.len();
        Ok(self
            .weights
            .iter()
            .zip(self.cumhaz_basis.chunks_exact(n))
            .map(|(w, ib)| w * (-eta * ib.iter().zip(&p).map(|(a, b)| a * b).sum::<f64>()).exp())
            .sum())
    }
}

/// `int_0^horizon S(t | x) dt` by Gauss-Legendre quadrature.
pub fn rmst(
    params: &ParamVector,
    spec: &ModelSpec,
    x: &[f64],
    horizon: f64,
    quad_nodes: usize,
) -> Result<f64, ModelError> {
    RmstCalculator::new(spec, horizon, quad_nodes).rmst(params, x)
}

/// Per-draw RMST values.
pub fn rmst_draws(
    draws: &[ParamVector],
    spec: &ModelSpec,
    x: &[f64],
    horizon: f64,
    quad_nodes: usize,
) -> Result<Vec<f64>, ModelError> {
    let calc = RmstCalculator::new(spec, horizon, quad_nodes);
    draws.iter().map(|d| calc.rmst(d, x)).collect()
}

/// Per-draw `rmst(x_active) - rmst(x_control)`.
pub fn rmstd_draws(
    draws: &[ParamVector],
    spec: &ModelSpec,
    x_active: &[f64],
    x_control: &[f64],
    horizon: f64,
    quad_nodes: usize,
) -> Result<Vec<f64>, ModelError> {
    let calc = RmstCalculator::new(spec, horizon, quad_nodes);
    draws
        .iter()
        .map(|d| Ok(calc.rmst(d, x_active)? - calc.rmst(d, x_control)?))
        .collect()
}

pub fn rmstd(
    draws: &[ParamVector],
    spec: &ModelSpec,
    x_active: &[f64],
    x_control: &[f64],
    horizon: f64,
    quad_nodes: usize,
) -> Result<EstimandSummary, ModelError> {
    let values = rmstd_draws(draws, spec, x_active, x_control, horizon, quad_nodes)?;
    Ok(summarize("rmstd", &values))
}

/// Which function of time a curve tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    Survival,
    Hazard,
    /// Hazard ratio of `x` against the reference profile.
    HazardRatio,
}

/// Pointwise summaries of a curve across draws.
pub fn curve(
    draws: &[ParamVector],
    spec: &ModelSpec,
    kind: CurveKind,
    x: &[f64],
    x_ref: &[f64],
    grid: &[f64],
) -> Result<Vec<(f64, EstimandSummary)>, ModelError> {
    grid.iter()
        .map(|&t| {
            let values = draws
                .iter()
                .map(|d| match kind {
                    CurveKind::Survival => model::survival(d, spec, x, t),
                    CurveKind::Hazard => model::hazard(d, spec, x, t),
                    CurveKind::HazardRatio => {
                        Ok(model::hazard(d, spec, x, t)? / model::hazard(d, spec, x_ref, t)?)
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok((t, summarize("curve", &values)))
        })
        .collect()
}

/// `n` equally spaced points on `[from, to]`.
pub fn linspace(from: f64, to: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![from],
        _ => (0..n)
            .map(|i| from + (to - from) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::SplineConfig;
    use crate::model::{CoefPrior, CovariateMode};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn exp_rmst(rate: f64, h: f64) -> f64 {
        (1.0 - (-rate * h).exp()) / rate
    }

    fn constant_spec(mode: CovariateMode) -> ModelSpec {
        let cfg =
            SplineConfig::new(3, vec![1.0, 2.0, 3.5, 5.0, 6.5, 8.0], (0.0, 10.0), false).unwrap();
        let names = vec!["arm".to_string()];
        ModelSpec::new(cfg, CoefPrior::RandomWalk, mode, names).unwrap()
    }

    fn constant_params(spec: &ModelSpec, rate: f64) -> ParamVector {
        let mut p = ParamVector::prior_mean(spec);
        p.log_eta = rate.ln();
        p
    }

    #[test]
    fn exponential_rmst_matches_closed_form() {
        let spec = constant_spec(CovariateMode::None);
        let p = constant_params(&spec, 0.2);
        let r = rmst(&p, &spec, &[], 5.0, 100).unwrap();
        assert!((r - exp_rmst(0.2, 5.0)).abs() < 1e-6, "{r}");
        assert!((r - 3.1606).abs() < 1e-4);
    }

    #[test]
    fn rmst_limits() {
        let spec = constant_spec(CovariateMode::None);
        let p = constant_params(&spec, 0.2);
        assert_eq!(rmst(&p, &spec, &[], 0.0, 100).unwrap(), 0.0);
        assert!(rmst(&p, &spec, &[], 1e-9, 100).unwrap() < 1e-8);
        let tiny = constant_params(&spec, 1e-14);
        assert!((rmst(&tiny, &spec, &[], 5.0, 100).unwrap() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn rmst_is_monotone_and_converged() {
        let spec = constant_spec(CovariateMode::None);
        let mut p = constant_params(&spec, 0.3);
        p.eps = (1..spec.n_basis())
            .map(|i| 0.3 * (i as f64).sin())
            .collect();
        let mut prev = 0.0;
        for h in linspace(0.5, 12.0, 24) {
            let r = rmst(&p, &spec, &[], h, 100).unwrap();
            assert!(r >= prev && r <= h);
            prev = r;
        }
        // Kinks at knots limit the polynomial convergence rate of the rule;
        // a smooth (constant) hazard converges to machine precision.
        let smooth = constant_params(&spec, 0.3);
        let a = rmst(&smooth, &spec, &[], 5.0, 100).unwrap();
        let b = rmst(&smooth, &spec, &[], 5.0, 400).unwrap();
        assert!((a - b).abs() < 1e-8);
    }

    #[test]
    fn ph_rmstd_matches_closed_form() {
        let spec = constant_spec(CovariateMode::ProportionalHazards);
        let mut p = constant_params(&spec, 0.2);
        p.beta = vec![0.7f64.ln()];
        let s = rmstd(&[p.clone()], &spec, &[1.0], &[0.0], 5.0, 100).unwrap();
        let expected = exp_rmst(0.14, 5.0) - exp_rmst(0.2, 5.0);
        assert!((s.point - expected).abs() < 1e-6);
        let same = rmstd(&[p.clone(), p], &spec, &[1.0], &[1.0], 5.0, 100).unwrap();
        assert_eq!((same.point, same.sd), (0.0, 0.0));
    }

    #[test]
    fn rmstd_is_antisymmetric() {
        let spec = constant_spec(CovariateMode::NonProportionalHazards);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let layout = spec.layout();
        let draws: Vec<ParamVector> = (0..20)
            .map(|_| {
                let theta: Vec<f64> = (0..layout.dim())
                    .map(|_| {
                        let v: f64 = StandardNormal.sample(&mut rng);
                        0.3 * v
                    })
                    .collect();
                ParamVector::from_unconstrained(layout, &theta).unwrap()
            })
            .collect();
        let a = rmstd_draws(&draws, &spec, &[1.0], &[0.0], 5.0, 100).unwrap();
        let b = rmstd_draws(&draws, &spec, &[0.0], &[1.0], 5.0, 100).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| *x == -*y));
    }

    #[test]
    fn summary_definitions() {
        let s = summarize("x", &[3.0, 1.0, 2.0]);
        assert_eq!(s.point, 2.0);
        let c = summarize("c", &[4.5; 10]);
        assert_eq!((c.sd, c.ci_high - c.ci_low), (0.0, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let z: Vec<f64> = (0..10_000)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let s = summarize("z", &z);
        assert!(
            (s.ci_low + 1.96).abs() < 0.05 && (s.ci_high - 1.96).abs() < 0.05,
            "{s:?}"
        );
        assert!(s.ci_low <= s.point && s.point <= s.ci_high);
    }

    #[test]
    fn hazard_ratio_curve_is_flat_under_ph() {
        let spec = constant_spec(CovariateMode::ProportionalHazards);
        let mut p = constant_params(&spec, 0.2);
        p.beta = vec![0.7f64.ln()];
        p.eps = (1..spec.n_basis()).map(|i| 0.1 * i as f64).collect();
        let c = curve(
            &[p],
            &spec,
            CurveKind::HazardRatio,
            &[1.0],
            &[0.0],
            &linspace(0.1, 9.0, 7),
        )
        .unwrap();
        assert!(c.iter().all(|(_, s)| (s.point - 0.7).abs() < 1e-12));
    }
}

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use survspline::inference::{
    diagnostics, find_mode, fit, fit_map, laplace_sample, sample_nuts, FitMethod, FitOptions,
};
use survspline::model::{LogDensity, ModelConfig, ModelError, ParamVector, Posterior};
use survspline::simgen::{ControlDgm, ScenarioConfig};

fn exponential_data(n: usize, seed: u64) -> survspline::data::SurvivalDataset {
    ScenarioConfig {
        control_dgm: ControlDgm::Exponential { rate: 0.2 },
        hr_scenario: None,
        n_per_arm: n,
        censor_time: 5.0,
        n_replicates: 1,
        base_seed: seed,
        t_max: 1000.0,
    }
    .simulate_replicate(0)
    .unwrap()
}

/// The full posterior restricted to `log_eta`, with every other parameter
/// pinned at a fixed point.
struct OnlyLogEta {
    post: Posterior,
    base: Vec<f64>,
    index: usize,
}

impl LogDensity for OnlyLogEta {
    fn dim(&self) -> usize {
        1
    }

    fn log_density_and_gradient(&self, theta: &[f64], grad: &mut [f64]) -> Result<f64, ModelError> {
        let mut x = self.base.clone();
        x[self.index] = theta[0];
        let mut g = vec![0.0; x.len()];
        let lp = self.post.log_density_and_gradient(&x, &mut g)?;
        grad[0] = g[self.index];
        Ok(lp)
    }
}

#[test]
fn one_parameter_mode_matches_grid_search() {
    let data = exponential_data(200, 3);
    let spec = ModelConfig::default().build(&data).unwrap();
    let base = ParamVector::prior_mean(&spec).to_unconstrained();
    let index = spec.layout().log_eta();
    let target = OnlyLogEta {
        post: Posterior::new(spec, &data).unwrap(),
        base,
        index,
    };
    let lp = |x: f64| {
        let mut g = [0.0];
        target.log_density_and_gradient(&[x], &mut g).unwrap()
    };
    // Coarse-to-fine grid search, ending at spacing 1e-7.
    let (mut center, mut half) = (0.0, 10.0);
    for _ in 0..8 {
        let step = half / 100.0;
        center = (-100..=100)
            .map(|k| center + k as f64 * step)
            .max_by(|a, b| lp(*a).total_cmp(&lp(*b)))
            .unwrap();
        half = step * 2.0;
    }
    let (m, h) = find_mode(&target, &[0.0], &Default::default());
    assert!(m.converged);
    assert!(
        (m.x[0] - center).abs() < 1e-4,
        "bfgs {} vs grid {}",
        m.x[0],
        center
    );
    assert!(h[(0, 0)] > 0.0);
}

#[test]
fn full_model_mode_has_small_gradient_and_positive_definite_hessian() {
    let data = exponential_data(200, 4);
    let spec = ModelConfig::default().build(&data).unwrap();
    let map = fit_map(&spec, &data, &FitOptions::default()).unwrap();
    assert!(map.converged);
    assert!(map.grad_norm < 1e-4, "gradient norm {}", map.grad_norm);
    let asym = (&map.hessian - map.hessian.transpose()).abs().max();
    assert!(asym < 1e-12);
    let eig = map.hessian.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    assert!(min > 0.0, "smallest Hessian eigenvalue {min}");
}

#[test]
fn mode_excludes_the_log_sigma_jacobian() {
    let data = exponential_data(200, 4);
    let spec = ModelConfig::default().build(&data).unwrap();
    let map = fit_map(&spec, &data, &FitOptions::default()).unwrap();
    let post = Posterior::new(spec.clone(), &data).unwrap();
    let mut g = vec![0.0; map.mode.len()];
    post.log_density_and_gradient(&map.mode, &mut g).unwrap();
    // The unconstrained density carries an extra `log sigma`, whose
    // derivative is the only gradient left at the natural-scale mode.
    let i = spec.layout().log_sigma();
    assert!((g[i] - 1.0).abs() < 1e-4, "{}", g[i]);
    let others = g
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, v)| v.abs())
        .fold(0.0, f64::max);
    assert!(others < 1e-4, "{others}");
}

#[test]
fn laplace_draws_have_inverse_hessian_covariance() {
    let data = exponential_data(200, 5);
    let spec = ModelConfig::default().build(&data).unwrap();
    let map = fit_map(&spec, &data, &FitOptions::default()).unwrap();
    let draws = laplace_sample(&map, 10_000, 9).unwrap();
    let d = map.mode.len();
    let n = draws.len() as f64;
    let mean: Vec<f64> = (0..d)
        .map(|j| draws.column(j).iter().sum::<f64>() / n)
        .collect();
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for row in &draws.draws {
        let v = DVector::from_iterator(d, row.iter().zip(&mean).map(|(x, m)| x - m));
        cov += &v * v.transpose();
    }
    cov /= n - 1.0;
    let target = map.hessian.clone().try_inverse().unwrap();
    let rel = (&cov - &target).norm() / target.norm();
    assert!(rel < 0.05, "relative Frobenius error {rel}");
    for j in 0..d {
        let se = (target[(j, j)] / n).sqrt();
        assert!((mean[j] - map.mode[j]).abs() < 5.0 * se);
    }
    assert!(draws.diagnostics.is_none());
}

#[test]
fn identical_seeds_give_identical_draws() {
    let data = exponential_data(100, 6);
    let spec = ModelConfig {
        df: 6,
        ..Default::default()
    }
    .build(&data)
    .unwrap();
    for method in [FitMethod::Laplace, FitMethod::Mcmc] {
        let opts = FitOptions {
            method,
            chains: 2,
            kept_draws_per_chain: 200,
            warmup: 200,
            seed: 77,
            ..Default::default()
        };
        let a = fit(&spec, &data, &opts).unwrap();
        let b = fit(&spec, &data, &opts).unwrap();
        assert_eq!(a.draws, b.draws, "{method}");
        let c = fit(&spec, &data, &FitOptions { seed: 78, ..opts }).unwrap();
        assert_ne!(a.draws, c.draws, "{method}");
    }
}

struct Gaussian {
    mean: DVector<f64>,
    precision: DMatrix<f64>,
}

impl LogDensity for Gaussian {
    fn dim(&self) -> usize {
        2
    }

    fn log_density_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> Result<f64, ModelError> {
        let r = DVector::from_column_slice(x) - &self.mean;
        let g = -(&self.precision * &r);
        grad.copy_from_slice(g.as_slice());
        Ok(0.5 * r.dot(&g))
    }
}

fn bivariate_target() -> (Gaussian, DVector<f64>, DMatrix<f64>) {
    let mean = DVector::from_vec(vec![1.0, -2.0]);
    let cov = DMatrix::from_row_slice(2, 2, &[1.0, 1.2, 1.2, 4.0]);
    let target = Gaussian {
        mean: mean.clone(),
        precision: cov.clone().try_inverse().unwrap(),
    };
    (target, mean, cov)
}

/// Runs NUTS on the bivariate target and returns the posterior plus its
/// sample mean and covariance.
fn sample_bivariate(
    draws_per_chain: usize,
) -> (
    survspline::inference::PosteriorDraws,
    Vec<f64>,
    DMatrix<f64>,
) {
    let (target, _, _) = bivariate_target();
    let opts = FitOptions {
        chains: 4,
        kept_draws_per_chain: draws_per_chain,
        warmup: 1000,
        seed: 1,
        ..Default::default()
    };
    let init =
        |rng: &mut ChaCha8Rng| vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
    let post = sample_nuts(&target, vec!["x".into(), "y".into()], init, &opts).unwrap();
    let n = post.len() as f64;
    let cols: Vec<Vec<f64>> = (0..2).map(|j| post.column(j)).collect();
    let m: Vec<f64> = cols.iter().map(|c| c.iter().sum::<f64>() / n).collect();
    let mut s = DMatrix::<f64>::zeros(2, 2);
    for i in 0..2 {
        for j in 0..2 {
            s[(i, j)] = cols[i]
                .iter()
                .zip(&cols[j])
                .map(|(a, b)| (a - m[i]) * (b - m[j]))
                .sum::<f64>()
                / (n - 1.0);
        }
    }
    (post, m, s)
}

#[test]
fn nuts_recovers_bivariate_gaussian() {
    let (_, mean, cov) = bivariate_target();
    let (post, m, s) = sample_bivariate(2000);
    assert_eq!(post.len(), 8000);
    assert!(post.rhat_max() < 1.01);
    let diag = post.diagnostics.as_ref().unwrap();
    for i in 0..2 {
        let sd = cov[(i, i)].sqrt();
        assert!((m[i] - mean[i]).abs() < 0.02 * sd, "mean {i}: {}", m[i]);
        // A variance estimate from `ess` effective draws has sd `var * sqrt(2 / ess)`.
        let ess = diag[i].ess_bulk;
        let band = 4.0 * cov[(i, i)] * (2.0 / ess).sqrt();
        assert!(
            (s[(i, i)] - cov[(i, i)]).abs() < band,
            "var {i}: {} (ess {ess:.0})",
            s[(i, i)]
        );
    }
    let ess = diag[0].ess_bulk.min(diag[1].ess_bulk);
    let cov_band = 4.0 * ((cov[(0, 0)] * cov[(1, 1)] + cov[(0, 1)].powi(2)) / ess).sqrt();
    assert!(
        (s[(0, 1)] - cov[(0, 1)]).abs() < cov_band,
        "cov: {}",
        s[(0, 1)]
    );
}

#[test]
fn nuts_covariance_within_two_percent_with_long_chains() {
    let (_, mean, cov) = bivariate_target();
    let (_, m, s) = sample_bivariate(25_000);
    for i in 0..2 {
        assert!(
            (m[i] - mean[i]).abs() < 0.02 * cov[(i, i)].sqrt(),
            "mean {i}: {}",
            m[i]
        );
    }
    let rel = (&s - &cov).norm() / cov.norm();
    assert!(rel < 0.02, "covariance relative Frobenius error {rel}: {s}");
}

#[test]
fn independent_chains_have_unit_rhat() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let chains: Vec<Vec<f64>> = (0..4)
        .map(|_| {
            (0..1000)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    let d = diagnostics::diagnose(&chains);
    assert!(d.rhat < 1.01, "{}", d.rhat);
    assert!(d.ess_bulk > 2000.0);
}

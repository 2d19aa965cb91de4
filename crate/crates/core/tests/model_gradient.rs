use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use survspline::model::{
    CoefPrior, CovariateMode, LogDensity, ModelConfig, ParamVector, Posterior,
};
use survspline::simgen::{ControlDgm, HRScenario, ScenarioConfig};

fn two_arm_data() -> survspline::data::SurvivalDataset {
    ScenarioConfig {
        control_dgm: ControlDgm::Weibull {
            shape: 1.3,
            scale: 4.0,
        },
        hr_scenario: Some(HRScenario::tanh_waning()),
        n_per_arm: 150,
        censor_time: 5.0,
        n_replicates: 1,
        base_seed: 11,
        t_max: 1000.0,
    }
    .simulate_replicate(0)
    .unwrap()
}

/// Largest relative discrepancy between the analytic gradient and central
/// differences, with relative error `|a - b| / max(1, |a|, |b|)`.
fn worst_gradient_error(post: &Posterior, theta: &[f64]) -> f64 {
    let d = theta.len();
    let mut g = vec![0.0; d];
    post.log_density_and_gradient(theta, &mut g).unwrap();
    let mut scratch = vec![0.0; d];
    let mut x = theta.to_vec();
    let mut worst = 0.0f64;
    for j in 0..d {
        let h = 1e-5 * theta[j].abs().max(1.0);
        x[j] = theta[j] + h;
        let fp = post.log_density_and_gradient(&x, &mut scratch).unwrap();
        x[j] = theta[j] - h;
        let fm = post.log_density_and_gradient(&x, &mut scratch).unwrap();
        x[j] = theta[j];
        let fd = (fp - fm) / (2.0 * h);
        let rel = (g[j] - fd).abs() / 1f64.max(g[j].abs()).max(fd.abs());
        worst = worst.max(rel);
    }
    worst
}

#[test]
fn gradient_matches_finite_differences() {
    let data = two_arm_data();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for mode in [
        CovariateMode::ProportionalHazards,
        CovariateMode::NonProportionalHazards,
    ] {
        for prior in [CoefPrior::RandomWalk, CoefPrior::Exchangeable] {
            let spec = ModelConfig {
                df: 6,
                covariate_mode: mode,
                coef_prior: prior,
                ..Default::default()
            }
            .build(&data)
            .unwrap();
            let post = Posterior::new(spec.clone(), &data).unwrap();
            let center = ParamVector::prior_mean(&spec).to_unconstrained();
            let mut worst = 0.0f64;
            for _ in 0..20 {
                let theta: Vec<f64> = center
                    .iter()
                    .map(|c| {
                        let z: f64 = rng.sample(StandardNormal);
                        c + 0.5 * z
                    })
                    .collect();
                worst = worst.max(worst_gradient_error(&post, &theta));
            }
            assert!(
                worst < 1e-5,
                "{mode:?} / {prior:?}: worst relative error {worst:.3e}"
            );
        }
    }
}

//! Fits the default model with the Laplace approximation and compares it
//! against MCMC on the same dataset.

use survspline::estimands::{rmst_draws, summarize};
use survspline::inference::{fit, fit_map, FitMethod, FitOptions};
use survspline::model::ModelConfig;
use survspline::simgen::{ControlDgm, ScenarioConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = ScenarioConfig {
        control_dgm: ControlDgm::Exponential { rate: 0.2 },
        hr_scenario: None,
        n_per_arm: 200,
        censor_time: 5.0,
        n_replicates: 1,
        base_seed: 17,
        t_max: 1000.0,
    }
    .simulate_replicate(0)?;
    let spec = ModelConfig::default().build(&data)?;

    let map = fit_map(&spec, &data, &FitOptions::default())?;
    println!(
        "mode found in {} iterations, gradient norm {:.2e}, log posterior {:.3}",
        map.iterations, map.grad_norm, map.log_posterior
    );

    for method in [FitMethod::Laplace, FitMethod::Mcmc] {
        let opts = FitOptions {
            method,
            seed: 5,
            ..Default::default()
        };
        let post = fit(&spec, &data, &opts)?;
        let rmst = summarize(
            "rmst",
            &rmst_draws(&post.params(spec.layout())?, &spec, &[], 5.0, 100)?,
        );
        println!(
            "{method}: RMST {:.4} (sd {:.4}, 95% CrI {:.4} to {:.4}) in {:.2}s",
            rmst.point, rmst.sd, rmst.ci_low, rmst.ci_high, post.runtime_seconds
        );
    }
    Ok(())
}

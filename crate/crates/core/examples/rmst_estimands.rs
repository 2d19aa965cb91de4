//! Two-arm fit with a time-varying treatment effect: posterior RMST
//! difference and the hazard-ratio curve against the truth.

use survspline::estimands::{curve, linspace, rmstd, CurveKind};
use survspline::inference::{fit, FitOptions};
use survspline::model::{CovariateMode, ModelConfig};
use survspline::simgen::{hazard_ratio, true_estimand, ControlDgm, HRScenario, ScenarioConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = ScenarioConfig {
        control_dgm: ControlDgm::Exponential { rate: 0.2 },
        hr_scenario: Some(HRScenario::tanh_waning()),
        n_per_arm: 300,
        censor_time: 5.0,
        n_replicates: 1,
        base_seed: 8,
        t_max: 1000.0,
    };
    let data = config.simulate_replicate(0)?;
    let spec = ModelConfig {
        df: 3,
        covariate_mode: CovariateMode::NonProportionalHazards,
        ..Default::default()
    }
    .build(&data)?;
    let post = fit(
        &spec,
        &data,
        &FitOptions {
            seed: 3,
            ..Default::default()
        },
    )?;
    let draws = post.params(spec.layout())?;

    let d = rmstd(&draws, &spec, &[1.0], &[0.0], 5.0, 100)?;
    let truth = true_estimand(&config, 5.0)?.rmstd.unwrap();
    println!(
        "RMSTD {:.4} (95% CrI {:.4} to {:.4}), truth {truth:.4}",
        d.point, d.ci_low, d.ci_high
    );

    let hr = curve(
        &draws,
        &spec,
        CurveKind::HazardRatio,
        &[1.0],
        &[0.0],
        &linspace(0.25, 5.0, 10),
    )?;
    println!(
        "{:>5} {:>8} {:>8} {:>8} {:>8}",
        "t", "true", "median", "2.5%", "97.5%"
    );
    for (t, s) in hr {
        let true_hr = hazard_ratio(config.hr_scenario.as_ref().unwrap(), t);
        println!(
            "{t:5.2} {true_hr:8.3} {:8.3} {:8.3} {:8.3}",
            s.point, s.ci_low, s.ci_high
        );
    }
    Ok(())
}

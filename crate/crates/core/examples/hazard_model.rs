//! Evaluates the hazard and survival of the spline model at the prior mean
//! and at a perturbed parameter vector.

use survspline::model::{hazard, survival, ModelConfig, ParamVector};
use survspline::simgen::{ControlDgm, ScenarioConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = ScenarioConfig {
        control_dgm: ControlDgm::Weibull {
            shape: 1.4,
            scale: 4.0,
        },
        hr_scenario: None,
        n_per_arm: 300,
        censor_time: 5.0,
        n_replicates: 1,
        base_seed: 3,
        t_max: 1000.0,
    }
    .simulate_replicate(0)?;
    let spec = ModelConfig::default().build(&data)?;
    println!(
        "{} basis terms, parameter dimension {}",
        spec.n_basis(),
        spec.layout().dim()
    );

    // The prior mean has all random-walk increments at zero, which gives a
    // constant hazard of exp(log_eta).
    let flat = ParamVector::prior_mean(&spec);
    let mut bent = flat.clone();
    for (i, e) in bent.eps.iter_mut().enumerate() {
        *e = 0.3 * i as f64;
    }
    println!(
        "{:>5} {:>10} {:>10} {:>10} {:>10}",
        "t", "h flat", "S flat", "h bent", "S bent"
    );
    for t in [0.5, 1.0, 2.0, 3.0, 4.0, 5.0] {
        println!(
            "{t:5.1} {:10.4} {:10.4} {:10.4} {:10.4}",
            hazard(&flat, &spec, &[], t)?,
            survival(&flat, &spec, &[], t)?,
            hazard(&bent, &spec, &[], t)?,
            survival(&bent, &spec, &[], t)?
        );
    }
    Ok(())
}

//! How informative is the smoothing prior? Draws hazards from the prior and
//! reports the spread ratio q90(h) / q10(h) over the knot span for a few
//! choices of the `sigma` prior.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use survspline::basis::quantile_sorted;
use survspline::dist::GammaPrior;
use survspline::model::{hazard_quantile_ratio, sample_prior, ModelConfig};
use survspline::simgen::{ControlDgm, ScenarioConfig};

fn main() -> anyhow::Result<()> {
    let data = ScenarioConfig {
        control_dgm: ControlDgm::Exponential { rate: 0.2 },
        hr_scenario: None,
        n_per_arm: 200,
        censor_time: 5.0,
        n_replicates: 1,
        base_seed: 1,
        t_max: 1000.0,
    }
    .simulate_replicate(0)?;

    println!("sigma prior      median ratio   90th percentile");
    for rate in [1.0, 5.0, 20.0] {
        let spec = ModelConfig {
            prior_sigma: GammaPrior::new(2.0, rate),
            ..Default::default()
        }
        .build(&data)?;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut ratios = (0..20_000)
            .map(|_| hazard_quantile_ratio(&sample_prior(&spec, &mut rng), &spec, &[], 200))
            .collect::<Result<Vec<_>, _>>()?;
        ratios.sort_by(|a, b| a.total_cmp(b));
        println!(
            "Gamma(2, {rate:<4}) {:>14.3} {:>17.4e}",
            quantile_sorted(&ratios, 0.5),
            quantile_sorted(&ratios, 0.9)
        );
    }
    Ok(())
}

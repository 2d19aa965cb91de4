use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use survspline::metrics::{performance, ReplicateRecord};

fn synthetic_records(n: usize, truth: f64, rng: &mut ChaCha8Rng) -> Vec<ReplicateRecord> {
    (0..n)
        .map(|replicate| {
            let z: f64 = rng.sample(StandardNormal);
            let estimate = truth + 0.3 * z;
            // Model SDs scattered around a value slightly below the empirical SE.
            let sd = 0.26 * (1.0 + 0.2 * rng.random_range(-1.0..1.0));
            ReplicateRecord {
                replicate,
                estimate,
                posterior_sd: sd,
                ci_low: estimate - 1.96 * sd,
                ci_high: estimate + 1.96 * sd,
                converged: true,
                rhat_max: 1.0,
                ess_bulk_min: 1000.0,
                ess_tail_min: 1000.0,
                divergences: 0,
                runtime_seconds: 1.0,
            }
        })
        .collect()
}

fn sd(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

#[test]
fn mcse_formulas_agree_with_bootstrap() {
    let truth = 3.0;
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let records = synthetic_records(1000, truth, &mut rng);
    let table = performance(&records, truth).unwrap();

    let b = 10_000;
    let mut boot: [Vec<f64>; 4] = Default::default();
    let mut sample = records.clone();
    for _ in 0..b {
        for slot in sample.iter_mut() {
            *slot = records[rng.random_range(0..records.len())].clone();
        }
        let t = performance(&sample, truth).unwrap();
        boot[0].push(t.bias.value);
        boot[1].push(t.emp_se.value);
        boot[2].push(t.coverage_pct.value);
        boot[3].push(t.mean_posterior_sd.value);
    }
    let analytic = [
        ("bias", table.bias.mcse),
        ("emp_se", table.emp_se.mcse),
        ("coverage", table.coverage_pct.mcse),
        ("mean_sd", table.mean_posterior_sd.mcse),
    ];
    for ((name, mcse), draws) in analytic.iter().zip(&boot) {
        let bs = sd(draws);
        let rel = (mcse - bs).abs() / bs;
        assert!(
            rel < 0.10,
            "{name}: analytic {mcse:.5} vs bootstrap {bs:.5}"
        );
    }
}

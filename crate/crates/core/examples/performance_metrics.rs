//! Performance measures with Monte Carlo standard errors for a synthetic
//! set of replicate records, including the effect of the strict filter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use survspline::metrics::{filter_converged, performance, FilterPolicy, ReplicateRecord};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let truth = 3.16;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let records: Vec<ReplicateRecord> = (0..200)
        .map(|i| {
            let z: f64 = rng.sample(StandardNormal);
            let estimate = truth + 0.02 + 0.12 * z;
            let sd = 0.12;
            ReplicateRecord {
                replicate: i,
                estimate,
                posterior_sd: sd,
                ci_low: estimate - 1.96 * sd,
                ci_high: estimate + 1.96 * sd,
                converged: true,
                rhat_max: if i % 25 == 0 { 1.08 } else { 1.002 },
                ess_bulk_min: 1500.0,
                ess_tail_min: 1200.0,
                divergences: 0,
                runtime_seconds: 1.0,
            }
        })
        .collect();

    let all = performance(&records, truth)?;
    println!(
        "all {}: bias {:.4} ({:.4}), EmpSE {:.4} ({:.4}), coverage {:.1}% ({:.1}), R-hat > 1.05 in {:.1}%",
        all.n_replicates,
        all.bias.value,
        all.bias.mcse,
        all.emp_se.value,
        all.emp_se.mcse,
        all.coverage_pct.value,
        all.coverage_pct.mcse,
        all.pct_rhat_high
    );
    let (kept, report) = filter_converged(&records, FilterPolicy::Strict);
    let strict = performance(&kept, truth)?;
    println!(
        "strict {} ({} excluded): bias {:.4} ({:.4}), coverage {:.1}%",
        strict.n_replicates,
        report.excluded,
        strict.bias.value,
        strict.bias.mcse,
        strict.coverage_pct.value
    );
    Ok(())
}

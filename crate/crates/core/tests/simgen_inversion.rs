use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use survspline::simgen::{simulate_arm_raw, ArmHazard, ControlDgm, HRScenario};

const N: usize = 1_000_000;

/// Kolmogorov-Smirnov distance between a sample and a continuous CDF.
fn ks_distance(mut x: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    x.sort_by(|a, b| a.total_cmp(b));
    let n = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(i, &t)| {
            let f = cdf(t);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

fn draw(dgm: &ControlDgm, scenario: Option<&HRScenario>, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arm =
        simulate_arm_raw(ArmHazard { dgm, scenario }, N, f64::INFINITY, 1e4, &mut rng).unwrap();
    assert_eq!(arm.unbracketed, 0);
    assert!(arm.events.iter().all(|&e| e));
    arm.times
}

#[test]
fn exponential_inversion_matches_cdf() {
    let dgm = ControlDgm::Exponential { rate: 0.2 };
    let d = ks_distance(draw(&dgm, None, 1), |t| 1.0 - (-0.2 * t).exp());
    assert!(d < 0.002, "KS {d}");
}

#[test]
fn weibull_inversion_matches_cdf() {
    let (shape, scale) = (1.7, 3.0);
    let dgm = ControlDgm::Weibull { shape, scale };
    let d = ks_distance(draw(&dgm, None, 2), |t| {
        1.0 - (-(t / scale).powf(shape)).exp()
    });
    assert!(d < 0.002, "KS {d}");
}

#[test]
fn constant_hr_arm_matches_scaled_distribution() {
    let (shape, scale, hr) = (0.8, 5.0, 0.6);
    let dgm = ControlDgm::Weibull { shape, scale };
    let scenario = HRScenario::Constant { hr };
    let d = ks_distance(draw(&dgm, Some(&scenario), 3), |t| {
        1.0 - (-hr * (t / scale).powf(shape)).exp()
    });
    assert!(d < 0.002, "KS {d}");
}

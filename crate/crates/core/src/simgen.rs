//! Data-generating mechanisms for simulation studies.
//!
//! A control-arm hazard (exponential, Weibull or a Royston-Parmar
//! restricted cubic spline on the log cumulative hazard) is optionally
//! combined with a time-varying hazard ratio for an active arm. Event times
//! come from inverting the cumulative hazard against Exp(1) variates, with
//! administrative censoring.
//!
//! Hazard-ratio scenarios:
//!
//! ```text
//! constant     HR(t) = hr
//! tanh_waning  HR(t) = exp(a + b tanh(c t - d))
//! emg_delayed  HR(t) = exp(scale * f_emg(t; emg_mu, emg_sigma, emg_lambda))
//! f_emg(x) = (l/2) exp((l/2)(2 m + l s^2 - 2x)) erfc((m + l s^2 - x) / (sqrt(2) s))
//! ```

use crate::data::SurvivalDataset;
use crate::quadrature::{integrate_adaptive, GaussLegendre};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use std::sync::OnceLock;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidConfig(String),
    #[error("time must be positive for this hazard, got {0}")]
    Domain(f64),
}

/// Royston-Parmar model: `log H(t) = s(log t)` with a natural cubic spline
/// `s` that is linear beyond the boundary knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RPSplineSpec {
    /// Knots on the log-time scale, boundaries included.
    pub log_time_knots: Vec<f64>,
    /// `g_0` (intercept), `g_1` (log-time slope), then one weight per
    /// interior knot.
    pub rp_coefs: Vec<f64>,
}

impl RPSplineSpec {
    pub fn new(log_time_knots: Vec<f64>, rp_coefs: Vec<f64>) -> Result<Self, SimError> {
        let spec = Self {
            log_time_knots,
            rp_coefs,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let k = &self.log_time_knots;
        if k.len() < 2 {
            return Err(SimError::InvalidConfig("need at least two RP knots".into()));
        }
        if k.windows(2).any(|w| !(w[1] > w[0])) || k.iter().any(|v| !v.is_finite()) {
            return Err(SimError::InvalidConfig(
                "RP knots must be finite and strictly increasing".into(),
            ));
        }
        if self.rp_coefs.len() != k.len() {
            return Err(SimError::InvalidConfig(format!(
                "{} RP knots need {} coefficients, got {}",
                k.len(),
                k.len(),
                self.rp_coefs.len()
            )));
        }
        // The tails are linear, so checking the slope across the knot range
        // plus both tail slopes covers the whole real line.
        let (lo, hi) = (k[0], k[k.len() - 1]);
        let monotone = (0..=2000)
            .map(|i| lo + (hi - lo) * i as f64 / 2000.0)
            .chain([lo - 1.0, hi + 1.0])
            .all(|x| self.deriv(x) > 0.0);
        if !monotone {
            return Err(SimError::InvalidConfig(
                "RP log cumulative hazard is not strictly increasing".into(),
            ));
        }
        Ok(())
    }

    fn lambda(&self, j: usize) -> f64 {
        let k = &self.log_time_knots;
        let (lo, hi) = (k[0], k[k.len() - 1]);
        (hi - k[j]) / (hi - lo)
    }

    /// `s(x)`.
    pub fn eval(&self, x: f64) -> f64 {
        let k = &self.log_time_knots;
        let (lo, hi) = (k[0], k[k.len() - 1]);
        let cube = |v: f64| v.max(0.0).powi(3);
        let g = &self.rp_coefs;
        let mut s = g[0] + g[1] * x;
        for j in 1..k.len() - 1 {
            let l = self.lambda(j);
            s += g[j + 1] * (cube(x - k[j]) - l * cube(x - lo) - (1.0 - l) * cube(x - hi));
        }
        s
    }

    /// `s'(x)`.
    pub fn deriv(&self, x: f64) -> f64 {
        let k = &self.log_time_knots;
        let (lo, hi) = (k[0], k[k.len() - 1]);
        let sq = |v: f64| v.max(0.0).powi(2);
        let g = &self.rp_coefs;
        let mut d = g[1];
        for j in 1..k.len() - 1 {
            let l = self.lambda(j);
            d += g[j + 1] * 3.0 * (sq(x - k[j]) - l * sq(x - lo) - (1.0 - l) * sq(x - hi));
        }
        d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlDgm {
    Exponential { rate: f64 },
    Weibull { shape: f64, scale: f64 },
    RpSpline(RPSplineSpec),
}

impl ControlDgm {
    pub fn validate(&self) -> Result<(), SimError> {
        match self {
            ControlDgm::Exponential { rate } if !(*rate > 0.0 && rate.is_finite()) => Err(
                SimError::InvalidConfig(format!("rate must be positive, got {rate}")),
            ),
            ControlDgm::Weibull { shape, scale } if !(*shape > 0.0 && *scale > 0.0) => Err(
                SimError::InvalidConfig("Weibull shape and scale must be positive".into()),
            ),
            ControlDgm::RpSpline(rp) => rp.validate(),
            _ => Ok(()),
        }
    }
}

pub fn control_hazard(dgm: &ControlDgm, t: f64) -> Result<f64, SimError> {
    match dgm {
        ControlDgm::Exponential { rate } => Ok(*rate),
        ControlDgm::Weibull { shape, scale } => {
            if t < 0.0 {
                return Err(SimError::Domain(t));
            }
            Ok(shape / scale * (t / scale).powf(shape - 1.0))
        }
        ControlDgm::RpSpline(rp) => {
            if t <= 0.0 {
                return Err(SimError::Domain(t));
            }
            let x = t.ln();
            Ok(rp.eval(x).exp() * rp.deriv(x) / t)
        }
    }
}

pub fn control_cumhaz(dgm: &ControlDgm, t: f64) -> Result<f64, SimError> {
    match dgm {
        ControlDgm::Exponential { rate } => Ok(rate * t.max(0.0)),
        ControlDgm::Weibull { shape, scale } => {
            if t < 0.0 {
                return Err(SimError::Domain(t));
            }
            Ok((t / scale).powf(*shape))
        }
        ControlDgm::RpSpline(rp) => {
            if t <= 0.0 {
                return Err(SimError::Domain(t));
            }
            Ok(rp.eval(t.ln()).exp())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HRScenario {
    Constant {
        #[serde(default = "default_hr")]
        hr: f64,
    },
    TanhWaning {
        #[serde(default = "tanh_a")]
        a: f64,
        #[serde(default = "tanh_b")]
        b: f64,
        #[serde(default = "tanh_c")]
        c: f64,
        #[serde(default = "tanh_d")]
        d: f64,
    },
    EmgDelayed {
        #[serde(default = "emg_scale")]
        scale: f64,
        #[serde(default = "emg_mu")]
        emg_mu: f64,
        #[serde(default = "emg_sigma")]
        emg_sigma: f64,
        #[serde(default = "emg_lambda")]
        emg_lambda: f64,
    },
}

fn default_hr() -> f64 {
    0.7
}
fn tanh_a() -> f64 {
    -0.38
}
fn tanh_b() -> f64 {
    0.38
}
fn tanh_c() -> f64 {
    0.8
}
fn tanh_d() -> f64 {
    1.2
}
fn emg_scale() -> f64 {
    -2.8
}
fn emg_mu() -> f64 {
    0.8
}
fn emg_sigma() -> f64 {
    0.4
}
fn emg_lambda() -> f64 {
    0.35
}

impl HRScenario {
    pub fn constant() -> Self {
        HRScenario::Constant { hr: default_hr() }
    }

    pub fn tanh_waning() -> Self {
        HRScenario::TanhWaning {
            a: tanh_a(),
            b: tanh_b(),
            c: tanh_c(),
            d: tanh_d(),
        }
    }

    pub fn emg_delayed() -> Self {
        HRScenario::EmgDelayed {
            scale: emg_scale(),
            emg_mu: emg_mu(),
            emg_sigma: emg_sigma(),
            emg_lambda: emg_lambda(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        match self {
            HRScenario::Constant { hr } if !(*hr > 0.0 && hr.is_finite()) => Err(
                SimError::InvalidConfig(format!("hr must be positive, got {hr}")),
            ),
            HRScenario::EmgDelayed {
                emg_sigma,
                emg_lambda,
                ..
            } if !(*emg_sigma > 0.0 && *emg_lambda > 0.0) => Err(SimError::InvalidConfig(
                "emg_sigma and emg_lambda must be positive".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// Exponentially modified Gaussian density.
pub fn emg_density(x: f64, mu: f64, sigma: f64, lambda: f64) -> f64 {
    let s2 = sigma * sigma;
    0.5 * lambda
        * (0.5 * lambda * (2.0 * mu + lambda * s2 - 2.0 * x)).exp()
        * erfc((mu + lambda * s2 - x) / (std::f64::consts::SQRT_2 * sigma))
}

pub fn hazard_ratio(scenario: &HRScenario, t: f64) -> f64 {
    match *scenario {
        HRScenario::Constant { hr } => hr,
        HRScenario::TanhWaning { a, b, c, d } => (a + b * (c * t - d).tanh()).exp(),
        HRScenario::EmgDelayed {
            scale,
            emg_mu,
            emg_sigma,
            emg_lambda,
        } => (scale * emg_density(t, emg_mu, emg_sigma, emg_lambda)).exp(),
    }
}

fn gauss_legendre_100() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(100))
}

pub fn active_hazard(dgm: &ControlDgm, scenario: &HRScenario, t: f64) -> Result<f64, SimError> {
    Ok(control_hazard(dgm, t)? * hazard_ratio(scenario, t))
}

/// `int_0^t h_0(s) HR(s) ds` by 100-node Gauss-Legendre (exact scaling for a
/// constant ratio).
pub fn active_cumhaz(dgm: &ControlDgm, scenario: &HRScenario, t: f64) -> Result<f64, SimError> {
    active_cumhaz_with(dgm, scenario, t, gauss_legendre_100())
}

/// As [`active_cumhaz`] with a caller-supplied rule.
pub fn active_cumhaz_with(
    dgm: &ControlDgm,
    scenario: &HRScenario,
    t: f64,
    rule: &GaussLegendre,
) -> Result<f64, SimError> {
    if t < 0.0 {
        return Err(SimError::Domain(t));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    if let HRScenario::Constant { hr } = scenario {
        return Ok(hr * control_cumhaz(dgm, t)?);
    }
    let mut total = 0.0;
    for (s, w) in rule.mapped(0.0, t) {
        total += w * active_hazard(dgm, scenario, s)?;
    }
    Ok(total)
}

/// Cumulative hazard of one arm: the control DGM, optionally modified by a
/// hazard-ratio scenario.
#[derive(Debug, Clone, Copy)]
pub struct ArmHazard<'a> {
    pub dgm: &'a ControlDgm,
    pub scenario: Option<&'a HRScenario>,
}

impl ArmHazard<'_> {
    pub fn hazard(&self, t: f64) -> Result<f64, SimError> {
        match self.scenario {
            None => control_hazard(self.dgm, t),
            Some(s) => active_hazard(self.dgm, s, t),
        }
    }

    pub fn cumhaz(&self, t: f64) -> Result<f64, SimError> {
        if t <= 0.0 {
            return Ok(0.0);
        }
        match self.scenario {
            None => control_cumhaz(self.dgm, t),
            Some(s) => active_cumhaz(self.dgm, s, t),
        }
    }

    pub fn survival(&self, t: f64) -> Result<f64, SimError> {
        Ok((-self.cumhaz(t)?).exp())
    }

    /// Solves `H(t) = target` on `(0, hi]` given `H(hi) >= target`, to an
    /// absolute tolerance of 1e-10 in `t`.
    fn invert(&self, target: f64, hi: f64) -> Result<f64, SimError> {
        let (mut a, mut b) = (0.0, hi);
        let mut t = 0.5 * hi;
        for _ in 0..200 {
            let f = self.cumhaz(t)? - target;
            if f > 0.0 {
                b = t;
            } else {
                a = t;
            }
            if b - a < 1e-10 {
                break;
            }
            // Newton step when it stays inside the bracket, bisection otherwise.
            let h = if t > 0.0 { self.hazard(t)? } else { 0.0 };
            let newton = t - f / h;
            let next = if h > 0.0 && newton.is_finite() && newton > a && newton < b {
                newton
            } else {
                0.5 * (a + b)
            };
            if (next - t).abs() < 1e-12 {
                t = next;
                break;
            }
            t = next;
        }
        Ok(t)
    }
}

/// Default upper search bound when censoring is infinite.
pub const DEFAULT_T_MAX: f64 = 1000.0;

/// Simulated arm plus the number of subjects whose event time could not be
/// bracketed below `t_max` and were censored instead.
#[derive(Debug, Clone)]
pub struct SimulatedArm {
    pub times: Vec<f64>,
    pub events: Vec<bool>,
    pub unbracketed: usize,
}

/// Simulates `n` subjects by cumulative-hazard inversion with administrative
/// censoring at `censor_time` (may be infinite).
pub fn simulate_arm_raw<R: Rng>(
    arm: ArmHazard<'_>,
    n: usize,
    censor_time: f64,
    t_max: f64,
    rng: &mut R,
) -> Result<SimulatedArm, SimError> {
    let limit = censor_time.min(t_max);
    let h_limit = arm.cumhaz(limit)?;
    let mut out = SimulatedArm {
        times: Vec::with_capacity(n),
        events: Vec::with_capacity(n),
        unbracketed: 0,
    };
    for _ in 0..n {
        let e: f64 = rng.sample(Exp1);
        if h_limit < e {
            if censor_time > t_max {
                out.unbracketed += 1;
            }
            out.times.push(limit);
            out.events.push(false);
        } else {
            let t = arm.invert(e, limit)?;
            out.times.push(t.max(f64::MIN_POSITIVE));
            out.events.push(true);
        }
    }
    Ok(out)
}

/// Simulates one arm as a covariate-free dataset.
pub fn simulate_arm<R: Rng>(
    dgm: &ControlDgm,
    scenario: Option<&HRScenario>,
    n: usize,
    censor_time: f64,
    rng: &mut R,
) -> Result<SurvivalDataset, SimError> {
    let arm = simulate_arm_raw(
        ArmHazard { dgm, scenario },
        n,
        censor_time,
        DEFAULT_T_MAX,
        rng,
    )?;
    if arm.unbracketed > 0 {
        log::warn!("{} subjects censored at the search bound", arm.unbracketed);
    }
    let mut data = SurvivalDataset::new(Vec::new());
    for (t, e) in arm.times.into_iter().zip(arm.events) {
        data.push(t, e, &[]).expect("simulated times are positive");
    }
    Ok(data)
}

fn default_censor_time() -> f64 {
    5.0
}

fn default_t_max() -> f64 {
    DEFAULT_T_MAX
}

/// Declarative data-generating mechanism for a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub control_dgm: ControlDgm,
    /// Present for two-arm trials; the active arm gets covariate `arm = 1`.
    #[serde(default)]
    pub hr_scenario: Option<HRScenario>,
    pub n_per_arm: usize,
    #[serde(default = "default_censor_time")]
    pub censor_time: f64,
    pub n_replicates: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.control_dgm.validate()?;
        if let Some(s) = &self.hr_scenario {
            s.validate()?;
        }
        if self.n_per_arm == 0 {
            return Err(SimError::InvalidConfig("n_per_arm must be positive".into()));
        }
        if !(self.censor_time > 0.0) {
            return Err(SimError::InvalidConfig(
                "censor_time must be positive".into(),
            ));
        }
        if self.n_replicates == 0 {
            return Err(SimError::InvalidConfig(
                "n_replicates must be positive".into(),
            ));
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(SimError::InvalidConfig(
                "t_max must be positive and finite".into(),
            ));
        }
        Ok(())
    }

    pub fn two_arm(&self) -> bool {
        self.hr_scenario.is_some()
    }

    /// Simulates replicate `r` from the stream derived from `(base_seed, r)`.
    pub fn simulate_replicate(&self, r: usize) -> Result<SurvivalDataset, SimError> {
        let mut rng = replicate_rng(self.base_seed, r);
        let control = ArmHazard {
            dgm: &self.control_dgm,
            scenario: None,
        };
        let mut arms = vec![(0.0, control)];
        if let Some(s) = &self.hr_scenario {
            arms.push((
                1.0,
                ArmHazard {
                    dgm: &self.control_dgm,
                    scenario: Some(s),
                },
            ));
        }
        let names = if self.two_arm() {
            vec!["arm".to_string()]
        } else {
            Vec::new()
        };
        let mut data = SurvivalDataset::new(names);
        for (x, arm) in arms {
            let sim =
                simulate_arm_raw(arm, self.n_per_arm, self.censor_time, self.t_max, &mut rng)?;
            if sim.unbracketed > 0 {
                log::warn!(
                    "replicate {r}: {} subjects censored at t_max",
                    sim.unbracketed
                );
            }
            let cov: &[f64] = if self.two_arm() { &[x] } else { &[] };
            for (t, e) in sim.times.into_iter().zip(sim.events) {
                data.push(t, e, cov).expect("simulated rows are valid");
            }
        }
        Ok(data)
    }
}

/// Data stream for replicate `r`.
pub fn replicate_rng(base_seed: u64, r: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(r as u64);
    rng
}

/// Seed for fitting replicate `r`, decorrelated from the data stream.
pub fn replicate_fit_seed(base_seed: u64, r: usize) -> u64 {
    // SplitMix64 finaliser over the combined key.
    let mut z = base_seed
        ^ (r as u64)
            .wrapping_add(0x9E37_79B9_7F4A_7C15)
            .wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueEstimands {
    pub rmst_control: f64,
    pub rmst_active: Option<f64>,
    pub rmstd: Option<f64>,
}

/// RMST of one arm by adaptive quadrature of its survival function.
pub fn true_rmst(arm: ArmHazard<'_>, horizon: f64) -> Result<f64, SimError> {
    if horizon <= 0.0 {
        return Ok(0.0);
    }
    // Validate the domain once; the integrand itself cannot fail afterwards.
    arm.cumhaz(horizon)?;
    Ok(integrate_adaptive(
        |t| arm.survival(t).unwrap_or(f64::NAN),
        0.0,
        horizon,
        1e-12,
    ))
}

pub fn true_estimand(config: &ScenarioConfig, horizon: f64) -> Result<TrueEstimands, SimError> {
    config.control_dgm.validate()?;
    let rmst_control = true_rmst(
        ArmHazard {
            dgm: &config.control_dgm,
            scenario: None,
        },
        horizon,
    )?;
    let rmst_active = match &config.hr_scenario {
        Some(s) => Some(true_rmst(
            ArmHazard {
                dgm: &config.control_dgm,
                scenario: Some(s),
            },
            horizon,
        )?),
        None => None,
    };
    Ok(TrueEstimands {
        rmst_control,
        rmst_active,
        rmstd: rmst_active.map(|a| a - rmst_control),
    })
}

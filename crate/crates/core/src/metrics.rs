//! Simulation-study performance measures with Monte Carlo standard errors.
//!
//! With `n` replicate estimates `e_r`, truth `theta` and posterior SDs `s_r`:
//!
//! ```text
//! bias     = mean(e) - theta             MCSE = EmpSE / sqrt(n)
//! EmpSE    = sd(e)                       MCSE = EmpSE / sqrt(2 (n - 1))
//! coverage = P(ci_low <= theta <= ci_high)   MCSE = sqrt(p (1 - p) / n)
//! mean SD  = mean(s)                     MCSE = sd(s) / sqrt(n)
//! ModSE    = sqrt(mean(s^2))             (auxiliary)
//! ```

use crate::inference::RHAT_THRESHOLD;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// ESS below which a replicate is flagged.
pub const LOW_ESS: f64 = 400.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("need at least 2 records, got {0}")]
    TooFewRecords(usize),
    #[error("non-finite estimate in replicate {0}")]
    NonFinite(usize),
}

/// One replicate's summary of the target estimand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub estimate: f64,
    pub posterior_sd: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub converged: bool,
    pub rhat_max: f64,
    pub ess_bulk_min: f64,
    pub ess_tail_min: f64,
    pub divergences: usize,
    pub runtime_seconds: f64,
}

impl ReplicateRecord {
    pub fn covers(&self, truth: f64) -> bool {
        self.ci_low <= truth && truth <= self.ci_high
    }

    pub fn rhat_high(&self) -> bool {
        self.rhat_max > RHAT_THRESHOLD
    }

    pub fn low_ess(&self) -> bool {
        self.ess_bulk_min < LOW_ESS || self.ess_tail_min < LOW_ESS
    }
}

/// An estimate with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WithMcse {
    pub value: f64,
    pub mcse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceTable {
    pub n_replicates: usize,
    pub truth: f64,
    pub mean_estimate: WithMcse,
    pub bias: WithMcse,
    /// Percent; `None` when the truth is zero.
    pub relative_bias_pct: Option<WithMcse>,
    pub emp_se: WithMcse,
    pub mean_posterior_sd: WithMcse,
    pub rms_model_se: f64,
    /// Percent.
    pub coverage_pct: WithMcse,
    pub pct_rhat_high: f64,
    pub pct_divergent: f64,
    pub pct_low_ess: f64,
    pub mean_runtime_seconds: f64,
}

fn mean(v: impl Iterator<Item = f64>) -> (f64, usize) {
    let (s, n) = v.fold((0.0, 0), |(s, n), x| (s + x, n + 1));
    (s / n as f64, n)
}

fn sample_sd(v: &[f64]) -> f64 {
    let (m, n) = mean(v.iter().copied());
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt()
}

fn pct(records: &[ReplicateRecord], f: impl Fn(&ReplicateRecord) -> bool) -> f64 {
    100.0 * records.iter().filter(|r| f(r)).count() as f64 / records.len() as f64
}

pub fn performance(
    records: &[ReplicateRecord],
    truth: f64,
) -> Result<PerformanceTable, MetricsError> {
    let n = records.len();
    if n < 2 {
        return Err(MetricsError::TooFewRecords(n));
    }
    if let Some(r) = records.iter().find(|r| !r.estimate.is_finite()) {
        return Err(MetricsError::NonFinite(r.replicate));
    }
    let nf = n as f64;
    let est: Vec<f64> = records.iter().map(|r| r.estimate).collect();
    let sds: Vec<f64> = records.iter().map(|r| r.posterior_sd).collect();
    let (m, _) = mean(est.iter().copied());
    let emp_se = sample_sd(&est);
    let bias = WithMcse {
        value: m - truth,
        mcse: emp_se / nf.sqrt(),
    };
    let relative_bias_pct = (truth != 0.0).then(|| WithMcse {
        value: 100.0 * bias.value / truth,
        mcse: 100.0 * bias.mcse / truth.abs(),
    });
    let p = records.iter().filter(|r| r.covers(truth)).count() as f64 / nf;
    let (mean_sd, _) = mean(sds.iter().copied());
    let (mean_var, _) = mean(sds.iter().map(|s| s * s));
    Ok(PerformanceTable {
        n_replicates: n,
        truth,
        mean_estimate: WithMcse {
            value: m,
            mcse: emp_se / nf.sqrt(),
        },
        bias,
        relative_bias_pct,
        emp_se: WithMcse {
            value: emp_se,
            mcse: emp_se / (2.0 * (nf - 1.0)).sqrt(),
        },
        mean_posterior_sd: WithMcse {
            value: mean_sd,
            mcse: sample_sd(&sds) / nf.sqrt(),
        },
        rms_model_se: mean_var.sqrt(),
        coverage_pct: WithMcse {
            value: 100.0 * p,
            mcse: 100.0 * (p * (1.0 - p) / nf).sqrt(),
        },
        pct_rhat_high: pct(records, ReplicateRecord::rhat_high),
        pct_divergent: pct(records, |r| r.divergences > 0),
        pct_low_ess: pct(records, ReplicateRecord::low_ess),
        mean_runtime_seconds: mean(records.iter().map(|r| r.runtime_seconds)).0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FilterPolicy {
    /// Keep every replicate; convergence is reported separately.
    #[default]
    KeepAll,
    /// Drop replicates whose maximum R-hat exceeds the threshold.
    Strict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionReport {
    pub total: usize,
    pub non_converged: usize,
    pub excluded: usize,
}

pub fn filter_converged(
    records: &[ReplicateRecord],
    policy: FilterPolicy,
) -> (Vec<ReplicateRecord>, ExclusionReport) {
    let non_converged = records.iter().filter(|r| r.rhat_high()).count();
    let kept: Vec<ReplicateRecord> = match policy {
        FilterPolicy::KeepAll => records.to_vec(),
        FilterPolicy::Strict => records.iter().filter(|r| !r.rhat_high()).cloned().collect(),
    };
    let report = ExclusionReport {
        total: records.len(),
        non_converged,
        excluded: records.len() - kept.len(),
    };
    (kept, report)
}

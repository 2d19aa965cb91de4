//! CSV row types for every file the commands write, with matching readers.
//!
//! All times are in years. Floats use Rust's shortest round-trip
//! formatting, so every file parses back to identical values.
//!
//! | file | columns |
//! |------|---------|
//! | `records_<model>.csv` | replicate, estimate, posterior_sd, ci_low, ci_high, converged, rhat_max, ess_bulk_min, ess_tail_min, divergences |
//! | `timing_<model>.csv` | replicate, runtime_seconds |
//! | `failures_<model>.csv` | replicate, error |
//! | `curve_records_<model>.csv` | replicate, t, value |
//! | `curves_<model>.csv` | t, profile, truth, median, ci_low, ci_high |
//! | `performance.csv` | see [`PerformanceRow`] |
//!
//! Runtimes live in the timing sidecar so that record files are
//! byte-identical across repeated runs.

use super::CliError;
use crate::metrics::{PerformanceTable, ReplicateRecord};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordRow {
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
}

impl RecordRow {
    pub fn from_record(r: &ReplicateRecord) -> Self {
        Self {
            replicate: r.replicate,
            estimate: r.estimate,
            posterior_sd: r.posterior_sd,
            ci_low: r.ci_low,
            ci_high: r.ci_high,
            converged: r.converged,
            rhat_max: r.rhat_max,
            ess_bulk_min: r.ess_bulk_min,
            ess_tail_min: r.ess_tail_min,
            divergences: r.divergences,
        }
    }

    pub fn into_record(self, runtime_seconds: f64) -> ReplicateRecord {
        ReplicateRecord {
            replicate: self.replicate,
            estimate: self.estimate,
            posterior_sd: self.posterior_sd,
            ci_low: self.ci_low,
            ci_high: self.ci_high,
            converged: self.converged,
            rhat_max: self.rhat_max,
            ess_bulk_min: self.ess_bulk_min,
            ess_tail_min: self.ess_tail_min,
            divergences: self.divergences,
            runtime_seconds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub replicate: usize,
    pub runtime_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRow {
    pub replicate: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRecordRow {
    pub replicate: usize,
    pub t: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub t: f64,
    pub profile: String,
    pub truth: Option<f64>,
    pub median: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterRow {
    pub parameter: String,
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    pub q2_5: f64,
    pub q97_5: f64,
    pub rhat: Option<f64>,
    pub ess_bulk: Option<f64>,
    pub ess_tail: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimandRow {
    pub estimand: String,
    pub point: f64,
    pub sd: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// One performance-table row; percentages are in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceRow {
    pub model: String,
    pub estimand: String,
    pub n_replicates: usize,
    pub n_failed: usize,
    pub n_excluded: usize,
    pub truth: f64,
    pub mean_estimate: f64,
    pub mean_estimate_mcse: f64,
    pub bias: f64,
    pub bias_mcse: f64,
    pub relative_bias_pct: Option<f64>,
    pub relative_bias_pct_mcse: Option<f64>,
    pub emp_se: f64,
    pub emp_se_mcse: f64,
    pub mean_posterior_sd: f64,
    pub mean_posterior_sd_mcse: f64,
    pub rms_model_se: f64,
    pub coverage_pct: f64,
    pub coverage_pct_mcse: f64,
    pub pct_rhat_gt_1_05: f64,
    pub pct_divergent: f64,
    pub pct_ess_lt_400: f64,
    pub mean_runtime_seconds: f64,
}

impl PerformanceRow {
    pub fn new(
        model: &str,
        estimand: &str,
        t: &PerformanceTable,
        n_failed: usize,
        n_excluded: usize,
    ) -> Self {
        Self {
            model: model.to_string(),
            estimand: estimand.to_string(),
            n_replicates: t.n_replicates,
            n_failed,
            n_excluded,
            truth: t.truth,
            mean_estimate: t.mean_estimate.value,
            mean_estimate_mcse: t.mean_estimate.mcse,
            bias: t.bias.value,
            bias_mcse: t.bias.mcse,
            relative_bias_pct: t.relative_bias_pct.map(|r| r.value),
            relative_bias_pct_mcse: t.relative_bias_pct.map(|r| r.mcse),
            emp_se: t.emp_se.value,
            emp_se_mcse: t.emp_se.mcse,
            mean_posterior_sd: t.mean_posterior_sd.value,
            mean_posterior_sd_mcse: t.mean_posterior_sd.mcse,
            rms_model_se: t.rms_model_se,
            coverage_pct: t.coverage_pct.value,
            coverage_pct_mcse: t.coverage_pct.mcse,
            pct_rhat_gt_1_05: t.pct_rhat_high,
            pct_divergent: t.pct_divergent,
            pct_ess_lt_400: t.pct_low_ess,
            mean_runtime_seconds: t.mean_runtime_seconds,
        }
    }
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}

/// Writes `rows` with an explicit header (so empty files still carry one).
pub fn write_rows_with_header<T: Serialize>(
    path: &Path,
    header: &[&str],
    rows: &[T],
) -> Result<(), CliError> {
    if !rows.is_empty() {
        return write_rows(path, rows);
    }
    let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header)?;
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}

pub fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut r = csv::Reader::from_reader(std::io::BufReader::new(file));
    r.deserialize()
        .map(|row| row.map_err(CliError::from))
        .collect()
}

/// Reads a records file and joins runtimes from its timing sidecar when one
/// exists (missing runtimes read as NaN).
pub fn read_records(path: &Path) -> Result<Vec<ReplicateRecord>, CliError> {
    let rows: Vec<RecordRow> = read_rows(path)?;
    let timing: BTreeMap<usize, f64> = match timing_path_for(path) {
        Some(p) if p.exists() => read_rows::<TimingRow>(&p)?
            .into_iter()
            .map(|t| (t.replicate, t.runtime_seconds))
            .collect(),
        _ => BTreeMap::new(),
    };
    Ok(rows
        .into_iter()
        .map(|r| {
            let rt = timing.get(&r.replicate).copied().unwrap_or(f64::NAN);
            r.into_record(rt)
        })
        .collect())
}

/// `records_X.csv` -> `timing_X.csv` in the same directory.
pub fn timing_path_for(records: &Path) -> Option<std::path::PathBuf> {
    let name = records.file_name()?.to_str()?;
    let rest = name.strip_prefix("records_")?;
    Some(records.with_file_name(format!("timing_{rest}")))
}

pub const RECORD_HEADER: &[&str] = &[
    "replicate",
    "estimate",
    "posterior_sd",
    "ci_low",
    "ci_high",
    "converged",
    "rhat_max",
    "ess_bulk_min",
    "ess_tail_min",
    "divergences",
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_round_trip_with_timing() {
        let dir = tempfile::tempdir().unwrap();
        let rec = ReplicateRecord {
            replicate: 3,
            estimate: 3.123456789012345,
            posterior_sd: 0.1,
            ci_low: 2.9,
            ci_high: 3.3,
            converged: true,
            rhat_max: f64::NAN,
            ess_bulk_min: 1234.5,
            ess_tail_min: 999.0,
            divergences: 2,
            runtime_seconds: 0.25,
        };
        let path = dir.path().join("records_m.csv");
        write_rows(&path, &[RecordRow::from_record(&rec)]).unwrap();
        write_rows(
            &timing_path_for(&path).unwrap(),
            &[TimingRow {
                replicate: 3,
                runtime_seconds: 0.25,
            }],
        )
        .unwrap();
        let back = read_records(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].estimate, rec.estimate);
        assert!(back[0].rhat_max.is_nan());
        assert_eq!(back[0].runtime_seconds, 0.25);
    }

    #[test]
    fn empty_files_keep_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records_x.csv");
        write_rows_with_header::<RecordRow>(&path, RECORD_HEADER, &[]).unwrap();
        assert!(read_records(&path).unwrap().is_empty());
        assert!(std::fs::read_to_string(&path)
            .unwrap()
            .starts_with("replicate,estimate"));
    }
}

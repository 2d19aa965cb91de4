//! Resumable simulation study over a model grid.

use super::config::{GridCell, StudyConfig};
use super::output::{
    read_records, read_rows, write_rows, write_rows_with_header, CurveRecordRow, CurveRow,
    FailureRow, PerformanceRow, RecordRow, TimingRow, RECORD_HEADER,
};
use super::CliError;
use crate::basis::quantile_sorted;
use crate::estimands::{curve, rmst_draws, rmstd_draws, summarize, CurveKind};
use crate::inference::fit;
use crate::metrics::{filter_converged, performance, FilterPolicy, ReplicateRecord};
use crate::simgen::{hazard_ratio, replicate_fit_seed, true_estimand, ArmHazard};
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Clone)]
pub struct StudyOptions {
    /// Base seed for data generation and fitting; overrides the scenario's.
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Overrides the configured worker count.
    pub workers: Option<usize>,
    pub policy: FilterPolicy,
}

#[derive(Debug, Clone)]
pub struct StudySummary {
    pub output_dir: PathBuf,
    pub truth: f64,
    pub performance: Vec<PerformanceRow>,
    /// Replicate fits run now (not read back from earlier runs).
    pub fitted: usize,
    pub reused: usize,
    pub failed: usize,
}

/// Paths of one grid cell's output files.
pub struct CellFiles {
    pub records: PathBuf,
    pub timing: PathBuf,
    pub failures: PathBuf,
    pub curve_records: PathBuf,
    pub curves: PathBuf,
}

impl CellFiles {
    pub fn new(dir: &Path, label: &str) -> Self {
        Self {
            records: dir.join(format!("records_{label}.csv")),
            timing: dir.join(format!("timing_{label}.csv")),
            failures: dir.join(format!("failures_{label}.csv")),
            curve_records: dir.join(format!("curve_records_{label}.csv")),
            curves: dir.join(format!("curves_{label}.csv")),
        }
    }
}

struct ReplicateResult {
    record: ReplicateRecord,
    curve: Vec<f64>,
}

/// Which estimand and curve the study targets.
struct Target {
    two_arm: bool,
    truth: f64,
    grid: Vec<f64>,
    true_curve: Vec<f64>,
}

impl Target {
    fn estimand_name(&self) -> &'static str {
        if self.two_arm {
            "rmstd"
        } else {
            "rmst"
        }
    }

    fn curve_kind(&self) -> CurveKind {
        if self.two_arm {
            CurveKind::HazardRatio
        } else {
            CurveKind::Survival
        }
    }
}

fn build_target(cfg: &StudyConfig) -> Result<Target, CliError> {
    let horizon = cfg.estimand.horizon;
    let truths = true_estimand(&cfg.scenario, horizon)?;
    let two_arm = cfg.scenario.two_arm();
    let grid = cfg.estimand.curve_grid();
    let true_curve = match &cfg.scenario.hr_scenario {
        Some(s) => grid.iter().map(|&t| hazard_ratio(s, t)).collect(),
        None => {
            let arm = ArmHazard {
                dgm: &cfg.scenario.control_dgm,
                scenario: None,
            };
            grid.iter()
                .map(|&t| arm.survival(t))
                .collect::<Result<_, _>>()?
        }
    };
    Ok(Target {
        two_arm,
        truth: if two_arm {
            truths.rmstd.expect("two-arm truth")
        } else {
            truths.rmst_control
        },
        grid,
        true_curve,
    })
}

fn run_replicate(
    cfg: &StudyConfig,
    cell: &GridCell,
    target: &Target,
    seed: u64,
    r: usize,
) -> Result<ReplicateResult, CliError> {
    let start = Instant::now();
    let mut scenario = cfg.scenario.clone();
    scenario.base_seed = seed;
    let data = scenario.simulate_replicate(r)?;
    let spec = cell.model_config(target.two_arm).build(&data)?;
    let opts = cfg
        .sampler
        .fit_options(cell.method, replicate_fit_seed(seed, r));
    let post = fit(&spec, &data, &opts)?;
    let params = post.params(spec.layout())?;
    let (h, q) = (cfg.estimand.horizon, cfg.estimand.quad_nodes);
    let values = if target.two_arm {
        rmstd_draws(&params, &spec, &[1.0], &[0.0], h, q)?
    } else {
        rmst_draws(&params, &spec, &[], h, q)?
    };
    let s = summarize(target.estimand_name(), &values);
    let (x, x_ref): (&[f64], &[f64]) = if target.two_arm {
        (&[1.0], &[0.0])
    } else {
        (&[], &[])
    };
    let curve_values = curve(&params, &spec, target.curve_kind(), x, x_ref, &target.grid)?
        .into_iter()
        .map(|(_, c)| c.point)
        .collect();
    Ok(ReplicateResult {
        record: ReplicateRecord {
            replicate: r,
            estimate: s.point,
            posterior_sd: s.sd,
            ci_low: s.ci_low,
            ci_high: s.ci_high,
            converged: post.converged,
            rhat_max: post.rhat_max(),
            ess_bulk_min: post.ess_bulk_min(),
            ess_tail_min: post.ess_tail_min(),
            divergences: post.divergence_count,
            runtime_seconds: start.elapsed().as_secs_f64(),
        },
        curve: curve_values,
    })
}

/// Completed work for one cell, keyed by replicate.
#[derive(Default)]
struct CellState {
    records: BTreeMap<usize, ReplicateRecord>,
    curves: BTreeMap<usize, Vec<(f64, f64)>>,
    failures: BTreeMap<usize, String>,
}

impl CellState {
    fn load(files: &CellFiles) -> Result<Self, CliError> {
        let mut state = CellState::default();
        if files.records.exists() {
            for r in read_records(&files.records)? {
                state.records.insert(r.replicate, r);
            }
        }
        if files.curve_records.exists() {
            for row in read_rows::<CurveRecordRow>(&files.curve_records)? {
                state
                    .curves
                    .entry(row.replicate)
                    .or_default()
                    .push((row.t, row.value));
            }
        }
        // A replicate is complete only with both its record and its curve.
        state.records.retain(|r, _| state.curves.contains_key(r));
        state.curves.retain(|r, _| state.records.contains_key(r));
        Ok(state)
    }

    fn save(&self, files: &CellFiles) -> Result<(), CliError> {
        let rows: Vec<RecordRow> = self.records.values().map(RecordRow::from_record).collect();
        write_rows_with_header(&files.records, RECORD_HEADER, &rows)?;
        let timing: Vec<TimingRow> = self
            .records
            .values()
            .map(|r| TimingRow {
                replicate: r.replicate,
                runtime_seconds: r.runtime_seconds,
            })
            .collect();
        write_rows_with_header(&files.timing, &["replicate", "runtime_seconds"], &timing)?;
        let failures: Vec<FailureRow> = self
            .failures
            .iter()
            .map(|(&replicate, error)| FailureRow {
                replicate,
                error: error.clone(),
            })
            .collect();
        write_rows_with_header(&files.failures, &["replicate", "error"], &failures)?;
        let curves: Vec<CurveRecordRow> = self
            .curves
            .iter()
            .flat_map(|(&replicate, pts)| {
                pts.iter().map(move |&(t, value)| CurveRecordRow {
                    replicate,
                    t,
                    value,
                })
            })
            .collect();
        write_rows_with_header(&files.curve_records, &["replicate", "t", "value"], &curves)?;
        Ok(())
    }
}

/// Pointwise median and 2.5%/97.5% band of the replicate curves.
fn curve_band(state: &CellState, target: &Target) -> Vec<CurveRow> {
    let profile = match target.curve_kind() {
        CurveKind::HazardRatio => "hazard_ratio",
        _ => "survival",
    };
    (0..target.grid.len())
        .filter_map(|k| {
            let mut v: Vec<f64> = state
                .curves
                .values()
                .filter_map(|pts| pts.get(k).map(|p| p.1))
                .filter(|x| x.is_finite())
                .collect();
            if v.is_empty() {
                return None;
            }
            v.sort_by(|a, b| a.total_cmp(b));
            Some(CurveRow {
                t: target.grid[k],
                profile: profile.to_string(),
                truth: Some(target.true_curve[k]),
                median: quantile_sorted(&v, 0.5),
                ci_low: quantile_sorted(&v, 0.025),
                ci_high: quantile_sorted(&v, 0.975),
            })
        })
        .collect()
}

pub fn run_study(cfg: &StudyConfig, opts: &StudyOptions) -> Result<StudySummary, CliError> {
    cfg.validate()?;
    let dir = &opts.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let target = build_target(cfg)?;
    let workers = opts.workers.unwrap_or(cfg.workers).max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let (mut fitted, mut reused, mut failed) = (0, 0, 0);
    let mut rows = Vec::new();

    for cell in &cfg.models {
        let label = cell.label(target.two_arm);
        let files = CellFiles::new(dir, &label);
        let mut state = CellState::load(&files)?;
        reused += state.records.len();
        let todo: Vec<usize> = (0..cfg.scenario.n_replicates)
            .filter(|r| !state.records.contains_key(r))
            .collect();
        state.failures.clear();
        log::info!(
            "{label}: {} replicates to fit, {} reused",
            todo.len(),
            state.records.len()
        );

        // Save after every chunk so an interrupted run loses little work.
        for chunk in todo.chunks(4 * workers) {
            let results: Vec<(usize, Result<ReplicateResult, CliError>)> = pool.install(|| {
                chunk
                    .par_iter()
                    .map(|&r| (r, run_replicate(cfg, cell, &target, opts.seed, r)))
                    .collect()
            });
            for (r, res) in results {
                match res {
                    Ok(out) => {
                        fitted += 1;
                        state.records.insert(r, out.record);
                        state
                            .curves
                            .insert(r, target.grid.iter().copied().zip(out.curve).collect());
                    }
                    Err(e) => {
                        failed += 1;
                        log::warn!("{label}: replicate {r} failed: {e}");
                        state.failures.insert(r, e.to_string());
                    }
                }
            }
            state.save(&files)?;
        }
        state.save(&files)?;
        write_rows(&files.curves, &curve_band(&state, &target))?;

        let records: Vec<ReplicateRecord> = state.records.values().cloned().collect();
        let (kept, report) = filter_converged(&records, opts.policy);
        match performance(&kept, target.truth) {
            Ok(table) => rows.push(PerformanceRow::new(
                &label,
                target.estimand_name(),
                &table,
                state.failures.len(),
                report.excluded,
            )),
            Err(e) => log::warn!("{label}: no performance row: {e}"),
        }
    }
    write_rows(&dir.join("performance.csv"), &rows)?;
    Ok(StudySummary {
        output_dir: dir.clone(),
        truth: target.truth,
        performance: rows,
        fitted,
        reused,
        failed,
    })
}

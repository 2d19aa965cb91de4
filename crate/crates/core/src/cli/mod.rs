//! Command implementations behind the `survspline` binary: `fit`,
//! `simulate`, `run-study` and `summarize`. Each command is an ordinary
//! function returning a report so it can be driven from code as well.
//!
//! Datasets are CSV files with a header `time,event[,covariate...]`, times
//! in years and `event` in {0, 1}.

pub mod config;
pub mod output;
pub mod study;

use crate::data::{DataError, SurvivalDataset};
use crate::estimands::{curve, linspace, rmst_draws, summarize, CurveKind, EstimandSummary};
use crate::inference::{fit, FitOptions, InferenceError};
use crate::metrics::{filter_converged, performance, FilterPolicy, MetricsError};
use crate::model::{ModelConfig, ModelError};
use crate::simgen::{true_estimand, ScenarioConfig, SimError};
pub use config::StudyConfig;
use output::{write_rows, CurveRow, EstimandRow, ParameterRow, PerformanceRow};
use std::path::{Path, PathBuf};
pub use study::{run_study, StudyOptions, StudySummary};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitArgs {
    pub data: PathBuf,
    pub output_dir: PathBuf,
    pub model: ModelConfig,
    pub fit: FitOptions,
    pub horizon: f64,
    pub quad_nodes: usize,
    pub curve_points: usize,
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub n: usize,
    pub n_events: usize,
    pub converged: bool,
    pub rhat_max: f64,
    pub divergences: usize,
    pub runtime_seconds: f64,
    pub estimands: Vec<EstimandSummary>,
}

/// Covariate profiles: the all-zero reference and one per covariate set to 1.
fn profiles(names: &[String]) -> Vec<(String, Vec<f64>)> {
    let mut out = vec![("reference".to_string(), vec![0.0; names.len()])];
    for (s, name) in names.iter().enumerate() {
        let mut x = vec![0.0; names.len()];
        x[s] = 1.0;
        out.push((format!("{name}=1"), x));
    }
    out
}

fn curve_rows(
    draws: &[crate::model::ParamVector],
    spec: &crate::model::ModelSpec,
    kind: CurveKind,
    label: &str,
    x: &[f64],
    x_ref: &[f64],
    grid: &[f64],
) -> Result<Vec<CurveRow>, CliError> {
    Ok(curve(draws, spec, kind, x, x_ref, grid)?
        .into_iter()
        .map(|(t, s)| CurveRow {
            t,
            profile: label.to_string(),
            truth: None,
            median: s.point,
            ci_low: s.ci_low,
            ci_high: s.ci_high,
        })
        .collect())
}

/// Fits a dataset and writes `parameters.csv`, `estimands.csv` and curve
/// files (`curve_survival.csv`, `curve_hazard.csv`, and
/// `curve_hazard_ratio.csv` when covariates are modelled).
pub fn cmd_fit(args: &FitArgs) -> Result<FitReport, CliError> {
    let data = SurvivalDataset::load(&args.data)?;
    let spec = args.model.build(&data)?;
    let post = fit(&spec, &data, &args.fit)?;
    let dir = &args.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;

    let params: Vec<ParameterRow> = (0..post.dim())
        .map(|j| {
            let col = post.column(j);
            let s = summarize(&post.names[j], &col);
            let diag = post.diagnostics.as_ref().map(|d| d[j]);
            ParameterRow {
                parameter: post.names[j].clone(),
                mean: col.iter().sum::<f64>() / col.len() as f64,
                sd: s.sd,
                median: s.point,
                q2_5: s.ci_low,
                q97_5: s.ci_high,
                rhat: diag.map(|d| d.rhat),
                ess_bulk: diag.map(|d| d.ess_bulk),
                ess_tail: diag.map(|d| d.ess_tail),
            }
        })
        .collect();
    write_rows(&dir.join("parameters.csv"), &params)?;

    let draws = post.params(spec.layout())?;
    let profiles = profiles(&spec.covariate_names);
    let mut estimands = Vec::new();
    let mut rmst_by_profile = Vec::new();
    for (label, x) in &profiles {
        let v = rmst_draws(&draws, &spec, x, args.horizon, args.quad_nodes)?;
        estimands.push(summarize(&format!("rmst[{label}]"), &v));
        rmst_by_profile.push(v);
    }
    for (k, (label, _)) in profiles.iter().enumerate().skip(1) {
        let d: Vec<f64> = rmst_by_profile[k]
            .iter()
            .zip(&rmst_by_profile[0])
            .map(|(a, b)| a - b)
            .collect();
        estimands.push(summarize(&format!("rmstd[{label} vs reference]"), &d));
    }
    let rows: Vec<EstimandRow> = estimands
        .iter()
        .map(|s| EstimandRow {
            estimand: s.name.clone(),
            point: s.point,
            sd: s.sd,
            ci_low: s.ci_low,
            ci_high: s.ci_high,
        })
        .collect();
    write_rows(&dir.join("estimands.csv"), &rows)?;

    let t_end = args.horizon.max(data.max_time());
    let grid = linspace(
        t_end / args.curve_points.max(1) as f64,
        t_end,
        args.curve_points.max(1),
    );
    let reference = &profiles[0].1;
    let mut surv = Vec::new();
    let mut haz = Vec::new();
    let mut hr = Vec::new();
    for (k, (label, x)) in profiles.iter().enumerate() {
        surv.extend(curve_rows(
            &draws,
            &spec,
            CurveKind::Survival,
            label,
            x,
            reference,
            &grid,
        )?);
        haz.extend(curve_rows(
            &draws,
            &spec,
            CurveKind::Hazard,
            label,
            x,
            reference,
            &grid,
        )?);
        if k > 0 {
            hr.extend(curve_rows(
                &draws,
                &spec,
                CurveKind::HazardRatio,
                label,
                x,
                reference,
                &grid,
            )?);
        }
    }
    write_rows(&dir.join("curve_survival.csv"), &surv)?;
    write_rows(&dir.join("curve_hazard.csv"), &haz)?;
    if !hr.is_empty() {
        write_rows(&dir.join("curve_hazard_ratio.csv"), &hr)?;
    }
    Ok(FitReport {
        n: data.len(),
        n_events: data.n_events(),
        converged: post.converged,
        rhat_max: post.rhat_max(),
        divergences: post.divergence_count,
        runtime_seconds: post.runtime_seconds,
        estimands,
    })
}

#[derive(Debug, Clone, serde::Serialize)]
struct TruthRow {
    horizon: f64,
    rmst_control: f64,
    rmst_active: Option<f64>,
    rmstd: Option<f64>,
}

/// Reads a scenario from a TOML file holding either a bare scenario or a
/// full study configuration.
pub fn load_scenario(path: &Path) -> Result<ScenarioConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    match toml::from_str::<ScenarioConfig>(&text) {
        Ok(s) => {
            s.validate()?;
            Ok(s)
        }
        Err(scenario_err) => match StudyConfig::from_toml(&text) {
            Ok(study) => Ok(study.scenario),
            Err(_) => Err(CliError::Config(scenario_err.to_string())),
        },
    }
}

/// Writes `replicate_NNNN.csv` for every replicate plus `truth.csv`.
pub fn cmd_simulate(
    scenario: &ScenarioConfig,
    output_dir: &Path,
    seed: Option<u64>,
    horizon: f64,
) -> Result<Vec<PathBuf>, CliError> {
    let mut scenario = scenario.clone();
    if let Some(s) = seed {
        scenario.base_seed = s;
    }
    scenario.validate()?;
    std::fs::create_dir_all(output_dir).map_err(|e| CliError::io(output_dir, e))?;
    let mut paths = Vec::with_capacity(scenario.n_replicates);
    for r in 0..scenario.n_replicates {
        let path = output_dir.join(format!("replicate_{r:04}.csv"));
        scenario.simulate_replicate(r)?.save(&path)?;
        paths.push(path);
    }
    let t = true_estimand(&scenario, horizon)?;
    write_rows(
        &output_dir.join("truth.csv"),
        &[TruthRow {
            horizon,
            rmst_control: t.rmst_control,
            rmst_active: t.rmst_active,
            rmstd: t.rmstd,
        }],
    )?;
    Ok(paths)
}

/// Loads a study configuration and runs it into `opts.output_dir`.
pub fn cmd_run_study(config_path: &Path, opts: &StudyOptions) -> Result<StudySummary, CliError> {
    let cfg = StudyConfig::load(config_path)?;
    run_study(&cfg, opts)
}

/// Performance row for a records file against a known truth; written to
/// `output` when given.
pub fn cmd_summarize(
    records_path: &Path,
    truth: f64,
    policy: FilterPolicy,
    output: Option<&Path>,
) -> Result<PerformanceRow, CliError> {
    let records = output::read_records(records_path)?;
    let (kept, report) = filter_converged(&records, policy);
    let table = performance(&kept, truth)?;
    let model = records_path
        .file_stem()
        .and_then(|s| s.to_str())
        .map(|s| s.strip_prefix("records_").unwrap_or(s).to_string())
        .unwrap_or_default();
    let row = PerformanceRow::new(&model, "estimand", &table, 0, report.excluded);
    if let Some(out) = output {
        write_rows(out, std::slice::from_ref(&row))?;
    }
    Ok(row)
}

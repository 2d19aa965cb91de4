use std::path::Path;
use std::process::Command;
use survspline::cli::output::{
    read_records, read_rows, CurveRow, EstimandRow, ParameterRow, PerformanceRow,
};
use survspline::cli::{
    cmd_fit, cmd_simulate, cmd_summarize, run_study, FitArgs, StudyConfig, StudyOptions,
};
use survspline::data::SurvivalDataset;
use survspline::estimands::DEFAULT_QUAD_NODES;
use survspline::inference::{FitMethod, FitOptions};
use survspline::metrics::{performance, FilterPolicy};
use survspline::model::ModelConfig;
use survspline::simgen::{true_estimand, ControlDgm, ScenarioConfig};

fn exponential_scenario(n: usize, replicates: usize) -> ScenarioConfig {
    ScenarioConfig {
        control_dgm: ControlDgm::Exponential { rate: 0.2 },
        hr_scenario: None,
        n_per_arm: n,
        censor_time: 5.0,
        n_replicates: replicates,
        base_seed: 0,
        t_max: 1000.0,
    }
}

fn write_dataset(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("data.csv");
    let sc = ScenarioConfig {
        base_seed: 12,
        ..exponential_scenario(200, 1)
    };
    sc.simulate_replicate(0).unwrap().save(&path).unwrap();
    path
}

fn fit_args(data: &Path, out: &Path, method: FitMethod) -> FitArgs {
    FitArgs {
        data: data.to_path_buf(),
        output_dir: out.to_path_buf(),
        model: ModelConfig::default(),
        fit: FitOptions {
            method,
            ..Default::default()
        },
        horizon: 5.0,
        quad_nodes: DEFAULT_QUAD_NODES,
        curve_points: 25,
    }
}

#[test]
fn fit_writes_summaries_and_curves() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path());
    let out = dir.path().join("fit");
    let report = cmd_fit(&fit_args(&data, &out, FitMethod::Mcmc)).unwrap();
    assert!(report.converged);
    let rmst = &report.estimands[0];
    assert_eq!(rmst.name, "rmst[reference]");
    // Exponential(0.2) truth is 3.1606; 200 subjects give a posterior SD near 0.1.
    assert!((rmst.point - 3.1606).abs() < 0.4, "{}", rmst.point);
    assert!(rmst.ci_low < rmst.point && rmst.point < rmst.ci_high);

    let params: Vec<ParameterRow> = read_rows(&out.join("parameters.csv")).unwrap();
    assert_eq!(params[0].parameter, "log_eta");
    assert!(params.iter().all(|p| p.rhat.is_some()));
    let est: Vec<EstimandRow> = read_rows(&out.join("estimands.csv")).unwrap();
    assert_eq!(est.len(), 1);
    let surv: Vec<CurveRow> = read_rows(&out.join("curve_survival.csv")).unwrap();
    assert_eq!(surv.len(), 25);
    assert!(surv.windows(2).all(|w| w[1].median <= w[0].median));
    assert!(surv
        .iter()
        .all(|r| r.ci_low <= r.median && r.median <= r.ci_high));
    let haz: Vec<CurveRow> = read_rows(&out.join("curve_hazard.csv")).unwrap();
    assert_eq!(haz.len(), 25);
    assert!(!out.join("curve_hazard_ratio.csv").exists());
}

#[test]
fn laplace_fit_is_fast() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_dataset(dir.path());
    let start = std::time::Instant::now();
    let report = cmd_fit(&fit_args(
        &data,
        &dir.path().join("fit"),
        FitMethod::Laplace,
    ))
    .unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 5.0, "{elapsed} s");
    assert!((report.estimands[0].point - 3.1606).abs() < 0.4);
}

#[test]
fn missing_event_column_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "time,status\n1.0,1\n2.0,0\n").unwrap();
    let err = cmd_fit(&fit_args(&path, dir.path(), FitMethod::Laplace)).unwrap_err();
    assert!(err.to_string().contains("`event`"), "{err}");

    std::fs::write(&path, "time,event\n1.0,1\nabc,0\n").unwrap();
    let err = SurvivalDataset::load(&path).unwrap_err();
    assert!(err.to_string().contains("row 3"), "{err}");
}

fn study_config(scenario: ScenarioConfig, models: &str, sampler: &str) -> StudyConfig {
    let placeholder = "[scenario]\nn_per_arm = 1\nn_replicates = 1\n[scenario.control_dgm]\nkind = \"exponential\"\nrate = 1.0";
    let mut cfg = StudyConfig::from_toml(&format!(
        "schema_version = 1\n{sampler}\n{models}\n{placeholder}"
    ))
    .unwrap();
    cfg.scenario = scenario;
    cfg.validate().unwrap();
    cfg
}

fn options(dir: &Path, seed: u64) -> StudyOptions {
    StudyOptions {
        seed,
        output_dir: dir.to_path_buf(),
        workers: None,
        policy: FilterPolicy::KeepAll,
    }
}

#[test]
fn small_exponential_study_has_small_bias() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = study_config(
        exponential_scenario(200, 20),
        "[[models]]\nname = \"default\"",
        "",
    );
    let summary = run_study(&cfg, &options(dir.path(), 5)).unwrap();
    assert_eq!(summary.fitted, 20);
    assert_eq!(summary.failed, 0);
    let row = &summary.performance[0];
    assert!((summary.truth - 3.160602794).abs() < 1e-8);
    let rel = row.relative_bias_pct.unwrap();
    assert!(rel.abs() < 5.0, "relative bias {rel}%");
    assert!(row.bias_mcse > 0.0 && row.emp_se_mcse > 0.0 && row.coverage_pct_mcse >= 0.0);
    let written: Vec<PerformanceRow> = read_rows(&dir.path().join("performance.csv")).unwrap();
    assert_eq!(&written[0], row);
    let curves: Vec<CurveRow> = read_rows(&dir.path().join("curves_default.csv")).unwrap();
    assert_eq!(curves.len(), 20);
    assert!(curves.iter().all(|c| c.truth.is_some()));
}

const QUICK_SAMPLER: &str = "[sampler]\nchains = 2\nkept_draws_per_chain = 300\nwarmup = 300";

#[test]
fn interrupted_study_resumes_to_identical_records() {
    let models =
        "[[models]]\nname = \"a\"\ndf = 6\n[[models]]\nname = \"b\"\ndf = 6\nmethod = \"laplace\"";
    let full = tempfile::tempdir().unwrap();
    let cfg = study_config(exponential_scenario(120, 6), models, QUICK_SAMPLER);
    run_study(&cfg, &options(full.path(), 9)).unwrap();

    let resumed = tempfile::tempdir().unwrap();
    let partial = study_config(exponential_scenario(120, 3), models, QUICK_SAMPLER);
    run_study(&partial, &options(resumed.path(), 9)).unwrap();
    let summary = run_study(&cfg, &options(resumed.path(), 9)).unwrap();
    assert_eq!(summary.reused, 6);
    assert_eq!(summary.fitted, 6);

    for name in [
        "records_a.csv",
        "records_b.csv",
        "curve_records_a.csv",
        "curves_b.csv",
    ] {
        let a = std::fs::read(full.path().join(name)).unwrap();
        let b = std::fs::read(resumed.path().join(name)).unwrap();
        assert!(a == b, "{name} differs after resume");
    }
    // A third run has nothing left to fit.
    let again = run_study(&cfg, &options(resumed.path(), 9)).unwrap();
    assert_eq!((again.fitted, again.reused), (0, 12));
}

#[test]
fn two_arm_study_reports_rmstd_against_true_value() {
    let dir = tempfile::tempdir().unwrap();
    let mut scenario = exponential_scenario(150, 3);
    scenario.hr_scenario = Some(survspline::simgen::HRScenario::Constant { hr: 0.7 });
    let truth = true_estimand(&scenario, 5.0).unwrap().rmstd.unwrap();
    let cfg = study_config(scenario, "[[models]]\ndf = 6", QUICK_SAMPLER);
    let summary = run_study(&cfg, &options(dir.path(), 1)).unwrap();
    let row = &summary.performance[0];
    assert_eq!(row.model, "df6_rw_sigma2-1_ph_mcmc");
    assert_eq!(row.estimand, "rmstd");
    assert_eq!(row.truth, truth);
    assert!(dir
        .path()
        .join("curves_df6_rw_sigma2-1_ph_mcmc.csv")
        .exists());
}

#[test]
fn summarize_reproduces_direct_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = study_config(
        exponential_scenario(100, 4),
        "[[models]]\nname = \"m\"\ndf = 6\nmethod = \"laplace\"",
        QUICK_SAMPLER,
    );
    run_study(&cfg, &options(dir.path(), 2)).unwrap();
    let records_path = dir.path().join("records_m.csv");
    let records = read_records(&records_path).unwrap();
    assert_eq!(records.len(), 4);
    assert!(records.iter().all(|r| r.runtime_seconds.is_finite()));
    let out = dir.path().join("summary.csv");
    let row = cmd_summarize(&records_path, 3.16, FilterPolicy::KeepAll, Some(&out)).unwrap();
    let direct = performance(&records, 3.16).unwrap();
    assert_eq!(row.bias, direct.bias.value);
    assert_eq!(row.coverage_pct, direct.coverage_pct.value);
    let back: Vec<PerformanceRow> = read_rows(&out).unwrap();
    assert_eq!(back, vec![row]);
}

#[test]
fn simulate_writes_replicates_and_truth() {
    let dir = tempfile::tempdir().unwrap();
    let paths = cmd_simulate(&exponential_scenario(50, 3), dir.path(), Some(4), 5.0).unwrap();
    assert_eq!(paths.len(), 3);
    let first = SurvivalDataset::load(&paths[0]).unwrap();
    assert_eq!(first.len(), 50);
    // Round trip: the written file parses back to the simulated replicate.
    let sc = ScenarioConfig {
        base_seed: 4,
        ..exponential_scenario(50, 3)
    };
    assert_eq!(first, sc.simulate_replicate(0).unwrap());
    assert!(std::fs::read_to_string(dir.path().join("truth.csv"))
        .unwrap()
        .contains("3.16060279"));
}

#[test]
fn binary_requires_seed_for_studies() {
    let exe = env!("CARGO_BIN_EXE_survspline");
    let out = Command::new(exe)
        .args(["run-study", "--config", "missing.toml"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("empty.toml");
    std::fs::write(
        &cfg,
        "schema_version = 1\nmodels = []\n[scenario]\nn_per_arm = 10\nn_replicates = 1\n[scenario.control_dgm]\nkind = \"exponential\"\nrate = 0.2\n",
    )
    .unwrap();
    let out = Command::new(exe)
        .args(["run-study", "--seed", "1", "--out"])
        .arg(dir.path())
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("model grid is empty"));
}

#[test]
fn shipped_configs_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = StudyConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert!(!cfg.models.is_empty());
        true_estimand(&cfg.scenario, cfg.estimand.horizon).unwrap();
        n += 1;
    }
    assert_eq!(n, 4);
}

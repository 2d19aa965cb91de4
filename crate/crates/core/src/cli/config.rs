//! Study configuration file (TOML, schema version 1).
//!
//! ```toml
//! schema_version = 1
//! output_dir = "results/exponential"   # optional; the command line may override
//! workers = 1
//!
//! [scenario]
//! n_per_arm = 200
//! n_replicates = 200
//! censor_time = 5.0
//! [scenario.control_dgm]
//! kind = "exponential"
//! rate = 0.2
//!
//! [estimand]
//! horizon = 5.0
//! quad_nodes = 100
//! curve_points = 20
//!
//! [sampler]
//! chains = 4
//! kept_draws_per_chain = 2000
//! warmup = 2000
//!
//! [[models]]
//! name = "df10_rw"
//! df = 10
//! sigma_prior = { shape = 2.0, rate = 1.0 }
//! ```
//!
//! Unknown keys are rejected at every level.

use super::CliError;
use crate::dist::{GammaPrior, NormalPrior};
use crate::inference::{FitMethod, FitOptions};
use crate::model::{CoefPrior, CovariateMode, ModelConfig};
use crate::simgen::ScenarioConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "one")]
    pub workers: usize,
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub estimand: EstimandSpec,
    #[serde(default)]
    pub sampler: SamplerSpec,
    pub models: Vec<GridCell>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimandSpec {
    /// Years.
    pub horizon: f64,
    pub quad_nodes: usize,
    /// Grid points on `(0, horizon]` for curve outputs; 0 disables curves.
    pub curve_points: usize,
}

impl Default for EstimandSpec {
    fn default() -> Self {
        Self {
            horizon: 5.0,
            quad_nodes: crate::estimands::DEFAULT_QUAD_NODES,
            curve_points: 20,
        }
    }
}

impl EstimandSpec {
    pub fn curve_grid(&self) -> Vec<f64> {
        let n = self.curve_points;
        (1..=n)
            .map(|i| self.horizon * i as f64 / n as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSpec {
    pub chains: usize,
    pub kept_draws_per_chain: usize,
    pub warmup: usize,
    pub target_accept: f64,
    pub max_tree_depth: usize,
}

impl Default for SamplerSpec {
    fn default() -> Self {
        let d = FitOptions::default();
        Self {
            chains: d.chains,
            kept_draws_per_chain: d.kept_draws_per_chain,
            warmup: d.warmup,
            target_accept: d.target_accept,
            max_tree_depth: d.max_tree_depth,
        }
    }
}

impl SamplerSpec {
    pub fn fit_options(&self, method: FitMethod, seed: u64) -> FitOptions {
        FitOptions {
            method,
            chains: self.chains,
            kept_draws_per_chain: self.kept_draws_per_chain,
            warmup: self.warmup,
            seed,
            target_accept: self.target_accept,
            max_tree_depth: self.max_tree_depth,
            ..Default::default()
        }
    }
}

/// One model setting in the study grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridCell {
    /// Used in output file names; derived from the settings when absent.
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default = "default_df")]
    pub df: usize,
    #[serde(default = "yes")]
    pub bsmooth: bool,
    #[serde(default)]
    pub coef_prior: CoefPrior,
    /// Defaults to proportional hazards for two-arm scenarios.
    #[serde(default)]
    pub covariate_mode: Option<CovariateMode>,
    #[serde(default = "default_gamma")]
    pub sigma_prior: GammaPrior,
    #[serde(default = "default_gamma")]
    pub tau_prior: GammaPrior,
    #[serde(default = "default_normal")]
    pub log_eta_prior: NormalPrior,
    #[serde(default = "default_normal")]
    pub beta_prior: NormalPrior,
    #[serde(default)]
    pub method: FitMethod,
}

fn default_df() -> usize {
    10
}
fn yes() -> bool {
    true
}
fn default_gamma() -> GammaPrior {
    GammaPrior::new(2.0, 1.0)
}
fn default_normal() -> NormalPrior {
    NormalPrior::new(0.0, 20.0)
}

impl Default for GridCell {
    fn default() -> Self {
        Self {
            name: None,
            df: default_df(),
            bsmooth: true,
            coef_prior: CoefPrior::RandomWalk,
            covariate_mode: None,
            sigma_prior: default_gamma(),
            tau_prior: default_gamma(),
            log_eta_prior: default_normal(),
            beta_prior: default_normal(),
            method: FitMethod::Mcmc,
        }
    }
}

impl GridCell {
    pub fn covariate_mode(&self, two_arm: bool) -> CovariateMode {
        self.covariate_mode.unwrap_or(if two_arm {
            CovariateMode::ProportionalHazards
        } else {
            CovariateMode::None
        })
    }

    pub fn label(&self, two_arm: bool) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        let prior = match self.coef_prior {
            CoefPrior::RandomWalk => "rw",
            CoefPrior::Exchangeable => "exch",
        };
        let mode = match self.covariate_mode(two_arm) {
            CovariateMode::None => "",
            CovariateMode::ProportionalHazards => "_ph",
            CovariateMode::NonProportionalHazards => "_nph",
        };
        format!(
            "df{}_{}_sigma{}-{}{}{}_{}",
            self.df,
            prior,
            self.sigma_prior.shape,
            self.sigma_prior.rate,
            if self.bsmooth { "" } else { "_std" },
            mode,
            self.method
        )
    }

    pub fn model_config(&self, two_arm: bool) -> ModelConfig {
        ModelConfig {
            df: self.df,
            degree: 3,
            bsmooth: self.bsmooth,
            coef_prior: self.coef_prior,
            covariate_mode: self.covariate_mode(two_arm),
            prior_sigma: self.sigma_prior,
            prior_tau: self.tau_prior,
            prior_log_eta: self.log_eta_prior,
            prior_beta: self.beta_prior,
        }
    }
}

impl StudyConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: StudyConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.scenario.validate()?;
        if self.models.is_empty() {
            return Err(CliError::Config("model grid is empty".into()));
        }
        if self.workers == 0 {
            return Err(CliError::Config("workers must be at least 1".into()));
        }
        if !(self.estimand.horizon > 0.0) || self.estimand.quad_nodes == 0 {
            return Err(CliError::Config(
                "horizon and quad_nodes must be positive".into(),
            ));
        }
        let two_arm = self.scenario.two_arm();
        let mut labels = std::collections::HashSet::new();
        for cell in &self.models {
            let label = cell.label(two_arm);
            if !labels.insert(label.clone()) {
                return Err(CliError::Config(format!("duplicate model name `{label}`")));
            }
            if label.is_empty() || label.contains(['/', '\\']) {
                return Err(CliError::Config(format!("invalid model name `{label}`")));
            }
            if two_arm && cell.covariate_mode(true) == CovariateMode::None {
                return Err(CliError::Config(format!(
                    "model `{label}` ignores the arm covariate in a two-arm scenario"
                )));
            }
            let priors = [cell.sigma_prior, cell.tau_prior];
            if priors.iter().any(|g| !(g.shape > 0.0 && g.rate > 0.0))
                || !(cell.log_eta_prior.sd > 0.0 && cell.beta_prior.sd > 0.0)
            {
                return Err(CliError::Config(format!(
                    "model `{label}` has an invalid prior"
                )));
            }
        }
        self.sampler.fit_options(FitMethod::Mcmc, 0).validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        schema_version = 1
        [scenario]
        n_per_arm = 50
        n_replicates = 3
        [scenario.control_dgm]
        kind = "exponential"
        rate = 0.2
        [[models]]
        df = 6
    "#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = StudyConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.estimand.horizon, 5.0);
        assert_eq!(cfg.sampler.chains, 4);
        assert_eq!(cfg.models[0].label(false), "df6_rw_sigma2-1_mcmc");
        assert_eq!(cfg.estimand.curve_grid().len(), 20);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(StudyConfig::from_toml(
            &MINIMAL.replace("schema_version = 1", "schema_version = 2")
        )
        .is_err());
        assert!(StudyConfig::from_toml(&format!("typo_key = 3\n{MINIMAL}")).is_err());
        let empty = format!(
            "models = []\n{}",
            MINIMAL.replace("[[models]]\n        df = 6", "")
        );
        let err = StudyConfig::from_toml(&empty).unwrap_err();
        assert!(err.to_string().contains("empty"), "{err}");
        let dup = format!("{MINIMAL}\n[[models]]\ndf = 6\n");
        assert!(StudyConfig::from_toml(&dup).is_err());
    }

    #[test]
    fn two_arm_defaults_to_ph_and_rejects_no_covariates() {
        let two = MINIMAL.replace(
            "[[models]]",
            "[scenario.hr_scenario]\nkind = \"constant\"\n[[models]]",
        );
        let cfg = StudyConfig::from_toml(&two).unwrap();
        assert_eq!(
            cfg.models[0].covariate_mode(true),
            CovariateMode::ProportionalHazards
        );
        let bad = two.replace("df = 6", "df = 6\ncovariate_mode = \"none\"");
        assert!(StudyConfig::from_toml(&bad).is_err());
    }
}

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use survspline::cli::{self, FitArgs, StudyOptions};
use survspline::dist::GammaPrior;
use survspline::inference::{FitMethod, FitOptions};
use survspline::metrics::FilterPolicy;
use survspline::model::{CoefPrior, CovariateMode, ModelConfig};

/// Bayesian M-spline survival models and simulation studies.
#[derive(Parser)]
#[command(name = "survspline", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a CSV dataset and write summaries and curves.
    Fit(FitCmd),
    /// Generate replicate datasets from a scenario file.
    Simulate {
        /// TOML scenario (or a full study configuration).
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scenario's base seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 5.0)]
        horizon: f64,
    },
    /// Run a simulation study; resumes from existing records in the output directory.
    RunStudy {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Defaults to `output_dir` from the configuration.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        /// Drop replicates with R-hat above 1.05 from performance rows.
        #[arg(long)]
        strict: bool,
    },
    /// Compute performance measures from a records file.
    Summarize {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        truth: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        strict: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Mcmc,
    Laplace,
}

#[derive(Clone, Copy, ValueEnum)]
enum PriorArg {
    RandomWalk,
    Exchangeable,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    None,
    Ph,
    NonPh,
}

#[derive(Args)]
struct FitCmd {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    df: usize,
    /// Use the standard basis instead of the smoothed-boundary one.
    #[arg(long)]
    no_bsmooth: bool,
    #[arg(long, value_enum, default_value_t = PriorArg::RandomWalk)]
    coef_prior: PriorArg,
    #[arg(long, value_enum, default_value_t = ModeArg::None)]
    covariate_mode: ModeArg,
    #[arg(long, default_value_t = 2.0)]
    sigma_shape: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma_rate: f64,
    #[arg(long, default_value_t = 2.0)]
    tau_shape: f64,
    #[arg(long, default_value_t = 1.0)]
    tau_rate: f64,
    #[arg(long, value_enum, default_value_t = MethodArg::Mcmc)]
    fit_method: MethodArg,
    #[arg(long, default_value_t = 4)]
    chains: usize,
    #[arg(long, default_value_t = 2000)]
    draws: usize,
    #[arg(long, default_value_t = 2000)]
    warmup: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 5.0)]
    horizon: f64,
    #[arg(long, default_value_t = 50)]
    curve_points: usize,
}

impl FitCmd {
    fn into_args(self) -> FitArgs {
        let model = ModelConfig {
            df: self.df,
            bsmooth: !self.no_bsmooth,
            coef_prior: match self.coef_prior {
                PriorArg::RandomWalk => CoefPrior::RandomWalk,
                PriorArg::Exchangeable => CoefPrior::Exchangeable,
            },
            covariate_mode: match self.covariate_mode {
                ModeArg::None => CovariateMode::None,
                ModeArg::Ph => CovariateMode::ProportionalHazards,
                ModeArg::NonPh => CovariateMode::NonProportionalHazards,
            },
            prior_sigma: GammaPrior::new(self.sigma_shape, self.sigma_rate),
            prior_tau: GammaPrior::new(self.tau_shape, self.tau_rate),
            ..Default::default()
        };
        let fit = FitOptions {
            method: match self.fit_method {
                MethodArg::Mcmc => FitMethod::Mcmc,
                MethodArg::Laplace => FitMethod::Laplace,
            },
            chains: self.chains,
            kept_draws_per_chain: self.draws,
            warmup: self.warmup,
            seed: self.seed,
            ..Default::default()
        };
        FitArgs {
            data: self.data,
            output_dir: self.out,
            model,
            fit,
            horizon: self.horizon,
            quad_nodes: survspline::estimands::DEFAULT_QUAD_NODES,
            curve_points: self.curve_points,
        }
    }
}

fn policy(strict: bool) -> FilterPolicy {
    if strict {
        FilterPolicy::Strict
    } else {
        FilterPolicy::KeepAll
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Fit(cmd) => {
            let args = cmd.into_args();
            let report =
                cli::cmd_fit(&args).with_context(|| format!("fitting {}", args.data.display()))?;
            println!(
                "n = {}, events = {}, runtime {:.2}s, converged {}, max R-hat {:.3}, divergences {}",
                report.n, report.n_events, report.runtime_seconds, report.converged, report.rhat_max, report.divergences
            );
            for e in &report.estimands {
                println!(
                    "{}: {:.4} (95% CrI {:.4} to {:.4})",
                    e.name, e.point, e.ci_low, e.ci_high
                );
            }
            println!("outputs written to {}", args.output_dir.display());
        }
        Command::Simulate {
            scenario,
            out,
            seed,
            horizon,
        } => {
            let sc = cli::load_scenario(&scenario)?;
            let paths = cli::cmd_simulate(&sc, &out, seed, horizon)?;
            println!("wrote {} datasets to {}", paths.len(), out.display());
        }
        Command::RunStudy {
            config,
            seed,
            out,
            workers,
            strict,
        } => {
            let cfg = cli::StudyConfig::load(&config)?;
            let Some(output_dir) = out.or_else(|| cfg.output_dir.clone()) else {
                bail!("no output directory: pass --out or set output_dir in the configuration");
            };
            let opts = StudyOptions {
                seed,
                output_dir,
                workers,
                policy: policy(strict),
            };
            let summary = cli::run_study(&cfg, &opts)?;
            println!(
                "fitted {}, reused {}, failed {}; truth {:.6}",
                summary.fitted, summary.reused, summary.failed, summary.truth
            );
            for row in &summary.performance {
                println!(
                    "{}: bias {:.4} ({:.4}), coverage {:.1}% ({:.1}), R-hat>1.05 {:.1}%",
                    row.model,
                    row.bias,
                    row.bias_mcse,
                    row.coverage_pct,
                    row.coverage_pct_mcse,
                    row.pct_rhat_gt_1_05
                );
            }
        }
        Command::Summarize {
            records,
            truth,
            out,
            strict,
        } => {
            let row = cli::cmd_summarize(&records, truth, policy(strict), out.as_deref())?;
            if out.is_none() {
                let mut w = csv::Writer::from_writer(std::io::stdout());
                w.serialize(&row)?;
                w.flush()?;
            }
        }
    }
    Ok(())
}

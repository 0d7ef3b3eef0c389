use std::fmt::Display;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use eopr_core::baselines::Method;
use eopr_core::evaluation::EffectShape;
use eopr_core::panel::{Layout, NormalizationScheme};
use eopr_core::simulation::WeightMode;

use crate::report::Format;

/// Ellipsoidal optimal recovery synthetic control.
///
/// Every option may also be given in a `--config` file as `key = value`
/// (key = long flag name). Flags override the file, the file overrides
/// defaults.
#[derive(Debug, Parser)]
#[command(name = "eopr", version)]
pub struct Cli {
    /// Flat `key = value` file with default settings.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit methods to a panel and write estimates, band, effects and scores.
    Fit(FitArgs),
    /// Generate a panel from the low-rank logistic model.
    Simulate(SimulateArgs),
    /// Refit with every control as placebo treated unit.
    Placebo(PlaceboArgs),
    /// Score EOpR over a grid of λ values.
    Ablate(AblateArgs),
    /// Aggregate scores over simulated panels.
    Sweep(SweepArgs),
    /// Align daily series on each unit's intervention date.
    Align(AlignArgs),
}

/// Comma-separated list.
#[derive(Debug, Clone, PartialEq)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T>
where
    T::Err: Display,
{
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let items = s
            .split(',')
            .map(str::trim)
            .filter(|x| !x.is_empty())
            .map(|x| x.parse::<T>().map_err(|e| format!("`{x}`: {e}")))
            .collect::<Result<Vec<T>, String>>()?;
        if items.is_empty() {
            return Err("empty list".into());
        }
        Ok(List(items))
    }
}

#[derive(Debug, Args)]
pub struct PanelArgs {
    /// Panel file.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// `wide` (default) or `long`.
    #[arg(long)]
    pub layout: Option<Layout>,
    /// Label of the treated unit.
    #[arg(long)]
    pub treated: Option<String>,
    /// Number of pre-intervention periods.
    #[arg(long)]
    pub t0: Option<usize>,
    /// `none` (default), `treated_pre_max` or `zscore`.
    #[arg(long)]
    pub normalize: Option<NormalizationScheme>,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Output directory (default `eopr_out`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `csv` (default) or `json-lines`.
    #[arg(long)]
    pub format: Option<Format>,
}

#[derive(Debug, Args)]
pub struct MethodArgs {
    /// Fixed λ for EOpR; skips holdout selection.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Candidate λ values for holdout selection.
    #[arg(long)]
    pub lambda_grid: Option<List<f64>>,
    /// Share of the pre-period held out when selecting λ.
    #[arg(long)]
    pub holdout_fraction: Option<f64>,
    /// RSC singular-value cutoff relative to the largest.
    #[arg(long)]
    pub rsc_ratio: Option<f64>,
    /// RSC ridge penalty.
    #[arg(long)]
    pub rsc_ridge: Option<f64>,
    /// Iteration cap of the SC/DSC simplex solver.
    #[arg(long)]
    pub qp_max_iters: Option<usize>,
    /// Duality-gap tolerance of the SC/DSC simplex solver.
    #[arg(long)]
    pub qp_tol: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub panel: PanelArgs,
    /// Methods to fit (default `eopr,sc,dsc,rsc`).
    #[arg(long)]
    pub methods: Option<List<Method>>,
    #[command(flatten)]
    pub method: MethodArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct PlaceboArgs {
    #[command(flatten)]
    pub panel: PanelArgs,
    /// Method used for every placebo fit (default `eopr`).
    #[arg(long = "method")]
    pub placebo_method: Option<Method>,
    #[command(flatten)]
    pub method: MethodArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub panel: PanelArgs,
    /// λ values to score; 0 is allowed (default `0` plus the selection grid).
    #[arg(long)]
    pub lambda_grid: Option<List<f64>>,
    /// Share of the pre-period held out when marking the selected λ.
    #[arg(long)]
    pub holdout_fraction: Option<f64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SimParams {
    /// Noise standard deviation (default 1).
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Size of each feature pool (default 10).
    #[arg(long)]
    pub pool_size: Option<usize>,
    /// `equal` (default) or `dirichlet` treated weights.
    #[arg(long)]
    pub weight_mode: Option<WeightMode>,
    /// Add noise to the treated unit (default true).
    #[arg(long)]
    pub treated_noise: Option<bool>,
    /// Base seed (default 0).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Units including the treated one (default 50).
    #[arg(long)]
    pub n_units: Option<usize>,
    /// Periods (default 200).
    #[arg(long)]
    pub t_total: Option<usize>,
    /// Pre-intervention periods (default 20).
    #[arg(long)]
    pub t0: Option<usize>,
    #[command(flatten)]
    pub sim: SimParams,
    /// Effect added to the treated post-period (default 0).
    #[arg(long)]
    pub effect: Option<f64>,
    /// `step` (default) or `ramp`.
    #[arg(long)]
    pub effect_shape: Option<EffectShape>,
    /// Output directory (default `eopr_out`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Unit counts to sweep (default 50).
    #[arg(long)]
    pub n_units: Option<List<usize>>,
    /// Period counts to sweep (default 200).
    #[arg(long)]
    pub t_total: Option<List<usize>>,
    /// Pre-period shares of `T` (default 0.1,0.2,…,0.9).
    #[arg(long)]
    pub t0_fractions: Option<List<f64>>,
    /// Seeded runs per configuration (default 10).
    #[arg(long)]
    pub repeats: Option<usize>,
    #[command(flatten)]
    pub sim: SimParams,
    /// Methods to compare (default `eopr,sc,dsc,rsc`).
    #[arg(long)]
    pub methods: Option<List<Method>>,
    /// Normalization applied before fitting (default `none`).
    #[arg(long)]
    pub normalize: Option<NormalizationScheme>,
    #[command(flatten)]
    pub method: MethodArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    /// Long `unit,time,value` file with ISO dates.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// `unit,intervention_date` file.
    #[arg(long)]
    pub dates: Option<PathBuf>,
    #[arg(long)]
    pub treated: Option<String>,
    /// Days kept before each intervention date.
    #[arg(long)]
    pub pre_days: Option<usize>,
    /// Days kept from each intervention date on.
    #[arg(long)]
    pub post_days: Option<usize>,
    /// Trailing moving-average window in days (default 1, no smoothing).
    #[arg(long)]
    pub smooth: Option<usize>,
    /// Treat values as cumulative counts and take daily differences first.
    #[arg(long)]
    pub difference: Option<bool>,
    /// Layout of the written panel (default `wide`).
    #[arg(long)]
    pub layout: Option<Layout>,
    /// Output directory (default `eopr_out`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

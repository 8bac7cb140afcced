//! Command-line options. Names follow the package options (`--par1`, `--bdwth-x`, ...).

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mmdfit::regression::{BandwidthX, TildeForm};
use mmdfit::{KernelFamily, Method, OptimizerConfig};

use crate::experiment::{Contamination, ExperimentName};

#[derive(Debug, Parser)]
#[command(name = "mmdfit", version, about = "Robust estimation by minimizing the maximum mean discrepancy")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a parametric model to the columns of a CSV file.
    Est(EstArgs),
    /// Fit a regression model.
    Reg(RegArgs),
    /// Run a seeded simulation study or airquality comparison.
    Experiment(ExperimentArgs),
}

/// A parameter given on the command line: `free`, or comma-separated values.
#[derive(Debug, Clone, PartialEq)]
pub enum ParValue {
    Free,
    Values(Vec<f64>),
}

impl ParValue {
    pub fn into_option(self) -> Option<Vec<f64>> {
        match self {
            ParValue::Free => None,
            ParValue::Values(v) => Some(v),
        }
    }
}

fn parse_par(s: &str) -> Result<ParValue, String> {
    if s == "free" {
        return Ok(ParValue::Free);
    }
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("'{t}' is not a number (use 'free' or comma-separated values)")))
        .collect::<Result<Vec<_>, _>>()
        .map(ParValue::Values)
}

fn parse_kernel(s: &str) -> Result<KernelFamily, String> {
    s.parse().map_err(|e: mmdfit::MmdError| e.to_string())
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: mmdfit::MmdError| e.to_string())
}

fn parse_positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("'{s}' is not a positive number")),
    }
}

/// A kernel bandwidth: the median heuristic or a given value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Auto,
    Value(f64),
}

impl Bandwidth {
    pub fn value(self) -> Option<f64> {
        match self {
            Bandwidth::Auto => None,
            Bandwidth::Value(v) => Some(v),
        }
    }
}

fn parse_bdwth(s: &str) -> Result<Bandwidth, String> {
    if s == "auto" {
        Ok(Bandwidth::Auto)
    } else {
        parse_positive(s).map(Bandwidth::Value)
    }
}

fn parse_bdwth_x(s: &str) -> Result<BandwidthX, String> {
    match s {
        "auto" => Ok(BandwidthX::Auto { rescale: None }),
        "0" => Ok(BandwidthX::Zero),
        other => match other.parse::<f64>() {
            Ok(0.0) => Ok(BandwidthX::Zero),
            _ => parse_positive(other).map(BandwidthX::Value),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Intercept {
    Auto,
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TildeFormArg {
    Squared,
    Root,
}

#[derive(Debug, Clone, Args)]
pub struct Control {
    /// Optimization method: auto, exact, GD or SGD.
    #[arg(long, default_value = "auto", value_parser = parse_method)]
    pub method: Method,
    #[arg(long, default_value_t = 50_000)]
    pub maxit: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Monte-Carlo draws (or sampled pairs) per stochastic gradient.
    #[arg(long, default_value_t = 64)]
    pub mc_samples: usize,
    /// Relative objective change below which gradient descent stops.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// SGD iterates discarded before averaging (default: half of maxit).
    #[arg(long)]
    pub burnin: Option<usize>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Also write the JSON artifact to this file.
    #[arg(long)]
    pub json_out: Option<PathBuf>,
    /// Record the wall-clock runtime in the JSON artifact.
    #[arg(long)]
    pub runtime: bool,
}

impl Control {
    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            method: self.method,
            maxit: self.maxit,
            seed: self.seed,
            mc_samples: self.mc_samples,
            tol: self.tol,
            burnin: self.burnin,
            ..OptimizerConfig::default()
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EstArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// Column to use; repeat for multivariate models (default: all columns).
    #[arg(long = "column")]
    pub columns: Vec<String>,
    /// Model id, e.g. Gaussian.loc or multidim.Gaussian.
    #[arg(long)]
    pub model: String,
    /// First parameter: starting value if estimated, required value if fixed.
    #[arg(long, value_parser = parse_par)]
    pub par1: Option<ParValue>,
    #[arg(long, value_parser = parse_par)]
    pub par2: Option<ParValue>,
    #[arg(long, default_value = "Gaussian", value_parser = parse_kernel)]
    pub kernel: KernelFamily,
    /// Bandwidth, or `auto` for the median heuristic.
    #[arg(long, default_value = "auto", value_parser = parse_bdwth)]
    pub bdwth: Bandwidth,
    #[command(flatten)]
    pub control: Control,
}

#[derive(Debug, Clone, Args)]
pub struct RegArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Response column.
    #[arg(long)]
    pub response: String,
    /// Comma-separated covariate columns (default: every other column).
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
    /// Replace each covariate by its degree-2 orthogonal polynomial basis.
    #[arg(long)]
    pub poly2: bool,
    /// Take the logarithm of the response.
    #[arg(long)]
    pub log_response: bool,
    #[arg(long, default_value = "linearGaussian")]
    pub model: String,
    /// Starting coefficients, intercept first when one is added.
    #[arg(long, value_parser = parse_par)]
    pub par1: Option<ParValue>,
    /// Noise scale or precision: starting value if estimated, required value if fixed.
    #[arg(long, value_parser = parse_par)]
    pub par2: Option<ParValue>,
    /// Kernel on the response (default depends on the model).
    #[arg(long, value_parser = parse_kernel)]
    pub kernel_y: Option<KernelFamily>,
    #[arg(long, default_value = "auto", value_parser = parse_bdwth)]
    pub bdwth_y: Bandwidth,
    #[arg(long, default_value = "Laplace", value_parser = parse_kernel)]
    pub kernel_x: KernelFamily,
    /// Covariate bandwidth: 0 (theta tilde), `auto` or a positive value.
    #[arg(long, default_value = "0", value_parser = parse_bdwth_x)]
    pub bdwth_x: BandwidthX,
    /// Factor applied to the median heuristic when `--bdwth-x auto` (default 1/n).
    #[arg(long, value_parser = parse_positive)]
    pub bdwth_x_rescale: Option<f64>,
    #[arg(long, value_enum, default_value_t = Intercept::Auto)]
    pub intercept: Intercept,
    /// Objective of theta tilde: mean of squared or of unsquared distances.
    #[arg(long, value_enum, default_value_t = TildeFormArg::Squared)]
    pub tilde_form: TildeFormArg,
    /// Largest sample size accepted by theta hat.
    #[arg(long, default_value_t = mmdfit::regression::HAT_BUDGET)]
    pub hat_budget: usize,
    #[command(flatten)]
    pub control: Control,
}

impl RegArgs {
    pub fn tilde_form(&self) -> TildeForm {
        match self.tilde_form {
            TildeFormArg::Squared => TildeForm::Squared,
            TildeFormArg::Root => TildeForm::Root,
        }
    }
}

fn parse_experiment(s: &str) -> Result<ExperimentName, String> {
    s.parse().map_err(|e: crate::CliError| e.to_string())
}

fn parse_contamination(s: &str) -> Result<Contamination, String> {
    s.parse().map_err(|e: crate::CliError| e.to_string())
}

#[derive(Debug, Clone, Args)]
pub struct ExperimentArgs {
    /// gauss-loc, gauss-scale, linreg-air or poisreg-air.
    #[arg(long, value_parser = parse_experiment)]
    pub name: ExperimentName,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub replications: usize,
    /// Sample size of each replication.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// none or cauchy-2pts (default: both).
    #[arg(long, value_parser = parse_contamination)]
    pub contamination: Option<Contamination>,
    /// Airquality CSV for the regression experiments.
    #[arg(long, default_value = "data/airquality.csv")]
    pub data: PathBuf,
    /// Directory receiving the table as CSV and JSON.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Also write an SVG bar chart (into --out-dir, or the working directory).
    #[arg(long)]
    pub plot: bool,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

//! Seeded simulation studies and the airquality regression comparisons.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use mmdfit::estimate::default_kernel;
use mmdfit::regression::{fit_regression, BandwidthX, RegModelId, RegressionModelSpec, RegressionProblem};
use mmdfit::{fit, KernelFamily, ModelId, ModelSpec, OptimizerConfig, Sample};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

use crate::baseline::{ols, poisson_glm};
use crate::data::{dropped_warning, expand_poly2, load_csv};
use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentName {
    GaussLoc,
    GaussScale,
    LinregAir,
    PoisregAir,
}

impl ExperimentName {
    pub const ALL: [ExperimentName; 4] =
        [ExperimentName::GaussLoc, ExperimentName::GaussScale, ExperimentName::LinregAir, ExperimentName::PoisregAir];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentName::GaussLoc => "gauss-loc",
            ExperimentName::GaussScale => "gauss-scale",
            ExperimentName::LinregAir => "linreg-air",
            ExperimentName::PoisregAir => "poisreg-air",
        }
    }
}

impl FromStr for ExperimentName {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentName::ALL.into_iter().find(|e| e.as_str() == s).ok_or_else(|| {
            let names: Vec<&str> = ExperimentName::ALL.iter().map(|e| e.as_str()).collect();
            CliError::Config(format!("unknown experiment '{s}'; valid experiments are: {}", names.join(", ")))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Contamination {
    None,
    /// Two of the `n` observations are replaced by standard Cauchy draws.
    Cauchy2,
}

impl Contamination {
    pub fn as_str(self) -> &'static str {
        match self {
            Contamination::None => "none",
            Contamination::Cauchy2 => "cauchy-2pts",
        }
    }

    fn label(self) -> &'static str {
        match self {
            Contamination::None => "no contamination",
            Contamination::Cauchy2 => "contamination by Cauchy",
        }
    }
}

impl FromStr for Contamination {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Contamination::None),
            "cauchy-2pts" => Ok(Contamination::Cauchy2),
            other => Err(CliError::Config(format!("unknown contamination '{other}' (expected none or cauchy-2pts)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub name: ExperimentName,
    pub seed: u64,
    pub replications: usize,
    pub n: usize,
    /// `None` runs both settings.
    pub contamination: Option<Contamination>,
    /// Airquality CSV for the regression experiments.
    pub data: PathBuf,
    pub optimizer: OptimizerConfig,
}

impl ExperimentConfig {
    pub fn new(name: ExperimentName, seed: u64) -> Self {
        ExperimentConfig {
            name,
            seed,
            replications: 200,
            n: 100,
            contamination: None,
            data: PathBuf::from("data/airquality.csv"),
            optimizer: OptimizerConfig::default(),
        }
    }
}

/// One table row: a setting (simulation studies) or a coefficient (regressions).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub label: String,
    pub values: Vec<f64>,
    /// Standard deviation of the absolute errors, for simulation studies.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spread: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub name: String,
    pub title: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replications: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    pub columns: Vec<String>,
    pub rows: Vec<ReportRow>,
    pub warnings: Vec<String>,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of replication `r` in setting `s`.
pub fn replication_seed(seed: u64, setting: u64, r: u64) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ setting) ^ r)
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

fn simulate(n: usize, loc: f64, contamination: Contamination, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let normal = Normal::new(loc, 1.0).expect("unit sd");
    let mut x: Vec<f64> = (0..n).map(|_| normal.sample(rng)).collect();
    if contamination == Contamination::Cauchy2 {
        let cauchy = Cauchy::new(0.0, 1.0).expect("unit scale");
        for v in x.iter_mut().take(2) {
            *v = cauchy.sample(rng);
        }
    }
    x
}

fn mmd_fit(model: &ModelSpec, x: &[f64], family: KernelFamily, cfg: &OptimizerConfig) -> Result<f64> {
    let data = Sample::from_scalars(x)?;
    let kernel = default_kernel(family, &data)?;
    let res = fit(model, &data, &kernel, cfg)?;
    let slot = usize::from(model.id() == ModelId::GaussianScale);
    Ok(res.estimates[slot][0])
}

fn sample_median(x: &[f64]) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn simulation_study(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let location = cfg.name == ExperimentName::GaussLoc;
    let (truth, model) = if location {
        (-2.0, ModelSpec::univariate(ModelId::GaussianLoc, None, Some(1.0))?)
    } else {
        (1.0, ModelSpec::univariate(ModelId::GaussianScale, Some(0.0), None)?)
    };
    let mut columns = vec!["MLE".to_string(), "MMD (Gaussian kernel)".to_string(), "MMD (Laplace kernel)".to_string()];
    if location {
        columns.push("median".to_string());
    }
    if cfg.replications == 0 || cfg.n < 3 {
        return Err(CliError::Config("experiments need at least 1 replication of at least 3 points".to_string()));
    }
    let settings = match cfg.contamination {
        Some(c) => vec![c],
        None => vec![Contamination::None, Contamination::Cauchy2],
    };
    let mut rows = Vec::new();
    for setting in settings {
        let setting_id = match setting {
            Contamination::None => 0,
            Contamination::Cauchy2 => 1,
        };
        let errors: Vec<Vec<f64>> = (0..cfg.replications)
            .into_par_iter()
            .map(|r| {
                let seed = replication_seed(cfg.seed, setting_id, r as u64);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x = simulate(cfg.n, if location { truth } else { 0.0 }, setting, &mut rng);
                let fit_cfg = OptimizerConfig { seed, ..cfg.optimizer.clone() };
                let mle = if location {
                    x.iter().sum::<f64>() / x.len() as f64
                } else {
                    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
                };
                let mut est = vec![
                    mle,
                    mmd_fit(&model, &x, KernelFamily::Gaussian, &fit_cfg)?,
                    mmd_fit(&model, &x, KernelFamily::Laplace, &fit_cfg)?,
                ];
                if location {
                    est.push(sample_median(&x));
                }
                Ok(est.into_iter().map(|e| (e - truth).abs()).collect())
            })
            .collect::<Result<_>>()?;
        let (values, spread): (Vec<f64>, Vec<f64>) = (0..columns.len())
            .map(|j| mean_sd(&errors.iter().map(|e| e[j]).collect::<Vec<_>>()))
            .unzip();
        rows.push(ReportRow { label: setting.label().to_string(), values, spread: Some(spread) });
    }
    let title = format!(
        "Mean absolute error, Gaussian {} model: {} replications of n = {} (seed {})",
        if location { "location" } else { "scale" },
        cfg.replications,
        cfg.n,
        cfg.seed
    );
    Ok(ExperimentReport {
        name: cfg.name.as_str().to_string(),
        title,
        seed: cfg.seed,
        replications: Some(cfg.replications),
        n: Some(cfg.n),
        columns,
        rows,
        warnings: Vec::new(),
    })
}

/// Response, design rows and the missing-row warning.
pub type Design = (Vec<f64>, Vec<Vec<f64>>, Option<String>);

/// Airquality response and degree-2 orthogonal polynomial design on Solar.R, Wind and Temp.
pub fn airquality_design(path: &std::path::Path) -> Result<Design> {
    let table = load_csv(path)?;
    let ozone = table.index_of("Ozone")?;
    let cols = [table.index_of("Solar.R")?, table.index_of("Wind")?, table.index_of("Temp")?];
    let x = expand_poly2(&table.select(&cols))?;
    Ok((table.column(ozone), x, dropped_warning(&table)))
}

fn regression_comparison(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let (ozone, x, dropped) = airquality_design(&cfg.data)?;
    let poisson = cfg.name == ExperimentName::PoisregAir;
    let (y, id, baseline_name): (Vec<f64>, _, _) = if poisson {
        (ozone, RegModelId::Poisson, "GLM")
    } else {
        (ozone.iter().map(|v| v.ln()).collect(), RegModelId::LinearGaussian, "OLS")
    };
    // the isolated observation: log(Ozone) = 0, or Ozone > 150
    let keep: Vec<usize> = (0..y.len()).filter(|&i| if poisson { y[i] <= 150.0 } else { y[i] >= 1.0 }).collect();
    let y_clean: Vec<f64> = keep.iter().map(|&i| y[i]).collect();
    let x_clean: Vec<Vec<f64>> = keep.iter().map(|&i| x[i].clone()).collect();
    let baseline = |y: &[f64], x: &[Vec<f64>]| if poisson { poisson_glm(y, x, true) } else { ols(y, x, true) };
    let full = baseline(&y, &x)?;
    let clean = baseline(&y_clean, &x_clean)?;

    let fit_cfg = OptimizerConfig { seed: cfg.seed, ..cfg.optimizer.clone() };
    let problem = RegressionProblem::new(y, x, RegressionModelSpec::new(id, None)?, None)?;
    let tilde = fit_regression(&problem, &fit_cfg)?;
    let hat_problem = problem.with_kernel_x(KernelFamily::Laplace, BandwidthX::Auto { rescale: None })?;
    let hat = fit_regression(&hat_problem, &fit_cfg)?;

    let mut warnings: Vec<String> = dropped.into_iter().collect();
    warnings.extend(tilde.warnings.iter().map(|w| format!("theta tilde: {w}")));
    warnings.extend(hat.warnings.iter().map(|w| format!("theta hat: {w}")));
    let mut rows: Vec<ReportRow> = tilde
        .coefficient_names
        .iter()
        .enumerate()
        .map(|(j, name)| ReportRow {
            label: name.clone(),
            values: vec![full[j], clean[j], tilde.coefficients[j], hat.coefficients[j]],
            spread: None,
        })
        .collect();
    if let (Some(a), Some(b)) = (tilde.aux, hat.aux) {
        rows.push(ReportRow { label: "noise sd".to_string(), values: vec![f64::NAN, f64::NAN, a, b], spread: None });
    }
    let title = format!(
        "Airquality {} regression: {} vs MMD (kernel for y: {} with bandwidth {:.4}; seed {})",
        if poisson { "Poisson" } else { "linear" },
        baseline_name,
        tilde.kernel_y.family(),
        tilde.kernel_y.bandwidth(),
        cfg.seed
    );
    Ok(ExperimentReport {
        name: cfg.name.as_str().to_string(),
        title,
        seed: cfg.seed,
        replications: None,
        n: None,
        columns: vec![
            format!("{baseline_name} (full)"),
            format!("{baseline_name} (outlier removed)"),
            "MMD theta tilde".to_string(),
            "MMD theta hat".to_string(),
        ],
        rows,
        warnings,
    })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    match cfg.name {
        ExperimentName::GaussLoc | ExperimentName::GaussScale => simulation_study(cfg),
        ExperimentName::LinregAir | ExperimentName::PoisregAir => regression_comparison(cfg),
    }
}

fn cell(v: f64) -> String {
    if v.is_nan() {
        "-".to_string()
    } else {
        format!("{v:.4}")
    }
}

impl ExperimentReport {
    pub fn value(&self, row: &str, column: &str) -> Option<f64> {
        let j = self.columns.iter().position(|c| c == column)?;
        self.rows.iter().find(|r| r.label == row).map(|r| r.values[j])
    }

    pub fn to_text(&self) -> String {
        let first = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(8) + 2;
        let widths: Vec<usize> = self.columns.iter().map(|c| c.len().max(9) + 2).collect();
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.title);
        let _ = write!(out, "{:first$}", "");
        for (c, w) in self.columns.iter().zip(&widths) {
            let _ = write!(out, "{c:>w$}");
        }
        out.push('\n');
        for row in &self.rows {
            let _ = write!(out, "{:<first$}", row.label);
            for (v, w) in row.values.iter().zip(&widths) {
                let _ = write!(out, "{:>w$}", cell(*v));
            }
            out.push('\n');
            if let Some(spread) = &row.spread {
                let _ = write!(out, "{:first$}", "");
                for (v, w) in spread.iter().zip(&widths) {
                    let _ = write!(out, "{:>w$}", format!("({v:.3})"));
                }
                out.push('\n');
            }
        }
        for w in &self.warnings {
            let _ = writeln!(out, "Warning: {w}");
        }
        out
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| CliError::Input(format!("cannot format the table: {e}"));
        if self.rows.iter().any(|r| r.spread.is_some()) {
            wtr.write_record(["setting", "estimator", "mae", "sd"]).map_err(csv_err)?;
            for row in &self.rows {
                let spread = row.spread.clone().unwrap_or_default();
                for (j, c) in self.columns.iter().enumerate() {
                    let sd = spread.get(j).map(|v| v.to_string()).unwrap_or_default();
                    wtr.write_record([row.label.as_str(), c, &row.values[j].to_string(), &sd]).map_err(csv_err)?;
                }
            }
        } else {
            let header: Vec<&str> = std::iter::once("coefficient").chain(self.columns.iter().map(String::as_str)).collect();
            wtr.write_record(&header).map_err(csv_err)?;
            for row in &self.rows {
                let mut rec = vec![row.label.clone()];
                rec.extend(row.values.iter().map(|v| if v.is_nan() { String::new() } else { v.to_string() }));
                wtr.write_record(&rec).map_err(csv_err)?;
            }
        }
        let bytes = wtr.into_inner().map_err(|e| CliError::Input(format!("cannot format the table: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    /// Grouped bar chart: one group per row, one bar per column.
    pub fn to_svg(&self) -> String {
        const COLORS: [&str; 4] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52"];
        let (w, h, margin) = (720.0, 400.0, 50.0);
        let values: Vec<f64> = self.rows.iter().flat_map(|r| r.values.iter().copied()).filter(|v| v.is_finite()).collect();
        let hi = values.iter().fold(0.0f64, |a, v| a.max(*v));
        let lo = values.iter().fold(0.0f64, |a, v| a.min(*v));
        let span = if hi > lo { hi - lo } else { 1.0 };
        let y_of = |v: f64| margin + (hi - v) / span * (h - 2.0 * margin);
        let group_w = (w - 2.0 * margin) / self.rows.len().max(1) as f64;
        let bar_w = group_w * 0.8 / self.columns.len().max(1) as f64;
        let mut svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"11\">\n"
        );
        let _ = writeln!(svg, "<text x=\"{margin}\" y=\"20\">{}</text>", escape(&self.title));
        let zero = y_of(0.0);
        let _ = writeln!(svg, "<line x1=\"{margin}\" y1=\"{zero:.1}\" x2=\"{:.1}\" y2=\"{zero:.1}\" stroke=\"black\"/>", w - margin);
        for (g, row) in self.rows.iter().enumerate() {
            let x0 = margin + g as f64 * group_w + group_w * 0.1;
            for (j, v) in row.values.iter().enumerate().filter(|(_, v)| v.is_finite()) {
                let (top, bottom) = if *v >= 0.0 { (y_of(*v), zero) } else { (zero, y_of(*v)) };
                let _ = writeln!(
                    svg,
                    "<rect x=\"{:.1}\" y=\"{top:.1}\" width=\"{bar_w:.1}\" height=\"{:.1}\" fill=\"{}\"/>",
                    x0 + j as f64 * bar_w,
                    (bottom - top).max(0.5),
                    COLORS[j % COLORS.len()]
                );
            }
            let _ = writeln!(svg, "<text x=\"{x0:.1}\" y=\"{:.1}\">{}</text>", h - margin + 15.0, escape(&row.label));
        }
        for (j, c) in self.columns.iter().enumerate() {
            let y = h - 18.0 + 0.0 * j as f64;
            let x = margin + j as f64 * 160.0;
            let _ = writeln!(svg, "<rect x=\"{x}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{}\"/>", y - 9.0, COLORS[j % COLORS.len()]);
            let _ = writeln!(svg, "<text x=\"{}\" y=\"{y}\">{}</text>", x + 14.0, escape(c));
        }
        svg.push_str("</svg>\n");
        svg
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

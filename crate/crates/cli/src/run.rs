//! Executes a parsed command line.

use std::path::{Path, PathBuf};
use std::time::Instant;

use mmdfit::estimate::default_kernel;
use mmdfit::regression::{BandwidthX, RegModelId, RegressionModelSpec, RegressionProblem};
use mmdfit::{fit, fit_regression, KernelSpec, ModelId, ModelSpec, Sample};

use crate::args::{Bandwidth, Cli, Command, Control, EstArgs, ExperimentArgs, Format, Intercept, RegArgs};
use crate::data::{dropped_warning, expand_poly2, load_csv};
use crate::error::{CliError, Result};
use crate::experiment::{run_experiment, ExperimentConfig};
use crate::report::{estimation_summary, regression_summary, Artifact};

/// What a command prints: the report for stdout and notes for stderr.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOutput {
    pub stdout: String,
    pub stderr: Vec<String>,
}

pub fn run(cli: &Cli) -> Result<RunOutput> {
    match &cli.command {
        Command::Est(a) => run_est(a),
        Command::Reg(a) => run_reg(a),
        Command::Experiment(a) => run_experiment_cmd(a),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|source| CliError::Write { path: path.to_path_buf(), source })
}

fn finish(mut artifact: Artifact, text: String, control: &Control, started: Instant, notes: Vec<String>) -> Result<RunOutput> {
    if control.runtime {
        artifact.runtime_ms = Some(started.elapsed().as_millis() as u64);
    }
    let json = artifact.to_json()?;
    if let Some(path) = &control.json_out {
        write_file(path, &(json.clone() + "\n"))?;
    }
    let stdout = match control.format {
        Format::Text => text,
        Format::Json => json + "\n",
    };
    Ok(RunOutput { stdout, stderr: notes })
}

fn single(par: &Option<Vec<f64>>, name: &str) -> Result<Option<f64>> {
    match par.as_deref() {
        None => Ok(None),
        Some([v]) => Ok(Some(*v)),
        Some(v) => Err(CliError::Config(format!("{name} takes a single value, got {}", v.len()))),
    }
}

fn run_est(a: &EstArgs) -> Result<RunOutput> {
    let started = Instant::now();
    let id: ModelId = a.model.parse()?;
    let table = load_csv(&a.data)?;
    let columns = if a.columns.is_empty() {
        (0..table.headers.len()).collect()
    } else {
        a.columns.iter().map(|c| table.index_of(c)).collect::<Result<Vec<_>>>()?
    };
    let data = Sample::new(table.select(&columns))?;
    let notes: Vec<String> = dropped_warning(&table).into_iter().collect();
    let model = ModelSpec::new(
        id,
        data.dim(),
        a.par1.clone().and_then(|p| p.into_option()),
        a.par2.clone().and_then(|p| p.into_option()),
    )?;
    let kernel = match a.bdwth.value() {
        Some(b) => KernelSpec::new(a.kernel, b)?,
        None => default_kernel(a.kernel, &data)?,
    };
    let res = fit(&model, &data, &kernel, &a.control.optimizer())?;
    let artifact = Artifact::from_estimation(&res, a.control.seed, notes.clone());
    finish(artifact, estimation_summary(&res), &a.control, started, notes)
}

fn run_reg(a: &RegArgs) -> Result<RunOutput> {
    let started = Instant::now();
    let id: RegModelId = a.model.parse()?;
    let table = load_csv(&a.data)?;
    let response = table.index_of(&a.response)?;
    let covariates: Vec<usize> = if a.covariates.is_empty() {
        (0..table.headers.len()).filter(|&j| j != response).collect()
    } else {
        a.covariates.iter().map(|c| table.index_of(c)).collect::<Result<_>>()?
    };
    if covariates.is_empty() {
        return Err(CliError::Input("the regression needs at least one covariate column".to_string()));
    }
    let mut x = table.select(&covariates);
    if a.poly2 {
        x = expand_poly2(&x)?;
    }
    let mut y = table.column(response);
    if a.log_response {
        if let Some(i) = y.iter().position(|v| *v <= 0.0) {
            return Err(CliError::Input(format!("cannot take the log of response {} at data row {}", y[i], i + 1)));
        }
        y.iter_mut().for_each(|v| *v = v.ln());
    }
    let notes: Vec<String> = dropped_warning(&table).into_iter().collect();

    let par2 = single(&a.par2.clone().and_then(|p| p.into_option()), "par2")?;
    let intercept = match a.intercept {
        Intercept::Auto => None,
        Intercept::On => Some(true),
        Intercept::Off => Some(false),
    };
    let mut problem = RegressionProblem::new(y, x, RegressionModelSpec::new(id, par2)?, intercept)?;
    if a.kernel_y.is_some() || a.bdwth_y != Bandwidth::Auto {
        problem = problem.with_kernel_y(a.kernel_y.unwrap_or(id.default_kernel_y()), a.bdwth_y.value())?;
    }
    let bdwth_x = match (a.bdwth_x, a.bdwth_x_rescale) {
        (BandwidthX::Auto { .. }, Some(r)) => BandwidthX::Auto { rescale: Some(r) },
        (_, Some(_)) => return Err(CliError::Config("--bdwth-x-rescale requires --bdwth-x auto".to_string())),
        (b, None) => b,
    };
    if bdwth_x != BandwidthX::Zero {
        problem = problem.with_kernel_x(a.kernel_x, bdwth_x)?;
    }
    if let Some(init) = a.par1.clone().and_then(|p| p.into_option()) {
        problem = problem.with_par1(init)?;
    }
    problem.tilde_form = a.tilde_form();
    problem.hat_budget = a.hat_budget;

    let res = fit_regression(&problem, &a.control.optimizer())?;
    let artifact = Artifact::from_regression(&res, a.control.seed, notes.clone());
    finish(artifact, regression_summary(&res), &a.control, started, notes)
}

fn run_experiment_cmd(a: &ExperimentArgs) -> Result<RunOutput> {
    let mut cfg = ExperimentConfig::new(a.name, a.seed);
    cfg.replications = a.replications;
    cfg.n = a.n;
    cfg.contamination = a.contamination;
    cfg.data = a.data.clone();
    let report = run_experiment(&cfg)?;
    let json = report.to_json()?;
    let mut notes = Vec::new();
    if let Some(dir) = &a.out_dir {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Write { path: dir.clone(), source })?;
        let csv_path = dir.join(format!("{}.csv", report.name));
        let json_path = dir.join(format!("{}.json", report.name));
        write_file(&csv_path, &report.to_csv()?)?;
        write_file(&json_path, &(json.clone() + "\n"))?;
        notes.push(format!("wrote {} and {}", csv_path.display(), json_path.display()));
    }
    if a.plot {
        let dir = a.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
        let svg_path = dir.join(format!("{}.svg", report.name));
        write_file(&svg_path, &report.to_svg())?;
        notes.push(format!("wrote {}", svg_path.display()));
    }
    let stdout = match a.format {
        Format::Text => report.to_text(),
        Format::Json => json + "\n",
    };
    Ok(RunOutput { stdout, stderr: notes })
}

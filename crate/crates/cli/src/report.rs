//! Text summaries and the JSON artifact.

use std::collections::BTreeMap;

use mmdfit::optim::TraceEntry;
use mmdfit::regression::{AuxRole, EstimatorKind, RegFitResult};
use mmdfit::models::SlotStatus;
use mmdfit::{FitResult, Method};
use serde::Serialize;

const RULE_TOP: &str = "======================== Summary ========================";
const RULE: &str = "---------------------------------------------------------";
const RULE_END: &str = "=========================================================";

/// Rounds to 4 decimals and prints without trailing zeros.
pub fn fmt4(x: f64) -> String {
    let r = (x * 1e4).round() / 1e4;
    if r == 0.0 {
        "0".to_string()
    } else {
        format!("{r}")
    }
}

/// Prints with 15 significant digits, trailing zeros removed.
pub fn fmt_sig15(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (14 - magnitude).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn join4(v: &[f64]) -> String {
    v.iter().map(|x| fmt4(*x)).collect::<Vec<_>>().join(" ")
}

/// Summary of a parametric fit.
pub fn estimation_summary(res: &FitResult) -> String {
    let mut out = vec![
        RULE_TOP.to_string(),
        format!("{:<21}{}", "Model:", res.model),
        RULE.to_string(),
        format!("{:<21}{}", "Algorithm:", res.method),
        format!("{:<21}{}", "Kernel:", res.kernel.family()),
        format!("{:<21}{}", "Bandwidth:", fmt_sig15(res.kernel.bandwidth())),
        RULE.to_string(),
        "Parameters:                   ".to_string(),
    ];
    let names = res.model.slot_names();
    for k in 0..2 {
        let label = format!("par{}: {}", k + 1, names[k]);
        match res.status[k] {
            SlotStatus::Absent => continue,
            SlotStatus::Fixed => {
                out.push(" ".to_string());
                out.push(format!("{label} -- fixed by user: {}", join4(&res.estimates[k])));
            }
            SlotStatus::FreeDefaultInit | SlotStatus::FreeUserInit => {
                out.push(" ".to_string());
                if res.method == Method::Exact {
                    out.push(format!("{label} -- found by enumeration"));
                } else {
                    out.push(format!("{label} -- initialized at {}", join4(&res.initial[k])));
                }
                out.push(format!("      estimated value: {} ", join4(&res.estimates[k])));
            }
        }
    }
    out.push(RULE_END.to_string());
    out.extend(res.warnings.iter().map(|w| format!("Warning: {w}")));
    out.join("\n") + "\n"
}

fn coefficient_line(name: &str, value: &str) -> String {
    format!("  {name:<12}{value:>19}")
}

/// Summary of a regression fit.
pub fn regression_summary(res: &RegFitResult) -> String {
    let estimator = match res.estimator {
        EstimatorKind::ThetaTilde => "theta tilde (bdwth.x=0)",
        EstimatorKind::ThetaHat => "theta hat  (bdwth.x>0)",
    };
    let mut out = vec![
        RULE_TOP.to_string(),
        format!("{:<21}{}", "Model:", res.model),
        format!("{:<21}{}", "Estimator:", estimator),
        format!("{:<21}{}", "Algorithm:", res.method),
        RULE.to_string(),
        coefficient_line("Coefficients", "Estimate"),
        RULE.to_string(),
    ];
    for (name, c) in res.coefficient_names.iter().zip(&res.coefficients) {
        out.push(coefficient_line(name, &fmt4(*c)));
    }
    out.push(RULE.to_string());
    if let Some(aux) = res.aux {
        let how = if res.aux_role == AuxRole::Fixed { "fixed by user" } else { "estimated" };
        out.push(format!("  {} : {} ({how})", res.model.aux_name(), fmt4(aux)));
    }
    out.push(RULE.to_string());
    out.push(format!("  Kernel for y: {} with bandwidth {}", res.kernel_y.family(), fmt4(res.kernel_y.bandwidth())));
    if let Some(kx) = &res.kernel_x {
        out.push(format!("  Kernel for x: {} with bandwidth {}", kx.family(), fmt4(kx.bandwidth())));
    }
    out.push(RULE_END.to_string());
    out.extend(res.warnings.iter().map(|w| format!("Warning: {w}")));
    out.join("\n") + "\n"
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateEntry {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// `estimated` or `fixed`.
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial: Option<Vec<f64>>,
    pub value: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuxEntry {
    pub name: String,
    pub status: String,
    pub value: f64,
}

/// Machine-readable record of one fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Artifact {
    pub model: String,
    /// `parametric`, `theta_tilde` or `theta_hat`.
    pub estimator_kind: String,
    pub method: String,
    pub kernels: BTreeMap<String, String>,
    pub bandwidths: BTreeMap<String, f64>,
    pub estimates: Vec<EstimateEntry>,
    pub aux: Option<AuxEntry>,
    pub objective: f64,
    pub objective_monte_carlo: bool,
    pub iterations: usize,
    pub trace: Vec<TraceEntry>,
    pub warnings: Vec<String>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runtime_ms: Option<u64>,
}

impl Artifact {
    pub fn from_estimation(res: &FitResult, seed: u64, mut warnings: Vec<String>) -> Self {
        let names = res.model.slot_names();
        let estimates = (0..2)
            .filter(|&k| res.status[k] != SlotStatus::Absent)
            .map(|k| {
                let fixed = res.status[k] == SlotStatus::Fixed;
                EstimateEntry {
                    name: format!("par{}", k + 1),
                    label: Some(names[k].to_string()),
                    status: if fixed { "fixed" } else { "estimated" }.to_string(),
                    initial: (!fixed).then(|| res.initial[k].clone()),
                    value: res.estimates[k].clone(),
                }
            })
            .collect();
        warnings.extend(res.warnings.iter().cloned());
        Artifact {
            model: res.model.to_string(),
            estimator_kind: "parametric".to_string(),
            method: res.method.to_string(),
            kernels: BTreeMap::from([("data".to_string(), res.kernel.family().to_string())]),
            bandwidths: BTreeMap::from([("data".to_string(), res.kernel.bandwidth())]),
            estimates,
            aux: None,
            objective: res.objective.value,
            objective_monte_carlo: res.objective.monte_carlo_draws.is_some(),
            iterations: res.iterations,
            trace: res.trace.clone(),
            warnings,
            seed,
            runtime_ms: None,
        }
    }

    pub fn from_regression(res: &RegFitResult, seed: u64, mut warnings: Vec<String>) -> Self {
        let mut kernels = BTreeMap::from([("y".to_string(), res.kernel_y.family().to_string())]);
        let mut bandwidths = BTreeMap::from([("y".to_string(), res.kernel_y.bandwidth()), ("x".to_string(), 0.0)]);
        if let Some(kx) = &res.kernel_x {
            kernels.insert("x".to_string(), kx.family().to_string());
            bandwidths.insert("x".to_string(), kx.bandwidth());
        }
        let estimates = res
            .coefficient_names
            .iter()
            .zip(&res.coefficients)
            .zip(&res.initial_coefficients)
            .map(|((name, c), init)| EstimateEntry {
                name: name.clone(),
                label: None,
                status: "estimated".to_string(),
                initial: Some(vec![*init]),
                value: vec![*c],
            })
            .collect();
        let aux = res.aux.map(|value| AuxEntry {
            name: res.model.aux_name().to_string(),
            status: if res.aux_role == AuxRole::Fixed { "fixed" } else { "estimated" }.to_string(),
            value,
        });
        warnings.extend(res.warnings.iter().cloned());
        Artifact {
            model: res.model.to_string(),
            estimator_kind: res.estimator.as_str().to_string(),
            method: res.method.to_string(),
            kernels,
            bandwidths,
            estimates,
            aux,
            objective: res.objective,
            objective_monte_carlo: res.objective_monte_carlo,
            iterations: res.iterations,
            trace: res.trace.clone(),
            warnings,
            seed,
            runtime_ms: None,
        }
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }
}

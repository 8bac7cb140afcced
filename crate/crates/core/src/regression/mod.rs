//! MMD regression: the per-observation estimator `theta tilde` (no covariate
//! kernel) and the pairwise estimator `theta hat` (product kernel on
//! covariates and responses).
//!
//! Gamma and beta responses use the mean-precision form: the mean is
//! `exp(x^T theta)` (gamma) or `logistic(x^T theta)` (beta) and the auxiliary
//! parameter `phi` is the precision (gamma shape `phi`, rate `phi / mean`;
//! beta `a = mean * phi`, `b = (1 - mean) * phi`).

mod fit;
mod laws;

use serde::{Deserialize, Serialize};

use crate::error::{config, input, Result};
use crate::kernel::{auto_bdwth_x, median_heuristic, KernelFamily, KernelSpec, Sample};
use crate::special::mad;

pub use fit::{fit_regression, grad_hat_stochastic, grad_tilde, objective_hat, objective_hat_with_kx, objective_tilde};
pub use fit::{EstimatorKind, HatValue, RegFitResult, TildeValue};
pub use laws::{conditional_law, AuxRole, Law, RegModelId, EXP_LINK_CAP};

/// Default bound on `n` for the pairwise estimator.
pub const HAT_BUDGET: usize = 5000;

/// Regression model with the status of its auxiliary parameter (`par2`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionModelSpec {
    id: RegModelId,
    /// Fixed value, or user starting value when the parameter is free.
    aux: Option<f64>,
}

impl RegressionModelSpec {
    pub fn new(id: RegModelId, par2: Option<f64>) -> Result<Self> {
        match (id.aux_role(), par2) {
            (AuxRole::Fixed, None) => {
                return Err(config(format!(
                    "model {id} requires par2 ({}) to be specified by the user",
                    id.aux_name().to_lowercase()
                )))
            }
            (AuxRole::Absent, Some(_)) => return Err(config(format!("model {id} has no par2"))),
            (_, Some(v)) if !(v > 0.0 && v.is_finite()) => {
                return Err(config(format!("par2 of model {id} must be positive, got {v}")))
            }
            _ => {}
        }
        Ok(RegressionModelSpec { id, aux: par2 })
    }

    pub fn id(&self) -> RegModelId {
        self.id
    }

    pub fn aux_value(&self) -> Option<f64> {
        self.aux
    }
}

/// Which objective defines `theta tilde`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TildeForm {
    /// Mean of the per-observation squared MMDs.
    Squared,
    /// Mean of the per-observation MMDs.
    Root,
}

/// Covariate bandwidth choice; zero selects `theta tilde`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandwidthX {
    Zero,
    Auto { rescale: Option<f64> },
    Value(f64),
}

/// Responses, design matrix (intercept column first when added), model and kernels.
#[derive(Debug, Clone)]
pub struct RegressionProblem {
    y: Vec<f64>,
    /// Row-major `n x k`.
    x: Vec<f64>,
    n: usize,
    k: usize,
    intercept_added: bool,
    model: RegressionModelSpec,
    par1_init: Option<Vec<f64>>,
    kernel_y: KernelSpec,
    kernel_x: Option<KernelSpec>,
    pub tilde_form: TildeForm,
    /// Largest `n` accepted by the pairwise estimator.
    pub hat_budget: usize,
}

impl RegressionProblem {
    /// Builds a problem with the default response kernel (median heuristic
    /// divided by sqrt(2)) and `theta tilde`.
    ///
    /// `intercept`: `None` adds a column of ones unless a constant column is present.
    pub fn new(y: Vec<f64>, x_rows: Vec<Vec<f64>>, model: RegressionModelSpec, intercept: Option<bool>) -> Result<Self> {
        let n = y.len();
        if n < 2 {
            return Err(input("regression needs at least two observations"));
        }
        if x_rows.len() != n {
            return Err(input(format!("{} responses but {} design rows", n, x_rows.len())));
        }
        let q = x_rows[0].len();
        for (i, row) in x_rows.iter().enumerate() {
            if row.len() != q {
                return Err(input(format!("design row {} has {} columns, expected {q}", i + 1, row.len())));
            }
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(input(format!("non-finite design value at row {}, column {}", i + 1, j + 1)));
            }
        }
        for (i, &v) in y.iter().enumerate() {
            if !v.is_finite() {
                return Err(input(format!("non-finite response at row {}", i + 1)));
            }
            model
                .id
                .check_response(v)
                .map_err(|what| input(format!("response at row {} is {v}; model {} needs {what}", i + 1, model.id)))?;
        }
        let has_constant = (0..q).any(|j| x_rows.iter().all(|r| r[j] == x_rows[0][j]));
        let add = intercept.unwrap_or(!has_constant);
        let k = q + usize::from(add);
        if k == 0 {
            return Err(input("the design matrix has no columns and no intercept"));
        }
        let mut x = Vec::with_capacity(n * k);
        for row in &x_rows {
            if add {
                x.push(1.0);
            }
            x.extend_from_slice(row);
        }
        let gamma_y = median_heuristic(&Sample::from_scalars(&y)?)? / std::f64::consts::SQRT_2;
        Ok(RegressionProblem {
            y,
            x,
            n,
            k,
            intercept_added: add,
            model,
            par1_init: None,
            kernel_y: KernelSpec::new(model.id.default_kernel_y(), gamma_y)?,
            kernel_x: None,
            tilde_form: TildeForm::Squared,
            hat_budget: HAT_BUDGET,
        })
    }

    /// Response kernel; `None` keeps the default bandwidth.
    pub fn with_kernel_y(mut self, family: KernelFamily, bandwidth: Option<f64>) -> Result<Self> {
        let bw = bandwidth.unwrap_or(self.kernel_y.bandwidth());
        self.kernel_y = KernelSpec::new(family, bw)?;
        Ok(self)
    }

    pub fn with_kernel_x(mut self, family: KernelFamily, bandwidth: BandwidthX) -> Result<Self> {
        self.kernel_x = match bandwidth {
            BandwidthX::Zero => None,
            BandwidthX::Value(0.0) => None,
            BandwidthX::Value(v) => Some(KernelSpec::new(family, v)?),
            BandwidthX::Auto { rescale } => {
                let rows = Sample::from_flat(self.k, self.x.clone())?;
                Some(KernelSpec::new(family, auto_bdwth_x(&rows, rescale)?)?)
            }
        };
        Ok(self)
    }

    /// Starting coefficients (length `k`, intercept first when added).
    pub fn with_par1(mut self, init: Vec<f64>) -> Result<Self> {
        if init.len() != self.k {
            return Err(config(format!(
                "par1 must have {} values (one per coefficient{}), got {}",
                self.k,
                if self.intercept_added { ", intercept first" } else { "" },
                init.len()
            )));
        }
        if init.iter().any(|v| !v.is_finite()) {
            return Err(config("par1 must be finite"));
        }
        self.par1_init = Some(init);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_coefficients(&self) -> usize {
        self.k
    }

    pub fn intercept_added(&self) -> bool {
        self.intercept_added
    }

    pub fn model(&self) -> &RegressionModelSpec {
        &self.model
    }

    pub fn kernel_y(&self) -> &KernelSpec {
        &self.kernel_y
    }

    pub fn kernel_x(&self) -> Option<&KernelSpec> {
        self.kernel_x.as_ref()
    }

    pub fn response(&self) -> &[f64] {
        &self.y
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.k..(i + 1) * self.k]
    }

    /// `(Intercept)` followed by `X1, X2, ...` for the user columns.
    pub fn coefficient_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.k);
        if self.intercept_added {
            names.push("(Intercept)".to_string());
        }
        let q = self.k - usize::from(self.intercept_added);
        names.extend((1..=q).map(|j| format!("X{j}")));
        names
    }

    /// Optimizer coordinates: coefficients, then the log of a free auxiliary parameter.
    pub fn theta_dim(&self) -> usize {
        self.k + usize::from(self.model.id.aux_role() == AuxRole::Free)
    }

    pub(crate) fn aux(&self, theta: &[f64]) -> Option<f64> {
        match self.model.id.aux_role() {
            AuxRole::Free => Some(theta[self.k].exp()),
            AuxRole::Fixed => self.model.aux,
            AuxRole::Absent => None,
        }
    }

    pub(crate) fn eta(&self, theta: &[f64], i: usize) -> f64 {
        self.row(i).iter().zip(&theta[..self.k]).map(|(a, b)| a * b).sum()
    }

    /// Zero coefficients (or the user's), noise scale at the response MAD, precision 1.
    pub fn initial_theta(&self) -> Vec<f64> {
        let mut t = self.par1_init.clone().unwrap_or_else(|| vec![0.0; self.k]);
        if self.model.id.aux_role() == AuxRole::Free {
            let aux = self.model.aux.unwrap_or_else(|| match self.model.id {
                RegModelId::LinearGaussian => {
                    let m = mad(&self.y);
                    if m > 0.0 {
                        m
                    } else {
                        1.0
                    }
                }
                _ => 1.0,
            });
            t.push(aux.ln());
        }
        t
    }
}

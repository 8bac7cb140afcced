//! Classical baselines for the regression comparisons: least squares and the
//! Poisson GLM with log link.

use nalgebra::{DMatrix, DVector};

use crate::error::{CliError, Result};

fn design(rows: &[Vec<f64>], intercept: bool) -> DMatrix<f64> {
    let k = rows[0].len() + usize::from(intercept);
    DMatrix::from_fn(rows.len(), k, |i, j| match (intercept, j) {
        (true, 0) => 1.0,
        (true, j) => rows[i][j - 1],
        (false, j) => rows[i][j],
    })
}

fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    x.clone()
        .svd(true, true)
        .solve(y, 1e-12)
        .map_err(|e| CliError::Input(format!("least-squares solve failed: {e}")))
}

/// Ordinary least squares; the intercept comes first when requested.
pub fn ols(y: &[f64], rows: &[Vec<f64>], intercept: bool) -> Result<Vec<f64>> {
    if rows.is_empty() || rows.len() != y.len() {
        return Err(CliError::Input("OLS needs one design row per response".to_string()));
    }
    let x = design(rows, intercept);
    Ok(least_squares(&x, &DVector::from_column_slice(y))?.iter().copied().collect())
}

/// Poisson regression with log link by iteratively reweighted least squares.
pub fn poisson_glm(y: &[f64], rows: &[Vec<f64>], intercept: bool) -> Result<Vec<f64>> {
    if rows.is_empty() || rows.len() != y.len() {
        return Err(CliError::Input("the GLM needs one design row per response".to_string()));
    }
    let x = design(rows, intercept);
    let n = y.len();
    let mut eta: Vec<f64> = y.iter().map(|v| (v + 0.1).ln()).collect();
    let mut beta = DVector::zeros(x.ncols());
    let mut deviance = f64::INFINITY;
    for _ in 0..100 {
        let mu: Vec<f64> = eta.iter().map(|e| e.exp()).collect();
        let sw: Vec<f64> = mu.iter().map(|m| m.sqrt()).collect();
        let z: Vec<f64> = (0..n).map(|i| eta[i] + (y[i] - mu[i]) / mu[i]).collect();
        let xw = DMatrix::from_fn(n, x.ncols(), |i, j| x[(i, j)] * sw[i]);
        let zw = DVector::from_fn(n, |i, _| z[i] * sw[i]);
        beta = least_squares(&xw, &zw)?;
        let new_eta = &x * &beta;
        eta = new_eta.iter().copied().collect();
        let new_dev: f64 = (0..n)
            .map(|i| {
                let m = eta[i].exp();
                let t = if y[i] > 0.0 { y[i] * (y[i] / m).ln() } else { 0.0 };
                2.0 * (t - (y[i] - m))
            })
            .sum();
        if !new_dev.is_finite() {
            return Err(CliError::Input("the Poisson GLM diverged".to_string()));
        }
        if (deviance - new_dev).abs() < 1e-10 * (new_dev.abs() + 0.1) {
            break;
        }
        deviance = new_dev;
    }
    Ok(beta.iter().copied().collect())
}

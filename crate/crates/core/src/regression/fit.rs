//! Objectives, gradients and the fitting driver for regression models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::laws::{conditional_law, cross_expectation, point_expectation, score, self_expectation, AuxRole, Exact, RegModelId, EXP_LINK_CAP};
use super::{RegressionProblem, TildeForm};
use crate::error::{capability, config, MmdError, Result};
use crate::kernel::KernelSpec;
use crate::optim::{adagrad, gradient_descent, Method, OptimizerConfig, TraceEntry, MAXIT_WARNING};

/// Smoothing of the square root in the `Root` form of `theta tilde`.
const ROOT_EPS: f64 = 1e-10;
/// The same smoothing when the inner quantity is itself a noisy estimate.
const ROOT_EPS_MC: f64 = 1e-2;
/// Largest change of one coordinate in a GD iteration.
const MAX_MOVE: f64 = 1.0;
/// Draws per observation when an objective has no closed form.
const OBJECTIVE_DRAWS: usize = 1000;

const CAP_WARNING: &str = "The linear predictor exceeded the exponential-link cap (|x'theta| > 700) for some observations";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstimatorKind {
    ThetaTilde,
    ThetaHat,
}

impl EstimatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::ThetaTilde => "theta_tilde",
            EstimatorKind::ThetaHat => "theta_hat",
        }
    }
}

/// Value of the `theta tilde` objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TildeValue {
    pub value: f64,
    /// Some per-observation terms were estimated by simulation.
    pub monte_carlo: bool,
}

/// Value of the `theta hat` objective: the MMD and its square.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HatValue {
    pub value: f64,
    pub squared: f64,
    pub monte_carlo: bool,
}

/// Outcome of a regression fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegFitResult {
    pub model: RegModelId,
    pub estimator: EstimatorKind,
    pub method: Method,
    pub coefficient_names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub initial_coefficients: Vec<f64>,
    /// Noise sd or precision, when the model has one.
    pub aux: Option<f64>,
    pub aux_role: AuxRole,
    pub kernel_y: KernelSpec,
    pub kernel_x: Option<KernelSpec>,
    pub tilde_form: Option<TildeForm>,
    pub objective: f64,
    pub objective_monte_carlo: bool,
    pub iterations: usize,
    pub trace: Vec<TraceEntry>,
    pub warnings: Vec<String>,
}

fn check_theta(p: &RegressionProblem, theta: &[f64]) -> Result<()> {
    if theta.len() != p.theta_dim() {
        return Err(config(format!("theta has {} values, the problem needs {}", theta.len(), p.theta_dim())));
    }
    Ok(())
}

/// Seed derived from one observation, so simulated terms do not depend on row order.
fn datum_seed(row: &[f64], y: f64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in row.iter().chain(std::iter::once(&y)) {
        for b in v.to_bits().to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

fn sorted_mean(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().sum::<f64>() / terms.len() as f64
}

fn exact_law(p: &RegressionProblem, theta: &[f64], i: usize) -> Option<Exact> {
    Exact::of(p.model.id, p.eta(theta, i), p.aux(theta), p.kernel_y.family())
}

/// Squared MMD between the conditional law at observation `i` and a point mass at `y_i`,
/// with derivatives in `eta` and in the auxiliary parameter.
fn tilde_term_exact(p: &RegressionProblem, law: &Exact, i: usize) -> (f64, f64, f64) {
    let k = &p.kernel_y;
    let s = self_expectation(law, k);
    let e = point_expectation(law, k, p.y[i]);
    (
        s.value - 2.0 * e.value + k.family().at_zero(),
        s.d_eta - 2.0 * e.d_eta,
        s.d_aux - 2.0 * e.d_aux,
    )
}

fn tilde_term_mc(p: &RegressionProblem, theta: &[f64], i: usize) -> f64 {
    let (law, _) = conditional_law(p.model.id, p.eta(theta, i), p.aux(theta));
    let mut rng = ChaCha8Rng::seed_from_u64(datum_seed(p.row(i), p.y[i]));
    let draws: Vec<f64> = (0..OBJECTIVE_DRAWS).map(|_| law.sample(&mut rng)).collect();
    let k = &p.kernel_y;
    let e_kk = draws.chunks_exact(2).map(|c| k.eval_scalar(c[0], c[1])).sum::<f64>() / (OBJECTIVE_DRAWS / 2) as f64;
    let e_ky = draws.iter().map(|&d| k.eval_scalar(d, p.y[i])).sum::<f64>() / OBJECTIVE_DRAWS as f64;
    e_kk - 2.0 * e_ky + k.family().at_zero()
}

/// `theta tilde` objective: the mean over observations of the squared MMD
/// (or the MMD, for [`TildeForm::Root`]) between the conditional law and a
/// point mass at the response. Terms without closed form are simulated with
/// 1000 draws seeded from the observation itself. Summation is in sorted
/// order, so the value does not depend on the row order.
pub fn objective_tilde(p: &RegressionProblem, theta: &[f64]) -> Result<TildeValue> {
    check_theta(p, theta)?;
    let mut monte_carlo = false;
    let terms = (0..p.n)
        .map(|i| {
            let d2 = match exact_law(p, theta, i) {
                Some(law) => tilde_term_exact(p, &law, i).0,
                None => {
                    monte_carlo = true;
                    tilde_term_mc(p, theta, i)
                }
            };
            match p.tilde_form {
                TildeForm::Squared => d2,
                TildeForm::Root => d2.max(0.0).sqrt(),
            }
        })
        .collect();
    Ok(TildeValue { value: sorted_mean(terms), monte_carlo })
}

/// Smoothed objective and its gradient in optimizer coordinates (log for a free auxiliary parameter).
fn tilde_value_grad(p: &RegressionProblem, theta: &[f64]) -> Option<(f64, Vec<f64>)> {
    let k = p.k;
    let aux = p.aux(theta);
    let mut grad = vec![0.0; theta.len()];
    let mut terms = Vec::with_capacity(p.n);
    for i in 0..p.n {
        let law = exact_law(p, theta, i)?;
        let (d2, d_eta, d_aux) = tilde_term_exact(p, &law, i);
        let (value, factor) = match p.tilde_form {
            TildeForm::Squared => (d2, 1.0),
            TildeForm::Root => {
                let r = (d2.max(0.0) + ROOT_EPS * ROOT_EPS).sqrt();
                (r, 0.5 / r)
            }
        };
        terms.push(value);
        for (g, x) in grad[..k].iter_mut().zip(p.row(i)) {
            *g += factor * d_eta * x;
        }
        if theta.len() > k {
            grad[k] += factor * d_aux * aux.unwrap_or(1.0);
        }
    }
    let n = p.n as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Some((sorted_mean(terms), grad))
}

/// Exact gradient of the `theta tilde` objective (with `sqrt(D^2 + 1e-20)` in the root form).
pub fn grad_tilde(p: &RegressionProblem, theta: &[f64]) -> Result<Vec<f64>> {
    check_theta(p, theta)?;
    tilde_value_grad(p, theta).map(|(_, g)| g).ok_or_else(|| {
        capability(format!(
            "no closed-form gradient for model {} with the {} kernel",
            p.model.id,
            p.kernel_y.family()
        ))
    })
}

/// Stochastic gradient of `theta tilde` from two draws per observation in a minibatch.
fn tilde_stochastic<R: Rng + ?Sized>(p: &RegressionProblem, theta: &[f64], batch: usize, rng: &mut R) -> (Vec<f64>, f64) {
    let id = p.model.id;
    let k = p.k;
    let aux = p.aux(theta);
    let ky = &p.kernel_y;
    let k0 = ky.family().at_zero();
    let mut grad = vec![0.0; theta.len()];
    let mut obj = 0.0;
    let all = p.n <= batch;
    let size = if all { p.n } else { batch };
    for t in 0..size {
        let i = if all { t } else { rng.random_range(0..p.n) };
        let eta = p.eta(theta, i);
        let (law, _) = conditional_law(id, eta, aux);
        let y = p.y[i];
        let (ya, yb) = (law.sample(rng), law.sample(rng));
        let kab = ky.eval_scalar(ya, yb);
        let (kay, kby) = (ky.eval_scalar(ya, y), ky.eval_scalar(yb, y));
        let d2 = kab - kay - kby + k0;
        let (sa, sb) = (score(id, eta, aux, ya), score(id, eta, aux, yb));
        let g_eta = (kab - kay) * sa.0 + (kab - kby) * sb.0;
        let g_aux = (kab - kay) * sa.1 + (kab - kby) * sb.1;
        let (value, factor) = match p.tilde_form {
            TildeForm::Squared => (d2, 1.0),
            TildeForm::Root => {
                // independent draws for the normalizing factor
                let (yc, yd) = (law.sample(rng), law.sample(rng));
                let alt = ky.eval_scalar(yc, yd) - ky.eval_scalar(yc, y) - ky.eval_scalar(yd, y) + k0;
                let r = (alt.max(0.0) + ROOT_EPS_MC * ROOT_EPS_MC).sqrt();
                (d2.max(0.0).sqrt(), 0.5 / r)
            }
        };
        obj += value;
        for (g, x) in grad[..k].iter_mut().zip(p.row(i)) {
            *g += factor * g_eta * x;
        }
        if theta.len() > k {
            grad[k] += factor * g_aux * aux.unwrap_or(1.0);
        }
    }
    let s = size as f64;
    grad.iter_mut().for_each(|g| *g /= s);
    (grad, obj / s)
}

fn require_kernel_x(p: &RegressionProblem) -> Result<&KernelSpec> {
    p.kernel_x.as_ref().ok_or_else(|| config("theta hat needs a covariate kernel with a positive bandwidth"))
}

fn check_budget(p: &RegressionProblem) -> Result<()> {
    if p.n > p.hat_budget {
        return Err(MmdError::Budget(format!(
            "theta hat needs O(n^2) work and n = {} exceeds the budget of {}; raise the budget or use theta tilde",
            p.n, p.hat_budget
        )));
    }
    Ok(())
}

/// `theta hat` objective: the MMD between the joint laws
/// `(1/n) sum_i delta_{x_i} x P_{theta|x_i}` and the empirical joint law,
/// under the product of the covariate and response kernels. Returns `D` and
/// `D^2`; models without closed forms are simulated with draws seeded from
/// each observation.
pub fn objective_hat(p: &RegressionProblem, theta: &[f64]) -> Result<HatValue> {
    let kx = require_kernel_x(p)?;
    check_budget(p)?;
    objective_hat_with_kx(p, theta, |i, j| kx.eval_unchecked(p.row(i), p.row(j)))
}

/// [`objective_hat`] with an arbitrary covariate Gram matrix given entrywise.
#[doc(hidden)]
pub fn objective_hat_with_kx<F>(p: &RegressionProblem, theta: &[f64], kx: F) -> Result<HatValue>
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    check_theta(p, theta)?;
    let n = p.n;
    let ky = &p.kernel_y;
    let laws: Option<Vec<Exact>> = (0..n).map(|i| exact_law(p, theta, i)).collect();
    let rows: Vec<f64> = match &laws {
        Some(laws) => (0..n)
            .into_par_iter()
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let c = cross_expectation(&laws[i], &laws[j], ky).0;
                        let e = point_expectation(&laws[i], ky, p.y[j]).value;
                        kx(i, j) * (c - 2.0 * e + ky.eval_scalar(p.y[i], p.y[j]))
                    })
                    .sum()
            })
            .collect(),
        None => {
            let r = (3e7 / (n * n) as f64).clamp(64.0, OBJECTIVE_DRAWS as f64) as usize;
            let draws: Vec<Vec<f64>> = (0..n)
                .map(|i| {
                    let (law, _) = conditional_law(p.model.id, p.eta(theta, i), p.aux(theta));
                    let mut rng = ChaCha8Rng::seed_from_u64(datum_seed(p.row(i), p.y[i]));
                    (0..r).map(|_| law.sample(&mut rng)).collect()
                })
                .collect();
            (0..n)
                .into_par_iter()
                .map(|i| {
                    (0..n)
                        .map(|j| {
                            let c = if i == j {
                                (0..r).map(|t| ky.eval_scalar(draws[i][t], draws[i][(t + 1) % r])).sum::<f64>()
                            } else {
                                (0..r).map(|t| ky.eval_scalar(draws[i][t], draws[j][t])).sum::<f64>()
                            } / r as f64;
                            let e = draws[i].iter().map(|&d| ky.eval_scalar(d, p.y[j])).sum::<f64>() / r as f64;
                            kx(i, j) * (c - 2.0 * e + ky.eval_scalar(p.y[i], p.y[j]))
                        })
                        .sum()
                })
                .collect()
        }
    };
    let squared = sorted_mean(rows) / n as f64;
    Ok(HatValue { value: squared.max(0.0).sqrt(), squared, monte_carlo: laws.is_none() })
}

/// Samples pairs `(i, j)` with `i` uniform and `j` proportional to `k_X(x_i, x_j)`.
struct PairSampler {
    n: usize,
    /// Row sums of the covariate Gram matrix.
    row_sums: Vec<f64>,
    /// Row-wise cumulative sums, `n x n`.
    cumulative: Vec<f64>,
}

impl PairSampler {
    fn new(p: &RegressionProblem, kx: &KernelSpec) -> Self {
        let n = p.n;
        let cumulative: Vec<f64> = (0..n)
            .into_par_iter()
            .flat_map_iter(|i| {
                let mut acc = 0.0;
                (0..n)
                    .map(move |j| {
                        acc += kx.eval_unchecked(p.row(i), p.row(j));
                        acc
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        let row_sums = (0..n).map(|i| cumulative[i * n + n - 1]).collect();
        PairSampler { n, row_sums, cumulative }
    }

    /// A pair and its importance weight `R_i / n`.
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize, f64) {
        let i = rng.random_range(0..self.n);
        let row = &self.cumulative[i * self.n..(i + 1) * self.n];
        let u = rng.random::<f64>() * self.row_sums[i];
        let j = row.partition_point(|&c| c <= u).min(self.n - 1);
        (i, j, self.row_sums[i] / self.n as f64)
    }
}

/// One stochastic gradient of `D^2` from `pairs` sampled pairs, and the matching
/// unbiased estimate of `D^2`.
fn hat_stochastic<R: Rng + ?Sized>(
    p: &RegressionProblem,
    sampler: &PairSampler,
    theta: &[f64],
    pairs: usize,
    rng: &mut R,
) -> (Vec<f64>, f64) {
    let id = p.model.id;
    let k = p.k;
    let aux = p.aux(theta);
    let ky = &p.kernel_y;
    let exact = id.has_closed_form(ky.family());
    let mut grad = vec![0.0; theta.len()];
    let mut obj = 0.0;
    for _ in 0..pairs {
        let (i, j, w) = sampler.draw(rng);
        let kyy = ky.eval_scalar(p.y[i], p.y[j]);
        let (term, gi, gj, g_aux) = if exact {
            let (Some(li), Some(lj)) = (exact_law(p, theta, i), exact_law(p, theta, j)) else {
                unreachable!("closed form checked above")
            };
            let (c, dci, dcj, dca) = cross_expectation(&li, &lj, ky);
            let e = point_expectation(&li, ky, p.y[j]);
            (c - 2.0 * e.value + kyy, dci - 2.0 * e.d_eta, dcj, dca - 2.0 * e.d_aux)
        } else {
            let (eta_i, eta_j) = (p.eta(theta, i), p.eta(theta, j));
            let (law_i, _) = conditional_law(id, eta_i, aux);
            let (law_j, _) = conditional_law(id, eta_j, aux);
            let (ya, yb) = (law_i.sample(rng), law_j.sample(rng));
            let (sa, sb) = (score(id, eta_i, aux, ya), score(id, eta_j, aux, yb));
            let kab = ky.eval_scalar(ya, yb);
            let kay = ky.eval_scalar(ya, p.y[j]);
            let h = kab - 2.0 * kay;
            (h + kyy, h * sa.0, kab * sb.0, h * sa.1 + kab * sb.1)
        };
        obj += w * term;
        for ((g, xi), xj) in grad[..k].iter_mut().zip(p.row(i)).zip(p.row(j)) {
            *g += w * (gi * xi + gj * xj);
        }
        if theta.len() > k {
            grad[k] += w * g_aux * aux.unwrap_or(1.0);
        }
    }
    let s = pairs as f64;
    grad.iter_mut().for_each(|g| *g /= s);
    (grad, obj / s)
}

/// Unbiased stochastic gradient of `D^2` for `theta hat` from `pairs` sampled pairs.
pub fn grad_hat_stochastic(p: &RegressionProblem, theta: &[f64], pairs: usize, seed: u64) -> Result<Vec<f64>> {
    check_theta(p, theta)?;
    let kx = require_kernel_x(p)?;
    check_budget(p)?;
    if pairs == 0 {
        return Err(config("at least one pair is needed"));
    }
    let sampler = PairSampler::new(p, kx);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(hat_stochastic(p, &sampler, theta, pairs, &mut rng).0)
}

fn dispatch(p: &RegressionProblem, requested: Method) -> Result<(EstimatorKind, Method)> {
    let id = p.model.id;
    let family = p.kernel_y.family();
    let unavailable = |m: Method, what: &str| {
        Err(MmdError::Dispatch(format!("method {m} is not available for {what} with model {id} and the {family} kernel")))
    };
    if p.kernel_x.is_some() {
        return match requested {
            Method::Auto | Method::SGD => Ok((EstimatorKind::ThetaHat, Method::SGD)),
            other => unavailable(other, "theta hat"),
        };
    }
    let closed = id.has_closed_form(family);
    match requested {
        Method::Auto if closed => Ok((EstimatorKind::ThetaTilde, Method::GD)),
        Method::Auto | Method::SGD => Ok((EstimatorKind::ThetaTilde, Method::SGD)),
        Method::GD if closed => Ok((EstimatorKind::ThetaTilde, Method::GD)),
        other => unavailable(other, "theta tilde"),
    }
}

/// Fits a regression model. Without a covariate kernel this computes
/// `theta tilde` (GD when the per-observation terms have closed forms, SGD
/// otherwise); with one it computes `theta hat` by AdaGrad on sampled pairs.
pub fn fit_regression(p: &RegressionProblem, cfg: &OptimizerConfig) -> Result<RegFitResult> {
    cfg.validate()?;
    let (estimator, method) = dispatch(p, cfg.method)?;
    if estimator == EstimatorKind::ThetaHat {
        check_budget(p)?;
    }
    let theta0 = p.initial_theta();
    let start = match estimator {
        EstimatorKind::ThetaTilde => objective_tilde(p, &theta0)?.value,
        EstimatorKind::ThetaHat => objective_hat(p, &theta0)?.squared,
    };
    if !start.is_finite() {
        return Err(MmdError::Initialization(format!("the objective is not finite at the starting point {theta0:?}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let out = match (estimator, method) {
        (EstimatorKind::ThetaTilde, Method::GD) => gradient_descent(theta0.clone(), cfg, Some(MAX_MOVE), |x| {
            tilde_value_grad(p, x).unwrap_or_else(|| (f64::INFINITY, vec![f64::NAN; x.len()]))
        }),
        (EstimatorKind::ThetaTilde, _) => {
            adagrad(theta0.clone(), cfg, true, |x, _| tilde_stochastic(p, x, cfg.mc_samples, &mut rng))
        }
        (EstimatorKind::ThetaHat, _) => {
            let sampler = PairSampler::new(p, require_kernel_x(p)?);
            adagrad(theta0.clone(), cfg, true, |x, _| hat_stochastic(p, &sampler, x, cfg.mc_samples, &mut rng))
        }
    };

    let theta = out.x;
    let mut warnings = Vec::new();
    if out.hit_maxit {
        warnings.push(MAXIT_WARNING.to_string());
    }
    if p.model.id.has_exp_link() && (0..p.n).any(|i| p.eta(&theta, i).abs() > EXP_LINK_CAP) {
        warnings.push(CAP_WARNING.to_string());
    }
    let (objective, objective_monte_carlo) = match estimator {
        EstimatorKind::ThetaTilde => {
            let v = objective_tilde(p, &theta)?;
            (v.value, v.monte_carlo)
        }
        EstimatorKind::ThetaHat => {
            let v = objective_hat(p, &theta)?;
            (v.value, v.monte_carlo)
        }
    };
    Ok(RegFitResult {
        model: p.model.id,
        estimator,
        method,
        coefficient_names: p.coefficient_names(),
        coefficients: theta[..p.k].to_vec(),
        initial_coefficients: theta0[..p.k].to_vec(),
        aux: p.aux(&theta),
        aux_role: p.model.id.aux_role(),
        kernel_y: p.kernel_y,
        kernel_x: p.kernel_x,
        tilde_form: (estimator == EstimatorKind::ThetaTilde).then_some(p.tilde_form),
        objective,
        objective_monte_carlo,
        iterations: out.iterations,
        trace: out.trace,
        warnings,
    })
}

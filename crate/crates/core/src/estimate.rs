//! Parametric MMD estimation: objective, exact and Monte-Carlo gradients, and
//! the exact > GD > SGD dispatch.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{capability, input, MmdError, Result};
use crate::kernel::{kernel_mean, median_heuristic, KernelFamily, KernelSpec, Sample};
use crate::models::{self, has_closed_form, has_pathwise, has_score, ModelId, ModelSpec, SlotStatus, Theta};
use crate::optim::{adagrad, gradient_descent, Method, OptimizerConfig, TraceEntry, MAXIT_WARNING};

/// Draws used when the objective has no closed form.
pub const OBJECTIVE_MC_DRAWS: usize = 10_000;
const OBJECTIVE_MC_SEED: u64 = 0x6f62_6a65_6374;
/// Draws of one Monte-Carlo gradient are compared against each other in blocks of this size.
const MC_BLOCK: usize = 64;
/// Above this many points the data term of a stochastic gradient uses a random subset.
const MC_DATA_SUBSET: usize = 1000;

/// Value of `D^2(P_theta, P_n)`, flagged when it was estimated by simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    pub value: f64,
    /// Number of model draws when the value is a Monte-Carlo estimate.
    pub monte_carlo_draws: Option<usize>,
}

/// Outcome of a parametric fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: ModelId,
    pub method: Method,
    pub kernel: KernelSpec,
    pub theta: Theta,
    /// Natural values of `par1` and `par2` at the estimate (fixed ones included).
    pub estimates: [Vec<f64>; 2],
    /// Natural values at the starting point.
    pub initial: [Vec<f64>; 2],
    pub status: [SlotStatus; 2],
    pub objective: ObjectiveValue,
    pub iterations: usize,
    pub trace: Vec<TraceEntry>,
    pub warnings: Vec<String>,
}

/// Kernel with the median-heuristic bandwidth of the data.
pub fn default_kernel(family: KernelFamily, data: &Sample) -> Result<KernelSpec> {
    KernelSpec::new(family, median_heuristic(data)?)
}

fn check_data(model: &ModelSpec, data: &Sample) -> Result<()> {
    if data.is_empty() {
        return Err(input("empty data"));
    }
    if data.dim() != model.dim() {
        return Err(input(format!(
            "data has dimension {}, model {} was built for dimension {}",
            data.dim(),
            model.id(),
            model.dim()
        )));
    }
    Ok(())
}

/// `D^2(P_theta, P_n) = E k(X, X') - (2/n) sum_i E k(X, x_i) + (1/n^2) sum_ij k(x_i, x_j)`.
///
/// Uses closed forms when they exist and otherwise a seeded Monte-Carlo
/// estimate with [`OBJECTIVE_MC_DRAWS`] draws.
pub fn objective_mmd2(model: &ModelSpec, theta: &Theta, data: &Sample, kernel: &KernelSpec) -> Result<ObjectiveValue> {
    check_data(model, data)?;
    let data_term = kernel_mean(data, data, kernel)?;
    objective_with_data_term(model, theta, data, kernel, data_term)
}

fn objective_with_data_term(
    model: &ModelSpec,
    theta: &Theta,
    data: &Sample,
    kernel: &KernelSpec,
    data_term: f64,
) -> Result<ObjectiveValue> {
    if let Some(e) = models::evaluate(model, theta, kernel, data, false)? {
        let mean_kx = e.e_kx.iter().sum::<f64>() / e.e_kx.len() as f64;
        return Ok(ObjectiveValue { value: e.e_kk - 2.0 * mean_kx + data_term, monte_carlo_draws: None });
    }
    let dist = model.dist(theta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(OBJECTIVE_MC_SEED);
    let d = dist.dim();
    let draws = dist.sample(&mut rng, 2 * OBJECTIVE_MC_DRAWS);
    let mut e_kk = 0.0;
    let mut e_kx = 0.0;
    for t in 0..OBJECTIVE_MC_DRAWS {
        let a = &draws[2 * t * d..(2 * t + 1) * d];
        let b = &draws[(2 * t + 1) * d..(2 * t + 2) * d];
        e_kk += kernel.eval_unchecked(a, b);
        e_kx += data.points().map(|x| kernel.eval_unchecked(a, x)).sum::<f64>() / data.len() as f64;
    }
    let m = OBJECTIVE_MC_DRAWS as f64;
    Ok(ObjectiveValue { value: e_kk / m - 2.0 * e_kx / m + data_term, monte_carlo_draws: Some(2 * OBJECTIVE_MC_DRAWS) })
}

/// Analytic gradient of [`objective_mmd2`] in optimizer coordinates.
pub fn grad_mmd2_exact(model: &ModelSpec, theta: &Theta, data: &Sample, kernel: &KernelSpec) -> Result<Vec<f64>> {
    check_data(model, data)?;
    models::evaluate(model, theta, kernel, data, true)?
        .and_then(|e| e.grad)
        .ok_or_else(|| {
            capability(format!(
                "no closed-form gradient for model {} with the {} kernel",
                model.id(),
                kernel.family()
            ))
        })
}

/// Unbiased Monte-Carlo estimate of the gradient from `m` model draws.
///
/// Draws are grouped in blocks of up to 64; within a block every ordered pair
/// `(a, b)`, `a != b`, contributes `(k(X_a, X_b) - (1/n) sum_i k(x_i, X_a)) * score(X_a)`.
/// With `m = 2` this is the symmetrized single-pair estimator. Models whose
/// parameters move the support use the reparameterization `X = T(theta, u)`.
pub fn grad_mmd2_mc(
    model: &ModelSpec,
    theta: &Theta,
    data: &Sample,
    kernel: &KernelSpec,
    m: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    check_data(model, data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(mc_gradient(model, theta, data, kernel, m, &mut rng, 0.0)?.grad)
}

struct McGradient {
    grad: Vec<f64>,
    /// Estimate of `e_kk - 2 mean_i e_kx_i`.
    partial_objective: f64,
    /// Average of the bracketed term, used as the next baseline.
    mean_h: f64,
}

fn mc_gradient<R: Rng + ?Sized>(
    model: &ModelSpec,
    theta: &Theta,
    data: &Sample,
    kernel: &KernelSpec,
    m: usize,
    rng: &mut R,
    baseline: f64,
) -> Result<McGradient> {
    if m < 2 {
        return Err(input("Monte-Carlo gradients need at least two draws"));
    }
    let id = model.id();
    let pathwise = has_pathwise(id);
    if !pathwise && !has_score(id) {
        return Err(capability(format!("model {id} has neither a score nor a pathwise sampler")));
    }
    let dist = model.dist(theta)?;
    let d = dist.dim();
    let k = theta.len();

    // draws and their gradient factors (score or dX/dtheta)
    let mut points = Vec::with_capacity(m * d);
    let mut factors = Vec::with_capacity(m);
    if pathwise {
        for _ in 0..m {
            let (x, jac) = models::pathwise_draw(model, theta, &dist, rng)?;
            points.push(x);
            factors.push(jac);
        }
    } else {
        dist.sample_into(rng, m, &mut points);
        for a in 0..m {
            let nat = dist.score(&points[a * d..(a + 1) * d])?;
            factors.push(model.chain(theta, &nat)?);
        }
    }

    let subset: Option<Vec<usize>> = (data.len() > MC_DATA_SUBSET)
        .then(|| (0..MC_DATA_SUBSET).map(|_| rng.random_range(0..data.len())).collect());
    let data_points: Vec<&[f64]> = match &subset {
        Some(idx) => idx.iter().map(|&i| data.point(i)).collect(),
        None => data.points().collect(),
    };
    let n_data = data_points.len() as f64;

    let blocks = m.div_ceil(MC_BLOCK);
    let mut grad = vec![0.0; k];
    let mut e_kk = 0.0;
    let mut e_kx = 0.0;
    let mut sum_h = 0.0;
    for blk in 0..blocks {
        let lo = blk * m / blocks;
        let hi = (blk + 1) * m / blocks;
        let size = (hi - lo) as f64;
        for a in lo..hi {
            let xa = &points[a * d..(a + 1) * d];
            let kx: f64 = data_points.iter().map(|x| kernel.eval_unchecked(xa, x)).sum::<f64>() / n_data;
            let kk: f64 = (lo..hi)
                .filter(|&b| b != a)
                .map(|b| kernel.eval_unchecked(xa, &points[b * d..(b + 1) * d]))
                .sum::<f64>()
                / (size - 1.0);
            e_kk += kk;
            e_kx += kx;
            let h = kk - kx;
            sum_h += h;
            if pathwise {
                let dk: f64 = (lo..hi)
                    .filter(|&b| b != a)
                    .map(|b| kernel.dx_scalar(xa[0], points[b]))
                    .sum::<f64>()
                    / (size - 1.0);
                let dkx: f64 = data_points.iter().map(|x| kernel.dx_scalar(xa[0], x[0])).sum::<f64>() / n_data;
                for (g, j) in grad.iter_mut().zip(&factors[a]) {
                    *g += (dk - dkx) * j;
                }
            } else {
                for (g, s) in grad.iter_mut().zip(&factors[a]) {
                    *g += (h - baseline) * s;
                }
            }
        }
    }
    let mf = m as f64;
    grad.iter_mut().for_each(|g| *g *= 2.0 / mf);
    Ok(McGradient { grad, partial_objective: e_kk / mf - 2.0 * e_kx / mf, mean_h: sum_h / mf })
}

/// Method chosen for a (model, kernel) pair given the requested method.
pub fn dispatch(id: ModelId, family: KernelFamily, requested: Method) -> Result<Method> {
    let exact = matches!(id, ModelId::DiscreteUniform | ModelId::BinomialSize);
    // binomial with both parameters free: enumeration over the size, GD in the probability
    let enumerated_gd = id == ModelId::Binomial;
    let gd = enumerated_gd || (!exact && has_closed_form(id, family));
    let sgd = has_score(id) || has_pathwise(id);
    let unavailable = |m: Method| {
        Err(MmdError::Dispatch(format!(
            "method {m} is not available for model {id} with the {family} kernel"
        )))
    };
    match requested {
        Method::Auto if exact => Ok(Method::Exact),
        Method::Auto if gd => Ok(Method::GD),
        Method::Auto if sgd => Ok(Method::SGD),
        Method::Auto => unavailable(Method::Auto),
        Method::Exact if exact => Ok(Method::Exact),
        Method::GD if gd => Ok(Method::GD),
        Method::SGD if sgd && !enumerated_gd => Ok(Method::SGD),
        other => unavailable(other),
    }
}

/// Global minimizer of the objective over the enumeration window `[max(data), max(data) + 100]`
/// of the integer size parameter.
pub fn fit_exact(model: &ModelSpec, data: &Sample, kernel: &KernelSpec) -> Result<FitResult> {
    fit_exact_window(model, data, kernel, OptimizerConfig::default().enum_window)
}

fn size_window(data: &Sample, width: u64) -> (u64, u64) {
    let max = data.as_flat().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = if max >= 1.0 { max.ceil() as u64 } else { 1 };
    (lo, lo + width)
}

fn fit_exact_window(model: &ModelSpec, data: &Sample, kernel: &KernelSpec, width: u64) -> Result<FitResult> {
    check_data(model, data)?;
    if !matches!(model.id(), ModelId::DiscreteUniform | ModelId::BinomialSize) {
        return Err(MmdError::Dispatch(format!("model {} cannot be fitted by exact enumeration", model.id())));
    }
    let data_term = kernel_mean(data, data, kernel)?;
    let (lo, hi) = size_window(data, width);
    let mut trace = Vec::with_capacity((hi - lo + 1) as usize);
    let mut best: Option<(f64, u64)> = None;
    for (idx, size) in (lo..=hi).enumerate() {
        let theta = Theta(vec![size as f64]);
        let value = objective_with_data_term(model, &theta, data, kernel, data_term)?.value;
        trace.push(TraceEntry { iteration: idx, theta: theta.0.clone(), objective: value });
        if best.is_none_or(|(v, _)| value < v) {
            best = Some((value, size));
        }
    }
    let (value, size) = best.expect("window is never empty");
    let theta = Theta(vec![size as f64]);
    let (_, initial) = model.initial_theta(data)?;
    Ok(FitResult {
        model: model.id(),
        method: Method::Exact,
        kernel: *kernel,
        estimates: model.natural_values(&theta)?,
        theta,
        initial,
        status: [model.slot_status(0), model.slot_status(1)],
        objective: ObjectiveValue { value, monte_carlo_draws: None },
        iterations: trace.len(),
        trace,
        warnings: Vec::new(),
    })
}

/// Fits `model` to `data` by minimizing the squared MMD.
pub fn fit(model: &ModelSpec, data: &Sample, kernel: &KernelSpec, cfg: &OptimizerConfig) -> Result<FitResult> {
    cfg.validate()?;
    check_data(model, data)?;
    let method = dispatch(model.id(), kernel.family(), cfg.method)?;
    if method == Method::Exact {
        return fit_exact_window(model, data, kernel, cfg.enum_window);
    }
    if model.id() == ModelId::Binomial {
        return fit_binomial(model, data, kernel, cfg);
    }
    let data_term = kernel_mean(data, data, kernel)?;
    let (theta0, initial) = model.initial_theta(data)?;
    let start = objective_with_data_term(model, &theta0, data, kernel, data_term)?;
    if !start.value.is_finite() {
        return Err(MmdError::Initialization(format!(
            "the objective is not finite at the starting point {:?}",
            theta0.0
        )));
    }

    let mut warnings = Vec::new();
    let (theta, iterations, trace) = match method {
        Method::GD => {
            let out = gradient_descent(theta0.0.clone(), cfg, None, |x| {
                match models::evaluate(model, &Theta(x.to_vec()), kernel, data, true) {
                    Ok(Some(e)) => {
                        let mean_kx = e.e_kx.iter().sum::<f64>() / e.e_kx.len() as f64;
                        let value = e.e_kk - 2.0 * mean_kx + data_term;
                        (value, e.grad.unwrap_or_else(|| vec![f64::NAN; x.len()]))
                    }
                    _ => (f64::INFINITY, vec![f64::NAN; x.len()]),
                }
            });
            if out.hit_maxit {
                warnings.push(MAXIT_WARNING.to_string());
            }
            (Theta(out.x), out.iterations, out.trace)
        }
        Method::SGD => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut baseline = 0.0;
            let out = adagrad(theta0.0.clone(), cfg, false, |x, _| {
                match mc_gradient(model, &Theta(x.to_vec()), data, kernel, cfg.mc_samples, &mut rng, baseline) {
                    Ok(g) => {
                        baseline = g.mean_h;
                        (g.grad, g.partial_objective + data_term)
                    }
                    Err(_) => (vec![f64::NAN; x.len()], f64::NAN),
                }
            });
            (Theta(out.x), out.iterations, out.trace)
        }
        Method::Auto | Method::Exact => unreachable!("resolved by dispatch"),
    };
    let objective = objective_with_data_term(model, &theta, data, kernel, data_term)?;
    Ok(FitResult {
        model: model.id(),
        method,
        kernel: *kernel,
        estimates: model.natural_values(&theta)?,
        theta,
        initial,
        status: [model.slot_status(0), model.slot_status(1)],
        objective,
        iterations,
        trace,
        warnings,
    })
}

/// Binomial with size and probability free: enumerate the size, fit the
/// probability by GD for each candidate and keep the best pair.
fn fit_binomial(model: &ModelSpec, data: &Sample, kernel: &KernelSpec, cfg: &OptimizerConfig) -> Result<FitResult> {
    let (_, initial) = model.initial_theta(data)?;
    let user_p = match model.slot_status(1) {
        SlotStatus::FreeUserInit => Some(initial[1][0]),
        _ => None,
    };
    let mean = data.as_flat().iter().sum::<f64>() / data.len() as f64;
    let (lo, hi) = size_window(data, cfg.enum_window);
    let inner_cfg = OptimizerConfig { method: Method::GD, ..cfg.clone() };
    let mut best: Option<(FitResult, u64)> = None;
    let mut trace = Vec::new();
    let mut iterations = 0;
    for (idx, size) in (lo..=hi).enumerate() {
        let p0 = user_p.unwrap_or((mean / size as f64).clamp(0.01, 0.99));
        let inner_model = model.binomial_with_size(size, Some(p0))?;
        let res = fit(&inner_model, data, kernel, &inner_cfg)?;
        iterations += res.iterations;
        trace.push(TraceEntry {
            iteration: idx,
            theta: vec![size as f64, res.theta.0[0]],
            objective: res.objective.value,
        });
        if best.as_ref().is_none_or(|(b, _)| res.objective.value < b.objective.value) {
            best = Some((res, size));
        }
    }
    let (inner, size) = best.expect("window is never empty");
    let theta = Theta(vec![size as f64, inner.theta.0[0]]);
    Ok(FitResult {
        model: model.id(),
        method: Method::GD,
        kernel: *kernel,
        estimates: model.natural_values(&theta)?,
        theta,
        initial,
        status: [model.slot_status(0), model.slot_status(1)],
        objective: inner.objective,
        iterations,
        trace,
        warnings: inner.warnings,
    })
}

/// `true` when a fit of this model can use the exact gradient with this kernel.
pub fn has_exact_gradient(id: ModelId, family: KernelFamily) -> bool {
    has_closed_form(id, family) && !id.has_integer_size()
}

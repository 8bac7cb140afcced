//! Closed-form kernel expectations `E k(X, X')` and `E k(X, x_i)` under the
//! model, together with their derivatives in optimizer coordinates.
//!
//! Available pairs:
//! - normal models with the Gaussian or Laplace kernel,
//! - multivariate normal models with the Gaussian kernel,
//! - point masses with any kernel,
//! - discrete models with any kernel, as sums over the support (truncated
//!   where the mass falls below `1e-16` of the mode).

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use super::dist::{packed, Dist};
use super::zoo::{ModelId, ModelSpec, Theta};
use crate::error::Result;
use crate::kernel::{KernelFamily, KernelSpec, Sample};
use crate::special::{scaled_norm_cdf, SQRT_2PI};

/// Discrete supports longer than this fall back to Monte Carlo.
pub const MAX_SUPPORT: usize = 20_000;
const LOG_MASS_CUTOFF: f64 = 37.0;

/// `E k(X, X')` and `E k(X, x_i)` for every data point.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelExpectations {
    pub e_kk: f64,
    pub e_kx: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct Evaluated {
    pub e_kk: f64,
    pub e_kx: Vec<f64>,
    /// Gradient of `e_kk - (2/n) sum_i e_kx_i` in optimizer coordinates.
    pub grad: Option<Vec<f64>>,
}

/// Closed-form expectations at `theta`, or `None` when the pair
/// (model, kernel family) has none.
pub fn kernel_expectations(
    model: &ModelSpec,
    theta: &Theta,
    kernel: &KernelSpec,
    data: &Sample,
) -> Result<Option<KernelExpectations>> {
    Ok(evaluate(model, theta, kernel, data, false)?.map(|e| KernelExpectations { e_kk: e.e_kk, e_kx: e.e_kx }))
}

/// Whether closed forms exist for the pair, independently of the parameter value.
pub fn has_closed_form(id: ModelId, family: KernelFamily) -> bool {
    match id {
        ModelId::Gaussian | ModelId::GaussianLoc | ModelId::GaussianScale => family != KernelFamily::Cauchy,
        ModelId::MultiGaussian | ModelId::MultiGaussianLoc | ModelId::MultiGaussianScale => {
            family == KernelFamily::Gaussian
        }
        ModelId::Dirac
        | ModelId::MultiDirac
        | ModelId::DiscreteUniform
        | ModelId::Binomial
        | ModelId::BinomialSize
        | ModelId::BinomialProb
        | ModelId::Geometric
        | ModelId::Poisson => true,
        _ => false,
    }
}

pub(crate) fn evaluate(
    model: &ModelSpec,
    theta: &Theta,
    kernel: &KernelSpec,
    data: &Sample,
    want_grad: bool,
) -> Result<Option<Evaluated>> {
    if !has_closed_form(model.id(), kernel.family()) {
        return Ok(None);
    }
    let dist = model.dist(theta)?;
    let differentiable = !model.id().has_integer_size();
    let natural = match &dist {
        Dist::Normal { mean, sd } => normal(*mean, *sd, kernel, data),
        Dist::MvNormal { mean, chol } => mv_normal(mean, chol, kernel.bandwidth(), data),
        Dist::Dirac { at } => dirac(at, kernel, data),
        _ => match Support::of(&dist) {
            Some(support) => support.expectations(kernel, data, want_grad && differentiable),
            None => return Ok(None),
        },
    };
    let grad = match (want_grad && differentiable, natural.grad) {
        (true, Some(g)) => Some(model.chain(theta, &g)?),
        _ => None,
    };
    Ok(Some(Evaluated { e_kk: natural.e_kk, e_kx: natural.e_kx, grad }))
}

/// Expectations with the gradient taken in the distribution's natural parameters.
struct Natural {
    e_kk: f64,
    e_kx: Vec<f64>,
    grad: Option<Vec<f64>>,
}

/// `E K(|Z| / gamma)` for `Z ~ N(mu, v)` and its partial derivatives in `mu` and `v`.
pub(crate) fn smoothed_kernel(family: KernelFamily, gamma: f64, mu: f64, v: f64) -> (f64, f64, f64) {
    match family {
        KernelFamily::Gaussian => {
            let c = gamma * gamma + 2.0 * v;
            let g = gamma / c.sqrt() * (-mu * mu / c).exp();
            (g, -2.0 * mu / c * g, g * (-1.0 / c + 2.0 * mu * mu / (c * c)))
        }
        KernelFamily::Laplace => {
            let a = 1.0 / gamma;
            let s = v.sqrt();
            let t_plus = laplace_half(a, s, mu);
            let t_minus = laplace_half(a, s, -mu);
            let f = t_plus + t_minus;
            let phi = (-mu * mu / (2.0 * v)).exp() / (SQRT_2PI * s);
            (f, -a * (t_plus - t_minus), 0.5 * (a * a * f - 2.0 * a * phi))
        }
        KernelFamily::Cauchy => unreachable!("no closed form for the Cauchy kernel"),
    }
}

/// `E[exp(-a Z); Z > 0]` for `Z ~ N(mu, s^2)`.
fn laplace_half(a: f64, s: f64, mu: f64) -> f64 {
    let t = mu / s - a * s;
    if t <= 0.0 {
        (-mu * mu / (2.0 * s * s)).exp() * scaled_norm_cdf(t)
    } else {
        (0.5 * a * a * s * s - a * mu).exp() * crate::special::norm_cdf(t)
    }
}

fn normal(mean: f64, sd: f64, kernel: &KernelSpec, data: &Sample) -> Natural {
    let family = kernel.family();
    let gamma = kernel.bandwidth();
    let v = sd * sd;
    let (e_kk, _, kk_v) = smoothed_kernel(family, gamma, 0.0, 2.0 * v);
    let n = data.len() as f64;
    let mut e_kx = Vec::with_capacity(data.len());
    let (mut dm, mut dv) = (0.0, 0.0);
    for x in data.as_flat() {
        let (g, g_mu, g_v) = smoothed_kernel(family, gamma, mean - x, v);
        e_kx.push(g);
        dm += g_mu;
        dv += g_v;
    }
    // d/dsd through v = sd^2 (and 2v for the model-model term)
    let grad_mean = -2.0 * dm / n;
    let grad_sd = 4.0 * sd * kk_v - 2.0 * (2.0 * sd * dv) / n;
    Natural { e_kk, e_kx, grad: Some(vec![grad_mean, grad_sd]) }
}

/// `f(mu, S) = E exp(-|Z|^2 / gamma^2)` for `Z ~ N(mu, S)`, with `B = gamma^2 I + 2 S`.
struct MvGaussianSmoother {
    chol_b: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    det_factor: f64,
}

impl MvGaussianSmoother {
    fn new(cov: &DMatrix<f64>, gamma: f64) -> Option<Self> {
        let d = cov.nrows();
        let gamma2 = gamma * gamma;
        let b = DMatrix::identity(d, d) * gamma2 + cov * 2.0;
        let chol_b = b.cholesky()?;
        // det(A)^(-1/2) with A = B / gamma^2
        let log_det_a: f64 = chol_b.l().diagonal().iter().map(|v| (v * v / gamma2).ln()).sum();
        Some(MvGaussianSmoother { chol_b, det_factor: (-0.5 * log_det_a).exp() })
    }

    /// Value and `w = B^{-1} mu`.
    fn eval(&self, mu: &DVector<f64>) -> (f64, DVector<f64>) {
        let w = self.chol_b.solve(mu);
        (self.det_factor * (-mu.dot(&w)).exp(), w)
    }

    fn b_inverse(&self) -> DMatrix<f64> {
        self.chol_b.inverse()
    }
}

fn mv_normal(mean: &[f64], chol: &[f64], gamma: f64, data: &Sample) -> Natural {
    let d = mean.len();
    let mut l = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..=i {
            l[(i, j)] = chol[packed(i, j)];
        }
    }
    let cov = &l * l.transpose();
    let (Some(single), Some(double)) = (MvGaussianSmoother::new(&cov, gamma), MvGaussianSmoother::new(&(&cov * 2.0), gamma))
    else {
        return Natural { e_kk: f64::NAN, e_kx: vec![f64::NAN; data.len()], grad: None };
    };
    let (e_kk, _) = double.eval(&DVector::zeros(d));
    // d e_kk / d S = 2 * e_kk * (-B2^{-1}) (factor 2 from the covariance 2S)
    let mut grad_cov = double.b_inverse() * (-2.0 * e_kk);

    let n = data.len() as f64;
    let b_inv = single.b_inverse();
    let mut grad_mean = DVector::zeros(d);
    let mut e_kx = Vec::with_capacity(data.len());
    let mut acc_cov = DMatrix::zeros(d, d);
    for x in data.points() {
        let mu = DVector::from_iterator(d, mean.iter().zip(x).map(|(m, xi)| m - xi));
        let (f, w) = single.eval(&mu);
        e_kx.push(f);
        grad_mean -= &w * (2.0 * f);
        acc_cov += (&w * w.transpose() * 2.0 - &b_inv) * f;
    }
    // gradient of -(2/n) sum_i e_kx_i
    let grad_mean = grad_mean * (-2.0 / n);
    grad_cov -= acc_cov * (2.0 / n);
    // S = L L^T: d/dL = 2 G L
    let grad_l = (&grad_cov + grad_cov.transpose()) * &l;
    let mut grad = grad_mean.iter().copied().collect::<Vec<_>>();
    for i in 0..d {
        for j in 0..=i {
            grad.push(grad_l[(i, j)]);
        }
    }
    Natural { e_kk, e_kx, grad: Some(grad) }
}

fn dirac(at: &[f64], kernel: &KernelSpec, data: &Sample) -> Natural {
    let d = at.len();
    let n = data.len() as f64;
    let mut grad = vec![0.0; d];
    let mut buf = vec![0.0; d];
    let e_kx = data
        .points()
        .map(|x| {
            kernel.grad_x(at, x, &mut buf);
            for (g, b) in grad.iter_mut().zip(&buf) {
                *g -= 2.0 * b / n;
            }
            kernel.eval_unchecked(at, x)
        })
        .collect();
    Natural { e_kk: kernel.family().at_zero(), e_kx, grad: Some(grad) }
}

/// A discrete law restricted to the integers `start..start + pmf.len()`.
pub(crate) struct Support {
    pub start: f64,
    pub pmf: Vec<f64>,
    /// Score in the single continuous natural parameter, when there is one.
    pub score: Option<Vec<f64>>,
}

impl Support {
    pub(crate) fn of(dist: &Dist) -> Option<Support> {
        let (lo, hi) = match dist {
            Dist::DiscreteUniform { n } => {
                if *n as usize > MAX_SUPPORT {
                    return None;
                }
                let pmf = vec![1.0 / *n as f64; *n as usize];
                return Some(Support { start: 1.0, pmf, score: None });
            }
            Dist::Poisson { lambda } => {
                let mode = lambda.floor();
                window(dist, mode, 0.0, f64::INFINITY)?
            }
            Dist::Binomial { n, p } => {
                let mode = ((*n as f64 + 1.0) * p).floor().min(*n as f64);
                window(dist, mode, 0.0, *n as f64)?
            }
            Dist::Geometric { .. } => window(dist, 0.0, 0.0, f64::INFINITY)?,
            _ => return None,
        };
        let mut pmf = Vec::with_capacity((hi - lo) as usize + 1);
        let mut score = Vec::with_capacity(pmf.capacity());
        let mut j = lo;
        while j <= hi {
            pmf.push(dist.log_density(&[j]).exp());
            score.push(dist.score(&[j]).ok()?[0]);
            j += 1.0;
        }
        Some(Support { start: lo, pmf, score: Some(score) })
    }

    fn expectations(&self, kernel: &KernelSpec, data: &Sample, want_grad: bool) -> Natural {
        let s = self.pmf.len();
        let kern: Vec<f64> = (0..s).map(|k| kernel.at_distance(k as f64)).collect();
        let p = &self.pmf;
        let q: Vec<f64> = (0..s)
            .map(|j| (0..s).map(|k| p[k] * kern[j.abs_diff(k)]).sum::<f64>())
            .collect();
        let e_kk: f64 = p.iter().zip(&q).map(|(a, b)| a * b).sum();
        let score = self.score.as_ref().filter(|_| want_grad);

        let n = data.len() as f64;
        let mut cache: HashMap<u64, (f64, f64)> = HashMap::new();
        let mut d_kx = 0.0;
        let mut e_kx = Vec::with_capacity(data.len());
        for &x in data.as_flat() {
            let (v, dv) = *cache.entry(x.to_bits()).or_insert_with(|| {
                let mut v = 0.0;
                let mut dv = 0.0;
                for (j, pj) in p.iter().enumerate() {
                    let k = kernel.at_distance((self.start + j as f64 - x).abs());
                    v += pj * k;
                    if let Some(sc) = score {
                        dv += pj * sc[j] * k;
                    }
                }
                (v, dv)
            });
            e_kx.push(v);
            d_kx += dv;
        }
        let grad = score.map(|sc| {
            let d_kk: f64 = (0..s).map(|j| 2.0 * p[j] * sc[j] * q[j]).sum();
            vec![d_kk - 2.0 * d_kx / n]
        });
        Natural { e_kk, e_kx, grad }
    }
}

/// Integer range around `mode` outside which the mass is negligible.
fn window(dist: &Dist, mode: f64, min: f64, max: f64) -> Option<(f64, f64)> {
    let top = dist.log_density(&[mode]);
    let keep = |j: f64| dist.log_density(&[j]) > top - LOG_MASS_CUTOFF;
    let mut lo = mode;
    while lo > min && keep(lo - 1.0) {
        lo -= 1.0;
        if mode - lo > MAX_SUPPORT as f64 {
            return None;
        }
    }
    let mut hi = mode;
    while hi < max && keep(hi + 1.0) {
        hi += 1.0;
        if hi - lo > MAX_SUPPORT as f64 {
            return None;
        }
    }
    Some((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    fn normal_pdf(z: f64, mu: f64, v: f64) -> f64 {
        (-(z - mu) * (z - mu) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
    }

    #[test]
    fn smoothed_kernels_match_quadrature() {
        for family in [KernelFamily::Gaussian, KernelFamily::Laplace] {
            for &(gamma, mu, v) in &[(1.0, 0.3, 0.5), (0.7, -2.0, 1.3), (2.5, 4.0, 0.2), (1.0, 0.0, 2.0)] {
                let (g, _, _) = smoothed_kernel(family, gamma, mu, v);
                let sd = f64::sqrt(v);
                let f = |z: f64| family.profile(z.abs() / gamma) * normal_pdf(z, mu, v);
                // split at the kink of the Laplace kernel
                let lo = mu - 12.0 * sd;
                let hi = mu + 12.0 * sd;
                let q = if lo < 0.0 && hi > 0.0 {
                    simpson(&f, lo, 0.0, 20_000) + simpson(&f, 0.0, hi, 20_000)
                } else {
                    simpson(&f, lo, hi, 40_000)
                };
                assert!((g - q).abs() < 1e-8, "{family} gamma={gamma} mu={mu} v={v}: {g} vs {q}");
            }
        }
    }

    #[test]
    fn smoothed_kernel_derivatives_match_finite_differences() {
        for family in [KernelFamily::Gaussian, KernelFamily::Laplace] {
            for &(gamma, mu, v) in &[(1.0, 0.3, 0.5), (0.7, -2.0, 1.3), (3.0, 40.0, 0.01)] {
                let (_, g_mu, g_v) = smoothed_kernel(family, gamma, mu, v);
                let h = 1e-6;
                let fd_mu = (smoothed_kernel(family, gamma, mu + h, v).0 - smoothed_kernel(family, gamma, mu - h, v).0) / (2.0 * h);
                let hv = 1e-7 * v;
                let fd_v = (smoothed_kernel(family, gamma, mu, v + hv).0 - smoothed_kernel(family, gamma, mu, v - hv).0) / (2.0 * hv);
                assert!((g_mu - fd_mu).abs() <= 1e-6 * (1.0 + g_mu.abs()), "{family}: {g_mu} vs {fd_mu}");
                assert!((g_v - fd_v).abs() <= 1e-6 * (1.0 + g_v.abs()), "{family}: {g_v} vs {fd_v}");
            }
        }
    }

    #[test]
    fn laplace_smoother_is_finite_far_in_the_tails() {
        let (g, g_mu, g_v) = smoothed_kernel(KernelFamily::Laplace, 0.05, 300.0, 1e-4);
        assert!(g.is_finite() && g_mu.is_finite() && g_v.is_finite());
        assert!(g >= 0.0 && g < 1e-300 + 1e-200);
    }

    #[test]
    fn dirac_expectations() {
        let m = ModelSpec::univariate(ModelId::Dirac, None, None).unwrap();
        let k = KernelSpec::new(KernelFamily::Cauchy, 1.0).unwrap();
        let data = Sample::from_scalars(&[0.0, 1.0]).unwrap();
        let e = kernel_expectations(&m, &Theta(vec![0.0]), &k, &data).unwrap().unwrap();
        assert_eq!(e.e_kk, 0.5);
        assert_eq!(e.e_kx, vec![0.5, 1.0 / 3.0]);
    }

    #[test]
    fn discrete_supports_sum_to_one() {
        for dist in [
            Dist::Poisson { lambda: 0.3 },
            Dist::Poisson { lambda: 170.0 },
            Dist::Binomial { n: 40, p: 0.9 },
            Dist::Geometric { p: 0.05 },
            Dist::DiscreteUniform { n: 7 },
        ] {
            let s = Support::of(&dist).unwrap();
            let total: f64 = s.pmf.iter().sum();
            assert!((total - 1.0).abs() < 1e-13, "{dist:?}: {total}");
        }
        assert!(Support::of(&Dist::Poisson { lambda: 1e12 }).is_none());
    }

    #[test]
    fn cauchy_kernel_has_no_normal_closed_form() {
        let m = ModelSpec::univariate(ModelId::GaussianLoc, None, Some(1.0)).unwrap();
        let k = KernelSpec::new(KernelFamily::Cauchy, 1.0).unwrap();
        let data = Sample::from_scalars(&[0.0]).unwrap();
        assert!(kernel_expectations(&m, &Theta(vec![0.0]), &k, &data).unwrap().is_none());
    }
}

//! Fully specified distributions: natural parameters, sampling, log densities
//! and scores with respect to the natural parameters.

use rand::Rng;
use rand_distr::{Binomial, Cauchy, Distribution, Exp, Gamma, Geometric, Normal, Pareto, Poisson, StandardNormal};
use statrs::function::factorial::ln_factorial;
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{capability, Result};

/// A distribution with every parameter pinned.
///
/// The natural-parameter layout (used by [`Dist::score`]) is given per variant.
#[derive(Debug, Clone, PartialEq)]
pub enum Dist {
    /// `[mean, sd]`
    Normal { mean: f64, sd: f64 },
    /// Unit-scale Cauchy, `[loc]`.
    Cauchy { loc: f64 },
    /// Unit-scale Pareto on `[1, inf)` with density `alpha x^(-alpha-1)`, `[alpha]`.
    Pareto { alpha: f64 },
    /// `[rate]`
    Exponential { rate: f64 },
    /// Shape/rate parameterization, `[shape, rate]`.
    Gamma { shape: f64, rate: f64 },
    /// `[lo, hi]`
    Uniform { lo: f64, hi: f64 },
    /// Point mass, `[at_1, ..., at_d]`.
    Dirac { at: Vec<f64> },
    /// Uniform on `{1, ..., n}`; no continuous parameters.
    DiscreteUniform { n: u64 },
    /// `[p]`; the size is integer and never differentiated.
    Binomial { n: u64, p: f64 },
    /// Number of failures before the first success, `[p]`.
    Geometric { p: f64 },
    /// `[lambda]`
    Poisson { lambda: f64 },
    /// `N(mean, L L^T)` with `chol` the row-major packed lower triangle of `L`,
    /// `[mean_1..mean_d, L_00, L_10, L_11, L_20, ...]`.
    MvNormal { mean: Vec<f64>, chol: Vec<f64> },
}

/// Index of `L[i][j]` (`j <= i`) in row-major packed lower-triangular storage.
#[inline]
pub(crate) fn packed(i: usize, j: usize) -> usize {
    i * (i + 1) / 2 + j
}

impl Dist {
    pub fn dim(&self) -> usize {
        match self {
            Dist::Dirac { at } => at.len(),
            Dist::MvNormal { mean, .. } => mean.len(),
            _ => 1,
        }
    }

    /// Number of natural (continuous) parameters.
    pub fn natural_len(&self) -> usize {
        match self {
            Dist::Normal { .. } | Dist::Gamma { .. } | Dist::Uniform { .. } => 2,
            Dist::Dirac { at } => at.len(),
            Dist::DiscreteUniform { .. } => 0,
            Dist::MvNormal { mean, chol } => mean.len() + chol.len(),
            _ => 1,
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(
            self,
            Dist::DiscreteUniform { .. } | Dist::Binomial { .. } | Dist::Geometric { .. } | Dist::Poisson { .. }
        )
    }

    /// Draws `m` points, appended row-major to `out`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, m: usize, out: &mut Vec<f64>) {
        match self {
            Dist::Normal { mean, sd } => {
                let d = Normal::new(*mean, *sd).expect("validated sd");
                out.extend((0..m).map(|_| d.sample(rng)));
            }
            Dist::Cauchy { loc } => {
                let d = Cauchy::new(*loc, 1.0).expect("unit scale");
                out.extend((0..m).map(|_| d.sample(rng)));
            }
            Dist::Pareto { alpha } => {
                let d = Pareto::new(1.0, *alpha).expect("validated exponent");
                out.extend((0..m).map(|_| d.sample(rng)));
            }
            Dist::Exponential { rate } => {
                let d = Exp::new(*rate).expect("validated rate");
                out.extend((0..m).map(|_| d.sample(rng)));
            }
            Dist::Gamma { shape, rate } => {
                let d = Gamma::new(*shape, 1.0 / *rate).expect("validated gamma");
                out.extend((0..m).map(|_| d.sample(rng)));
            }
            Dist::Uniform { lo, hi } => {
                out.extend((0..m).map(|_| lo + (hi - lo) * rng.random::<f64>()));
            }
            Dist::Dirac { at } => {
                for _ in 0..m {
                    out.extend_from_slice(at);
                }
            }
            Dist::DiscreteUniform { n } => {
                out.extend((0..m).map(|_| rng.random_range(1..=*n) as f64));
            }
            Dist::Binomial { n, p } => {
                let d = Binomial::new(*n, *p).expect("validated binomial");
                out.extend((0..m).map(|_| d.sample(rng) as f64));
            }
            Dist::Geometric { p } => {
                let d = Geometric::new(*p).expect("validated probability");
                out.extend((0..m).map(|_| d.sample(rng) as f64));
            }
            Dist::Poisson { lambda } => {
                let d = Poisson::new(*lambda).expect("validated rate");
                out.extend((0..m).map(|_| d.sample(rng)));
            }
            Dist::MvNormal { mean, chol } => {
                let d = mean.len();
                let mut z = vec![0.0; d];
                for _ in 0..m {
                    z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
                    for i in 0..d {
                        let mut v = mean[i];
                        for (j, zj) in z.iter().enumerate().take(i + 1) {
                            v += chol[packed(i, j)] * zj;
                        }
                        out.push(v);
                    }
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, m: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(m * self.dim());
        self.sample_into(rng, m, &mut out);
        out
    }

    /// Log density (or log mass) at `x`; `-inf` outside the support.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let x0 = x[0];
        match self {
            Dist::Normal { mean, sd } => {
                let z = (x0 - mean) / sd;
                -0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
            }
            Dist::Cauchy { loc } => {
                let z = x0 - loc;
                -(std::f64::consts::PI * (1.0 + z * z)).ln()
            }
            Dist::Pareto { alpha } => {
                if x0 < 1.0 {
                    f64::NEG_INFINITY
                } else {
                    alpha.ln() - (alpha + 1.0) * x0.ln()
                }
            }
            Dist::Exponential { rate } => {
                if x0 < 0.0 {
                    f64::NEG_INFINITY
                } else {
                    rate.ln() - rate * x0
                }
            }
            Dist::Gamma { shape, rate } => {
                if x0 <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    shape * rate.ln() - ln_gamma(*shape) + (shape - 1.0) * x0.ln() - rate * x0
                }
            }
            Dist::Uniform { lo, hi } => {
                if x0 < *lo || x0 > *hi {
                    f64::NEG_INFINITY
                } else {
                    -(hi - lo).ln()
                }
            }
            Dist::Dirac { at } => {
                if at.as_slice() == x {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            Dist::DiscreteUniform { n } => {
                if x0.fract() == 0.0 && x0 >= 1.0 && x0 <= *n as f64 {
                    -(*n as f64).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            Dist::Binomial { n, p } => {
                if x0.fract() != 0.0 || x0 < 0.0 || x0 > *n as f64 {
                    return f64::NEG_INFINITY;
                }
                let k = x0 as u64;
                ln_factorial(*n) - ln_factorial(k) - ln_factorial(n - k) + x0 * p.ln() + (*n as f64 - x0) * (1.0 - p).ln()
            }
            Dist::Geometric { p } => {
                if x0.fract() != 0.0 || x0 < 0.0 {
                    f64::NEG_INFINITY
                } else {
                    p.ln() + x0 * (1.0 - p).ln()
                }
            }
            Dist::Poisson { lambda } => {
                if x0.fract() != 0.0 || x0 < 0.0 {
                    f64::NEG_INFINITY
                } else {
                    x0 * lambda.ln() - lambda - ln_factorial(x0 as u64)
                }
            }
            Dist::MvNormal { mean, chol } => {
                let d = mean.len();
                let z = forward_solve(chol, d, &x.iter().zip(mean).map(|(a, b)| a - b).collect::<Vec<_>>());
                let logdet: f64 = (0..d).map(|i| chol[packed(i, i)].ln()).sum();
                -0.5 * z.iter().map(|v| v * v).sum::<f64>() - logdet - 0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln()
            }
        }
    }

    /// Gradient of the log density at `x` with respect to the natural parameters.
    pub fn score(&self, x: &[f64]) -> Result<Vec<f64>> {
        let x0 = x[0];
        Ok(match self {
            Dist::Normal { mean, sd } => {
                let r = x0 - mean;
                vec![r / (sd * sd), -1.0 / sd + r * r / (sd * sd * sd)]
            }
            Dist::Cauchy { loc } => {
                let z = x0 - loc;
                vec![2.0 * z / (1.0 + z * z)]
            }
            Dist::Pareto { alpha } => vec![1.0 / alpha - x0.ln()],
            Dist::Exponential { rate } => vec![1.0 / rate - x0],
            Dist::Gamma { shape, rate } => vec![rate.ln() - digamma(*shape) + x0.ln(), shape / rate - x0],
            Dist::Binomial { n, p } => vec![x0 / p - (*n as f64 - x0) / (1.0 - p)],
            Dist::Geometric { p } => vec![1.0 / p - x0 / (1.0 - p)],
            Dist::Poisson { lambda } => vec![x0 / lambda - 1.0],
            Dist::MvNormal { mean, chol } => {
                let d = mean.len();
                let r: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
                let z = forward_solve(chol, d, &r);
                // L^{-T} z
                let w = backward_solve_transpose(chol, d, &z);
                let mut g = w.clone();
                g.reserve(chol.len());
                for i in 0..d {
                    for j in 0..=i {
                        let mut v = w[i] * z[j];
                        if i == j {
                            v -= 1.0 / chol[packed(i, i)];
                        }
                        g.push(v);
                    }
                }
                g
            }
            Dist::Uniform { .. } => {
                return Err(capability("uniform bounds are support parameters; the density has no score in them"))
            }
            Dist::Dirac { .. } => return Err(capability("a Dirac mass has no density")),
            Dist::DiscreteUniform { .. } => {
                return Err(capability("the discrete uniform size is an integer parameter without a score"))
            }
        })
    }
}

/// Solves `L z = r` for lower-triangular packed `L`.
pub(crate) fn forward_solve(chol: &[f64], d: usize, r: &[f64]) -> Vec<f64> {
    let mut z = vec![0.0; d];
    for i in 0..d {
        let mut v = r[i];
        for j in 0..i {
            v -= chol[packed(i, j)] * z[j];
        }
        z[i] = v / chol[packed(i, i)];
    }
    z
}

/// Solves `L^T w = z` for lower-triangular packed `L`.
pub(crate) fn backward_solve_transpose(chol: &[f64], d: usize, z: &[f64]) -> Vec<f64> {
    let mut w = vec![0.0; d];
    for i in (0..d).rev() {
        let mut v = z[i];
        for k in (i + 1)..d {
            v -= chol[packed(k, i)] * w[k];
        }
        w[i] = v / chol[packed(i, i)];
    }
    w
}

//! Radial kernels `k(x, y) = K(|x - y| / bandwidth)`, empirical MMD^2 and
//! bandwidth heuristics.
//!
//! Three profiles are available:
//!
//! | family     | `K(u)`          | `K(0)` |
//! |------------|-----------------|--------|
//! | `Gaussian` | `exp(-u^2)`     | 1      |
//! | `Laplace`  | `exp(-u)`       | 1      |
//! | `Cauchy`   | `1 / (2 + u^2)` | 1/2    |
//!
//! All three are bounded by one, which is what the robustness guarantees of
//! MMD estimators rely on.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, input, Result};
use crate::special::median_in_place;

/// Above this many points the median heuristic works on a random subset of pairs.
pub const MEDIAN_EXACT_MAX_POINTS: usize = 2000;
/// Number of pairs drawn by the subsampled median heuristic.
pub const MEDIAN_SUBSAMPLE_PAIRS: usize = 2_000_000;
const MEDIAN_SUBSAMPLE_SEED: u64 = 0x6d65_6469_616e;
const PARALLEL_MIN_ROWS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelFamily {
    Gaussian,
    Laplace,
    Cauchy,
}

impl KernelFamily {
    pub const ALL: [KernelFamily; 3] = [KernelFamily::Gaussian, KernelFamily::Laplace, KernelFamily::Cauchy];

    /// The profile `K(u)` for `u >= 0`.
    #[inline]
    pub fn profile(self, u: f64) -> f64 {
        match self {
            KernelFamily::Gaussian => (-u * u).exp(),
            KernelFamily::Laplace => (-u).exp(),
            KernelFamily::Cauchy => 1.0 / (2.0 + u * u),
        }
    }

    /// `K'(u)` for `u >= 0` (right derivative at zero for Laplace).
    #[inline]
    pub fn profile_derivative(self, u: f64) -> f64 {
        match self {
            KernelFamily::Gaussian => -2.0 * u * (-u * u).exp(),
            KernelFamily::Laplace => -(-u).exp(),
            KernelFamily::Cauchy => {
                let d = 2.0 + u * u;
                -2.0 * u / (d * d)
            }
        }
    }

    /// `K(0)`, the maximum of the kernel.
    pub fn at_zero(self) -> f64 {
        self.profile(0.0)
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Gaussian => "Gaussian",
            KernelFamily::Laplace => "Laplace",
            KernelFamily::Cauchy => "Cauchy",
        }
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelFamily {
    type Err = crate::MmdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Gaussian" => Ok(KernelFamily::Gaussian),
            "Laplace" => Ok(KernelFamily::Laplace),
            "Cauchy" => Ok(KernelFamily::Cauchy),
            other => Err(config(format!(
                "unknown kernel '{other}' (expected one of Gaussian, Laplace, Cauchy)"
            ))),
        }
    }
}

/// A kernel family together with a strictly positive bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    family: KernelFamily,
    bandwidth: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, bandwidth: f64) -> Result<Self> {
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(config(format!("kernel bandwidth must be positive and finite, got {bandwidth}")));
        }
        Ok(KernelSpec { family, bandwidth })
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Kernel value at Euclidean distance `dist`.
    #[inline]
    pub fn at_distance(&self, dist: f64) -> f64 {
        self.family.profile(dist / self.bandwidth)
    }

    /// Scalar evaluation `k(x, y)` for one-dimensional points.
    #[inline]
    pub fn eval_scalar(&self, x: f64, y: f64) -> f64 {
        self.at_distance((x - y).abs())
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        self.at_distance(euclidean(x, y))
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != y.len() {
            return Err(input(format!("dimension mismatch: {} vs {}", x.len(), y.len())));
        }
        Ok(self.eval_unchecked(x, y))
    }

    /// Derivative of `k(x, y)` with respect to scalar `x`.
    #[inline]
    pub fn dx_scalar(&self, x: f64, y: f64) -> f64 {
        let diff = x - y;
        if diff == 0.0 {
            return 0.0;
        }
        self.family.profile_derivative(diff.abs() / self.bandwidth) * diff.signum() / self.bandwidth
    }

    /// Gradient of `k(x, y)` with respect to `x`, written into `out`.
    pub fn grad_x(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        let dist = euclidean(x, y);
        if dist == 0.0 {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        let scale = self.family.profile_derivative(dist / self.bandwidth) / (self.bandwidth * dist);
        for ((o, a), b) in out.iter_mut().zip(x).zip(y) {
            *o = scale * (a - b);
        }
    }
}

#[inline]
pub(crate) fn euclidean(x: &[f64], y: &[f64]) -> f64 {
    if x.len() == 1 {
        return (x[0] - y[0]).abs();
    }
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// `k(x, y) = K(|x - y| / bandwidth)`.
pub fn kernel_eval(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    spec.eval(x, y)
}

/// A finite collection of points of a common dimension, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    dim: usize,
    values: Vec<f64>,
}

impl Sample {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let dim = points.first().map(|p| p.len()).ok_or_else(|| input("sample must contain at least one point"))?;
        if dim == 0 {
            return Err(input("points must have dimension at least 1"));
        }
        let mut values = Vec::with_capacity(dim * points.len());
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(input(format!("point {i} has dimension {}, expected {dim}", p.len())));
            }
            values.extend_from_slice(p);
        }
        Sample::from_flat(dim, values)
    }

    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Sample::from_flat(1, values.to_vec())
    }

    /// Builds a sample from row-major storage of `values.len() / dim` points.
    pub fn from_flat(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || values.is_empty() || !values.len().is_multiple_of(dim) {
            return Err(input(format!("cannot split {} values into points of dimension {dim}", values.len())));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(input(format!("sample contains a non-finite value ({v})")));
        }
        Ok(Sample { dim, values })
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.dim)
    }

    /// Raw row-major storage. For `dim == 1` this is the list of scalars.
    pub fn as_flat(&self) -> &[f64] {
        &self.values
    }

    pub fn scaled(&self, c: f64) -> Sample {
        Sample { dim: self.dim, values: self.values.iter().map(|v| v * c).collect() }
    }
}

/// Mean of `k(a_i, b_j)` over all pairs, i.e. `(1/(n_a n_b)) sum_i sum_j k(a_i, b_j)`.
pub fn kernel_mean(a: &Sample, b: &Sample, spec: &KernelSpec) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(input(format!("dimension mismatch: {} vs {}", a.dim(), b.dim())));
    }
    let row_sum = |x: &[f64]| b.points().map(|y| spec.eval_unchecked(x, y)).sum::<f64>();
    let rows: Vec<f64> = if a.len() * b.len() >= PARALLEL_MIN_ROWS * PARALLEL_MIN_ROWS {
        a.values.par_chunks_exact(a.dim).map(row_sum).collect()
    } else {
        a.points().map(row_sum).collect()
    };
    // row sums are reduced in index order so the result does not depend on the thread schedule
    Ok(rows.iter().sum::<f64>() / (a.len() as f64 * b.len() as f64))
}

/// Plug-in (V-statistic) estimate of MMD^2 between two samples.
pub fn mmd2_empirical(a: &Sample, b: &Sample, spec: &KernelSpec) -> Result<f64> {
    let aa = kernel_mean(a, a, spec)?;
    let ab = kernel_mean(a, b, spec)?;
    let bb = kernel_mean(b, b, spec)?;
    Ok(aa - 2.0 * ab + bb)
}

/// Median of the pairwise distances `|x_i - x_j|`, `i < j`.
///
/// Falls back to the smallest positive distance when the median is zero, and
/// to 1 when every distance is zero. Samples above
/// [`MEDIAN_EXACT_MAX_POINTS`] points use a seeded subsample of pairs.
pub fn median_heuristic(s: &Sample) -> Result<f64> {
    let n = s.len();
    if n < 2 {
        return Err(input("the median heuristic needs at least two points"));
    }
    let mut dists: Vec<f64> = if n <= MEDIAN_EXACT_MAX_POINTS {
        let mut d = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                d.push(euclidean(s.point(i), s.point(j)));
            }
        }
        d
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(MEDIAN_SUBSAMPLE_SEED);
        (0..MEDIAN_SUBSAMPLE_PAIRS)
            .map(|_| {
                let i = rng.random_range(0..n);
                let mut j = rng.random_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                euclidean(s.point(i), s.point(j))
            })
            .collect()
    };
    let med = median_in_place(&mut dists);
    if med > 0.0 {
        return Ok(med);
    }
    let smallest = dists.iter().copied().filter(|&d| d > 0.0).fold(f64::INFINITY, f64::min);
    Ok(if smallest.is_finite() { smallest } else { 1.0 })
}

/// Rescaled median heuristic used for the covariate bandwidth of the
/// regression estimator. `rescale` defaults to `1/n`.
pub fn auto_bdwth_x(x_rows: &Sample, rescale: Option<f64>) -> Result<f64> {
    let c = rescale.unwrap_or(1.0 / x_rows.len() as f64);
    if !(c.is_finite() && c > 0.0) {
        return Err(config(format!("bandwidth rescale factor must be positive, got {c}")));
    }
    Ok(c * median_heuristic(x_rows)?)
}

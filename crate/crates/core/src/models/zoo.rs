use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dist::{packed, Dist};
use crate::error::{capability, config, input, Result};
use crate::kernel::Sample;
use crate::special::{logistic, logit, mad, median};

/// Identifiers of the parametric models, spelled exactly as on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelId {
    Gaussian,
    GaussianLoc,
    GaussianScale,
    Cauchy,
    Pareto,
    Exponential,
    Gamma,
    GammaShape,
    GammaRate,
    UniformLoc,
    UniformUpper,
    UniformLowerUpper,
    Dirac,
    DiscreteUniform,
    Binomial,
    BinomialSize,
    BinomialProb,
    Geometric,
    Poisson,
    MultiGaussian,
    MultiGaussianLoc,
    MultiGaussianScale,
    MultiDirac,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Free,
    Fixed,
    Absent,
}

impl ModelId {
    pub const ALL: [ModelId; 23] = [
        ModelId::Gaussian,
        ModelId::GaussianLoc,
        ModelId::GaussianScale,
        ModelId::Cauchy,
        ModelId::Pareto,
        ModelId::Exponential,
        ModelId::Gamma,
        ModelId::GammaShape,
        ModelId::GammaRate,
        ModelId::UniformLoc,
        ModelId::UniformUpper,
        ModelId::UniformLowerUpper,
        ModelId::Dirac,
        ModelId::DiscreteUniform,
        ModelId::Binomial,
        ModelId::BinomialSize,
        ModelId::BinomialProb,
        ModelId::Geometric,
        ModelId::Poisson,
        ModelId::MultiGaussian,
        ModelId::MultiGaussianLoc,
        ModelId::MultiGaussianScale,
        ModelId::MultiDirac,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelId::Gaussian => "Gaussian",
            ModelId::GaussianLoc => "Gaussian.loc",
            ModelId::GaussianScale => "Gaussian.scale",
            ModelId::Cauchy => "Cauchy",
            ModelId::Pareto => "Pareto",
            ModelId::Exponential => "exponential",
            ModelId::Gamma => "gamma",
            ModelId::GammaShape => "gamma.shape",
            ModelId::GammaRate => "gamma.rate",
            ModelId::UniformLoc => "continuous.uniform.loc",
            ModelId::UniformUpper => "continuous.uniform.upper",
            ModelId::UniformLowerUpper => "continuous.uniform.lower.upper",
            ModelId::Dirac => "Dirac",
            ModelId::DiscreteUniform => "discrete.uniform",
            ModelId::Binomial => "binomial",
            ModelId::BinomialSize => "binomial.size",
            ModelId::BinomialProb => "binomial.prob",
            ModelId::Geometric => "geometric",
            ModelId::Poisson => "Poisson",
            ModelId::MultiGaussian => "multidim.Gaussian",
            ModelId::MultiGaussianLoc => "multidim.Gaussian.loc",
            ModelId::MultiGaussianScale => "multidim.Gaussian.scale",
            ModelId::MultiDirac => "multidim.Dirac",
        }
    }

    pub fn is_multivariate(self) -> bool {
        matches!(
            self,
            ModelId::MultiGaussian | ModelId::MultiGaussianLoc | ModelId::MultiGaussianScale | ModelId::MultiDirac
        )
    }

    /// Models whose size parameter is an integer found by enumeration.
    pub fn has_integer_size(self) -> bool {
        matches!(self, ModelId::DiscreteUniform | ModelId::Binomial | ModelId::BinomialSize)
    }

    fn roles(self) -> [Role; 2] {
        use Role::*;
        match self {
            ModelId::Gaussian | ModelId::Gamma | ModelId::UniformLowerUpper | ModelId::Binomial => [Free, Free],
            ModelId::MultiGaussian => [Free, Free],
            ModelId::GaussianLoc | ModelId::GammaShape | ModelId::UniformLoc | ModelId::BinomialSize => [Free, Fixed],
            ModelId::MultiGaussianLoc => [Free, Fixed],
            ModelId::GaussianScale | ModelId::GammaRate | ModelId::UniformUpper | ModelId::BinomialProb => [Fixed, Free],
            ModelId::MultiGaussianScale => [Fixed, Free],
            ModelId::Cauchy
            | ModelId::Pareto
            | ModelId::Exponential
            | ModelId::Dirac
            | ModelId::DiscreteUniform
            | ModelId::Geometric
            | ModelId::Poisson
            | ModelId::MultiDirac => [Free, Absent],
        }
    }

    /// Human-readable names of `par1` and `par2`.
    pub fn slot_names(self) -> [&'static str; 2] {
        match self {
            ModelId::Gaussian | ModelId::GaussianLoc | ModelId::GaussianScale => ["mean", "standard deviation"],
            ModelId::Cauchy | ModelId::Dirac | ModelId::MultiDirac => ["location", ""],
            ModelId::Pareto => ["exponent", ""],
            ModelId::Exponential | ModelId::Poisson => ["rate", ""],
            ModelId::Gamma | ModelId::GammaShape | ModelId::GammaRate => ["shape", "rate"],
            ModelId::UniformLoc => ["center", "length"],
            ModelId::UniformUpper | ModelId::UniformLowerUpper => ["lower bound", "upper bound"],
            ModelId::DiscreteUniform => ["size", ""],
            ModelId::Binomial | ModelId::BinomialSize | ModelId::BinomialProb => ["size", "probability"],
            ModelId::Geometric => ["probability", ""],
            ModelId::MultiGaussian | ModelId::MultiGaussianScale => ["mean vector", "scale matrix U"],
            ModelId::MultiGaussianLoc => ["mean vector", "standard deviation"],
        }
    }

    pub fn valid_names() -> String {
        ModelId::ALL.iter().map(|m| m.as_str()).collect::<Vec<_>>().join(", ")
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelId {
    type Err = crate::MmdError;

    fn from_str(s: &str) -> Result<Self> {
        ModelId::ALL
            .iter()
            .copied()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| config(format!("unknown model '{s}'; valid models are: {}", ModelId::valid_names())))
    }
}

/// Optimizer coordinates: an unconstrained real vector mapped onto the
/// model's parameter space by [`ModelSpec::dist`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theta(pub Vec<f64>);

impl Theta {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Slot {
    Free { init: Option<Vec<f64>> },
    Fixed(Vec<f64>),
    Absent,
}

/// How a parameter slot enters the fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotStatus {
    FreeDefaultInit,
    FreeUserInit,
    Fixed,
    Absent,
}

/// A parametric model with its fixed parameters and optional user starting values.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    id: ModelId,
    dim: usize,
    slots: [Slot; 2],
}

impl ModelSpec {
    /// Builds a model on `dim`-dimensional data. A value given for a parameter
    /// the model estimates is used as the starting point; a value for a fixed
    /// parameter is required.
    pub fn new(id: ModelId, dim: usize, par1: Option<Vec<f64>>, par2: Option<Vec<f64>>) -> Result<Self> {
        if dim == 0 {
            return Err(config("data dimension must be at least 1"));
        }
        if !id.is_multivariate() && dim != 1 {
            return Err(config(format!("model {id} is univariate but the data has dimension {dim}")));
        }
        let names = id.slot_names();
        let roles = id.roles();
        let mut slots = [Slot::Absent, Slot::Absent];
        for (k, given) in [par1, par2].into_iter().enumerate() {
            let label = format!("par{}", k + 1);
            slots[k] = match (roles[k], given) {
                (Role::Absent, Some(_)) => return Err(config(format!("model {id} has no {label}"))),
                (Role::Absent, None) => Slot::Absent,
                (Role::Fixed, None) => {
                    return Err(config(format!(
                        "model {id} requires {label} ({}) to be specified by the user",
                        names[k]
                    )))
                }
                (Role::Fixed, Some(v)) => Slot::Fixed(v),
                (Role::Free, init) => Slot::Free { init },
            };
        }
        let mut spec = ModelSpec { id, dim, slots };
        spec.normalize_and_validate()?;
        Ok(spec)
    }

    pub fn univariate(id: ModelId, par1: Option<f64>, par2: Option<f64>) -> Result<Self> {
        ModelSpec::new(id, 1, par1.map(|v| vec![v]), par2.map(|v| vec![v]))
    }

    pub fn id(&self) -> ModelId {
        self.id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn slot_status(&self, k: usize) -> SlotStatus {
        match &self.slots[k] {
            Slot::Free { init: None } => SlotStatus::FreeDefaultInit,
            Slot::Free { init: Some(_) } => SlotStatus::FreeUserInit,
            Slot::Fixed(_) => SlotStatus::Fixed,
            Slot::Absent => SlotStatus::Absent,
        }
    }

    /// Value of a fixed slot.
    pub fn fixed_value(&self, k: usize) -> Option<&[f64]> {
        match &self.slots[k] {
            Slot::Fixed(v) => Some(v),
            _ => None,
        }
    }

    fn fixed(&self, k: usize) -> &[f64] {
        self.fixed_value(k).expect("slot is fixed by construction")
    }

    fn expected_len(&self, k: usize) -> usize {
        let d = self.dim;
        match (self.id, k) {
            (ModelId::MultiGaussian | ModelId::MultiGaussianLoc | ModelId::MultiGaussianScale | ModelId::MultiDirac, 0) => d,
            (ModelId::MultiGaussian | ModelId::MultiGaussianScale, 1) => d * d,
            _ => 1,
        }
    }

    /// Checks lengths and domains of user values; scale matrices are replaced
    /// by the Cholesky factor of `U U^T` (packed lower triangle).
    fn normalize_and_validate(&mut self) -> Result<()> {
        let id = self.id;
        for k in 0..2 {
            let expected = self.expected_len(k);
            let label = format!("par{}", k + 1);
            let value = match &mut self.slots[k] {
                Slot::Fixed(v) | Slot::Free { init: Some(v) } => v,
                _ => continue,
            };
            if value.len() != expected {
                return Err(config(format!(
                    "{label} of model {id} must have {expected} value(s), got {}",
                    value.len()
                )));
            }
            if value.iter().any(|v| !v.is_finite()) {
                return Err(config(format!("{label} of model {id} must be finite")));
            }
            let positive = |v: f64, what: &str| -> Result<()> {
                if v > 0.0 {
                    Ok(())
                } else {
                    Err(config(format!("{label} ({what}) of model {id} must be positive, got {v}")))
                }
            };
            let probability = |v: f64| -> Result<()> {
                if v > 0.0 && v < 1.0 {
                    Ok(())
                } else {
                    Err(config(format!("{label} (probability) of model {id} must lie in (0, 1), got {v}")))
                }
            };
            let size = |v: f64| -> Result<()> {
                if v >= 1.0 && v.fract() == 0.0 {
                    Ok(())
                } else {
                    Err(config(format!("{label} (size) of model {id} must be a positive integer, got {v}")))
                }
            };
            match (id, k) {
                (ModelId::Gaussian | ModelId::GaussianLoc | ModelId::GaussianScale | ModelId::MultiGaussianLoc, 1) => {
                    positive(value[0], "standard deviation")?
                }
                (ModelId::Pareto, 0) => positive(value[0], "exponent")?,
                (ModelId::Exponential | ModelId::Poisson, 0) => positive(value[0], "rate")?,
                (ModelId::Gamma | ModelId::GammaShape | ModelId::GammaRate, 0) => positive(value[0], "shape")?,
                (ModelId::Gamma | ModelId::GammaShape | ModelId::GammaRate, 1) => positive(value[0], "rate")?,
                (ModelId::UniformLoc, 1) => positive(value[0], "length")?,
                (ModelId::DiscreteUniform | ModelId::Binomial | ModelId::BinomialSize | ModelId::BinomialProb, 0) => {
                    size(value[0])?
                }
                (ModelId::Binomial | ModelId::BinomialSize | ModelId::BinomialProb | ModelId::Geometric, _) => {
                    probability(value[0])?
                }
                (ModelId::MultiGaussian | ModelId::MultiGaussianScale, 1) => {
                    *value = cholesky_of_scale(value, self.dim).map_err(|e| config(format!("{label}: {e}")))?;
                }
                _ => {}
            }
        }
        // bounds of the uniform models
        if matches!(id, ModelId::UniformUpper | ModelId::UniformLowerUpper) {
            if let (Some(a), Some(b)) = (self.slot_value(0), self.slot_value(1)) {
                if b[0] <= a[0] {
                    return Err(config(format!("model {id} needs par2 (upper bound) > par1 (lower bound)")));
                }
            }
        }
        Ok(())
    }

    fn slot_value(&self, k: usize) -> Option<&[f64]> {
        match &self.slots[k] {
            Slot::Fixed(v) | Slot::Free { init: Some(v) } => Some(v),
            _ => None,
        }
    }

    fn packed_len(&self) -> usize {
        self.dim * (self.dim + 1) / 2
    }

    /// Number of optimizer coordinates.
    pub fn theta_dim(&self) -> usize {
        match self.id {
            ModelId::Gaussian | ModelId::Gamma | ModelId::UniformLowerUpper | ModelId::Binomial => 2,
            ModelId::MultiGaussian => self.dim + self.packed_len(),
            ModelId::MultiGaussianLoc | ModelId::MultiDirac => self.dim,
            ModelId::MultiGaussianScale => self.packed_len(),
            _ => 1,
        }
    }

    /// Maps optimizer coordinates to the distribution they describe.
    pub fn dist(&self, theta: &Theta) -> Result<Dist> {
        let t = theta.as_slice();
        if t.len() != self.theta_dim() {
            return Err(input(format!(
                "model {} expects {} optimizer coordinates, got {}",
                self.id,
                self.theta_dim(),
                t.len()
            )));
        }
        if t.iter().any(|v| !v.is_finite()) {
            return Err(input("non-finite optimizer coordinates"));
        }
        let d = match self.id {
            ModelId::Gaussian => Dist::Normal { mean: t[0], sd: t[1].exp() },
            ModelId::GaussianLoc => Dist::Normal { mean: t[0], sd: self.fixed(1)[0] },
            ModelId::GaussianScale => Dist::Normal { mean: self.fixed(0)[0], sd: t[0].exp() },
            ModelId::Cauchy => Dist::Cauchy { loc: t[0] },
            ModelId::Pareto => Dist::Pareto { alpha: t[0].exp() },
            ModelId::Exponential => Dist::Exponential { rate: t[0].exp() },
            ModelId::Gamma => Dist::Gamma { shape: t[0].exp(), rate: t[1].exp() },
            ModelId::GammaShape => Dist::Gamma { shape: t[0].exp(), rate: self.fixed(1)[0] },
            ModelId::GammaRate => Dist::Gamma { shape: self.fixed(0)[0], rate: t[0].exp() },
            ModelId::UniformLoc => {
                let half = 0.5 * self.fixed(1)[0];
                Dist::Uniform { lo: t[0] - half, hi: t[0] + half }
            }
            ModelId::UniformUpper => {
                let a = self.fixed(0)[0];
                Dist::Uniform { lo: a, hi: a + t[0].exp() }
            }
            ModelId::UniformLowerUpper => Dist::Uniform { lo: t[0], hi: t[0] + t[1].exp() },
            ModelId::Dirac | ModelId::MultiDirac => Dist::Dirac { at: t.to_vec() },
            ModelId::DiscreteUniform => Dist::DiscreteUniform { n: integer_size(t[0])? },
            ModelId::Binomial => Dist::Binomial { n: integer_size(t[0])?, p: logistic(t[1]) },
            ModelId::BinomialSize => Dist::Binomial { n: integer_size(t[0])?, p: self.fixed(1)[0] },
            ModelId::BinomialProb => Dist::Binomial { n: integer_size(self.fixed(0)[0])?, p: logistic(t[0]) },
            ModelId::Geometric => Dist::Geometric { p: logistic(t[0]) },
            ModelId::Poisson => Dist::Poisson { lambda: t[0].exp() },
            ModelId::MultiGaussian => Dist::MvNormal { mean: t[..self.dim].to_vec(), chol: unlog_diag(&t[self.dim..], self.dim) },
            ModelId::MultiGaussianLoc => {
                let sigma = self.fixed(1)[0];
                let mut chol = vec![0.0; self.packed_len()];
                for i in 0..self.dim {
                    chol[packed(i, i)] = sigma;
                }
                Dist::MvNormal { mean: t.to_vec(), chol }
            }
            ModelId::MultiGaussianScale => Dist::MvNormal { mean: self.fixed(0).to_vec(), chol: unlog_diag(t, self.dim) },
        };
        check_dist(&d)?;
        Ok(d)
    }

    /// Gradient with respect to the distribution's natural parameters, pulled
    /// back to optimizer coordinates.
    pub(crate) fn chain(&self, theta: &Theta, natural: &[f64]) -> Result<Vec<f64>> {
        let t = theta.as_slice();
        let g = natural;
        Ok(match self.id {
            ModelId::Gaussian => vec![g[0], g[1] * t[1].exp()],
            ModelId::GaussianLoc => vec![g[0]],
            ModelId::GaussianScale => vec![g[1] * t[0].exp()],
            ModelId::Cauchy => vec![g[0]],
            ModelId::Pareto | ModelId::Exponential | ModelId::Poisson => vec![g[0] * t[0].exp()],
            ModelId::Gamma => vec![g[0] * t[0].exp(), g[1] * t[1].exp()],
            ModelId::GammaShape => vec![g[0] * t[0].exp()],
            ModelId::GammaRate => vec![g[1] * t[0].exp()],
            ModelId::UniformLoc => vec![g[0] + g[1]],
            ModelId::UniformUpper => vec![g[1] * t[0].exp()],
            ModelId::UniformLowerUpper => vec![g[0] + g[1], g[1] * t[1].exp()],
            ModelId::Dirac | ModelId::MultiDirac => g.to_vec(),
            ModelId::BinomialProb | ModelId::Geometric => {
                let p = logistic(t[0]);
                vec![g[0] * p * (1.0 - p)]
            }
            ModelId::MultiGaussian => {
                let mut out = g[..self.dim].to_vec();
                out.extend(chain_log_diag(&g[self.dim..], &t[self.dim..], self.dim));
                out
            }
            ModelId::MultiGaussianLoc => g[..self.dim].to_vec(),
            ModelId::MultiGaussianScale => chain_log_diag(&g[self.dim..], t, self.dim),
            ModelId::DiscreteUniform | ModelId::Binomial | ModelId::BinomialSize => {
                return Err(capability(format!("model {} has an integer parameter; it is not differentiable", self.id)))
            }
        })
    }

    /// Natural values of `par1` and `par2` (fixed ones included) at `theta`.
    /// Scale matrices are reported as full row-major lower-triangular matrices.
    pub fn natural_values(&self, theta: &Theta) -> Result<[Vec<f64>; 2]> {
        let dist = self.dist(theta)?;
        let d = self.dim;
        Ok(match (self.id, dist) {
            (ModelId::Gaussian | ModelId::GaussianLoc | ModelId::GaussianScale, Dist::Normal { mean, sd }) => {
                [vec![mean], vec![sd]]
            }
            (_, Dist::Cauchy { loc }) => [vec![loc], vec![]],
            (_, Dist::Pareto { alpha }) => [vec![alpha], vec![]],
            (_, Dist::Exponential { rate }) => [vec![rate], vec![]],
            (_, Dist::Gamma { shape, rate }) => [vec![shape], vec![rate]],
            (ModelId::UniformLoc, Dist::Uniform { lo, hi }) => [vec![0.5 * (lo + hi)], vec![hi - lo]],
            (_, Dist::Uniform { lo, hi }) => [vec![lo], vec![hi]],
            (_, Dist::Dirac { at }) => [at, vec![]],
            (_, Dist::DiscreteUniform { n }) => [vec![n as f64], vec![]],
            (ModelId::Geometric, Dist::Geometric { p }) => [vec![p], vec![]],
            (_, Dist::Binomial { n, p }) => [vec![n as f64], vec![p]],
            (_, Dist::Poisson { lambda }) => [vec![lambda], vec![]],
            (ModelId::MultiGaussianLoc, Dist::MvNormal { mean, chol }) => [mean, vec![chol[0]]],
            (_, Dist::MvNormal { mean, chol }) => {
                let mut full = vec![0.0; d * d];
                for i in 0..d {
                    for j in 0..=i {
                        full[i * d + j] = chol[packed(i, j)];
                    }
                }
                [mean, full]
            }
            (id, other) => unreachable!("model {id} produced {other:?}"),
        })
    }

    /// Optimizer coordinates of the given natural values of the free slots
    /// (entries for fixed slots are ignored).
    pub fn theta_from_natural(&self, par1: &[f64], par2: &[f64]) -> Result<Theta> {
        let bad = |what: &str| config(format!("invalid {what} for model {}", self.id));
        let pos_ln = |v: f64, what: &str| if v > 0.0 { Ok(v.ln()) } else { Err(bad(what)) };
        let prob = |v: f64| if v > 0.0 && v < 1.0 { Ok(logit(v)) } else { Err(bad("probability")) };
        let t = match self.id {
            ModelId::Gaussian => vec![par1[0], pos_ln(par2[0], "standard deviation")?],
            ModelId::GaussianLoc | ModelId::Cauchy => vec![par1[0]],
            ModelId::GaussianScale => vec![pos_ln(par2[0], "standard deviation")?],
            ModelId::Pareto => vec![pos_ln(par1[0], "exponent")?],
            ModelId::Exponential | ModelId::Poisson => vec![pos_ln(par1[0], "rate")?],
            ModelId::Gamma => vec![pos_ln(par1[0], "shape")?, pos_ln(par2[0], "rate")?],
            ModelId::GammaShape => vec![pos_ln(par1[0], "shape")?],
            ModelId::GammaRate => vec![pos_ln(par2[0], "rate")?],
            ModelId::UniformLoc => vec![par1[0]],
            ModelId::UniformUpper => vec![pos_ln(par2[0] - self.fixed(0)[0], "upper bound")?],
            ModelId::UniformLowerUpper => vec![par1[0], pos_ln(par2[0] - par1[0], "upper bound")?],
            ModelId::Dirac | ModelId::MultiDirac | ModelId::MultiGaussianLoc => par1.to_vec(),
            ModelId::DiscreteUniform | ModelId::BinomialSize => vec![par1[0]],
            ModelId::Binomial => vec![par1[0], prob(par2[0])?],
            ModelId::BinomialProb => vec![prob(par2[0])?],
            ModelId::Geometric => vec![prob(par1[0])?],
            ModelId::MultiGaussian => {
                let mut t = par1.to_vec();
                t.extend(log_diag(&full_to_packed(par2, self.dim)?, self.dim)?);
                t
            }
            ModelId::MultiGaussianScale => log_diag(&full_to_packed(par2, self.dim)?, self.dim)?,
        };
        Ok(Theta(t))
    }

    /// Starting point of the optimizer: user values where given, robust data
    /// summaries otherwise. Returns the optimizer coordinates and the natural
    /// values of both slots.
    pub fn initial_theta(&self, data: &Sample) -> Result<(Theta, [Vec<f64>; 2])> {
        let d = self.dim;
        let cols: Vec<Vec<f64>> = (0..d).map(|j| data.points().map(|p| p[j]).collect()).collect();
        let x = &cols[0];
        let med = median(x);
        let spread = positive_or(mad(x), || sample_sd(x), 1.0);
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = x.iter().copied().fold(f64::INFINITY, f64::min);
        let clamp_p = |p: f64| p.clamp(0.01, 0.99);

        let defaults: [Vec<f64>; 2] = match self.id {
            ModelId::Gaussian | ModelId::GaussianLoc | ModelId::GaussianScale => [vec![med], vec![spread]],
            ModelId::Cauchy | ModelId::Dirac => [vec![med], vec![]],
            ModelId::Pareto => {
                let alpha = if med > 1.0 { std::f64::consts::LN_2 / med.ln() } else { 1.0 };
                [vec![alpha], vec![]]
            }
            ModelId::Exponential => [vec![if med > 0.0 { 1.0 / med } else { 1.0 }], vec![]],
            ModelId::Gamma | ModelId::GammaShape | ModelId::GammaRate => {
                let m = if med > 0.0 { med } else { positive_or(mean, || 1.0, 1.0) };
                let shape = match self.fixed_value(0) {
                    Some(a) => a[0],
                    None => match self.fixed_value(1) {
                        Some(b) => b[0] * m,
                        None => ((m / spread).powi(2)).clamp(1e-2, 1e4),
                    },
                };
                let rate = match self.fixed_value(1) {
                    Some(b) => b[0],
                    None => shape / m,
                };
                [vec![shape], vec![rate]]
            }
            ModelId::UniformLoc => [vec![med], vec![]],
            ModelId::UniformUpper => {
                let a = self.fixed(0)[0];
                [vec![], vec![if max > a { max } else { a + spread }]]
            }
            ModelId::UniformLowerUpper => [vec![min], vec![if max > min { max } else { min + 1.0 }]],
            ModelId::DiscreteUniform => [vec![max.max(1.0).ceil()], vec![]],
            ModelId::Binomial | ModelId::BinomialSize | ModelId::BinomialProb => {
                let n = self.fixed_value(0).map(|v| v[0]).unwrap_or(max.max(1.0).ceil());
                [vec![n], vec![clamp_p(mean / n)]]
            }
            ModelId::Geometric => [vec![clamp_p(1.0 / (1.0 + mean.max(0.0)))], vec![]],
            ModelId::Poisson => [vec![if med > 0.0 { med } else { mean.max(0.5) }], vec![]],
            ModelId::MultiGaussian | ModelId::MultiGaussianLoc | ModelId::MultiGaussianScale | ModelId::MultiDirac => {
                let mu: Vec<f64> = cols.iter().map(|c| median(c)).collect();
                let mut u = vec![0.0; d * d];
                for (j, c) in cols.iter().enumerate() {
                    u[j * d + j] = positive_or(mad(c), || sample_sd(c), 1.0);
                }
                let second = if self.id == ModelId::MultiGaussianLoc { vec![] } else { u };
                [mu, second]
            }
        };
        let mut values: [Vec<f64>; 2] = [vec![], vec![]];
        for k in 0..2 {
            values[k] = match &self.slots[k] {
                Slot::Fixed(v) => self.fixed_natural(k, v),
                Slot::Free { init: Some(v) } => self.fixed_natural(k, v),
                Slot::Free { init: None } => defaults[k].clone(),
                Slot::Absent => vec![],
            };
        }
        let theta = self.theta_from_natural(&values[0], &values[1])?;
        let reported = self.natural_values(&theta)?;
        Ok((theta, reported))
    }

    /// Stored values are in natural form except scale matrices, which are packed.
    fn fixed_natural(&self, k: usize, v: &[f64]) -> Vec<f64> {
        if k == 1 && matches!(self.id, ModelId::MultiGaussian | ModelId::MultiGaussianScale) {
            let d = self.dim;
            let mut full = vec![0.0; d * d];
            for i in 0..d {
                for j in 0..=i {
                    full[i * d + j] = v[packed(i, j)];
                }
            }
            full
        } else {
            v.to_vec()
        }
    }

    /// The same model with `par1` pinned: used for the inner continuous fit
    /// of binomial models at a fixed size.
    pub(crate) fn binomial_with_size(&self, n: u64, p_init: Option<f64>) -> Result<ModelSpec> {
        ModelSpec::new(ModelId::BinomialProb, 1, Some(vec![n as f64]), p_init.map(|p| vec![p]))
    }
}

fn positive_or(v: f64, fallback: impl FnOnce() -> f64, last: f64) -> f64 {
    if v > 0.0 && v.is_finite() {
        return v;
    }
    let f = fallback();
    if f > 0.0 && f.is_finite() {
        f
    } else {
        last
    }
}

fn sample_sd(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = x.iter().sum::<f64>() / x.len() as f64;
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

fn integer_size(v: f64) -> Result<u64> {
    let r = v.round();
    if r >= 1.0 && (v - r).abs() < 1e-9 && r < 1e15 {
        Ok(r as u64)
    } else {
        Err(input(format!("size parameter must be a positive integer, got {v}")))
    }
}

fn check_dist(d: &Dist) -> Result<()> {
    let ok = match d {
        Dist::Normal { sd, .. } => *sd > 0.0 && sd.is_finite(),
        Dist::Pareto { alpha } => *alpha > 0.0 && alpha.is_finite(),
        Dist::Exponential { rate } => *rate > 0.0 && rate.is_finite(),
        Dist::Gamma { shape, rate } => *shape > 0.0 && *rate > 0.0 && shape.is_finite() && rate.is_finite(),
        Dist::Uniform { lo, hi } => hi > lo && hi.is_finite(),
        Dist::Binomial { p, .. } | Dist::Geometric { p } => *p > 0.0 && *p < 1.0,
        Dist::Poisson { lambda } => *lambda > 0.0 && lambda.is_finite(),
        Dist::MvNormal { chol, mean } => {
            let d = mean.len();
            (0..d).all(|i| chol[packed(i, i)] > 0.0) && chol.iter().all(|v| v.is_finite())
        }
        Dist::Cauchy { .. } | Dist::Dirac { .. } | Dist::DiscreteUniform { .. } => true,
    };
    if ok {
        Ok(())
    } else {
        Err(input(format!("parameters out of range: {d:?}")))
    }
}

fn unlog_diag(t: &[f64], d: usize) -> Vec<f64> {
    let mut l = t.to_vec();
    for i in 0..d {
        l[packed(i, i)] = t[packed(i, i)].exp();
    }
    l
}

fn log_diag(l: &[f64], d: usize) -> Result<Vec<f64>> {
    let mut t = l.to_vec();
    for i in 0..d {
        let v = l[packed(i, i)];
        if v <= 0.0 {
            return Err(config("scale matrix must have a positive diagonal"));
        }
        t[packed(i, i)] = v.ln();
    }
    Ok(t)
}

fn chain_log_diag(g: &[f64], t: &[f64], d: usize) -> Vec<f64> {
    let mut out = g.to_vec();
    for i in 0..d {
        out[packed(i, i)] *= t[packed(i, i)].exp();
    }
    out
}

fn full_to_packed(full: &[f64], d: usize) -> Result<Vec<f64>> {
    if full.len() != d * d {
        return Err(config(format!("scale matrix must have {} entries", d * d)));
    }
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    for i in 0..d {
        for j in 0..=i {
            out.push(full[i * d + j]);
        }
    }
    Ok(out)
}

/// Lower-triangular factor with positive diagonal of `U U^T` for a row-major `U`.
fn cholesky_of_scale(u: &[f64], d: usize) -> std::result::Result<Vec<f64>, String> {
    let m = DMatrix::from_row_slice(d, d, u);
    let cov = &m * m.transpose();
    let chol = cov.cholesky().ok_or_else(|| "scale matrix U must be non-singular".to_string())?;
    let l = chol.l();
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    for i in 0..d {
        for j in 0..=i {
            out.push(l[(i, j)]);
        }
    }
    Ok(out)
}

/// Draws `m` points from the model at `theta` with a seeded generator.
pub fn sample(model: &ModelSpec, theta: &Theta, m: usize, seed: u64) -> Result<Sample> {
    use rand::SeedableRng;
    if m == 0 {
        return Err(input("sample size must be at least 1"));
    }
    let dist = model.dist(theta)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Sample::from_flat(dist.dim(), dist.sample(&mut rng, m))
}

/// `grad_theta log p_theta(x)` in optimizer coordinates.
pub fn log_density_grad(model: &ModelSpec, theta: &Theta, x: &[f64]) -> Result<Vec<f64>> {
    let dist = model.dist(theta)?;
    if x.len() != dist.dim() {
        return Err(input(format!("point has dimension {}, model expects {}", x.len(), dist.dim())));
    }
    if matches!(model.id(), ModelId::Binomial | ModelId::BinomialSize | ModelId::DiscreteUniform) {
        return Err(capability(format!("model {} has an integer parameter without a score", model.id())));
    }
    let natural = dist.score(x)?;
    model.chain(theta, &natural)
}

/// Whether `log_density_grad` is available for the model.
pub fn has_score(id: ModelId) -> bool {
    !matches!(
        id,
        ModelId::Dirac
            | ModelId::MultiDirac
            | ModelId::DiscreteUniform
            | ModelId::Binomial
            | ModelId::BinomialSize
            | ModelId::UniformLoc
            | ModelId::UniformUpper
            | ModelId::UniformLowerUpper
    )
}

/// Whether the model has a differentiable reparameterization `X = T(theta, u)`.
pub fn has_pathwise(id: ModelId) -> bool {
    matches!(id, ModelId::UniformLoc | ModelId::UniformUpper | ModelId::UniformLowerUpper)
}

/// One pathwise draw `X = lo + (hi - lo) u` and its gradient in optimizer coordinates.
pub(crate) fn pathwise_draw<R: Rng + ?Sized>(model: &ModelSpec, theta: &Theta, dist: &Dist, rng: &mut R) -> Result<(f64, Vec<f64>)> {
    match dist {
        Dist::Uniform { lo, hi } => {
            let u: f64 = rng.random();
            let x = lo + (hi - lo) * u;
            Ok((x, model.chain(theta, &[1.0 - u, u])?))
        }
        _ => Err(capability(format!("model {} has no pathwise sampler", model.id()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_ids_round_trip_through_strings() {
        for id in ModelId::ALL {
            assert_eq!(id.as_str().parse::<ModelId>().unwrap(), id);
        }
        let err = "Gauss".parse::<ModelId>().unwrap_err().to_string();
        assert!(err.contains("Gaussian.loc") && err.contains("multidim.Dirac"));
    }

    #[test]
    fn fixed_parameters_are_required_and_validated() {
        let err = ModelSpec::univariate(ModelId::GaussianLoc, None, None).unwrap_err().to_string();
        assert!(err.contains("par2") && err.contains("standard deviation"), "{err}");
        assert!(ModelSpec::univariate(ModelId::GaussianLoc, None, Some(-1.0)).is_err());
        assert!(ModelSpec::univariate(ModelId::BinomialProb, Some(2.5), None).is_err());
        assert!(ModelSpec::univariate(ModelId::BinomialSize, None, Some(1.2)).is_err());
        assert!(ModelSpec::univariate(ModelId::Poisson, None, Some(1.0)).is_err());
        assert!(ModelSpec::univariate(ModelId::UniformUpper, Some(2.0), Some(1.0)).is_err());
        assert!(ModelSpec::new(ModelId::Gaussian, 2, None, None).is_err());
    }

    #[test]
    fn user_values_become_starting_points() {
        let m = ModelSpec::univariate(ModelId::GaussianLoc, Some(2.0), Some(1.0)).unwrap();
        assert_eq!(m.slot_status(0), SlotStatus::FreeUserInit);
        assert_eq!(m.slot_status(1), SlotStatus::Fixed);
        let data = Sample::from_scalars(&[0.0, 0.1, 0.2]).unwrap();
        let (theta, values) = m.initial_theta(&data).unwrap();
        assert_eq!(theta.0, vec![2.0]);
        assert_eq!(values, [vec![2.0], vec![1.0]]);
        let m = ModelSpec::univariate(ModelId::GaussianLoc, None, Some(1.0)).unwrap();
        assert_eq!(m.initial_theta(&data).unwrap().0 .0, vec![0.1]);
    }

    #[test]
    fn samplers_for_degenerate_models() {
        let dirac = ModelSpec::univariate(ModelId::Dirac, None, None).unwrap();
        let s = sample(&dirac, &Theta(vec![3.5]), 4, 1).unwrap();
        assert_eq!(s.as_flat(), &[3.5; 4]);
        let du = ModelSpec::univariate(ModelId::DiscreteUniform, None, None).unwrap();
        let s = sample(&du, &Theta(vec![1.0]), 3, 1).unwrap();
        assert_eq!(s.as_flat(), &[1.0; 3]);
        assert!(sample(&du, &Theta(vec![1.0]), 0, 1).is_err());
    }

    #[test]
    fn scale_matrix_is_normalized_to_cholesky() {
        // U with a negative diagonal entry describes the same covariance
        let m = ModelSpec::new(ModelId::MultiGaussian, 2, None, Some(vec![-2.0, 0.0, 1.0, 3.0])).unwrap();
        let data = Sample::new(vec![vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let (theta, values) = m.initial_theta(&data).unwrap();
        let l = &values[1];
        assert!((l[0] - 2.0).abs() < 1e-12 && (l[2] + 1.0).abs() < 1e-12, "{l:?}");
        assert!(l[1] == 0.0 && l[3] > 0.0);
        // covariance U U^T = [[4, -2], [-2, 10]]
        let cov11 = l[2] * l[2] + l[3] * l[3];
        assert!((cov11 - 10.0).abs() < 1e-12);
        assert_eq!(theta.len(), 5);
    }

    #[test]
    fn textbook_scores_in_optimizer_coordinates() {
        let m = ModelSpec::univariate(ModelId::GaussianLoc, None, Some(1.0)).unwrap();
        assert_eq!(log_density_grad(&m, &Theta(vec![0.0]), &[2.0]).unwrap(), vec![2.0]);
        // Poisson in log-rate coordinates: d/d(log l) = (x/l - 1) l
        let m = ModelSpec::univariate(ModelId::Poisson, None, None).unwrap();
        let g = log_density_grad(&m, &Theta(vec![2.0f64.ln()]), &[4.0]).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-12);
        let m = ModelSpec::univariate(ModelId::DiscreteUniform, None, None).unwrap();
        assert!(matches!(log_density_grad(&m, &Theta(vec![3.0]), &[1.0]), Err(crate::MmdError::Capability(_))));
    }
}

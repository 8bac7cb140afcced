//! Conditional laws of the response given the linear predictor, their scores,
//! and kernel expectations between pairs of laws.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Bernoulli, Beta, Distribution, Exp, Gamma, Normal, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{config, Result};
use crate::kernel::{KernelFamily, KernelSpec};
use crate::models::{smoothed_kernel, MAX_SUPPORT};
use crate::special::logistic;

/// Bound on `|x^T theta|` inside exponential links.
pub const EXP_LINK_CAP: f64 = 700.0;
const MEAN_CLAMP: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegModelId {
    LinearGaussian,
    LinearGaussianLoc,
    Exponential,
    Gamma,
    GammaLoc,
    Beta,
    BetaLoc,
    Logistic,
    Poisson,
}

/// Whether the auxiliary scalar is estimated, user-fixed or absent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AuxRole {
    Free,
    Fixed,
    Absent,
}

impl RegModelId {
    pub const ALL: [RegModelId; 9] = [
        RegModelId::LinearGaussian,
        RegModelId::LinearGaussianLoc,
        RegModelId::Exponential,
        RegModelId::Gamma,
        RegModelId::GammaLoc,
        RegModelId::Beta,
        RegModelId::BetaLoc,
        RegModelId::Logistic,
        RegModelId::Poisson,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RegModelId::LinearGaussian => "linearGaussian",
            RegModelId::LinearGaussianLoc => "linearGaussian.loc",
            RegModelId::Exponential => "exponential",
            RegModelId::Gamma => "gamma",
            RegModelId::GammaLoc => "gamma.loc",
            RegModelId::Beta => "beta",
            RegModelId::BetaLoc => "beta.loc",
            RegModelId::Logistic => "logistic",
            RegModelId::Poisson => "poisson",
        }
    }

    pub fn aux_role(self) -> AuxRole {
        match self {
            RegModelId::LinearGaussian | RegModelId::Gamma | RegModelId::Beta => AuxRole::Free,
            RegModelId::LinearGaussianLoc | RegModelId::GammaLoc | RegModelId::BetaLoc => AuxRole::Fixed,
            RegModelId::Exponential | RegModelId::Logistic | RegModelId::Poisson => AuxRole::Absent,
        }
    }

    /// Label of the auxiliary parameter in summaries.
    pub fn aux_name(self) -> &'static str {
        match self {
            RegModelId::LinearGaussian | RegModelId::LinearGaussianLoc => "Std. dev. of Gaussian noise",
            RegModelId::Gamma | RegModelId::GammaLoc | RegModelId::Beta | RegModelId::BetaLoc => "Precision parameter",
            _ => "",
        }
    }

    /// Kernel family used on the response when none is given.
    pub fn default_kernel_y(self) -> KernelFamily {
        match self {
            RegModelId::Poisson => KernelFamily::Laplace,
            _ => KernelFamily::Gaussian,
        }
    }

    pub(crate) fn has_exp_link(self) -> bool {
        matches!(self, RegModelId::Exponential | RegModelId::Gamma | RegModelId::GammaLoc | RegModelId::Poisson)
    }

    /// Whether per-observation expectations are computed without simulation.
    pub fn has_closed_form(self, family: KernelFamily) -> bool {
        match self {
            RegModelId::LinearGaussian | RegModelId::LinearGaussianLoc => family != KernelFamily::Cauchy,
            RegModelId::Logistic | RegModelId::Poisson => true,
            _ => false,
        }
    }

    pub(crate) fn check_response(self, y: f64) -> std::result::Result<(), &'static str> {
        let ok = match self {
            RegModelId::LinearGaussian | RegModelId::LinearGaussianLoc => true,
            RegModelId::Exponential | RegModelId::Gamma | RegModelId::GammaLoc => y > 0.0,
            RegModelId::Beta | RegModelId::BetaLoc => y > 0.0 && y < 1.0,
            RegModelId::Logistic => y == 0.0 || y == 1.0,
            RegModelId::Poisson => y >= 0.0 && y.fract() == 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(match self {
                RegModelId::Exponential | RegModelId::Gamma | RegModelId::GammaLoc => "a positive number",
                RegModelId::Beta | RegModelId::BetaLoc => "a number in (0, 1)",
                RegModelId::Logistic => "0 or 1",
                RegModelId::Poisson => "a non-negative integer",
                _ => "a real number",
            })
        }
    }
}

impl fmt::Display for RegModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RegModelId {
    type Err = crate::MmdError;

    fn from_str(s: &str) -> Result<Self> {
        RegModelId::ALL.iter().copied().find(|m| m.as_str() == s).ok_or_else(|| {
            let names: Vec<&str> = RegModelId::ALL.iter().map(|m| m.as_str()).collect();
            config(format!("unknown regression model '{s}'; valid models are: {}", names.join(", ")))
        })
    }
}

/// Law of the response at one covariate value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Law {
    Normal { mean: f64, sd: f64 },
    Exponential { rate: f64 },
    /// Shape/rate form.
    Gamma { shape: f64, rate: f64 },
    Beta { a: f64, b: f64 },
    Bernoulli { p: f64 },
    Poisson { lambda: f64 },
}

impl Law {
    pub fn mean(&self) -> f64 {
        match *self {
            Law::Normal { mean, .. } => mean,
            Law::Exponential { rate } => 1.0 / rate,
            Law::Gamma { shape, rate } => shape / rate,
            Law::Beta { a, b } => a / (a + b),
            Law::Bernoulli { p } => p,
            Law::Poisson { lambda } => lambda,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Law::Normal { mean, sd } => Normal::new(mean, sd).map(|d| d.sample(rng)).unwrap_or(mean),
            Law::Exponential { rate } => Exp::new(rate).map(|d| d.sample(rng)).unwrap_or(0.0),
            Law::Gamma { shape, rate } => Gamma::new(shape, 1.0 / rate).map(|d| d.sample(rng)).unwrap_or(shape / rate),
            Law::Beta { a, b } => Beta::new(a, b).map(|d| d.sample(rng)).unwrap_or(a / (a + b)),
            Law::Bernoulli { p } => {
                if Bernoulli::new(p).map(|d| d.sample(rng)).unwrap_or(p >= 0.5) {
                    1.0
                } else {
                    0.0
                }
            }
            Law::Poisson { lambda } => {
                if lambda <= 0.0 {
                    0.0
                } else {
                    Poisson::new(lambda).map(|d| d.sample(rng)).unwrap_or(lambda.round())
                }
            }
        }
    }
}

/// Conditional law for linear predictor `eta`; the flag reports saturation of an exponential link.
pub fn conditional_law(id: RegModelId, eta: f64, aux: Option<f64>) -> (Law, bool) {
    let capped = id.has_exp_link() && eta.abs() > EXP_LINK_CAP;
    let e = eta.clamp(-EXP_LINK_CAP, EXP_LINK_CAP);
    let psi = aux.unwrap_or(1.0);
    let law = match id {
        RegModelId::LinearGaussian | RegModelId::LinearGaussianLoc => Law::Normal { mean: eta, sd: psi },
        RegModelId::Exponential => Law::Exponential { rate: (-e).exp() },
        RegModelId::Gamma | RegModelId::GammaLoc => Law::Gamma { shape: psi, rate: psi * (-e).exp() },
        RegModelId::Beta | RegModelId::BetaLoc => {
            let mu = logistic(eta).clamp(MEAN_CLAMP, 1.0 - MEAN_CLAMP);
            Law::Beta { a: mu * psi, b: (1.0 - mu) * psi }
        }
        RegModelId::Logistic => Law::Bernoulli { p: logistic(eta) },
        RegModelId::Poisson => Law::Poisson { lambda: e.exp() },
    };
    (law, capped)
}

/// `(d/d eta, d/d aux) log p(y)`; the eta part vanishes where the link saturates.
pub(crate) fn score(id: RegModelId, eta: f64, aux: Option<f64>, y: f64) -> (f64, f64) {
    let saturated = id.has_exp_link() && eta.abs() > EXP_LINK_CAP;
    let e = eta.clamp(-EXP_LINK_CAP, EXP_LINK_CAP);
    let psi = aux.unwrap_or(1.0);
    let (s_eta, s_aux) = match id {
        RegModelId::LinearGaussian | RegModelId::LinearGaussianLoc => {
            let r = y - eta;
            (r / (psi * psi), -1.0 / psi + r * r / (psi * psi * psi))
        }
        RegModelId::Exponential => (-1.0 + y * (-e).exp(), 0.0),
        RegModelId::Gamma | RegModelId::GammaLoc => {
            let ye = y * (-e).exp();
            (psi * (ye - 1.0), psi.ln() - e + 1.0 - digamma(psi) + y.ln() - ye)
        }
        RegModelId::Beta | RegModelId::BetaLoc => {
            let mu = logistic(eta).clamp(MEAN_CLAMP, 1.0 - MEAN_CLAMP);
            let da = y.ln() - digamma(mu * psi);
            let db = (1.0 - y).ln() - digamma((1.0 - mu) * psi);
            (psi * mu * (1.0 - mu) * (da - db), digamma(psi) + mu * da + (1.0 - mu) * db)
        }
        RegModelId::Logistic => (y - logistic(eta), 0.0),
        RegModelId::Poisson => (y - e.exp(), 0.0),
    };
    (if saturated { 0.0 } else { s_eta }, s_aux)
}

/// A law in a form that admits exact kernel expectations. Derivatives are
/// carried in the linear predictor, and the flags say which auxiliary
/// parameter (if any) the law depends on.
#[derive(Debug, Clone)]
pub(crate) enum Exact {
    /// `d mean / d eta` and `d sd / d eta`; `aux_is_sd` when the auxiliary parameter is the sd.
    Normal { mean: f64, sd: f64, dmean: f64, dsd: f64, aux_is_sd: bool },
    /// `dp` is `d p / d eta`.
    Bernoulli { p: f64, dp: f64 },
    /// Integer support `start..`, with `d log p_j / d eta` per point.
    Discrete { start: f64, pmf: Vec<f64>, dscore: Vec<f64> },
    /// Mass spread so widely that every kernel expectation is negligible.
    Diffuse,
}

impl Exact {
    pub(crate) fn of(id: RegModelId, eta: f64, aux: Option<f64>, family: KernelFamily) -> Option<Exact> {
        if !id.has_closed_form(family) {
            return None;
        }
        let (law, capped) = conditional_law(id, eta, aux);
        let live = if capped { 0.0 } else { 1.0 };
        Some(match law {
            Law::Normal { mean, sd } => Exact::Normal { mean, sd, dmean: 1.0, dsd: 0.0, aux_is_sd: true },
            Law::Bernoulli { p } => Exact::Bernoulli { p, dp: p * (1.0 - p) },
            Law::Poisson { lambda } => match poisson_support(lambda) {
                Some((start, pmf)) => {
                    let dscore = (0..pmf.len()).map(|j| live * (start + j as f64 - lambda)).collect();
                    Exact::Discrete { start, pmf, dscore }
                }
                None if family != KernelFamily::Cauchy => Exact::Normal {
                    mean: lambda,
                    sd: lambda.sqrt(),
                    dmean: live * lambda,
                    dsd: live * 0.5 * lambda.sqrt(),
                    aux_is_sd: false,
                },
                None => Exact::Diffuse,
            },
            _ => return None,
        })
    }
}

/// Poisson pmf on the integers where the mass is within `exp(-37)` of the
/// mode, built by the ratio recurrence; `None` when that range is too wide.
fn poisson_support(lambda: f64) -> Option<(f64, Vec<f64>)> {
    const CUTOFF: f64 = 8.533e-17; // exp(-37)
    if lambda <= 0.0 {
        return Some((0.0, vec![1.0]));
    }
    let mode = lambda.floor();
    let top = (mode * lambda.ln() - lambda - ln_gamma(mode + 1.0)).exp();
    let mut below = Vec::new();
    let mut p = top;
    let mut k = mode;
    while k > 0.0 {
        p *= k / lambda;
        if p < top * CUTOFF {
            break;
        }
        below.push(p);
        k -= 1.0;
        if below.len() > MAX_SUPPORT {
            return None;
        }
    }
    let start = mode - below.len() as f64;
    let mut pmf: Vec<f64> = below.into_iter().rev().collect();
    pmf.push(top);
    let mut p = top;
    let mut k = mode;
    loop {
        k += 1.0;
        p *= lambda / k;
        if p < top * CUTOFF {
            break;
        }
        pmf.push(p);
        if pmf.len() > MAX_SUPPORT {
            return None;
        }
    }
    Some((start, pmf))
}

/// `sum_k p_k K(|j - k| / gamma)` for every `j` of an integer-spaced pmf.
fn kernel_smooth(pmf: &[f64], kernel: &KernelSpec) -> Vec<f64> {
    let s = pmf.len();
    match kernel.family() {
        KernelFamily::Laplace => {
            // exp(-|j - k| / gamma) factorizes: one forward and one backward pass
            let r = (-1.0 / kernel.bandwidth()).exp();
            let mut fwd = vec![0.0; s];
            let mut acc = 0.0;
            for j in 0..s {
                acc = acc * r + pmf[j];
                fwd[j] = acc;
            }
            let mut out = vec![0.0; s];
            acc = 0.0;
            for j in (0..s).rev() {
                acc = acc * r + pmf[j];
                out[j] = fwd[j] + acc - pmf[j];
            }
            out
        }
        _ => {
            let table: Vec<f64> = (0..s).map(|d| kernel.at_distance(d as f64)).collect();
            let band = table.iter().position(|&v| v < 1e-18).unwrap_or(s);
            (0..s)
                .map(|j| {
                    let lo = j.saturating_sub(band);
                    let hi = (j + band).min(s);
                    (lo..hi).map(|k| pmf[k] * table[j.abs_diff(k)]).sum()
                })
                .collect()
        }
    }
}

/// One per-observation quantity with its derivatives in `eta` and in the auxiliary parameter.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Diff {
    pub value: f64,
    pub d_eta: f64,
    pub d_aux: f64,
}

/// `E k(Y, Y')` with `Y, Y'` i.i.d. from the law.
pub(crate) fn self_expectation(law: &Exact, kernel: &KernelSpec) -> Diff {
    match *law {
        Exact::Normal { sd, dsd, aux_is_sd, .. } => {
            let (g, _, g_v) = smoothed_kernel(kernel.family(), kernel.bandwidth(), 0.0, 2.0 * sd * sd);
            let g_sd = g_v * 4.0 * sd;
            Diff { value: g, d_eta: g_sd * dsd, d_aux: if aux_is_sd { g_sd } else { 0.0 } }
        }
        Exact::Bernoulli { p, dp } => {
            let k0 = kernel.family().at_zero();
            let delta = k0 - kernel.at_distance(1.0);
            let value = k0 - 2.0 * p * (1.0 - p) * delta;
            Diff { value, d_eta: -2.0 * (1.0 - 2.0 * p) * delta * dp, d_aux: 0.0 }
        }
        Exact::Discrete { ref pmf, ref dscore, .. } => {
            let q = kernel_smooth(pmf, kernel);
            let value = pmf.iter().zip(&q).map(|(a, b)| a * b).sum();
            let d_eta = (0..pmf.len()).map(|j| 2.0 * pmf[j] * dscore[j] * q[j]).sum();
            Diff { value, d_eta, d_aux: 0.0 }
        }
        Exact::Diffuse => Diff::default(),
    }
}

/// `E k(Y, y)` for a fixed point `y`.
pub(crate) fn point_expectation(law: &Exact, kernel: &KernelSpec, y: f64) -> Diff {
    match *law {
        Exact::Normal { mean, sd, dmean, dsd, aux_is_sd } => {
            let (g, g_mu, g_v) = smoothed_kernel(kernel.family(), kernel.bandwidth(), mean - y, sd * sd);
            let g_sd = g_v * 2.0 * sd;
            Diff { value: g, d_eta: g_mu * dmean + g_sd * dsd, d_aux: if aux_is_sd { g_sd } else { 0.0 } }
        }
        Exact::Bernoulli { p, dp } => {
            let k1 = kernel.eval_scalar(1.0, y);
            let k0 = kernel.eval_scalar(0.0, y);
            Diff { value: p * k1 + (1.0 - p) * k0, d_eta: dp * (k1 - k0), d_aux: 0.0 }
        }
        Exact::Discrete { start, ref pmf, ref dscore } => {
            let mut d = Diff::default();
            for (j, (p, s)) in pmf.iter().zip(dscore).enumerate() {
                let k = kernel.eval_scalar(start + j as f64, y);
                d.value += p * k;
                d.d_eta += p * s * k;
            }
            d
        }
        Exact::Diffuse => Diff::default(),
    }
}

/// `E k(Y, Y')` with `Y` and `Y'` independent from two laws; derivatives in
/// the first and second predictor and the shared auxiliary parameter.
pub(crate) fn cross_expectation(a: &Exact, b: &Exact, kernel: &KernelSpec) -> (f64, f64, f64, f64) {
    match (a, b) {
        (
            &Exact::Normal { mean: ma, sd: sa, dmean: dma, dsd: dsa, aux_is_sd },
            &Exact::Normal { mean: mb, sd: sb, dmean: dmb, dsd: dsb, .. },
        ) => {
            let (g, g_mu, g_v) = smoothed_kernel(kernel.family(), kernel.bandwidth(), ma - mb, sa * sa + sb * sb);
            let (g_sa, g_sb) = (g_v * 2.0 * sa, g_v * 2.0 * sb);
            let d_aux = if aux_is_sd { g_sa + g_sb } else { 0.0 };
            (g, g_mu * dma + g_sa * dsa, -g_mu * dmb + g_sb * dsb, d_aux)
        }
        (&Exact::Bernoulli { p: pa, dp: dpa }, &Exact::Bernoulli { p: pb, dp: dpb }) => {
            let k0 = kernel.family().at_zero();
            let delta = k0 - kernel.at_distance(1.0);
            let value = k0 - (pa + pb - 2.0 * pa * pb) * delta;
            let da = -(1.0 - 2.0 * pb) * delta * dpa;
            let db = -(1.0 - 2.0 * pa) * delta * dpb;
            (value, da, db, 0.0)
        }
        (Exact::Discrete { start: sa, pmf: pa, dscore: qa }, Exact::Discrete { start: sb, pmf: pb, dscore: qb }) => {
            // place both laws on a common integer grid and smooth each against the kernel
            let lo = sa.min(*sb);
            let len = ((sa + pa.len() as f64).max(sb + pb.len() as f64) - lo) as usize;
            let embed = |start: f64, w: &[f64]| {
                let mut g = vec![0.0; len];
                let off = (start - lo) as usize;
                g[off..off + w.len()].copy_from_slice(w);
                g
            };
            let smooth_a = kernel_smooth(&embed(*sa, pa), kernel);
            let smooth_b = kernel_smooth(&embed(*sb, pb), kernel);
            let off_a = (sa - lo) as usize;
            let off_b = (sb - lo) as usize;
            let mut value = 0.0;
            let mut da = 0.0;
            for (i, (p, s)) in pa.iter().zip(qa).enumerate() {
                value += p * smooth_b[off_a + i];
                da += p * s * smooth_b[off_a + i];
            }
            let db = pb.iter().zip(qb).enumerate().map(|(j, (q, t))| q * t * smooth_a[off_b + j]).sum();
            (value, da, db, 0.0)
        }
        // a discrete law next to one so spread out that it is approximated as normal
        _ => (0.0, 0.0, 0.0, 0.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Dist;

    #[test]
    fn poisson_support_matches_the_pmf() {
        for lambda in [0.01, 1.0, 7.5, 300.0] {
            let (start, pmf) = poisson_support(lambda).unwrap();
            let total: f64 = pmf.iter().sum();
            assert!((total - 1.0).abs() < 1e-12, "{lambda}: {total}");
            for (j, p) in pmf.iter().enumerate().step_by(7) {
                let exact = Dist::Poisson { lambda }.log_density(&[start + j as f64]).exp();
                assert!((p - exact).abs() < 1e-12 * (1.0 + exact) + 1e-300, "{lambda} {j}");
            }
        }
        assert!(poisson_support(1e12).is_none());
    }

    #[test]
    fn links() {
        assert_eq!(conditional_law(RegModelId::Logistic, 0.0, None).0, Law::Bernoulli { p: 0.5 });
        assert_eq!(conditional_law(RegModelId::Poisson, 0.0, None).0, Law::Poisson { lambda: 1.0 });
        let (law, capped) = conditional_law(RegModelId::Poisson, 800.0, None);
        assert!(capped && law.mean().is_finite());
        let (law, _) = conditional_law(RegModelId::Gamma, 1.0, Some(3.0));
        assert!((law.mean() - 1.0f64.exp()).abs() < 1e-12);
        let (law, _) = conditional_law(RegModelId::Beta, 0.0, Some(4.0));
        assert_eq!(law, Law::Beta { a: 2.0, b: 2.0 });
    }

    #[test]
    fn scores_match_finite_differences() {
        let log_p = |id: RegModelId, eta: f64, aux: f64, y: f64| -> f64 {
            match conditional_law(id, eta, Some(aux)).0 {
                Law::Normal { mean, sd } => Dist::Normal { mean, sd }.log_density(&[y]),
                Law::Exponential { rate } => Dist::Exponential { rate }.log_density(&[y]),
                Law::Gamma { shape, rate } => Dist::Gamma { shape, rate }.log_density(&[y]),
                Law::Beta { a, b } => {
                    use statrs::function::gamma::ln_gamma;
                    ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + (a - 1.0) * y.ln() + (b - 1.0) * (1.0 - y).ln()
                }
                Law::Bernoulli { p } => {
                    if y == 1.0 {
                        p.ln()
                    } else {
                        (1.0 - p).ln()
                    }
                }
                Law::Poisson { lambda } => Dist::Poisson { lambda }.log_density(&[y]),
            }
        };
        let cases = [
            (RegModelId::LinearGaussian, 0.4, 1.3, -0.2),
            (RegModelId::Exponential, 0.4, 1.0, 2.2),
            (RegModelId::Gamma, -0.3, 2.5, 0.7),
            (RegModelId::Beta, 0.6, 3.0, 0.35),
            (RegModelId::Logistic, 0.6, 1.0, 1.0),
            (RegModelId::Poisson, 1.2, 1.0, 5.0),
        ];
        for (id, eta, aux, y) in cases {
            let (s_eta, s_aux) = score(id, eta, Some(aux), y);
            let h = 1e-6;
            let fd_eta = (log_p(id, eta + h, aux, y) - log_p(id, eta - h, aux, y)) / (2.0 * h);
            assert!((s_eta - fd_eta).abs() < 1e-6 * (1.0 + fd_eta.abs()), "{id}: {s_eta} vs {fd_eta}");
            if id.aux_role() == AuxRole::Free {
                let fd_aux = (log_p(id, eta, aux + h, y) - log_p(id, eta, aux - h, y)) / (2.0 * h);
                assert!((s_aux - fd_aux).abs() < 1e-6 * (1.0 + fd_aux.abs()), "{id}: {s_aux} vs {fd_aux}");
            }
        }
    }

    #[test]
    fn laplace_smoothing_matches_direct_sum() {
        let pmf: Vec<f64> = (0..40).map(|j| ((j as f64) * 0.37).sin().abs()).collect();
        for family in KernelFamily::ALL {
            let k = KernelSpec::new(family, 3.3).unwrap();
            let fast = kernel_smooth(&pmf, &k);
            for (j, v) in fast.iter().enumerate() {
                let direct: f64 = (0..40).map(|i| pmf[i] * k.at_distance((i as f64 - j as f64).abs())).sum();
                assert!((v - direct).abs() < 1e-12 * (1.0 + direct), "{family}");
            }
        }
    }

    #[test]
    fn bernoulli_expectations_enumerate_outcomes() {
        let k = KernelSpec::new(KernelFamily::Gaussian, 0.8).unwrap();
        let (pa, pb) = (0.3, 0.75);
        let a = Exact::Bernoulli { p: pa, dp: pa * (1.0 - pa) };
        let b = Exact::Bernoulli { p: pb, dp: pb * (1.0 - pb) };
        let mut direct = 0.0;
        for (ya, wa) in [(0.0, 1.0 - pa), (1.0, pa)] {
            for (yb, wb) in [(0.0, 1.0 - pb), (1.0, pb)] {
                direct += wa * wb * k.eval_scalar(ya, yb);
            }
        }
        assert!((cross_expectation(&a, &b, &k).0 - direct).abs() < 1e-15);
    }
}

//! Optimizer configuration and the two drivers shared by parametric and
//! regression fits: gradient descent with backtracking and AdaGrad with
//! iterate averaging.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config, Result};

/// Warning attached to fits that stop on the iteration cap.
pub const MAXIT_WARNING: &str = "The maximum number of iterations has been reached";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    Auto,
    Exact,
    GD,
    SGD,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Auto => "auto",
            Method::Exact => "exact",
            Method::GD => "GD",
            Method::SGD => "SGD",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = crate::MmdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Method::Auto),
            "exact" => Ok(Method::Exact),
            "GD" => Ok(Method::GD),
            "SGD" => Ok(Method::SGD),
            other => Err(config(format!("unknown method '{other}' (expected auto, exact, GD or SGD)"))),
        }
    }
}

/// Step-size rule of gradient descent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StepRule {
    /// Armijo backtracking starting from the last accepted step.
    Backtracking,
    /// A constant step, for diagnostics.
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub method: Method,
    pub maxit: usize,
    /// Monte-Carlo draws (or sampled pairs) per stochastic gradient.
    pub mc_samples: usize,
    pub step0: f64,
    pub adagrad_eps: f64,
    /// Relative objective change over [`OptimizerConfig::window`] iterations below which GD stops.
    pub tol: f64,
    pub window: usize,
    pub seed: u64,
    /// SGD iterates discarded before averaging; `None` means `maxit / 2`.
    pub burnin: Option<usize>,
    pub step_rule: StepRule,
    /// Width of the enumeration window for integer size parameters.
    pub enum_window: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            method: Method::Auto,
            maxit: 50_000,
            mc_samples: 64,
            step0: 0.1,
            adagrad_eps: 1e-8,
            tol: 1e-6,
            window: 50,
            seed: 0,
            burnin: None,
            step_rule: StepRule::Backtracking,
            enum_window: 100,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.maxit == 0 {
            return Err(config("maxit must be at least 1"));
        }
        if self.mc_samples < 2 {
            return Err(config("mc_samples must be at least 2"));
        }
        if !(self.tol > 0.0) {
            return Err(config("tol must be positive"));
        }
        if !(self.step0 > 0.0 && self.step0.is_finite()) {
            return Err(config("step0 must be positive"));
        }
        if self.window == 0 {
            return Err(config("window must be at least 1"));
        }
        if let StepRule::Fixed(s) = self.step_rule {
            if !(s > 0.0 && s.is_finite()) {
                return Err(config("fixed step must be positive"));
            }
        }
        Ok(())
    }

    pub(crate) fn burnin(&self) -> usize {
        self.burnin.unwrap_or(self.maxit / 2).min(self.maxit.saturating_sub(1))
    }
}

/// One optimizer iterate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub theta: Vec<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Outcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub hit_maxit: bool,
    pub trace: Vec<TraceEntry>,
}

const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 80;
const MAX_STEP: f64 = 1e8;

/// Gradient descent. `value_grad` returns the objective and its gradient;
/// non-finite values are treated as `+inf` during the line search. With
/// `max_move`, backtracking trial steps are shortened so that no coordinate
/// moves further than that in one iteration.
pub(crate) fn gradient_descent<F>(x0: Vec<f64>, cfg: &OptimizerConfig, max_move: Option<f64>, mut value_grad: F) -> Outcome
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let mut x = x0;
    let (mut f, mut g) = value_grad(&x);
    let mut trace = vec![TraceEntry { iteration: 0, theta: x.clone(), objective: f }];
    let mut step = match cfg.step_rule {
        StepRule::Backtracking => cfg.step0,
        StepRule::Fixed(s) => s,
    };
    let mut iterations = 0;
    let mut hit_maxit = true;
    let mut candidate = vec![0.0; x.len()];
    while iterations < cfg.maxit {
        let gnorm2: f64 = g.iter().map(|v| v * v).sum();
        if gnorm2 == 0.0 {
            hit_maxit = false;
            break;
        }
        let accepted = match cfg.step_rule {
            StepRule::Fixed(s) => {
                for ((c, xi), gi) in candidate.iter_mut().zip(&x).zip(&g) {
                    *c = xi - s * gi;
                }
                let (fc, gc) = value_grad(&candidate);
                Some((fc, gc))
            }
            StepRule::Backtracking => {
                let mut t = step;
                if let Some(m) = max_move {
                    let gmax = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                    t = t.min(m / gmax);
                }
                let mut found = None;
                for _ in 0..MAX_HALVINGS {
                    for ((c, xi), gi) in candidate.iter_mut().zip(&x).zip(&g) {
                        *c = xi - t * gi;
                    }
                    let (fc, gc) = value_grad(&candidate);
                    if fc.is_finite() && fc <= f - ARMIJO_C * t * gnorm2 && fc < f {
                        found = Some((fc, gc));
                        break;
                    }
                    t *= 0.5;
                }
                // grow the trial step again after a success
                step = (t * 2.0).min(MAX_STEP);
                found
            }
        };
        let Some((fc, gc)) = accepted else {
            // no descent step exists at floating-point resolution
            hit_maxit = false;
            break;
        };
        if !fc.is_finite() {
            hit_maxit = false;
            break;
        }
        iterations += 1;
        x.copy_from_slice(&candidate);
        f = fc;
        g = gc;
        trace.push(TraceEntry { iteration: iterations, theta: x.clone(), objective: f });
        if iterations >= cfg.window {
            let old = trace[trace.len() - 1 - cfg.window].objective;
            if (old - f).abs() <= cfg.tol * f.abs().max(f64::MIN_POSITIVE) {
                hit_maxit = false;
                break;
            }
        }
    }
    if iterations < cfg.maxit {
        hit_maxit = false;
    }
    Outcome { x, iterations, hit_maxit, trace }
}

/// AdaGrad on a stochastic gradient. `grad(x, t)` returns a gradient estimate
/// and a noisy objective estimate at iteration `t`. Returns the average of the
/// post-burn-in iterates; the trace records every iterate with the objective
/// averaged over the last `window` estimates.
pub(crate) fn adagrad<G>(x0: Vec<f64>, cfg: &OptimizerConfig, early_stop: bool, mut grad: G) -> Outcome
where
    G: FnMut(&[f64], usize) -> (Vec<f64>, f64),
{
    let k = x0.len();
    let mut x = x0;
    let mut acc = vec![0.0; k];
    let mut avg = vec![0.0; k];
    let mut n_avg = 0usize;
    let burnin = cfg.burnin();
    let mut trace = Vec::with_capacity(cfg.maxit.min(1 << 20) + 1);
    let mut recent: std::collections::VecDeque<f64> = std::collections::VecDeque::with_capacity(cfg.window);
    let mut window_sum = 0.0;
    let mut last_obj = f64::NAN;
    let mut iterations = 0;
    let mut stopped_early = false;
    for t in 0..cfg.maxit {
        let (g, obj) = grad(&x, t);
        if g.iter().all(|v| v.is_finite()) {
            for i in 0..k {
                acc[i] += g[i] * g[i];
                x[i] -= cfg.step0 * g[i] / (acc[i] + cfg.adagrad_eps).sqrt();
            }
        }
        iterations = t + 1;
        if t >= burnin {
            n_avg += 1;
            for i in 0..k {
                avg[i] += (x[i] - avg[i]) / n_avg as f64;
            }
        }
        if obj.is_finite() {
            if recent.len() == cfg.window {
                window_sum -= recent.pop_front().unwrap_or(0.0);
            }
            recent.push_back(obj);
            window_sum += obj;
        }
        let smoothed = if recent.is_empty() { f64::NAN } else { window_sum / recent.len() as f64 };
        trace.push(TraceEntry { iteration: iterations, theta: x.clone(), objective: smoothed });
        if early_stop && t >= burnin && iterations % cfg.window == 0 && recent.len() == cfg.window {
            if last_obj.is_finite() && (last_obj - smoothed).abs() <= cfg.tol * smoothed.abs() {
                stopped_early = true;
                break;
            }
            last_obj = smoothed;
        }
    }
    let estimate = if n_avg > 0 { avg } else { x };
    Outcome { x: estimate, iterations, hit_maxit: !stopped_early, trace }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(x: &[f64]) -> (f64, Vec<f64>) {
        let f = 0.5 * (x[0] - 1.0).powi(2) + 2.0 * (x[1] + 3.0).powi(2) + 1.0;
        (f, vec![x[0] - 1.0, 4.0 * (x[1] + 3.0)])
    }

    #[test]
    fn gd_converges_on_a_quadratic() {
        let cfg = OptimizerConfig { tol: 1e-14, ..OptimizerConfig::default() };
        let out = gradient_descent(vec![5.0, 5.0], &cfg, None, quadratic);
        assert!((out.x[0] - 1.0).abs() < 1e-6 && (out.x[1] + 3.0).abs() < 1e-6, "{:?}", out.x);
        assert!(!out.hit_maxit);
        for w in out.trace.windows(2) {
            assert!(w[1].objective < w[0].objective);
        }
    }

    #[test]
    fn gd_reports_the_iteration_cap() {
        let cfg = OptimizerConfig { maxit: 3, ..OptimizerConfig::default() };
        let out = gradient_descent(vec![50.0, 50.0], &cfg, None, quadratic);
        assert!(out.hit_maxit);
        assert_eq!(out.iterations, 3);
        assert_eq!(out.trace.len(), 4);
    }

    #[test]
    fn adagrad_averages_noisy_gradients() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let cfg = OptimizerConfig { maxit: 20_000, step0: 0.5, ..OptimizerConfig::default() };
        let out = adagrad(vec![4.0], &cfg, false, |x, _| {
            let noise: f64 = rng.random::<f64>() - 0.5;
            (vec![x[0] - 2.0 + noise], 0.5 * (x[0] - 2.0).powi(2))
        });
        assert!((out.x[0] - 2.0).abs() < 0.02, "{:?}", out.x);
        assert!(out.hit_maxit);
    }

    #[test]
    fn methods_parse() {
        assert_eq!("SGD".parse::<Method>().unwrap(), Method::SGD);
        assert!("sgd".parse::<Method>().is_err());
    }
}

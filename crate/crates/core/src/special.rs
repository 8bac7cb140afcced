//! Scalar special functions used by the closed-form kernel expectations.

use statrs::function::erf::erfc;

pub(crate) const SQRT_PI: f64 = 1.772_453_850_905_516;
pub(crate) const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

/// Scaled complementary error function `exp(x^2) * erfc(x)`.
pub fn erfcx(x: f64) -> f64 {
    if x < 0.0 {
        // only reached for moderate negative arguments by the callers
        return 2.0 * (x * x).exp() - erfcx(-x);
    }
    if x < 25.0 {
        return (x * x).exp() * erfc(x);
    }
    // asymptotic expansion; the truncation error at x = 25 is below 1e-17 relative
    let inv = 1.0 / (2.0 * x * x);
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..8 {
        term *= -((2 * k - 1) as f64) * inv;
        sum += term;
    }
    sum / (x * SQRT_PI)
}

/// Standard normal CDF.
pub fn norm_cdf(t: f64) -> f64 {
    0.5 * erfc(-t / std::f64::consts::SQRT_2)
}

/// `exp(t^2 / 2) * Phi(t)`, finite for every `t <= 0` and for moderate positive `t`.
pub(crate) fn scaled_norm_cdf(t: f64) -> f64 {
    0.5 * erfcx(-t / std::f64::consts::SQRT_2)
}

pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub(crate) fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    median_in_place(&mut v)
}

pub(crate) fn median_in_place(v: &mut [f64]) -> f64 {
    assert!(!v.is_empty(), "median of an empty slice");
    let n = v.len();
    let mid = n / 2;
    let (_, upper, _) = v.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Median absolute deviation scaled by 1.4826 for consistency at the Gaussian.
pub(crate) fn mad(values: &[f64]) -> f64 {
    let m = median(values);
    let mut dev: Vec<f64> = values.iter().map(|v| (v - m).abs()).collect();
    1.4826 * median_in_place(&mut dev)
}

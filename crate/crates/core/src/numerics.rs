//! Scalar numerics: standard-normal functions, the scaled complementary
//! error function, and the inverse Mills ratio used by the conditional-mean
//! update of the quantized-measurement EM loop.

use std::f64::consts::{FRAC_2_PI, PI};

pub const SQRT_2: f64 = std::f64::consts::SQRT_2;
/// sqrt(2/pi)
pub const SQRT_2_OVER_PI: f64 = 0.7978845608028653558798921198687637;

/// Standard normal density.
#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal CDF, evaluated through the complementary error function.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Scaled complementary error function, `exp(x^2) * erfc(x)`.
///
/// Stable over the whole real line: for large positive arguments the
/// asymptotic continued series is used instead of the (underflowing)
/// product, and for very negative arguments the reflection formula
/// saturates to `+inf`, which downstream consumers treat as a zero
/// Mills ratio.
pub fn erfcx(x: f64) -> f64 {
    if x >= 26.0 {
        // erfcx(x) ~ 1/(x sqrt(pi)) * sum_k (-1)^k (2k-1)!!/(2x^2)^k
        let inv2x2 = 1.0 / (2.0 * x * x);
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..=8u32 {
            term *= -((2 * k - 1) as f64) * inv2x2;
            sum += term;
        }
        sum / (x * PI.sqrt())
    } else if x >= 0.0 {
        (x * x).exp() * libm::erfc(x)
    } else {
        // Reflection: erfc(x) = 2 - erfc(-x). The exp overflows to +inf for
        // x <~ -26.6, which is the correct saturating behaviour here.
        2.0 * (x * x).exp() - erfcx(-x)
    }
}

/// Inverse Mills ratio `phi(t) / Phi(t)` of the standard normal.
///
/// Uses the identity `phi(t)/Phi(t) = sqrt(2/pi) / erfcx(-t/sqrt(2))`, which
/// avoids the 0/0 of the naive quotient for very negative `t` and the
/// underflow for large positive `t`.
#[inline]
pub fn inverse_mills_ratio(t: f64) -> f64 {
    SQRT_2_OVER_PI / erfcx(-t / SQRT_2)
}

/// log(sum(exp(x))) with max-subtraction.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Entrywise arcsine clamped to the principal domain.
///
/// Normalized correlations can exceed 1 by a few ulps after floating-point
/// normalization; clamping keeps `asin` defined.
#[inline]
pub fn asin_clamped(x: f64) -> f64 {
    x.clamp(-1.0, 1.0).asin()
}

/// The arcsine-law scalar map `rho -> 2/pi * asin(rho)`.
#[inline]
pub fn arcsine_map(rho: f64) -> f64 {
    FRAC_2_PI * asin_clamped(rho)
}

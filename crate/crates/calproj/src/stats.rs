//! Thin wrappers around the standard normal distribution.

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf;

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// Standard normal CDF.
pub fn phi(x: f64) -> f64 {
    std_normal().cdf(x)
}

/// Standard normal density.
pub fn dphi(x: f64) -> f64 {
    (-(0.5) * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal quantile; one Newton step on top of the library
/// approximation tightens it to near machine precision.
pub fn phi_inv(p: f64) -> f64 {
    let z = std_normal().inverse_cdf(p);
    let d = dphi(z);
    if d > 1e-280 {
        z - (phi(z) - p) / d
    } else {
        z
    }
}

/// Upper tail `P(Z > x)` computed through `erfc` so that it stays accurate
/// far into the tail (needed by [`crate::critical::rho_from_eta`], where
/// tail masses below 1e-16 matter).
pub fn phi_tail(x: f64) -> f64 {
    0.5 * erf::erfc(x / std::f64::consts::SQRT_2)
}

/// Empirical `p`-quantile using the ceiling order-statistic convention:
/// the smallest value `v` with `#(x <= v) >= ceil(p * B)`.
pub fn empirical_quantile(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-NaN values"));
    let k = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[k - 1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn quantile_and_cdf_roundtrip() {
        for p in [0.05, 0.5, 0.95, 0.999] {
            assert_abs_diff_eq!(phi(phi_inv(p)), p, epsilon = 1e-12);
        }
    }

    #[test]
    fn tail_accuracy_deep() {
        // phi_tail(8.4) must stay accurate to a few ulp relative error; the
        // reference value is erfc(8.4/sqrt(2))/2 computed with mpmath.
        let t = phi_tail(8.4);
        assert!((t / 2.2324e-17 - 1.0).abs() < 1e-3, "tail {t:e}");
        // and agree with the plain cdf where both are accurate
        assert_abs_diff_eq!(phi_tail(2.0), 1.0 - phi(2.0), epsilon = 1e-15);
    }

    #[test]
    fn quantile_convention() {
        let xs: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_eq!(empirical_quantile(&xs, 0.95), 95.0);
        assert_eq!(empirical_quantile(&xs, 0.951), 96.0);
        assert_eq!(empirical_quantile(&xs, 1.0), 100.0);
    }
}

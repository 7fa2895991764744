//! Generalized moment selection: slackness measures and thresholding maps.
//!
//! Sufficiently slack sample inequalities are treated as non-binding in the
//! bootstrap by mapping their slackness measure to `-inf` (or a negative
//! shift), which drops or relaxes the constraint row.

use serde::{Deserialize, Serialize};

/// The four selection functions; the covariance-dependent fifth one is out of
/// scope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GmsKind {
    /// 0 for `x >= -1`, `-inf` below (hard thresholding).
    Phi1Hard,
    /// 0 for `x >= -1`, `(x+1)/(x+2)` on `(-2,-1)`, `-inf` at or below -2
    /// (continuous descent to `-inf`).
    Phi2,
    /// `x` for `x < -1`, 0 otherwise.
    Phi3,
    /// `min(x, 0)`.
    Phi4,
}

impl GmsKind {
    pub fn apply_scalar(self, x: f64) -> f64 {
        match self {
            GmsKind::Phi1Hard => {
                if x >= -1.0 {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            GmsKind::Phi2 => {
                if x >= -1.0 {
                    0.0
                } else if x > -2.0 {
                    (x + 1.0) / (x + 2.0)
                } else {
                    f64::NEG_INFINITY
                }
            }
            GmsKind::Phi3 => {
                if x < -1.0 {
                    x
                } else {
                    0.0
                }
            }
            GmsKind::Phi4 => x.min(0.0),
        }
    }

    /// Hard thresholding triggers the pick-one-treat-as-equality replacement
    /// for paired inequalities; the other kinds use the weighted-merge rows.
    pub fn is_hard(self) -> bool {
        matches!(self, GmsKind::Phi1Hard)
    }
}

/// Selection function plus its thresholding sequence `kappa_n`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GmsConfig {
    pub kind: GmsKind,
    pub kappa: f64,
}

impl GmsConfig {
    pub fn new(kind: GmsKind, kappa: f64) -> Self {
        assert!(kappa > 0.0, "kappa must be positive");
        GmsConfig { kind, kappa }
    }

    /// Default rule `kappa_n = sqrt(ln n)` with hard thresholding.
    pub fn default_for(n: usize) -> Self {
        GmsConfig::new(GmsKind::Phi1Hard, ((n as f64).ln()).sqrt())
    }

    /// Slackness measures: `xi_j = kappa^-1 * sqrt(n) mbar_j / sigma_j` for
    /// inequality rows, 0 for (both halves of) equality rows.
    pub fn xi_hat(&self, studentized: &[f64], j1: usize) -> Vec<f64> {
        studentized
            .iter()
            .enumerate()
            .map(|(j, s)| if j < j1 { s / self.kappa } else { 0.0 })
            .collect()
    }

    /// Componentwise selection values over the extended reals.
    pub fn apply(&self, xi: &[f64], j1: usize) -> Vec<f64> {
        xi.iter()
            .enumerate()
            .map(|(j, &x)| if j < j1 { self.kind.apply_scalar(x) } else { 0.0 })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn hard_threshold_values() {
        assert_eq!(GmsKind::Phi1Hard.apply_scalar(-0.5), 0.0);
        assert_eq!(GmsKind::Phi1Hard.apply_scalar(-1.5), f64::NEG_INFINITY);
        assert_eq!(GmsKind::Phi1Hard.apply_scalar(-1.0), 0.0);
    }

    #[test]
    fn all_kinds_zero_at_zero() {
        for kind in [GmsKind::Phi1Hard, GmsKind::Phi2, GmsKind::Phi3, GmsKind::Phi4] {
            assert_eq!(kind.apply_scalar(0.0), 0.0);
        }
    }

    #[test]
    fn xi_scaling_and_equality_rows() {
        let g = GmsConfig::new(GmsKind::Phi1Hard, 2.0);
        let xi = g.xi_hat(&[-2.0, 4.0, -4.0], 1);
        assert_eq!(xi, vec![-1.0, 0.0, 0.0]);

        // kappa = sqrt(ln 4000), studentized -5.758 -> xi = -2.0
        let g = GmsConfig::default_for(4000);
        let xi = g.xi_hat(&[-5.758_293_219_125_149], 1);
        assert_abs_diff_eq!(xi[0], -2.0, epsilon = 1e-3);
    }

    #[test]
    fn equality_rows_map_to_zero() {
        let g = GmsConfig::new(GmsKind::Phi1Hard, 1.0);
        let phi = g.apply(&[-3.0, -3.0], 1);
        assert_eq!(phi[0], f64::NEG_INFINITY);
        assert_eq!(phi[1], 0.0);
    }

    #[test]
    fn phi2_descends_continuously() {
        assert_eq!(GmsKind::Phi2.apply_scalar(-0.3), 0.0);
        let v = GmsKind::Phi2.apply_scalar(-1.5);
        assert_abs_diff_eq!(v, -1.0, epsilon = 1e-12);
        assert_eq!(GmsKind::Phi2.apply_scalar(-2.0), f64::NEG_INFINITY);
        assert_eq!(GmsKind::Phi2.apply_scalar(-5.0), f64::NEG_INFINITY);
    }

    proptest! {
        // Monotone nondecreasing in xi, all kinds.
        #[test]
        fn prop_monotone(a in -5.0f64..5.0, b in -5.0f64..5.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            for kind in [GmsKind::Phi1Hard, GmsKind::Phi2, GmsKind::Phi3, GmsKind::Phi4] {
                prop_assert!(kind.apply_scalar(lo) <= kind.apply_scalar(hi));
            }
        }

        // Doubling kappa halves each inequality component exactly.
        #[test]
        fn prop_xi_kappa_scaling(s in proptest::collection::vec(-10.0f64..10.0, 1..6)) {
            let j1 = s.len();
            let g1 = GmsConfig::new(GmsKind::Phi1Hard, 1.5);
            let g2 = GmsConfig::new(GmsKind::Phi1Hard, 3.0);
            let x1 = g1.xi_hat(&s, j1);
            let x2 = g2.xi_hat(&s, j1);
            for j in 0..j1 {
                prop_assert_eq!(x2[j], x1[j] / 2.0);
            }
        }
    }
}

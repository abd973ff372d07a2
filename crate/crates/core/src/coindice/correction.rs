//! Finite-sample widening of the asymptotic interval.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// κ_n = 11Mξ/(6n) + (2 C_ℓ M / n)(1 + 2 sqrt(ξ / (9n))).
///
/// `xi = 0` is accepted and gives `2 C_ℓ M / n`.
pub fn finite_sample_correction(xi: f64, n: usize, m_bound: f64, c_ell: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("n", "must be positive"));
    }
    for (field, v) in [("xi", xi), ("m_bound", m_bound), ("c_ell", c_ell)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::invalid(field, format!("{v} must be finite and nonnegative")));
        }
    }
    let n = n as f64;
    Ok(11.0 * m_bound * xi / (6.0 * n) + 2.0 * c_ell * m_bound / n * (1.0 + 2.0 * (xi / (9.0 * n)).sqrt()))
}

/// User-supplied regularity constants of the function classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularityConstants {
    /// Bound on ‖τ‖∞.
    pub c_tau: f64,
    /// Bound on ‖β‖₂.
    pub c_beta: f64,
    /// Bound on ‖φ‖₂.
    pub c_phi: f64,
    pub r_max: f64,
    /// Norm-equivalence constant between ‖·‖∞ and the τ-class norm.
    #[serde(default = "one")]
    pub k: f64,
}

fn one() -> f64 {
    1.0
}

impl RegularityConstants {
    /// M = (C_τ + 1)(1 - γ) C_β C_φ + C_τ R_max, the sup-norm bound on ℓ.
    pub fn m_bound(&self, gamma: f64) -> f64 {
        (self.c_tau + 1.0) * (1.0 - gamma) * self.c_beta * self.c_phi + self.c_tau * self.r_max
    }

    /// Lipschitz constant of ℓ in (τ, β):
    /// max{(1 - γ)((2 + γ) C_φ + C_τ), (R_max + (1 + γ) C_φ C_β) K}.
    pub fn c_ell(&self, gamma: f64) -> f64 {
        let beta_part = (1.0 - gamma) * ((2.0 + gamma) * self.c_phi + self.c_tau);
        let tau_part = (self.r_max + (1.0 + gamma) * self.c_phi * self.c_beta) * self.k;
        beta_part.max(tau_part)
    }

    pub fn kappa(&self, xi: f64, n: usize, gamma: f64) -> Result<f64> {
        finite_sample_correction(xi, n, self.m_bound(gamma), self.c_ell(gamma))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_xi_leaves_lipschitz_term() {
        let k = finite_sample_correction(0.0, 50, 2.0, 3.0).unwrap();
        assert!((k - 2.0 * 3.0 * 2.0 / 50.0).abs() < 1e-15);
    }

    #[test]
    fn constants() {
        let c = RegularityConstants {
            c_tau: 2.0,
            c_beta: 3.0,
            c_phi: 1.0,
            r_max: 1.0,
            k: 1.0,
        };
        // (3)(0.1)(3) + 2 = 2.9
        assert!((c.m_bound(0.9) - 2.9).abs() < 1e-12);
        // max{0.1 * (2.9 + 2), (1 + 1.9 * 3)} = 6.7
        assert!((c.c_ell(0.9) - 6.7).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(finite_sample_correction(-1.0, 10, 1.0, 1.0).is_err());
        assert!(finite_sample_correction(1.0, 0, 1.0, 1.0).is_err());
    }
}

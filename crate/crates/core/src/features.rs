//! Feature maps φ(s, a) and the estimating-equation residual.
//!
//! Every map is stored as a dense `n_cells x p` matrix whose row for cell
//! `s * n_actions + a` is φ(s, a). Tabular problems at this scale make the
//! dense form cheap and let the solver treat all kinds uniformly.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::envs::Transition;
use crate::{Error, Result};

const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Indicator,
    FullRankMatrix,
    CustomLinear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    kind: FeatureKind,
    n_states: usize,
    n_actions: usize,
    dim: usize,
    rows: Vec<f64>,
    warnings: Vec<String>,
}

impl FeatureMap {
    /// One-hot features, p = |S||A|.
    pub fn indicator(n_states: usize, n_actions: usize) -> Self {
        let n = n_states * n_actions;
        let mut rows = vec![0.0; n * n];
        for i in 0..n {
            rows[i * n + i] = 1.0;
        }
        Self {
            kind: FeatureKind::Indicator,
            n_states,
            n_actions,
            dim: n,
            rows,
            warnings: Vec::new(),
        }
    }

    /// Square nonsingular feature matrix, row-major with one row per cell.
    pub fn full_rank(n_states: usize, n_actions: usize, matrix: Vec<f64>) -> Result<Self> {
        let n = n_states * n_actions;
        if n == 0 || matrix.len() != n * n {
            return Err(Error::invalid("matrix", format!("expected {n}x{n} entries, got {}", matrix.len())));
        }
        let cond = condition_number(&DMatrix::from_row_slice(n, n, &matrix));
        if !(cond < MAX_CONDITION) {
            return Err(Error::invalid("matrix", format!("condition number {cond:e} exceeds {MAX_CONDITION:e}")));
        }
        Ok(Self {
            kind: FeatureKind::FullRankMatrix,
            n_states,
            n_actions,
            dim: n,
            rows: matrix,
            warnings: Vec::new(),
        })
    }

    /// Seeded Gaussian full-rank matrix (resampled until well conditioned).
    pub fn random_full_rank(n_states: usize, n_actions: usize, seed: u64) -> Result<Self> {
        let n = n_states * n_actions;
        let mut rng = crate::rng::seeded(seed);
        loop {
            let matrix: Vec<f64> = (0..n * n).map(|_| crate::rng::standard_normal(&mut rng)).collect();
            if condition_number(&DMatrix::from_row_slice(n, n, &matrix)) < 1e6 {
                return Self::full_rank(n_states, n_actions, matrix);
            }
        }
    }

    /// Arbitrary `n_cells x dim` features. Warns (without failing) when the
    /// constant function is not in their span.
    pub fn custom_linear(n_states: usize, n_actions: usize, dim: usize, matrix: Vec<f64>) -> Result<Self> {
        let n = n_states * n_actions;
        if n == 0 || dim == 0 || matrix.len() != n * dim {
            return Err(Error::invalid("matrix", format!("expected {n}x{dim} entries, got {}", matrix.len())));
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("matrix", "entries must be finite"));
        }
        let phi = DMatrix::from_row_slice(n, dim, &matrix);
        let ones = DMatrix::from_element(n, 1, 1.0);
        let svd = phi.clone().svd(true, true);
        let fit = svd.solve(&ones, 1e-12).map_err(|e| Error::Singular(e.to_string()))?;
        let residual = (&phi * fit - ones).amax();
        let mut warnings = Vec::new();
        if residual > 1e-6 {
            let msg = format!("constant function is not in the feature span (residual {residual:e})");
            log::warn!("{msg}");
            warnings.push(msg);
        }
        Ok(Self {
            kind: FeatureKind::CustomLinear,
            n_states,
            n_actions,
            dim,
            rows: matrix,
            warnings,
        })
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn cell(&self, s: usize, a: usize) -> usize {
        s * self.n_actions + a
    }

    /// φ(s, a).
    pub fn phi(&self, s: usize, a: usize) -> Result<&[f64]> {
        if s >= self.n_states || a >= self.n_actions {
            return Err(Error::invalid("(s, a)", format!("({s}, {a}) outside {}x{}", self.n_states, self.n_actions)));
        }
        Ok(self.row(self.cell(s, a)))
    }

    pub(crate) fn row(&self, cell: usize) -> &[f64] {
        &self.rows[cell * self.dim..(cell + 1) * self.dim]
    }

    /// Δ(x; τ, φ) = (1-γ)φ(s0,a0) + τ(γφ(s',a') - φ(s,a)).
    pub fn delta(&self, x: &Transition, tau_value: f64, gamma: f64) -> Result<Vec<f64>> {
        if !(tau_value >= 0.0) {
            return Err(Error::invalid("tau_value", format!("{tau_value} is negative")));
        }
        let f0 = self.phi(x.s0, x.a0)?;
        let f = self.phi(x.s, x.a)?;
        let fp = self.phi(x.sp, x.ap)?;
        Ok((0..self.dim)
            .map(|k| (1.0 - gamma) * f0[k] + tau_value * (gamma * fp[k] - f[k]))
            .collect())
    }
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// Tabular stationary-distribution corrector τ(s, a).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauTable {
    pub n_states: usize,
    pub n_actions: usize,
    pub values: Vec<f64>,
}

impl TauTable {
    pub fn new(n_states: usize, n_actions: usize, values: Vec<f64>, cap: f64) -> Result<Self> {
        if values.len() != n_states * n_actions {
            return Err(Error::invalid("values", "length must be n_states * n_actions"));
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(**v >= 0.0 && **v <= cap)) {
            return Err(Error::invalid(format!("values[{i}]"), format!("{v} outside [0, {cap}]")));
        }
        Ok(Self {
            n_states,
            n_actions,
            values,
        })
    }

    pub fn constant(n_states: usize, n_actions: usize, value: f64) -> Self {
        Self {
            n_states,
            n_actions,
            values: vec![value; n_states * n_actions],
        }
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tuple(s0: usize, s: usize, sp: usize) -> Transition {
        Transition {
            s0,
            a0: 0,
            s,
            a: 0,
            r: 0.0,
            sp,
            ap: 0,
            traj_id: 0,
        }
    }

    #[test]
    fn indicator_is_one_hot() {
        let map = FeatureMap::indicator(3, 2);
        let v = map.phi(1, 0).unwrap();
        assert_eq!(v, &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        assert!(map.phi(3, 0).is_err());
    }

    #[test]
    fn identity_full_rank_equals_indicator() {
        let ind = FeatureMap::indicator(2, 3);
        let full = FeatureMap::full_rank(2, 3, ind.rows.clone()).unwrap();
        for s in 0..2 {
            for a in 0..3 {
                assert_eq!(ind.phi(s, a).unwrap(), full.phi(s, a).unwrap());
            }
        }
    }

    #[test]
    fn full_rank_returns_matrix_rows() {
        let map = FeatureMap::random_full_rank(3, 2, 4).unwrap();
        let n = 6;
        for cell in 0..n {
            assert_eq!(map.phi(cell / 2, cell % 2).unwrap(), &map.rows[cell * n..(cell + 1) * n]);
        }
    }

    #[test]
    fn singular_matrix_is_rejected() {
        assert!(FeatureMap::full_rank(1, 2, vec![1.0, 2.0, 2.0, 4.0]).is_err());
    }

    #[test]
    fn delta_arithmetic() {
        // Cells 0 (s0), 1 (s), 2 (s'); γ = 0.9; τ = 2.
        let map = FeatureMap::indicator(4, 1);
        let d = map.delta(&tuple(0, 1, 2), 2.0, 0.9).unwrap();
        let expected = [0.1, -2.0, 1.8, 0.0];
        for (x, e) in d.iter().zip(expected) {
            assert!((x - e).abs() < 1e-15);
        }
        let d0 = map.delta(&tuple(0, 1, 2), 0.0, 0.9).unwrap();
        assert!((d0[0] - 0.1).abs() < 1e-15);
        assert!(d0[1..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn custom_map_without_constant_warns() {
        let no_const = FeatureMap::custom_linear(2, 1, 1, vec![1.0, -1.0]).unwrap();
        assert_eq!(no_const.warnings().len(), 1);
        let with_const = FeatureMap::custom_linear(2, 1, 2, vec![1.0, 0.0, 1.0, 1.0]).unwrap();
        assert!(with_const.warnings().is_empty());
    }

    #[test]
    fn tau_table_bounds() {
        assert!(TauTable::new(1, 2, vec![0.0, 100.0], 100.0).is_ok());
        assert!(TauTable::new(1, 2, vec![-1e-9, 1.0], 100.0).is_err());
        assert!(TauTable::new(1, 2, vec![1.0, 101.0], 100.0).is_err());
    }
}

//! The inner saddle problem at fixed sample weights.
//!
//! Every residual used here is affine in the corrector at the logged cell:
//! `Δ_i(τ) = b_i + τ(s_i, a_i) u_i`. At weights `w` the weighted Lagrangian
//! is therefore `R·τ + β·(B + Aτ)` with
//!
//! ```text
//! A[:, j] = Σ_{i in cell j} w_i u_i,   B = Σ_i w_i b_i,   R_j = Σ_{i in cell j} w_i r_i.
//! ```
//!
//! The exact solver takes τ as the box-constrained least-squares solution of
//! `Aτ = -B` (the unique feasible point whenever the equations are consistent
//! and A has full column rank) and β as the minimum-norm solution of
//! `A_Fᵀβ = -R_F` over the unclamped cells F. The gradient solver runs
//! descent-ascent on (β, log τ) instead.

use nalgebra::{DMatrix, DVector};

use crate::envs::{Dataset, Transition};
use crate::features::FeatureMap;
use crate::mdp::TabularPolicy;
use crate::rng::sample_categorical;
use crate::rng::ChaCha20Rng;
use crate::{Error, Result};

/// Per-sample affine residual model over the visited cells.
#[derive(Debug, Clone)]
pub(crate) struct ResidualModel {
    pub n: usize,
    pub q: usize,
    pub n_states: usize,
    pub n_actions: usize,
    /// Cell id of each visited column.
    pub visited: Vec<usize>,
    /// Column of each sample.
    pub col: Vec<usize>,
    pub r: Vec<f64>,
    b: Vec<f64>,
    u: Vec<f64>,
    /// Rescale τ so that `Σ_j τ_j W_j = 1` after each exact solve.
    pub exact_normalization: bool,
}

/// Which estimating equations to build.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Residual<'a> {
    /// `(1-γ)φ(s0,a0) + τ(γφ(s',a') - φ(s,a))` plus an optional
    /// normalization row `sqrt(ν)(τ - 1)`.
    Discounted {
        gamma: f64,
        penalty: f64,
        expected_under: Option<&'a TabularPolicy>,
    },
    /// `τ(φ(s',a') - φ(s,a))` plus the exact row `τ - 1`.
    Undiscounted { expected_under: Option<&'a TabularPolicy> },
    /// `φ(s0,a0) - τ φ(s,a)` plus an optional `sqrt(ν)(τ - 1)` row.
    Bandit { penalty: f64 },
}

fn mean_features(map: &FeatureMap, policy: Option<&TabularPolicy>, s: usize, a: usize, out: &mut [f64]) {
    match policy {
        None => out.copy_from_slice(map.row(map.cell(s, a))),
        Some(pi) => {
            out.fill(0.0);
            for (b, &p) in pi.row(s).iter().enumerate() {
                if p > 0.0 {
                    for (o, f) in out.iter_mut().zip(map.row(map.cell(s, b))) {
                        *o += p * f;
                    }
                }
            }
        }
    }
}

impl ResidualModel {
    pub fn build(dataset: &Dataset, map: &FeatureMap, residual: Residual<'_>) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::TooFewSamples { need: 1, got: 0 });
        }
        if map.n_states() != dataset.n_states() || map.n_actions() != dataset.n_actions() {
            return Err(Error::invalid("feature map", "shape does not match the dataset"));
        }
        let expected_under = match residual {
            Residual::Discounted { expected_under, .. } | Residual::Undiscounted { expected_under } => expected_under,
            Residual::Bandit { .. } => None,
        };
        if let Some(pi) = expected_under {
            if pi.n_states() != dataset.n_states() || pi.n_actions() != dataset.n_actions() {
                return Err(Error::invalid("target policy", "shape does not match the dataset"));
            }
        }
        let p = map.dim();
        let (norm_scale, exact_normalization) = match residual {
            Residual::Discounted { penalty, .. } | Residual::Bandit { penalty } => {
                if !(penalty >= 0.0 && penalty.is_finite()) {
                    return Err(Error::invalid("normalization_penalty", "must be finite and nonnegative"));
                }
                (penalty.sqrt(), false)
            }
            Residual::Undiscounted { .. } => (1.0, true),
        };
        let q = if norm_scale > 0.0 { p + 1 } else { p };

        let (n_states, n_actions) = (dataset.n_states(), dataset.n_actions());
        let mut column_of_cell = vec![usize::MAX; n_states * n_actions];
        let mut visited = Vec::new();
        let n = dataset.len();
        let mut col = Vec::with_capacity(n);
        let mut b = vec![0.0; n * q];
        let mut u = vec![0.0; n * q];
        let mut f0 = vec![0.0; p];
        let mut fp = vec![0.0; p];
        for (i, t) in dataset.tuples.iter().enumerate() {
            let Transition { s0, a0, s, a, sp, ap, .. } = *t;
            let cell = map.cell(s, a);
            if column_of_cell[cell] == usize::MAX {
                column_of_cell[cell] = visited.len();
                visited.push(cell);
            }
            col.push(column_of_cell[cell]);
            mean_features(map, expected_under, s0, a0, &mut f0);
            mean_features(map, expected_under, sp, ap, &mut fp);
            let f = map.row(cell);
            let (bi, ui) = (&mut b[i * q..(i + 1) * q], &mut u[i * q..(i + 1) * q]);
            for k in 0..p {
                match residual {
                    Residual::Discounted { gamma, .. } => {
                        bi[k] = (1.0 - gamma) * f0[k];
                        ui[k] = gamma * fp[k] - f[k];
                    }
                    Residual::Undiscounted { .. } => {
                        ui[k] = fp[k] - f[k];
                    }
                    Residual::Bandit { .. } => {
                        bi[k] = f0[k];
                        ui[k] = -f[k];
                    }
                }
            }
            if q > p {
                bi[p] = -norm_scale;
                ui[p] = norm_scale;
            }
        }
        Ok(Self {
            n,
            q,
            n_states,
            n_actions,
            visited,
            col,
            r: dataset.tuples.iter().map(|t| t.r).collect(),
            b,
            u,
            exact_normalization,
        })
    }

    pub fn m(&self) -> usize {
        self.visited.len()
    }

    /// (A, B, R, W) at weights `w`; W_j is the weight mass of column j.
    pub fn aggregate(&self, w: &[f64]) -> (DMatrix<f64>, DVector<f64>, DVector<f64>, Vec<f64>) {
        let (q, m) = (self.q, self.m());
        let mut a = DMatrix::zeros(q, m);
        let mut bsum = DVector::zeros(q);
        let mut rsum = DVector::zeros(m);
        let mut wsum = vec![0.0; m];
        for (i, &wi) in w.iter().enumerate().take(self.n) {
            if wi == 0.0 {
                continue;
            }
            let j = self.col[i];
            rsum[j] += wi * self.r[i];
            wsum[j] += wi;
            let (bi, ui) = (&self.b[i * q..(i + 1) * q], &self.u[i * q..(i + 1) * q]);
            let mut column = a.column_mut(j);
            for k in 0..q {
                column[k] += wi * ui[k];
                bsum[k] += wi * bi[k];
            }
        }
        (a, bsum, rsum, wsum)
    }

    /// ℓ_i = τ r_i + β·Δ_i(τ) for every sample.
    pub fn scores(&self, tau: &[f64], beta: &[f64]) -> Vec<f64> {
        let q = self.q;
        (0..self.n)
            .map(|i| {
                let t = tau[self.col[i]];
                let (bi, ui) = (&self.b[i * q..(i + 1) * q], &self.u[i * q..(i + 1) * q]);
                let mut l = t * self.r[i];
                for k in 0..q {
                    l += beta[k] * (bi[k] + t * ui[k]);
                }
                l
            })
            .collect()
    }

    /// τ over all cells, zero where unvisited.
    pub fn full_tau(&self, tau: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_states * self.n_actions];
        for (j, &cell) in self.visited.iter().enumerate() {
            out[cell] = tau[j];
        }
        out
    }
}

/// Solution of the inner problem at one weight vector.
#[derive(Debug, Clone)]
pub(crate) struct InnerSolution {
    pub tau: Vec<f64>,
    pub beta: Vec<f64>,
    pub value: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub exact: bool,
    pub rank_deficient: bool,
}

/// Minimum-norm least squares through the SVD; also returns the numerical rank.
fn lstsq(a: &DMatrix<f64>, rhs: &DVector<f64>) -> (DVector<f64>, usize) {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if !(smax > 0.0) {
        return (DVector::zeros(a.ncols()), 0);
    }
    let eps = smax * 1e-12 * a.nrows().max(a.ncols()) as f64;
    let rank = svd.singular_values.iter().filter(|&&s| s > eps).count();
    let x = svd.solve(rhs, eps).unwrap_or_else(|_| DVector::zeros(a.ncols()));
    (x, rank)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    r: &DVector<f64>,
    tau: Vec<f64>,
    beta: Vec<f64>,
    free: &[usize],
    exact: bool,
    rank_deficient: bool,
) -> InnerSolution {
    let tv = DVector::from_column_slice(&tau);
    let bv = DVector::from_column_slice(&beta);
    let primal = a * &tv + b;
    let dual = a.transpose() * &bv + r;
    let dual_residual = free.iter().map(|&j| dual[j] * dual[j]).sum::<f64>().sqrt();
    InnerSolution {
        value: r.dot(&tv),
        tau,
        beta,
        primal_residual: primal.norm(),
        dual_residual,
        exact,
        rank_deficient,
    }
}

/// Exact solve: box-constrained least squares for τ by an active-set
/// clamp, minimum-norm β on the free cells.
pub(crate) fn exact_solve(model: &ResidualModel, w: &[f64], c_tau: f64) -> InnerSolution {
    let (a, b, r, wcol) = model.aggregate(w);
    let m = model.m();
    let mut fixed: Vec<Option<f64>> = vec![None; m];
    let mut tau = vec![0.0; m];
    let mut free: Vec<usize> = (0..m).collect();
    let mut rank_deficient = false;
    for _ in 0..=m {
        free = (0..m).filter(|&j| fixed[j].is_none()).collect();
        let mut rhs = -b.clone();
        for (j, v) in fixed.iter().enumerate() {
            if let Some(v) = *v {
                tau[j] = v;
                rhs -= a.column(j) * v;
            }
        }
        if free.is_empty() {
            break;
        }
        let (x, rank) = lstsq(&a.select_columns(&free), &rhs);
        rank_deficient = rank < free.len();
        let mut clamped = false;
        for (k, &j) in free.iter().enumerate() {
            tau[j] = x[k];
            if x[k] < 0.0 {
                fixed[j] = Some(0.0);
                clamped = true;
            } else if x[k] > c_tau {
                fixed[j] = Some(c_tau);
                clamped = true;
            }
        }
        if !clamped {
            break;
        }
    }
    if model.exact_normalization {
        let mass: f64 = tau.iter().zip(&wcol).map(|(t, w)| t * w).sum();
        if mass > 0.0 {
            for t in &mut tau {
                *t = (*t / mass).min(c_tau);
            }
        }
    }
    let beta = if free.is_empty() {
        vec![0.0; model.q]
    } else {
        let af_t = a.select_columns(&free).transpose();
        let rf = DVector::from_iterator(free.len(), free.iter().map(|&j| -r[j]));
        lstsq(&af_t, &rf).0.as_slice().to_vec()
    };
    finish(&a, &b, &r, tau, beta, &free, true, rank_deficient)
}

/// Parameters of the descent-ascent inner solver.
#[derive(Debug, Clone, Copy)]
pub(crate) struct GradientParams {
    pub steps: usize,
    pub beta_step: f64,
    pub tau_step: f64,
    pub alm_penalty: f64,
    pub tau_regularizer: f64,
    pub c_tau: f64,
    pub minibatch: Option<usize>,
    /// Outer iteration k; both step sizes are scaled by 1/sqrt(k).
    pub outer_iteration: usize,
}

/// Descent-ascent on (β, θ = log τ) with an augmented-Lagrangian term
/// `-(c/2)‖Aτ + B‖²` on the τ player. Step sizes are constant within a
/// solve and decay as 1/sqrt(k) across outer iterations k.
pub(crate) fn gradient_solve(
    model: &ResidualModel,
    w: &[f64],
    params: &GradientParams,
    warm: Option<&InnerSolution>,
    rng: &mut ChaCha20Rng,
) -> InnerSolution {
    let (a_full, b_full, r_full, w_full) = model.aggregate(w);
    let m = model.m();
    let log_cap = params.c_tau.ln();
    let mut theta: Vec<f64> = match warm {
        Some(s) => s.tau.iter().map(|t| t.max(1e-12).ln().min(log_cap)).collect(),
        None => vec![0.0; m],
    };
    let mut beta = match warm {
        Some(s) if s.beta.len() == model.q => DVector::from_column_slice(&s.beta),
        _ => DVector::zeros(model.q),
    };
    let mut batch_w = vec![0.0; model.n];
    let decay = 1.0 / (params.outer_iteration.max(1) as f64).sqrt();
    for _ in 0..params.steps {
        let tau = DVector::from_iterator(m, theta.iter().map(|t| t.exp().min(params.c_tau)));
        let sampled;
        let (a, b, r, wcol) = match params.minibatch {
            Some(size) if size < model.n => {
                batch_w.fill(0.0);
                for _ in 0..size {
                    batch_w[sample_categorical(rng, w)] += 1.0 / size as f64;
                }
                sampled = model.aggregate(&batch_w);
                (&sampled.0, &sampled.1, &sampled.2, &sampled.3)
            }
            _ => (&a_full, &b_full, &r_full, &w_full),
        };
        let g = a * &tau + b;
        let grad_tau = r + a.transpose() * &beta - a.transpose() * &g * params.alm_penalty;
        beta -= &g * (params.beta_step * decay);
        for j in 0..m {
            let step = tau[j] * (grad_tau[j] - 2.0 * params.tau_regularizer * wcol[j] * tau[j]);
            theta[j] = (theta[j] + params.tau_step * decay * step).min(log_cap);
        }
        if !theta.iter().all(|t| t.is_finite()) {
            break;
        }
    }
    let tau: Vec<f64> = theta.iter().map(|t| t.exp().min(params.c_tau)).collect();
    let free: Vec<usize> = (0..m).filter(|&j| tau[j] < params.c_tau).collect();
    finish(&a_full, &b_full, &r_full, tau, beta.as_slice().to_vec(), &free, false, false)
}

//! Sparse nonnegative matrix factorization
//! `min_{W, H >= 0, |w_j| <= 1} 1/2 |V - WH|_F^2 + lambda * sum(H)`.
//!
//! Each iteration does one majorize-minimize multiplicative step on `H`
//! followed by one projected gradient step on `W` with step `1 / L`,
//! `L = lambda_max(H H^T)`. Both steps are descent steps, so the objective
//! sequence is non-increasing. The unit-ball constraint on the columns of `W`
//! removes the scale ambiguity the L1 term would otherwise exploit.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::nnls::Nnls2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SnmfConfig {
    pub sparsity_lambda: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for SnmfConfig {
    fn default() -> Self {
        Self { sparsity_lambda: 0.1, max_iters: 200, tol: 1e-6, seed: 42 }
    }
}

impl SnmfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sparsity_lambda >= 0.0) {
            return Err(Error::InvalidParameter("sparsity_lambda must be >= 0".into()));
        }
        if self.max_iters < 1 {
            return Err(Error::InvalidParameter("max_iters must be >= 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter("tol must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SnmfResult {
    pub w: DMatrix<f64>,
    pub h: DMatrix<f64>,
    /// Objective before the first iteration followed by one value per iteration.
    pub objective: Vec<f64>,
    pub iterations: usize,
    /// Whether the relative-change tolerance was met before `max_iters`.
    pub converged: bool,
}

impl SnmfResult {
    pub fn final_objective(&self) -> f64 {
        *self.objective.last().expect("objective history is never empty")
    }
}

const DENOM_EPS: f64 = 1e-12;
// Lifts exact zeros of the initial coefficients; multiplicative updates
// cannot move an entry away from zero.
const H_INIT_FLOOR: f64 = 1e-6;

pub fn objective(v: &DMatrix<f64>, w: &DMatrix<f64>, h: &DMatrix<f64>, lambda: f64) -> f64 {
    let r = v - w * h;
    0.5 * r.norm_squared() + lambda * h.sum()
}

/// Random nonnegative `rows x k` matrix with unit-norm columns.
pub fn random_init(rows: usize, k: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = DMatrix::from_fn(rows, k, |_, _| rng.random_range(0.05..1.0));
    project_columns(&mut w);
    w
}

/// Projection onto `{w >= 0, |w| <= 1}` column by column.
fn project_columns(w: &mut DMatrix<f64>) {
    w.apply(|x| *x = x.max(0.0));
    for mut col in w.column_iter_mut() {
        let n = col.norm();
        if n > 1.0 {
            col /= n;
        }
    }
}

/// Factorizes `v` (`rows x n`, nonnegative) into `k` components.
///
/// `init_w` seeds the dictionary; without it a random one is drawn from
/// `cfg.seed`. For the 3x2 stain case the coefficients start from an exact
/// NNLS fit, otherwise from uniform random values.
pub fn sparse_nmf(
    v: &DMatrix<f64>,
    k: usize,
    cfg: &SnmfConfig,
    init_w: Option<&DMatrix<f64>>,
) -> Result<SnmfResult> {
    cfg.validate()?;
    let (rows, n) = v.shape();
    if k == 0 || n < k {
        return Err(Error::InvalidParameter(format!("need at least k = {k} >= 1 columns, got {n}")));
    }
    if v.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidParameter("input matrix must be finite and nonnegative".into()));
    }
    let mut w = match init_w {
        Some(w0) => {
            if w0.shape() != (rows, k) {
                return Err(Error::ShapeMismatch {
                    expected: format!("{rows}x{k}"),
                    got: format!("{}x{}", w0.nrows(), w0.ncols()),
                });
            }
            let mut w = w0.clone();
            project_columns(&mut w);
            w
        }
        None => random_init(rows, k, cfg.seed),
    };
    let mut h = initial_coefficients(v, &w, cfg.seed);
    let lambda = cfg.sparsity_lambda;

    let mut history = vec![objective(v, &w, &h, lambda)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        iterations += 1;

        // H <- H * (W^T V) / (W^T W H + lambda)
        let wtv = w.transpose() * v;
        let wtwh = (w.transpose() * &w) * &h;
        h.zip_zip_apply(&wtv, &wtwh, |hij, num, den| {
            *hij *= num / (den + lambda + DENOM_EPS);
        });

        // W <- P(W - (W H H^T - V H^T) / L)
        let hht = &h * h.transpose();
        let lip = SymmetricEigen::new(hht.clone())
            .eigenvalues
            .iter()
            .fold(0.0f64, |m, &e| m.max(e));
        if lip > 0.0 {
            let grad = &w * &hht - v * h.transpose();
            w -= grad / lip;
            project_columns(&mut w);
        }

        let f = objective(v, &w, &h, lambda);
        let prev = *history.last().unwrap();
        history.push(f);
        if (prev - f).abs() <= cfg.tol * prev.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    Ok(SnmfResult { w, h, objective: history, iterations, converged })
}

fn initial_coefficients(v: &DMatrix<f64>, w: &DMatrix<f64>, seed: u64) -> DMatrix<f64> {
    let (rows, n) = v.shape();
    let k = w.ncols();
    if rows == 3 && k == 2 {
        let col = |j: usize| [w[(0, j)], w[(1, j)], w[(2, j)]];
        let solver = Nnls2::from_columns([col(0), col(1)]);
        let mut h = DMatrix::zeros(2, n);
        for (j, vj) in v.column_iter().enumerate() {
            let c = solver.solve(&[vj[0], vj[1], vj[2]]);
            h[(0, j)] = c[0].max(H_INIT_FLOOR);
            h[(1, j)] = c[1].max(H_INIT_FLOOR);
        }
        h
    } else {
        let scale = v.mean().max(H_INIT_FLOOR);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        DMatrix::from_fn(k, n, |_, _| scale * rng.random_range(0.1..1.0))
    }
}

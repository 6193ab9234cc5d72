//! Lanczos iteration with full reorthogonalisation for extremal eigenpairs of
//! real symmetric sparse operators.

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dense;
use crate::error::{Error, Result};
use crate::sparse::SparseOperator;

#[derive(Debug, Clone, Copy)]
pub struct LanczosConfig {
    /// Krylov dimension before a restart.
    pub max_krylov: usize,
    pub max_restarts: usize,
    /// Convergence threshold on the residual norm, absolute.
    pub tol: f64,
    /// Seed for the start vector.
    pub seed: u64,
}

impl Default for LanczosConfig {
    fn default() -> Self {
        Self { max_krylov: 250, max_restarts: 20, tol: 1e-10, seed: 0x5eed }
    }
}

#[derive(Debug, Clone)]
pub struct Eigenpair {
    pub value: f64,
    pub vector: Vec<f64>,
    /// `||H v - value v||` computed explicitly.
    pub residual: f64,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum End {
    Low,
    High,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    crate::vecops::real_dot(a, b)
}

fn random_start(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dim).map(|_| rng.random::<f64>() - 0.5).collect()
}

struct Krylov {
    ritz: Vec<f64>,
    coeffs: Mat<f64>,
    basis: Vec<Vec<f64>>,
    /// Residual estimate `|beta_k y_k|` for every Ritz pair.
    estimates: Vec<f64>,
}

fn build(op: &SparseOperator, start: &[f64], max_krylov: usize, tol: f64, ends: &[End]) -> Result<Krylov> {
    let n = op.dim();
    let m = max_krylov.min(n).max(1);
    let mut q = start.to_vec();
    let nrm = dot(&q, &q).sqrt();
    if !(nrm > 0.0) {
        return Err(Error::Numerical("Lanczos start vector is zero".into()));
    }
    q.iter_mut().for_each(|x| *x /= nrm);
    let mut basis = vec![q];
    let mut alpha = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut w = vec![0.0; n];
    loop {
        let k = basis.len() - 1;
        op.apply_into(&basis[k], &mut w);
        let a = dot(&basis[k], &w);
        alpha.push(a);
        // two passes of classical Gram-Schmidt against the whole basis
        for _ in 0..2 {
            for v in &basis {
                let c = dot(v, &w);
                w.iter_mut().zip(v).for_each(|(x, y)| *x -= c * y);
            }
        }
        let b = dot(&w, &w).sqrt();
        let done = basis.len() >= m || b < 1e-12 * (1.0 + a.abs());
        let check = done || basis.len() % 10 == 0;
        if check {
            let (ritz, coeffs) = tridiagonal_eigen(&alpha, &beta)?;
            let last = alpha.len() - 1;
            let estimates: Vec<f64> = (0..ritz.len()).map(|j| (b * coeffs[(last, j)]).abs()).collect();
            let converged = ends.iter().all(|e| {
                let j = if *e == End::Low { 0 } else { ritz.len() - 1 };
                estimates[j] < tol
            });
            if done || converged {
                return Ok(Krylov { ritz, coeffs, basis, estimates });
            }
        }
        beta.push(b);
        basis.push(w.iter().map(|x| x / b).collect());
    }
}

fn tridiagonal_eigen(alpha: &[f64], beta: &[f64]) -> Result<(Vec<f64>, Mat<f64>)> {
    let k = alpha.len();
    let t = Mat::from_fn(k, k, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j {
            beta[i]
        } else if j + 1 == i {
            beta[j]
        } else {
            0.0
        }
    });
    let e = dense::symmetric_eigen(&t)?;
    Ok((e.values, e.vectors))
}

fn ritz_vector(kr: &Krylov, j: usize) -> Vec<f64> {
    let n = kr.basis[0].len();
    let mut v = vec![0.0; n];
    for (i, b) in kr.basis.iter().enumerate() {
        let c = kr.coeffs[(i, j)];
        v.iter_mut().zip(b).for_each(|(x, y)| *x += c * y);
    }
    let nrm = dot(&v, &v).sqrt();
    v.iter_mut().for_each(|x| *x /= nrm);
    v
}

fn residual(op: &SparseOperator, value: f64, v: &[f64]) -> f64 {
    let hv = op.apply(v);
    hv.iter().zip(v).map(|(a, b)| (a - value * b).powi(2)).sum::<f64>().sqrt()
}

fn extremal(op: &SparseOperator, cfg: &LanczosConfig, end: End) -> Result<Eigenpair> {
    let mut start = random_start(op.dim(), cfg.seed);
    let mut last_res = f64::INFINITY;
    for _ in 0..=cfg.max_restarts {
        let kr = build(op, &start, cfg.max_krylov, cfg.tol, &[end])?;
        let j = if end == End::Low { 0 } else { kr.ritz.len() - 1 };
        let v = ritz_vector(&kr, j);
        let res = residual(op, kr.ritz[j], &v);
        if res <= cfg.tol || kr.basis.len() == op.dim() {
            return Ok(Eigenpair { value: kr.ritz[j], vector: v, residual: res });
        }
        last_res = res;
        start = v;
    }
    Err(Error::Numerical(format!(
        "Lanczos did not converge after {} restarts, residual {last_res:.3e}",
        cfg.max_restarts
    )))
}

/// Lowest eigenpair.
pub fn lowest(op: &SparseOperator, cfg: &LanczosConfig) -> Result<Eigenpair> {
    extremal(op, cfg, End::Low)
}

/// Highest eigenpair.
pub fn highest(op: &SparseOperator, cfg: &LanczosConfig) -> Result<Eigenpair> {
    extremal(op, cfg, End::High)
}

/// Guaranteed enclosure `[lo, hi]` of the spectrum: extremal Ritz values
/// widened by their residual estimates.
pub fn spectral_bounds(op: &SparseOperator, seed: u64) -> Result<(f64, f64)> {
    let tol = 1e-7 * (1.0 + op.max_abs());
    let kr = build(op, &random_start(op.dim(), seed), 300, tol, &[End::Low, End::High])?;
    let last = kr.ritz.len() - 1;
    let lo = kr.ritz[0] - kr.estimates[0];
    let hi = kr.ritz[last] + kr.estimates[last];
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::Numerical("spectral bound estimation produced non-finite values".into()));
    }
    Ok((lo, hi))
}

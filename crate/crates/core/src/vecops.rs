//! Dense vector kernels with thread-count independent reductions.

use num_complex::Complex64;

use crate::par::*;

/// `<a|b>` with `a` conjugated.
pub fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    debug_assert_eq!(a.len(), b.len());
    let partials: Vec<Complex64> = a
        .par_chunks(REDUCE_CHUNK)
        .zip(b.par_chunks(REDUCE_CHUNK))
        .map(|(ca, cb)| ca.iter().zip(cb).map(|(x, y)| x.conj() * y).sum())
        .collect();
    partials.into_iter().sum()
}

pub fn norm_sqr(a: &[Complex64]) -> f64 {
    let partials: Vec<f64> = a
        .par_chunks(REDUCE_CHUNK)
        .map(|c| c.iter().map(|x| x.norm_sqr()).sum())
        .collect();
    partials.into_iter().sum()
}

pub fn norm(a: &[Complex64]) -> f64 {
    norm_sqr(a).sqrt()
}

/// `<a| diag(w) |b>`.
pub fn weighted_dot(a: &[Complex64], w: &[f64], b: &[Complex64]) -> Complex64 {
    debug_assert_eq!(a.len(), w.len());
    let partials: Vec<Complex64> = a
        .par_chunks(REDUCE_CHUNK)
        .zip(w.par_chunks(REDUCE_CHUNK))
        .zip(b.par_chunks(REDUCE_CHUNK))
        .map(|((ca, cw), cb)| {
            ca.iter().zip(cw).zip(cb).map(|((x, &wi), y)| x.conj() * y * wi).sum()
        })
        .collect();
    partials.into_iter().sum()
}

pub fn real_dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let partials: Vec<f64> = a
        .par_chunks(REDUCE_CHUNK)
        .zip(b.par_chunks(REDUCE_CHUNK))
        .map(|(ca, cb)| ca.iter().zip(cb).map(|(x, y)| x * y).sum())
        .collect();
    partials.into_iter().sum()
}

pub fn scale(a: &mut [Complex64], s: f64) {
    a.par_iter_mut().for_each(|x| *x *= s);
}

/// Rescales to unit norm and returns the norm before rescaling.
pub fn normalize(a: &mut [Complex64]) -> f64 {
    let n = norm(a);
    if n > 0.0 {
        scale(a, 1.0 / n);
    }
    n
}

pub fn max_abs_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

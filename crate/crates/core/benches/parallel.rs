//! Serial against data-parallel kernels. The serial side runs the same code
//! inside a one-thread pool, which is what the sequential build executes.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use num_complex::Complex64;
use puretherm::eth::{exact_eigensystem, Symmetry};
use puretherm::kpm::{rescale_spectrum, stochastic_moments};
use puretherm::operators::{build_probe_observable, build_static_hamiltonian, probe_center};
use puretherm::{BasisSector, ChainParams, ProbeProfile, SparseOperator};

fn chain(l: usize) -> (BasisSector, SparseOperator, SparseOperator) {
    let s = BasisSector::half_filling(l).unwrap();
    let h = build_static_hamiltonian(&ChainParams::new(l), &s).unwrap();
    let a = build_probe_observable(&ProbeProfile::gaussian(l, probe_center(l)).unwrap(), &s).unwrap();
    (s, h, a)
}

#[cfg(feature = "parallel")]
fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let all = rayon::ThreadPoolBuilder::new().build().unwrap();
    vec![("serial", one), ("parallel", all)]
}

#[cfg(not(feature = "parallel"))]
fn pools() -> Vec<(&'static str, ())> {
    vec![("serial", ())]
}

#[cfg(feature = "parallel")]
fn install<R: Send>(pool: &rayon::ThreadPool, f: impl FnOnce() -> R + Send) -> R {
    pool.install(f)
}

#[cfg(not(feature = "parallel"))]
fn install<R>(_: &(), f: impl FnOnce() -> R) -> R {
    f()
}

fn matvec(c: &mut Criterion) {
    let mut g = c.benchmark_group("matvec");
    for l in [14, 16, 18] {
        let (_, h, _) = chain(l);
        let x: Vec<Complex64> = (0..h.dim()).map(|i| Complex64::new((i as f64).sin(), (i as f64).cos())).collect();
        let mut y = vec![Complex64::default(); h.dim()];
        g.bench_with_input(BenchmarkId::new("serial", l), &l, |b, _| b.iter(|| h.apply_into_serial(black_box(&x), &mut y)));
        for (name, pool) in pools().into_iter().skip(1) {
            g.bench_with_input(BenchmarkId::new(name, l), &l, |b, _| {
                install(&pool, || b.iter(|| h.apply_into(black_box(&x), &mut y)))
            });
        }
    }
    g.finish();
}

fn kpm_moments(c: &mut Criterion) {
    let mut g = c.benchmark_group("kpm_moments");
    g.sample_size(10);
    let (_, h, a) = chain(14);
    let rescale = rescale_spectrum(&h, 0.01).unwrap();
    for (name, pool) in pools() {
        g.bench_function(name, |b| {
            install(&pool, || b.iter(|| stochastic_moments(&h, &rescale, 100, 4, Some(1), Some(&a)).unwrap()))
        });
    }
    g.finish();
}

fn matrix_elements(c: &mut Criterion) {
    let mut g = c.benchmark_group("matrix_elements");
    g.sample_size(10);
    let (s, h, a) = chain(12);
    let eig = exact_eigensystem(&h, &s, Symmetry::Auto).unwrap();
    for (name, pool) in pools() {
        g.bench_function(name, |b| install(&pool, || b.iter(|| eig.project(black_box(&a)).unwrap())));
    }
    g.finish();
}

criterion_group!(benches, matvec, kpm_moments, matrix_elements);
criterion_main!(benches);

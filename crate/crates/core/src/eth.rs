//! Exact diagonalisation and eigenstate-thermalisation statistics: diagonal
//! matrix elements against energy, their variance scaling, and the
//! off-diagonal spectral function `|f(E, w)|^2`.
//!
//! The chain commutes with the reflection that fixes sites 1 and L/2 + 1, so
//! the sector is diagonalised in its even and odd blocks. Eigenvectors stay in
//! block coordinates; observables are projected onto block pairs.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::dense;
use crate::error::{Error, Result};
use crate::fit::{power_law_fit, LinearFit};
use crate::hilbert::{BasisSector, Reflection};
use crate::kpm::{self, KpmExpansion, Rescale};
use crate::par::*;
use crate::sparse::SparseOperator;

/// Largest sector dimension accepted for full diagonalisation.
pub const MAX_DIM: usize = 50_000;
pub const DIAGONAL_WINDOW: f64 = 0.02;
pub const CENTRAL_FRACTION: f64 = 0.1;
/// Frequency bins with fewer pairs are flagged as low statistics.
pub const LOW_COUNT: usize = 10;
pub const DEGENERATE_GAP: f64 = 1e-10;
/// Degeneracy flag threshold on the fraction of near-zero level gaps.
pub const DEGENERATE_FRACTION: f64 = 1e-3;

/// Relative size below which projected entries count as exact zeros.
const PROJECTION_ZERO: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Even,
    Odd,
    /// The unresolved sector.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Symmetry {
    /// Reflection blocks when the Hamiltonian commutes with the reflection.
    #[default]
    Auto,
    Reflection,
    None,
}

/// One block of the symmetry-adapted basis.
#[derive(Debug, Clone)]
struct BasisBlock {
    parity: Parity,
    /// Configuration indices and coefficients of each basis vector.
    members: Vec<Vec<(usize, f64)>>,
    /// For each configuration index, the basis vector containing it here.
    coord: Vec<Option<(usize, f64)>>,
}

impl BasisBlock {
    fn identity(dim: usize) -> Self {
        Self {
            parity: Parity::Full,
            members: (0..dim).map(|i| vec![(i, 1.0)]).collect(),
            coord: (0..dim).map(|i| Some((i, 1.0))).collect(),
        }
    }

    fn len(&self) -> usize {
        self.members.len()
    }
}

fn reflection_blocks(sector: &BasisSector) -> Result<Vec<BasisBlock>> {
    let dim = sector.dim();
    let refl = Reflection::new(sector.sites());
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut even = BasisBlock { parity: Parity::Even, members: Vec::new(), coord: vec![None; dim] };
    let mut odd = BasisBlock { parity: Parity::Odd, members: Vec::new(), coord: vec![None; dim] };
    for i in 0..dim {
        let j = sector.index_of(refl.apply(sector.config(i)))?;
        if j < i {
            continue;
        }
        if j == i {
            even.coord[i] = Some((even.members.len(), 1.0));
            even.members.push(vec![(i, 1.0)]);
        } else {
            even.coord[i] = Some((even.members.len(), s));
            even.coord[j] = Some((even.members.len(), s));
            even.members.push(vec![(i, s), (j, s)]);
            odd.coord[i] = Some((odd.members.len(), s));
            odd.coord[j] = Some((odd.members.len(), -s));
            odd.members.push(vec![(i, s), (j, -s)]);
        }
    }
    Ok(if odd.members.is_empty() { vec![even] } else { vec![even, odd] })
}

/// Entries `<row basis k| op |col basis k'>` as merged `(k, k', value)`
/// triplets. `op` must be symmetric, so its rows serve as columns.
fn project(op: &SparseOperator, rows: &BasisBlock, cols: &BasisBlock) -> Vec<(usize, usize, f64)> {
    let zero = PROJECTION_ZERO * op.max_abs().max(f64::MIN_POSITIVE);
    let mut out = Vec::new();
    let mut acc: Vec<(usize, f64)> = Vec::new();
    for (kc, members) in cols.members.iter().enumerate() {
        acc.clear();
        for &(c, sc) in members {
            for (r, v) in op.row(c) {
                if let Some((kr, sr)) = rows.coord[r] {
                    acc.push((kr, sr * v * sc));
                }
            }
        }
        acc.sort_by_key(|e| e.0);
        let mut i = 0;
        while i < acc.len() {
            let kr = acc[i].0;
            let mut v = 0.0;
            while i < acc.len() && acc[i].0 == kr {
                v += acc[i].1;
                i += 1;
            }
            if v.abs() > zero {
                out.push((kr, kc, v));
            }
        }
    }
    out
}

fn dense_block(op: &SparseOperator, block: &BasisBlock) -> Mat<f64> {
    let n = block.len();
    let mut m = Mat::<f64>::zeros(n, n);
    for (r, c, v) in project(op, block, block) {
        m[(r, c)] = v;
    }
    m
}

#[derive(Debug, Clone)]
pub struct EigenBlock {
    pub parity: Parity,
    pub energies: Vec<f64>,
    /// Eigenvectors as columns, in block coordinates.
    pub vectors: Mat<f64>,
}

/// Full spectrum and eigenvectors of a sector Hamiltonian.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    pub dim: usize,
    /// All eigenvalues ascending.
    pub energies: Vec<f64>,
    /// `(block, index in block)` of each entry of `energies`.
    pub labels: Vec<(usize, usize)>,
    pub blocks: Vec<EigenBlock>,
    basis: Vec<BasisBlock>,
}

/// Largest residual and orthonormality defect found by `EigenSystem::verify`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenCheck {
    /// `max |H v - E v| / |H|`.
    pub residual: f64,
    /// `max |V^T V - 1|` over the sampled columns.
    pub orthonormality: f64,
    pub sampled: usize,
}

/// Diagonalises `h` on `sector`.
pub fn exact_eigensystem(h: &SparseOperator, sector: &BasisSector, symmetry: Symmetry) -> Result<EigenSystem> {
    let dim = h.dim();
    if sector.dim() != dim {
        return Err(Error::DimensionMismatch { expected: sector.dim(), found: dim });
    }
    if dim > MAX_DIM {
        return Err(Error::Resource(format!("dimension {dim} exceeds the diagonalisation limit {MAX_DIM}")));
    }
    if h.hermiticity_residual() > 1e-12 * h.max_abs() {
        return Err(Error::Domain("Hamiltonian is not symmetric".into()));
    }
    let basis = match symmetry {
        Symmetry::None => vec![BasisBlock::identity(dim)],
        Symmetry::Reflection | Symmetry::Auto => {
            let blocks = reflection_blocks(sector)?;
            let commutes = blocks.len() < 2 || project(h, &blocks[0], &blocks[1]).is_empty();
            match (commutes, symmetry) {
                (true, _) => blocks,
                (false, Symmetry::Reflection) => {
                    return Err(Error::Domain("Hamiltonian does not commute with the reflection".into()))
                }
                (false, _) => vec![BasisBlock::identity(dim)],
            }
        }
    };
    let mut blocks = Vec::with_capacity(basis.len());
    for b in &basis {
        let e = dense::symmetric_eigen(&dense_block(h, b))?;
        blocks.push(EigenBlock { parity: b.parity, energies: e.values, vectors: e.vectors });
    }
    let mut labels: Vec<(usize, usize)> =
        blocks.iter().enumerate().flat_map(|(b, blk)| (0..blk.energies.len()).map(move |i| (b, i))).collect();
    labels.sort_by(|x, y| blocks[x.0].energies[x.1].total_cmp(&blocks[y.0].energies[y.1]).then(x.cmp(y)));
    let energies = labels.iter().map(|&(b, i)| blocks[b].energies[i]).collect();
    Ok(EigenSystem { dim, energies, labels, blocks, basis })
}

impl EigenSystem {
    pub fn e_min(&self) -> f64 {
        self.energies[0]
    }

    pub fn e_max(&self) -> f64 {
        self.energies[self.dim - 1]
    }

    /// Normalised energies `(E_n - E_min) / (E_max - E_min)`.
    pub fn scaled_energies(&self) -> Vec<f64> {
        let (lo, w) = (self.e_min(), self.e_max() - self.e_min());
        self.energies.iter().map(|e| (e - lo) / w).collect()
    }

    /// Eigenvector `n` (in ascending order) in the configuration basis.
    pub fn vector(&self, n: usize) -> Vec<f64> {
        let (b, i) = self.labels[n];
        self.block_vector(b, i)
    }

    fn block_vector(&self, b: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        let cols = &self.blocks[b].vectors;
        for (k, members) in self.basis[b].members.iter().enumerate() {
            let c = cols[(k, i)];
            for &(cfg, s) in members {
                v[cfg] += s * c;
            }
        }
        v
    }

    /// Checks every `stride`-th eigenpair against `h`.
    pub fn verify(&self, h: &SparseOperator, stride: usize) -> EigenCheck {
        let stride = stride.max(1);
        let norm = self.e_min().abs().max(self.e_max().abs()).max(f64::MIN_POSITIVE);
        let sample: Vec<usize> = (0..self.dim).step_by(stride).collect();
        let (residual, orthonormality) = sample
            .par_iter()
            .map(|&n| {
                let v = self.vector(n);
                let hv = h.apply(&v);
                let e = self.energies[n];
                let r = hv.iter().zip(&v).map(|(a, b)| (a - e * b).powi(2)).sum::<f64>().sqrt() / norm;
                let (b, i) = self.labels[n];
                let vecs = &self.blocks[b].vectors;
                let mut o = 0.0f64;
                for j in 0..vecs.ncols() {
                    let d: f64 = (0..vecs.nrows()).map(|k| vecs[(k, i)] * vecs[(k, j)]).sum();
                    o = o.max((d - if i == j { 1.0 } else { 0.0 }).abs());
                }
                (r, o)
            })
            .collect::<Vec<_>>()
            .into_iter()
            .fold((0.0f64, 0.0f64), |a, b| (a.0.max(b.0), a.1.max(b.1)));
        EigenCheck { residual, orthonormality, sampled: sample.len() }
    }

    pub fn project(&self, a: &SparseOperator) -> Result<ProjectedObservable> {
        if a.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: a.dim() });
        }
        if a.hermiticity_residual() > 1e-12 * a.max_abs().max(f64::MIN_POSITIVE) {
            return Err(Error::Domain("observable is not symmetric".into()));
        }
        let nb = self.basis.len();
        let mut parts = vec![Vec::new(); nb * nb];
        for r in 0..nb {
            for c in 0..nb {
                parts[r * nb + c] = project(a, &self.basis[r], &self.basis[c]);
            }
        }
        let trace = a.diagonal().iter().sum();
        let trace_sq = (0..a.dim()).map(|i| a.row(i).map(|(_, v)| v * v).sum::<f64>()).sum();
        Ok(ProjectedObservable { blocks: nb, parts, trace, trace_sq })
    }

    /// `A_nn` in ascending energy order.
    pub fn diagonal_elements(&self, a: &ProjectedObservable) -> Vec<f64> {
        let per_block: Vec<Vec<f64>> = (0..self.blocks.len())
            .map(|b| {
                let vecs = &self.blocks[b].vectors;
                let part = a.part(b, b);
                (0..vecs.ncols())
                    .into_par_iter()
                    .map(|n| part.iter().map(|&(r, c, v)| vecs[(r, n)] * v * vecs[(c, n)]).sum())
                    .collect()
            })
            .collect();
        self.labels.iter().map(|&(b, i)| per_block[b][i]).collect()
    }

    /// `A_{mn}` for `m` in block `rb` and `n` in block `cb`, or `None` when
    /// the observable has no entries between the two blocks.
    pub fn block_matrix(&self, a: &ProjectedObservable, rb: usize, cb: usize) -> Option<Mat<f64>> {
        let part = a.part(rb, cb);
        if part.is_empty() {
            return None;
        }
        let (vr, vc) = (&self.blocks[rb].vectors, &self.blocks[cb].vectors);
        let mut w = Mat::<f64>::zeros(vr.nrows(), vc.ncols());
        for &(r, c, v) in part {
            for j in 0..vc.ncols() {
                w[(r, j)] += v * vc[(c, j)];
            }
        }
        Some(vr.transpose() * &w)
    }

    /// Fraction of adjacent level gaps below `DEGENERATE_GAP`, within each
    /// block when `resolved` is set and across the whole spectrum otherwise.
    pub fn degenerate_fraction(&self, resolved: bool) -> f64 {
        let count = |e: &[f64]| e.windows(2).filter(|w| w[1] - w[0] < DEGENERATE_GAP).count();
        let (small, total) = if resolved {
            self.blocks.iter().fold((0, 0), |(s, t), b| (s + count(&b.energies), t + b.energies.len().saturating_sub(1)))
        } else {
            (count(&self.energies), self.dim.saturating_sub(1))
        };
        if total == 0 {
            0.0
        } else {
            small as f64 / total as f64
        }
    }

    /// Chebyshev expansion of the exact density of states.
    pub fn density_of_states(&self, moments: usize, margin: f64) -> Result<KpmExpansion> {
        let r = Rescale::from_bounds(self.e_min(), self.e_max(), margin)?;
        Ok(KpmExpansion::new(kpm::spectrum_moments(&self.energies, None, &r, moments)?, r))
    }
}

/// An observable split into symmetry-block pairs.
#[derive(Debug, Clone)]
pub struct ProjectedObservable {
    blocks: usize,
    parts: Vec<Vec<(usize, usize, f64)>>,
    pub trace: f64,
    /// `Tr A^2`.
    pub trace_sq: f64,
}

impl ProjectedObservable {
    fn part(&self, r: usize, c: usize) -> &[(usize, usize, f64)] {
        &self.parts[r * self.blocks + c]
    }

    /// Whether the observable is block diagonal, i.e. shares the symmetry.
    pub fn is_symmetric(&self) -> bool {
        (0..self.blocks).all(|r| (0..self.blocks).all(|c| r == c || self.part(r, c).is_empty()))
    }

    fn coupled(&self, r: usize, c: usize) -> bool {
        !self.part(r, c).is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalWindow {
    pub eps_lo: f64,
    pub eps_hi: f64,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
}

impl DiagonalWindow {
    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalStatistics {
    pub dim: usize,
    pub window: f64,
    pub windows: Vec<DiagonalWindow>,
    pub empty_windows: usize,
    /// Variance of `A_nn` about the running average, over the central
    /// fraction of eigenstates.
    pub central_variance: f64,
    pub central_count: usize,
    pub central_fraction: f64,
}

impl DiagonalStatistics {
    /// Largest jump between neighbouring window means relative to the larger
    /// of the two window standard deviations.
    pub fn max_jump_ratio(&self) -> f64 {
        self.windows
            .windows(2)
            .filter(|w| w[0].count >= 2 && w[1].count >= 2)
            .map(|w| (w[1].mean - w[0].mean).abs() / w[0].std.max(w[1].std).max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max)
    }
}

/// Running average of `A_nn` in windows of width `window` in scaled energy,
/// and the variance about it over the central `central_fraction` of states.
///
/// Each central residual is taken against the mean of its own window
/// `|eps_m - eps_n| <= window / 2`; with `N` states in that window the squared
/// residual is scaled by `N / (N - 1)`, which removes the bias from including
/// the state in its own mean.
pub fn diagonal_statistics(
    energies: &[f64],
    diagonal: &[f64],
    window: f64,
    central_fraction: f64,
) -> Result<DiagonalStatistics> {
    let n = energies.len();
    if diagonal.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: diagonal.len() });
    }
    if n < 3 || energies.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Domain("need at least three energies in ascending order".into()));
    }
    if !(window > 0.0 && window < 1.0) || !(central_fraction > 0.0 && central_fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!("window {window} or central fraction {central_fraction} out of range")));
    }
    let (lo, width) = (energies[0], energies[n - 1] - energies[0]);
    let eps: Vec<f64> = energies.iter().map(|e| (e - lo) / width).collect();

    let nw = (1.0 / window).round() as usize;
    let mut windows: Vec<DiagonalWindow> = (0..nw)
        .map(|k| DiagonalWindow {
            eps_lo: k as f64 * window,
            eps_hi: ((k + 1) as f64 * window).min(1.0),
            count: 0,
            mean: 0.0,
            std: 0.0,
        })
        .collect();
    let mut sums = vec![(0.0, 0.0); nw];
    for (e, a) in eps.iter().zip(diagonal) {
        let k = ((e / window) as usize).min(nw - 1);
        windows[k].count += 1;
        sums[k].0 += a;
        sums[k].1 += a * a;
    }
    for (w, (s, s2)) in windows.iter_mut().zip(&sums) {
        if w.count > 0 {
            let c = w.count as f64;
            w.mean = s / c;
            w.std = (s2 / c - w.mean * w.mean).max(0.0).sqrt();
        }
    }
    let empty_windows = windows.iter().filter(|w| w.is_empty()).count();

    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + diagonal[i];
    }
    let count = ((central_fraction * n as f64).round() as usize).max(1);
    let start = (n - count) / 2;
    let (mut lo_i, mut hi_i) = (0usize, 0usize);
    let mut acc = 0.0;
    let mut used = 0usize;
    for i in start..start + count {
        while eps[lo_i] < eps[i] - 0.5 * window {
            lo_i += 1;
        }
        while hi_i < n && eps[hi_i] <= eps[i] + 0.5 * window {
            hi_i += 1;
        }
        let m = hi_i - lo_i;
        if m < 2 {
            continue;
        }
        let mean = (prefix[hi_i] - prefix[lo_i]) / m as f64;
        acc += (diagonal[i] - mean).powi(2) * m as f64 / (m - 1) as f64;
        used += 1;
    }
    if used == 0 {
        return Err(Error::Domain("no central state has a neighbour inside its window".into()));
    }
    Ok(DiagonalStatistics {
        dim: n,
        window,
        windows,
        empty_windows,
        central_variance: acc / used as f64,
        central_count: used,
        central_fraction,
    })
}

/// Fit of `var = c dim^alpha` across system sizes; `slope` is `alpha`.
pub fn variance_scaling(stats: &[DiagonalStatistics]) -> Result<LinearFit> {
    let d: Vec<f64> = stats.iter().map(|s| s.dim as f64).collect();
    let v: Vec<f64> = stats.iter().map(|s| s.central_variance).collect();
    power_law_fit(&d, &v)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceConfig {
    pub temperature: f64,
    /// Pairs are kept when `beta(E_mn)` is within this relative tolerance
    /// of `1 / temperature`.
    pub beta_tolerance: f64,
    pub omega_bin: f64,
    pub omega_max: f64,
}

impl SliceConfig {
    pub fn new(temperature: f64) -> Self {
        Self { temperature, beta_tolerance: 0.1, omega_bin: 0.2, omega_max: 10.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.temperature.is_finite() && self.temperature != 0.0) {
            errs.push(format!("temperature must be finite and nonzero, got {}", self.temperature));
        }
        if !(self.beta_tolerance > 0.0 && self.beta_tolerance < 1.0) {
            errs.push(format!("beta tolerance must lie in (0, 1), got {}", self.beta_tolerance));
        }
        if !(self.omega_bin > 0.0) || !(self.omega_max >= self.omega_bin) {
            errs.push(format!("need 0 < omega_bin <= omega_max, got {} and {}", self.omega_bin, self.omega_max));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralBin {
    pub omega: f64,
    pub count: usize,
    /// Mean of the signed elements.
    pub mean: f64,
    pub mean_abs: f64,
    /// Mean of `A_mn^2`.
    pub raw_variance: f64,
    /// Mean of `A_mn^2 exp(S(E_mn))`.
    pub f_squared: f64,
    pub low_statistics: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralFunctionGrid {
    pub temperature: f64,
    /// Mean-energy window `[lo, hi]` matching the temperature tolerance.
    pub energy_window: (f64, f64),
    pub omega_bin: f64,
    pub bins: Vec<SpectralBin>,
    pub pairs: usize,
    pub degenerate_fraction: f64,
    /// Set when more than `DEGENERATE_FRACTION` of the level gaps vanish.
    pub degenerate: bool,
}

impl SpectralFunctionGrid {
    pub fn bin_at(&self, omega: f64) -> Option<&SpectralBin> {
        self.bins.iter().find(|b| (b.omega - omega).abs() < 0.5 * self.omega_bin)
    }
}

#[derive(Clone, Copy, Default)]
struct Accum {
    count: usize,
    sum: f64,
    sum_abs: f64,
    sum_sq: f64,
    sum_f: f64,
}

impl Accum {
    fn merge(&mut self, o: &Accum) {
        self.count += o.count;
        self.sum += o.sum;
        self.sum_abs += o.sum_abs;
        self.sum_sq += o.sum_sq;
        self.sum_f += o.sum_f;
    }
}

/// Bins all off-diagonal pairs with `E_mn` inside `window` by `w_mn`.
/// `weight(b, E)` multiplies `A_mn^2` for pairs whose row lies in block `b`.
fn accumulate_pairs(
    eig: &EigenSystem,
    a: &ProjectedObservable,
    window: (f64, f64),
    omega_bin: f64,
    omega_max: f64,
    weight: &(dyn Fn(usize, f64) -> f64 + Sync),
) -> Vec<(f64, Accum)> {
    let kmax = (omega_max / omega_bin + 1e-9).floor() as i64;
    let nbins = (2 * kmax + 1) as usize;
    let mut total = vec![Accum::default(); nbins];
    let nb = eig.blocks.len();
    for rb in 0..nb {
        for cb in 0..nb {
            if !a.coupled(rb, cb) {
                continue;
            }
            let Some(m) = eig.block_matrix(a, rb, cb) else { continue };
            let (er, ec) = (&eig.blocks[rb].energies, &eig.blocks[cb].energies);
            let rows: Vec<Vec<Accum>> = (0..er.len())
                .into_par_iter()
                .map(|i| {
                    let mut acc = vec![Accum::default(); nbins];
                    for j in 0..ec.len() {
                        if rb == cb && i == j {
                            continue;
                        }
                        let e = 0.5 * (er[i] + ec[j]);
                        if e < window.0 || e > window.1 {
                            continue;
                        }
                        let k = ((er[i] - ec[j]) / omega_bin).round() as i64;
                        if k.abs() > kmax {
                            continue;
                        }
                        let v = m[(i, j)];
                        let s = &mut acc[(k + kmax) as usize];
                        s.count += 1;
                        s.sum += v;
                        s.sum_abs += v.abs();
                        s.sum_sq += v * v;
                        s.sum_f += v * v * weight(rb, e);
                    }
                    acc
                })
                .collect();
            for row in &rows {
                for (t, r) in total.iter_mut().zip(row) {
                    t.merge(r);
                }
            }
        }
    }
    total.into_iter().enumerate().map(|(k, s)| ((k as i64 - kmax) as f64 * omega_bin, s)).collect()
}

/// Density of coupled states per unit energy for pairs in block `b`: the
/// block's share of the full density when the observable is block diagonal.
fn coupled_density(eig: &EigenSystem, a: &ProjectedObservable, dos: &KpmExpansion, b: usize, e: f64) -> f64 {
    let d = dos.density(e).unwrap_or(0.0);
    if a.is_symmetric() {
        d * eig.blocks[b].energies.len() as f64 / eig.dim as f64
    } else {
        d
    }
}

/// `|f(E, w)|^2` at fixed temperature from the off-diagonal matrix elements.
///
/// Pairs are selected by their mean energy, inside the window of energies
/// whose inverse temperature under `dos` lies within the tolerance of the target.
/// Each `A_mn^2` is multiplied by `exp(S(E_mn))`, with `exp(S)` the density of
/// coupled states per unit energy, so `2 pi cosh(beta w / 2) |f|^2` is
/// directly comparable with the symmetrised noise spectrum.
pub fn offdiagonal_spectral_function(
    eig: &EigenSystem,
    a: &ProjectedObservable,
    dos: &KpmExpansion,
    cfg: &SliceConfig,
) -> Result<SpectralFunctionGrid> {
    cfg.validate()?;
    let beta = 1.0 / cfg.temperature;
    let e1 = kpm::energy_for_beta(dos, beta * (1.0 + cfg.beta_tolerance))?;
    let e2 = kpm::energy_for_beta(dos, beta * (1.0 - cfg.beta_tolerance))?;
    let window = (e1.min(e2), e1.max(e2));
    let weight = |b: usize, e: f64| coupled_density(eig, a, dos, b, e);
    let raw = accumulate_pairs(eig, a, window, cfg.omega_bin, cfg.omega_max, &weight);
    let pairs: usize = raw.iter().map(|(_, s)| s.count).sum();
    if pairs == 0 {
        return Err(Error::Domain(format!("no eigenstate pairs inside the energy window [{}, {}]", window.0, window.1)));
    }
    let bins = raw.into_iter().map(|(omega, s)| finish_bin(omega, &s)).collect();
    let degenerate_fraction = eig.degenerate_fraction(a.is_symmetric());
    Ok(SpectralFunctionGrid {
        temperature: cfg.temperature,
        energy_window: window,
        omega_bin: cfg.omega_bin,
        bins,
        pairs,
        degenerate_fraction,
        degenerate: degenerate_fraction > DEGENERATE_FRACTION,
    })
}

fn finish_bin(omega: f64, s: &Accum) -> SpectralBin {
    let c = s.count.max(1) as f64;
    SpectralBin {
        omega,
        count: s.count,
        mean: s.sum / c,
        mean_abs: s.sum_abs / c,
        raw_variance: s.sum_sq / c,
        f_squared: s.sum_f / c,
        low_statistics: s.count < LOW_COUNT,
    }
}

/// Average `|A_mn|` and signed `A_mn` against `w_mn` for pairs with mean
/// energy inside `window`.
pub fn offdiagonal_magnitude_profile(
    eig: &EigenSystem,
    a: &ProjectedObservable,
    window: (f64, f64),
    omega_bin: f64,
    omega_max: f64,
) -> Result<Vec<SpectralBin>> {
    if !(window.1 > window.0) || !(omega_bin > 0.0) || !(omega_max >= omega_bin) {
        return Err(Error::InvalidParameter("invalid energy window or frequency binning".into()));
    }
    let raw = accumulate_pairs(eig, a, window, omega_bin, omega_max, &|_, _| 0.0);
    if raw.iter().all(|(_, s)| s.count == 0) {
        return Err(Error::Domain("no eigenstate pairs inside the energy window".into()));
    }
    Ok(raw
        .into_iter()
        .map(|(omega, s)| {
            let mut b = finish_bin(omega, &s);
            b.f_squared = f64::NAN;
            b
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{build_probe_observable, build_sigma_z, build_static_hamiltonian, probe_center, ChainParams, ProbeProfile};
    use crate::sparse::SparseOperator;

    fn system(l: usize, sym: Symmetry) -> (BasisSector, SparseOperator, EigenSystem) {
        let s = BasisSector::half_filling(l).unwrap();
        let h = build_static_hamiltonian(&ChainParams::new(l), &s).unwrap();
        let e = exact_eigensystem(&h, &s, sym).unwrap();
        (s, h, e)
    }

    fn probe(l: usize, s: &BasisSector) -> SparseOperator {
        build_probe_observable(&ProbeProfile::gaussian(l, probe_center(l)).unwrap(), s).unwrap()
    }

    #[test]
    fn small_chain_matches_dense_solve() {
        let (_, h, e) = system(4, Symmetry::Auto);
        let direct = dense::symmetric_eigenvalues(&h.to_dense()).unwrap();
        assert_eq!(e.energies.len(), 6);
        for (a, b) in e.energies.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn blocks_reproduce_full_spectrum_and_traces() {
        let (_, h, full) = system(10, Symmetry::None);
        let (_, _, blk) = system(10, Symmetry::Reflection);
        assert_eq!(blk.blocks.len(), 2);
        for (a, b) in full.energies.iter().zip(&blk.energies) {
            assert!((a - b).abs() < 1e-10);
        }
        let tr: f64 = h.diagonal().iter().sum();
        assert!((blk.energies.iter().sum::<f64>() - tr).abs() < 1e-8);
        let tr2: f64 = (0..h.dim()).map(|i| h.row(i).map(|(_, v)| v * v).sum::<f64>()).sum();
        let s2: f64 = blk.energies.iter().map(|e| e * e).sum();
        assert!((s2 - tr2).abs() < 1e-6 * tr2);
        let chk = blk.verify(&h, 7);
        assert!(chk.residual < 1e-8, "{chk:?}");
        assert!(chk.orthonormality < 1e-10, "{chk:?}");
    }

    #[test]
    fn size_guard() {
        let big = BasisSector::half_filling(20).unwrap();
        let h = SparseOperator::from_diagonal(&vec![0.0; big.dim()]);
        assert!(matches!(exact_eigensystem(&h, &big, Symmetry::None), Err(Error::Resource(_))));
    }

    #[test]
    fn broken_reflection_detected() {
        let s = BasisSector::half_filling(8).unwrap();
        let h = build_static_hamiltonian(&ChainParams::new(8), &s).unwrap();
        let kick = build_sigma_z(2, &s).unwrap();
        let rows = (0..h.dim()).map(|i| {
            let mut r: Vec<(u32, f64)> = h.row(i).map(|(c, v)| (c as u32, v)).collect();
            r.push((i as u32, 0.3 * kick.entry(i, i)));
            r
        });
        let hb = SparseOperator::from_rows(h.dim(), rows.collect()).unwrap();
        assert!(exact_eigensystem(&hb, &s, Symmetry::Reflection).is_err());
        let auto = exact_eigensystem(&hb, &s, Symmetry::Auto).unwrap();
        assert_eq!(auto.blocks.len(), 1);
        assert_eq!(auto.blocks[0].parity, Parity::Full);
    }

    #[test]
    fn diagonal_elements_trace_and_parseval() {
        for l in [8, 10] {
            let (s, _, e) = system(l, Symmetry::Auto);
            let a = probe(l, &s);
            let p = e.project(&a).unwrap();
            // the probe shares the reflection only when it is centred on a fixed site
            assert_eq!(p.is_symmetric(), (l / 2) % 2 == 0);
            let d = e.diagonal_elements(&p);
            assert!((d.iter().sum::<f64>() - p.trace).abs() < 1e-10);
            // direct route: full-space eigenvectors
            for n in [0, e.dim / 2, e.dim - 1] {
                let v = e.vector(n);
                let av = a.apply(&v);
                let direct: f64 = v.iter().zip(&av).map(|(x, y)| x * y).sum();
                assert!((direct - d[n]).abs() < 1e-12);
            }
            let nb = e.blocks.len();
            let mut parseval = 0.0;
            for rb in 0..nb {
                for cb in 0..nb {
                    if let Some(m) = e.block_matrix(&p, rb, cb) {
                        for j in 0..m.ncols() {
                            for i in 0..m.nrows() {
                                parseval += m[(i, j)].powi(2);
                            }
                        }
                    }
                }
            }
            assert!((parseval - p.trace_sq).abs() < 1e-6 * p.trace_sq);
        }
    }

    #[test]
    fn identity_observable() {
        let (_, _, e) = system(8, Symmetry::Auto);
        let id = SparseOperator::from_diagonal(&vec![1.0; e.dim]);
        let p = e.project(&id).unwrap();
        let d = e.diagonal_elements(&p);
        let st = diagonal_statistics(&e.energies, &d, DIAGONAL_WINDOW, 0.3).unwrap();
        assert!(st.central_variance.abs() < 1e-20);
        let prof = offdiagonal_magnitude_profile(&e, &p, (e.e_min(), e.e_max()), 0.2, 4.0).unwrap();
        assert!(prof.iter().all(|b| b.mean_abs < 1e-12));
    }

    #[test]
    fn windowed_variance_bias_correction() {
        // independent samples of unit variance around a smooth trend
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = 20000;
        let e: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let d: Vec<f64> = e
            .iter()
            .map(|x| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (3.0 * x).sin() + z
            })
            .collect();
        let st = diagonal_statistics(&e, &d, 0.0005, 0.5).unwrap();
        // about 10 states per window, where the uncorrected estimate is 10% low
        assert!((st.central_variance - 1.0).abs() < 0.05, "{}", st.central_variance);
    }

    #[test]
    fn smooth_running_average() {
        let l = 12;
        let (s, _, e) = system(l, Symmetry::Auto);
        let p = e.project(&probe(l, &s)).unwrap();
        let d = e.diagonal_elements(&p);
        let st = diagonal_statistics(&e.energies, &d, DIAGONAL_WINDOW, CENTRAL_FRACTION).unwrap();
        // restrict to the bulk, where windows are well populated
        let bulk: Vec<_> = st.windows.iter().filter(|w| w.eps_lo >= 0.2 && w.eps_hi <= 0.8).cloned().collect();
        let b = DiagonalStatistics { windows: bulk, ..st.clone() };
        assert!(b.max_jump_ratio() <= 1.0, "{}", b.max_jump_ratio());
        assert!(st.central_variance > 0.0);
    }

    #[test]
    fn spectral_function_symmetry_and_sign_structure() {
        let l = 12;
        let (s, _, e) = system(l, Symmetry::Auto);
        let p = e.project(&probe(l, &s)).unwrap();
        let dos = e.density_of_states(100, 0.01).unwrap();
        let cfg = SliceConfig { beta_tolerance: 0.25, ..SliceConfig::new(5.0) };
        let grid = offdiagonal_spectral_function(&e, &p, &dos, &cfg).unwrap();
        assert!(!grid.degenerate);
        let n = grid.bins.len();
        for k in 0..n {
            let (a, b) = (&grid.bins[k], &grid.bins[n - 1 - k]);
            assert_eq!(a.count, b.count);
            assert!((a.raw_variance - b.raw_variance).abs() <= 1e-12 * a.raw_variance.max(1e-300));
            assert!(a.f_squared >= 0.0 && a.raw_variance >= 0.0);
            assert_eq!(a.low_statistics, a.count < LOW_COUNT);
        }
        let zero = grid.bin_at(0.0).unwrap();
        assert!(zero.f_squared > 0.0);
        let prof = offdiagonal_magnitude_profile(&e, &p, grid.energy_window, 0.2, 10.0).unwrap();
        let well: Vec<_> = prof.iter().filter(|b| b.count > 200 && b.omega.abs() <= 4.0).collect();
        assert!(!well.is_empty());
        for b in &well {
            // random signs: the mean vanishes within its standard error
            let se = (b.raw_variance / b.count as f64).sqrt();
            assert!(b.mean.abs() < 4.0 * se && se < 0.2 * b.mean_abs, "w = {}: {} vs {se}", b.omega, b.mean);
        }
        let near = prof.iter().find(|b| b.omega.abs() < 0.1).unwrap().mean_abs;
        let far = prof.iter().find(|b| (b.omega - 8.0).abs() < 0.1).unwrap().mean_abs;
        assert!(far < near);
    }

    #[test]
    fn variance_scaling_exponent_on_synthetic_data() {
        let stats: Vec<DiagonalStatistics> = [100usize, 400, 1600]
            .iter()
            .map(|&d| DiagonalStatistics {
                dim: d,
                window: 0.02,
                windows: Vec::new(),
                empty_windows: 0,
                central_variance: 3.0 / d as f64,
                central_count: d / 10,
                central_fraction: 0.1,
            })
            .collect();
        assert!((variance_scaling(&stats).unwrap().slope + 1.0).abs() < 1e-12);
    }
}

//! Kernel polynomial method: Chebyshev moments of the density of states, of
//! observable-weighted densities and of local densities of states, Jackson
//! damping, reconstruction, and microcanonical temperature.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lanczos;
use crate::par::*;
use crate::sparse::SparseOperator;
use crate::vecops;

/// Rescaled energies beyond this are outside the reliable interior.
pub const INTERIOR: f64 = 0.98;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KpmConfig {
    pub moments: usize,
    pub random_vectors: usize,
    /// Safety margin kept free at both rescaled spectral edges.
    pub margin: f64,
    pub grid_points: usize,
}

impl Default for KpmConfig {
    fn default() -> Self {
        Self { moments: 100, random_vectors: 10, margin: 0.01, grid_points: 2001 }
    }
}

impl KpmConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.moments < 2 {
            errs.push("at least two Chebyshev moments are needed".to_string());
        }
        if self.random_vectors < 1 {
            errs.push("at least one random vector is needed".to_string());
        }
        if !(self.margin > 0.0 && self.margin < 0.5) {
            errs.push(format!("margin must lie in (0, 0.5), got {}", self.margin));
        }
        if self.grid_points < 3 {
            errs.push("reconstruction grid needs at least 3 points".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }
}

/// `H~ = (H - b) / a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rescale {
    pub a: f64,
    pub b: f64,
    /// Spectral bounds the map was built from.
    pub e_min: f64,
    pub e_max: f64,
}

impl Rescale {
    pub fn from_bounds(e_min: f64, e_max: f64, margin: f64) -> Result<Self> {
        if !(e_max > e_min) || !e_min.is_finite() || !e_max.is_finite() {
            return Err(Error::Numerical(format!("invalid spectral bounds [{e_min}, {e_max}]")));
        }
        Ok(Self { a: (e_max - e_min) / (2.0 * (1.0 - margin)), b: 0.5 * (e_max + e_min), e_min, e_max })
    }

    pub fn to_unit(&self, e: f64) -> f64 {
        (e - self.b) / self.a
    }

    pub fn to_energy(&self, x: f64) -> f64 {
        self.a * x + self.b
    }
}

/// Rescaling from Lanczos bounds of `h`.
pub fn rescale_spectrum(h: &SparseOperator, margin: f64) -> Result<Rescale> {
    let (lo, hi) = lanczos::spectral_bounds(h, 0x6b70_6d00)?;
    Rescale::from_bounds(lo, hi, margin)
}

/// Jackson damping factors `g_0..g_{M-1}`.
pub fn jackson_kernel(m: usize) -> Vec<f64> {
    let mp = (m + 1) as f64;
    let q = std::f64::consts::PI / mp;
    (0..m)
        .map(|k| {
            let k = k as f64;
            ((mp - k) * (q * k).cos() + (q * k).sin() / q.tan()) / mp
        })
        .collect()
}

/// `y = (H x - b x) / a`.
fn apply_rescaled(h: &SparseOperator, r: &Rescale, x: &[f64], y: &mut [f64]) {
    h.apply_into(x, y);
    let (inv, b) = (1.0 / r.a, r.b);
    y.par_iter_mut().zip(x.par_iter()).for_each(|(yi, xi)| *yi = (*yi - b * xi) * inv);
}

fn apply_rescaled_c(h: &SparseOperator, r: &Rescale, x: &[Complex64], y: &mut [Complex64]) {
    h.apply_into(x, y);
    let (inv, b) = (1.0 / r.a, r.b);
    y.par_iter_mut().zip(x.par_iter()).for_each(|(yi, xi)| *yi = (*yi - xi * b) * inv);
}

/// Chebyshev vectors `v_m = T_m(H~) v_0` for `m < count`, handed to `visit`
/// in order.
fn chebyshev_real(h: &SparseOperator, r: &Rescale, v0: Vec<f64>, count: usize, mut visit: impl FnMut(usize, &[f64])) {
    let n = v0.len();
    visit(0, &v0);
    if count == 1 {
        return;
    }
    let mut prev = v0;
    let mut cur = vec![0.0; n];
    apply_rescaled(h, r, &prev, &mut cur);
    visit(1, &cur);
    let mut next = vec![0.0; n];
    for m in 2..count {
        apply_rescaled(h, r, &cur, &mut next);
        next.par_iter_mut().zip(prev.par_iter()).for_each(|(a, p)| *a = 2.0 * *a - p);
        visit(m, &next);
        std::mem::swap(&mut prev, &mut cur);
        std::mem::swap(&mut cur, &mut next);
    }
}

/// Deterministic standard-normal vector for random vector index `r`.
pub fn random_vector(dim: usize, seed: u64, r: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r as u64);
    (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpmMoments {
    /// `Tr T_m(H~)` estimates, rescaled so that `mu_0 = dim`.
    pub trace: Vec<f64>,
    /// `Tr A T_m(H~)` estimates with the same rescaling, when requested.
    pub observable: Option<Vec<f64>>,
    /// Raw stochastic estimate of `mu_0` before rescaling.
    pub raw_mu0: f64,
    pub dim: usize,
    pub random_vectors: usize,
    pub seed: u64,
}

/// Stochastic-trace moments from `R` Gaussian random vectors.
///
/// Each vector has its own ChaCha stream of `seed`, and partial moments are
/// summed in vector order, so results are bit-identical for any thread
/// count. Both moment sets are multiplied by `dim / mu_0`, which makes the
/// reconstructed density integrate exactly to `dim`.
pub fn stochastic_moments(
    h: &SparseOperator,
    rescale: &Rescale,
    moments: usize,
    random_vectors: usize,
    seed: Option<u64>,
    observable: Option<&SparseOperator>,
) -> Result<KpmMoments> {
    let seed = seed.ok_or_else(|| Error::InvalidParameter("a seed is required for stochastic moments".into()))?;
    if random_vectors < 1 {
        return Err(Error::InvalidParameter("at least one random vector is needed".into()));
    }
    if let Some(a) = observable {
        if a.dim() != h.dim() {
            return Err(Error::DimensionMismatch { expected: h.dim(), found: a.dim() });
        }
    }
    let dim = h.dim();
    let per_vector: Vec<(Vec<f64>, Vec<f64>)> = (0..random_vectors)
        .into_par_iter()
        .map(|r| {
            let v0 = random_vector(dim, seed, r);
            let av0 = observable.map(|a| a.apply(&v0));
            let mut tr = vec![0.0; moments];
            let mut ob = vec![0.0; if av0.is_some() { moments } else { 0 }];
            chebyshev_real(h, rescale, v0.clone(), moments, |m, v| {
                tr[m] = vecops::real_dot(&v0, v);
                if let Some(av) = &av0 {
                    ob[m] = vecops::real_dot(av, v);
                }
            });
            (tr, ob)
        })
        .collect();
    let mut trace = vec![0.0; moments];
    let mut obs = vec![0.0; moments];
    for (tr, ob) in &per_vector {
        trace.iter_mut().zip(tr).for_each(|(a, b)| *a += b);
        obs.iter_mut().zip(ob).for_each(|(a, b)| *a += b);
    }
    let rf = random_vectors as f64;
    let raw_mu0 = trace[0] / rf;
    if !(raw_mu0 > 0.0) {
        return Err(Error::Numerical("stochastic trace of the identity is not positive".into()));
    }
    let s = dim as f64 / (rf * raw_mu0);
    trace.iter_mut().for_each(|x| *x *= s);
    obs.iter_mut().for_each(|x| *x *= s);
    Ok(KpmMoments {
        trace,
        observable: observable.map(|_| obs),
        raw_mu0,
        dim,
        random_vectors,
        seed,
    })
}

/// Exact moments `<psi| T_m(H~) |psi>` of a state.
pub fn state_moments(h: &SparseOperator, rescale: &Rescale, psi: &[Complex64], moments: usize) -> Result<Vec<f64>> {
    if psi.len() != h.dim() {
        return Err(Error::DimensionMismatch { expected: h.dim(), found: psi.len() });
    }
    let n = psi.len();
    let mut out = vec![0.0; moments];
    let mut prev = psi.to_vec();
    out[0] = vecops::dot(psi, &prev).re;
    if moments == 1 {
        return Ok(out);
    }
    let mut cur = vec![Complex64::new(0.0, 0.0); n];
    apply_rescaled_c(h, rescale, &prev, &mut cur);
    out[1] = vecops::dot(psi, &cur).re;
    let mut next = vec![Complex64::new(0.0, 0.0); n];
    for m in 2..moments {
        apply_rescaled_c(h, rescale, &cur, &mut next);
        next.par_iter_mut().zip(prev.par_iter()).for_each(|(a, p)| *a = *a * 2.0 - p);
        out[m] = vecops::dot(psi, &next).re;
        std::mem::swap(&mut prev, &mut cur);
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(out)
}

/// Moments `sum_n w_n T_m(x_n)` of a weighted discrete spectrum, the exact
/// counterpart of the stochastic estimate when eigenvalues are known.
pub fn spectrum_moments(energies: &[f64], weights: Option<&[f64]>, rescale: &Rescale, moments: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; moments];
    for (n, &e) in energies.iter().enumerate() {
        let x = rescale.to_unit(e);
        if x.abs() >= 1.0 {
            return Err(Error::Domain(format!("energy {e} maps outside (-1, 1)")));
        }
        let w = weights.map_or(1.0, |w| w[n]);
        let th = x.acos();
        for (m, o) in out.iter_mut().enumerate() {
            *o += w * (m as f64 * th).cos();
        }
    }
    Ok(out)
}

/// A Jackson-damped Chebyshev series representing a density in energy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpmExpansion {
    pub moments: Vec<f64>,
    pub kernel: Vec<f64>,
    pub rescale: Rescale,
}

impl KpmExpansion {
    pub fn new(moments: Vec<f64>, rescale: Rescale) -> Self {
        let kernel = jackson_kernel(moments.len());
        Self { moments, kernel, rescale }
    }

    /// Density per unit rescaled energy at `x`; `x` must lie in (-1, 1).
    pub fn density_unit(&self, x: f64) -> f64 {
        let th = x.acos();
        let mut s = self.kernel[0] * self.moments[0];
        for m in 1..self.moments.len() {
            s += 2.0 * self.kernel[m] * self.moments[m] * (m as f64 * th).cos();
        }
        s / (std::f64::consts::PI * (1.0 - x * x).sqrt())
    }

    /// Density per unit physical energy.
    pub fn density(&self, e: f64) -> Result<f64> {
        let x = self.rescale.to_unit(e);
        if x.abs() >= 1.0 {
            return Err(Error::Domain(format!("energy {e} maps outside (-1, 1)")));
        }
        Ok(self.density_unit(x) / self.rescale.a)
    }

    /// Values on `points` Chebyshev-angle nodes `x_k = cos(pi (k + 1/2) / N)`,
    /// ordered by ascending energy. Undershoots smaller than `1e-6 max` are
    /// clipped to zero when `clip` is set.
    pub fn reconstruct(&self, points: usize, clip: bool) -> MicrocanonicalCurve {
        let nf = points as f64;
        let x: Vec<f64> = (0..points)
            .rev()
            .map(|k| (std::f64::consts::PI * (k as f64 + 0.5) / nf).cos())
            .collect();
        let mut values: Vec<f64> = x.par_iter().map(|&x| self.density_unit(x) / self.rescale.a).collect();
        let max = values.iter().fold(0.0f64, |m, v| m.max(*v));
        let mut undershoot = 0.0f64;
        for v in values.iter_mut() {
            if *v < 0.0 {
                undershoot = undershoot.max(-*v);
                if clip && -*v < 1e-6 * max {
                    *v = 0.0;
                }
            }
        }
        MicrocanonicalCurve {
            energy: x.iter().map(|&x| self.rescale.to_energy(x)).collect(),
            x,
            values,
            undershoot,
            moments: self.moments.len(),
        }
    }

    /// `int density dE` by Gauss-Chebyshev quadrature on `points` nodes.
    pub fn integral(&self, points: usize) -> f64 {
        let nf = points as f64;
        let mut s = 0.0;
        for k in 0..points {
            let x = (std::f64::consts::PI * (k as f64 + 0.5) / nf).cos();
            s += self.density_unit(x) * std::f64::consts::PI * (1.0 - x * x).sqrt();
        }
        s / nf
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicrocanonicalCurve {
    pub energy: Vec<f64>,
    pub x: Vec<f64>,
    pub values: Vec<f64>,
    /// Largest negative value before clipping.
    pub undershoot: f64,
    pub moments: usize,
}

impl MicrocanonicalCurve {
    /// Trapezoid integral over the physical energy grid.
    pub fn trapezoid_integral(&self) -> f64 {
        self.energy
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(e, v)| 0.5 * (v[0] + v[1]) * (e[1] - e[0]))
            .sum()
    }
}

fn check_interior(rescale: &Rescale, e: f64) -> Result<()> {
    let x = rescale.to_unit(e);
    if !(x.abs() <= INTERIOR) {
        return Err(Error::Domain(format!(
            "energy {e} (rescaled {x:.4}) is outside the reliable interior |x| <= {INTERIOR}"
        )));
    }
    Ok(())
}

/// `beta = d ln Omega / dE` by central difference with step
/// `(E_max - E_min) / 2000`.
pub fn microcanonical_beta(dos: &KpmExpansion, e: f64) -> Result<f64> {
    check_interior(&dos.rescale, e)?;
    let de = (dos.rescale.e_max - dos.rescale.e_min) / 2000.0;
    let (lo, hi) = (dos.density(e - de)?, dos.density(e + de)?);
    if !(lo > 0.0 && hi > 0.0) {
        return Err(Error::Domain(format!("density of states is not positive near E = {e}")));
    }
    Ok((hi.ln() - lo.ln()) / (2.0 * de))
}

/// `ln Omega(E)`, the entropy up to the additive constant `ln dE`.
pub fn entropy(dos: &KpmExpansion, e: f64) -> Result<f64> {
    check_interior(&dos.rescale, e)?;
    let d = dos.density(e)?;
    if !(d > 0.0) {
        return Err(Error::Domain(format!("density of states is not positive at E = {e}")));
    }
    Ok(d.ln())
}

/// `A(E)`: the observable-weighted density divided by the density of states.
pub fn microcanonical_average(weighted: &KpmExpansion, dos: &KpmExpansion, e: f64) -> Result<f64> {
    check_interior(&dos.rescale, e)?;
    let d = dos.density(e)?;
    if !(d > 0.0) {
        return Err(Error::Domain(format!("density of states is not positive at E = {e}")));
    }
    Ok(weighted.density(e)? / d)
}

/// Energy at inverse temperature `beta`: the canonical mean
/// `int E Omega e^{-beta E} / int Omega e^{-beta E}` of the smoothed density.
///
/// At small sizes `d ln Omega / dE` still resolves level clusters and crosses
/// any given `beta` several times; the canonical mean is its Legendre inverse,
/// strictly monotone in `beta`.
pub fn energy_for_beta(dos: &KpmExpansion, beta: f64) -> Result<f64> {
    if !beta.is_finite() {
        return Err(Error::InvalidParameter(format!("beta must be finite, got {beta}")));
    }
    let curve = dos.reconstruct(2001, false);
    let jac: Vec<f64> = curve.x.iter().map(|x| (1.0 - x * x).sqrt()).collect();
    let expo: Vec<f64> = curve.energy.iter().map(|e| -beta * e).collect();
    let top = expo.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    let (mut z, mut ez) = (0.0, 0.0);
    for k in 0..curve.x.len() {
        let w = curve.values[k].max(0.0) * jac[k] * (expo[k] - top).exp();
        z += w;
        ez += w * curve.energy[k];
    }
    if !(z > 0.0) {
        return Err(Error::Domain("density of states has no positive weight".into()));
    }
    let e = ez / z;
    check_interior(&dos.rescale, e).map_err(|_| {
        Error::Domain(format!("beta = {beta} maps to E = {e}, outside the reliable interior"))
    })?;
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense;
    use crate::hilbert::BasisSector;
    use crate::operators::{build_sigma_z, build_static_hamiltonian, probe_center, ChainParams};

    fn chain(l: usize) -> SparseOperator {
        let s = BasisSector::half_filling(l).unwrap();
        build_static_hamiltonian(&ChainParams::new(l), &s).unwrap()
    }

    #[test]
    fn rescale_arithmetic() {
        let r = Rescale::from_bounds(-3.0, 5.0, 0.01).unwrap();
        assert!((r.a - 8.0 / (2.0 * 0.99)).abs() < 1e-15);
        assert_eq!(r.b, 1.0);
        let h = SparseOperator::from_diagonal(&[-3.0, 0.0, 2.0, 5.0]);
        let rr = rescale_spectrum(&h, 0.01).unwrap();
        assert!((rr.a - r.a).abs() < 1e-6 && (rr.b - r.b).abs() < 1e-6);
        let id = Rescale::from_bounds(-0.99, 0.99, 0.01).unwrap();
        assert!((id.a - 1.0).abs() < 1e-12 && id.b.abs() < 1e-15);
    }

    #[test]
    fn rescaled_spectrum_inside_unit_interval() {
        let h = chain(8);
        let r = rescale_spectrum(&h, 0.01).unwrap();
        let ev = dense::symmetric_eigenvalues(&h.to_dense()).unwrap();
        for e in ev {
            assert!(r.to_unit(e).abs() <= 0.99 + 1e-6);
        }
    }

    #[test]
    fn jackson_coefficients() {
        let g = jackson_kernel(100);
        assert!((g[0] - 1.0).abs() < 1e-14);
        assert!(g.windows(2).all(|w| w[1] < w[0]));
        assert!(g[99] > 0.0);
    }

    #[test]
    fn stochastic_moments_against_exact_trace() {
        let h = chain(8);
        let r = rescale_spectrum(&h, 0.01).unwrap();
        let ev = dense::symmetric_eigenvalues(&h.to_dense()).unwrap();
        let exact = spectrum_moments(&ev, None, &r, 20).unwrap();
        assert!((exact[0] - 70.0).abs() < 1e-12);
        let est = stochastic_moments(&h, &r, 20, 200, Some(7), None).unwrap();
        assert!((est.trace[0] - 70.0).abs() < 1e-12);
        // stochastic error of mu_1 scales like sqrt(2 Tr H~^2 / R)
        let tol = 4.0 * (2.0 * exact[0] / 200.0).sqrt();
        assert!((est.trace[1] - exact[1]).abs() < tol, "{} vs {}", est.trace[1], exact[1]);
    }

    #[test]
    fn missing_seed_or_vectors_refused() {
        let h = chain(6);
        let r = rescale_spectrum(&h, 0.01).unwrap();
        assert!(stochastic_moments(&h, &r, 10, 4, None, None).is_err());
        assert!(stochastic_moments(&h, &r, 10, 0, Some(1), None).is_err());
    }

    #[test]
    fn moments_are_deterministic() {
        let h = chain(10);
        let r = rescale_spectrum(&h, 0.01).unwrap();
        let a = stochastic_moments(&h, &r, 50, 5, Some(42), None).unwrap();
        let b = stochastic_moments(&h, &r, 50, 5, Some(42), None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identity_observable_gives_unit_average() {
        let h = chain(10);
        let r = rescale_spectrum(&h, 0.01).unwrap();
        let id = SparseOperator::from_diagonal(&vec![1.0; h.dim()]);
        let m = stochastic_moments(&h, &r, 100, 5, Some(3), Some(&id)).unwrap();
        let dos = KpmExpansion::new(m.trace.clone(), r);
        let num = KpmExpansion::new(m.observable.unwrap(), r);
        for x in [-0.9, -0.5, 0.0, 0.3, 0.9] {
            let e = r.to_energy(x);
            assert!((microcanonical_average(&num, &dos, e).unwrap() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn normalisation_and_positivity() {
        let h = chain(10);
        let r = rescale_spectrum(&h, 0.01).unwrap();
        let m = stochastic_moments(&h, &r, 100, 10, Some(11), None).unwrap();
        let dos = KpmExpansion::new(m.trace, r);
        let dim = h.dim() as f64;
        assert!((dos.integral(2001) / dim - 1.0).abs() < 1e-10);
        let curve = dos.reconstruct(2001, true);
        assert!((curve.trapezoid_integral() / dim - 1.0).abs() < 1e-3);
        assert!(curve.energy.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn eigenstate_ldos_is_one_narrow_peak() {
        let h = chain(8);
        let r = rescale_spectrum(&h, 0.01).unwrap();
        let e = dense::symmetric_eigen(&h.to_dense()).unwrap();
        let n = 20;
        let psi: Vec<Complex64> = (0..h.dim()).map(|i| Complex64::new(e.vectors[(i, n)], 0.0)).collect();
        let m = 250;
        let mom = state_moments(&h, &r, &psi, m).unwrap();
        let ex = KpmExpansion::new(mom, r);
        let curve = ex.reconstruct(4001, false);
        // mean and spread in rescaled units
        let w: f64 = curve.values.iter().zip(curve.energy.windows(2).map(|p| p[1] - p[0]).chain([0.0])).map(|(v, d)| v * d).sum();
        let mean: f64 = curve.x.iter().zip(&curve.values).zip(curve.energy.windows(2).map(|p| p[1] - p[0]).chain([0.0])).map(|((x, v), d)| x * v * d).sum::<f64>() / w;
        let var: f64 = curve.x.iter().zip(&curve.values).zip(curve.energy.windows(2).map(|p| p[1] - p[0]).chain([0.0])).map(|((x, v), d)| (x - mean).powi(2) * v * d).sum::<f64>() / w;
        assert!((mean - r.to_unit(e.values[n])).abs() < 1e-3);
        assert!(var.sqrt() <= std::f64::consts::PI / m as f64);
        // single maximum
        let peak = curve.values.iter().cloned().fold(f64::MIN, f64::max);
        let k = curve.values.iter().position(|&v| v == peak).unwrap();
        assert!((curve.x[k] - r.to_unit(e.values[n])).abs() < 0.02);
    }

    #[test]
    fn beta_sign_structure_and_inverse() {
        let h = chain(12);
        let r = rescale_spectrum(&h, 0.01).unwrap();
        let ev = dense::symmetric_eigenvalues(&h.to_dense()).unwrap();
        let dos = KpmExpansion::new(spectrum_moments(&ev, None, &r, 100).unwrap(), r);
        let curve = dos.reconstruct(2001, true);
        let k = (0..curve.values.len()).max_by(|&a, &b| curve.values[a].total_cmp(&curve.values[b])).unwrap();
        let centre = curve.energy[k];
        assert!(microcanonical_beta(&dos, centre).unwrap().abs() < 0.01);
        // a finite chain has shoulders in the density, so probe near the peak and in the tails
        for d in [2.0, 8.0] {
            assert!(microcanonical_beta(&dos, centre - d).unwrap() > 0.0);
            assert!(microcanonical_beta(&dos, centre + d).unwrap() < 0.0);
        }
        // the inverse tracks the exact canonical energy up to the kernel's broadening
        let canonical = |b: f64| {
            let w: Vec<f64> = ev.iter().map(|e| (-b * (e - ev[0])).exp()).collect();
            ev.iter().zip(&w).map(|(e, w)| e * w).sum::<f64>() / w.iter().sum::<f64>()
        };
        let mut last = f64::INFINITY;
        for b in [0.0, 0.1, 0.2, 0.4] {
            let e = energy_for_beta(&dos, b).unwrap();
            assert!((e - canonical(b)).abs() < 0.1, "beta {b}: {e} vs {}", canonical(b));
            assert!(e < last);
            last = e;
        }
        assert!(microcanonical_beta(&dos, r.to_energy(0.99)).is_err());
    }

    #[test]
    fn sigma_z_average_matches_exact_windows() {
        let l = 10;
        let s = BasisSector::half_filling(l).unwrap();
        let h = build_static_hamiltonian(&ChainParams::new(l), &s).unwrap();
        let a = build_sigma_z(probe_center(l), &s).unwrap();
        let r = rescale_spectrum(&h, 0.01).unwrap();
        let e = dense::symmetric_eigen(&h.to_dense()).unwrap();
        let ad = a.diagonal();
        let ann: Vec<f64> = (0..h.dim())
            .map(|n| (0..h.dim()).map(|i| e.vectors[(i, n)].powi(2) * ad[i]).sum())
            .collect();
        let dos = KpmExpansion::new(spectrum_moments(&e.values, None, &r, 100).unwrap(), r);
        let num = KpmExpansion::new(spectrum_moments(&e.values, Some(&ann), &r, 100).unwrap(), r);
        // the exact-moment route and the direct smoothed sum agree pointwise
        for x in [-0.5, 0.0, 0.4] {
            let en = r.to_energy(x);
            let kpm = microcanonical_average(&num, &dos, en).unwrap();
            assert!(kpm.abs() <= 1.0 + 1e-9);
        }
    }
}

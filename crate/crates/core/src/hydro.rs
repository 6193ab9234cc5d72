//! Diffusive hydrodynamics of a conserved density seen through a Gaussian
//! probe: response and noise as lattice mode sums (finite box) or
//! continuum integrals, decoherence rates, and the crossover of the
//! dephasing exponent at the Thouless time.
//!
//! The probe weight is `chi_k |u_k|^2 = chi0 exp(-ell^2 k^2)` and noise uses
//! the classical replacement `coth(beta w / 2) -> 2 T / w`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{linear_fit, LinearFit};
use crate::par::*;

/// Modes are kept while `exp(-ell^2 k^2 / 2)` exceeds this.
pub const MODE_TOLERANCE: f64 = 1e-8;
/// Guard on the shell table size `n_max^2` in two and three dimensions.
pub const MAX_SHELLS: usize = 10_000_000;
/// Smallest `L / ell` for which finite-size asymptotics are trusted.
pub const MIN_ASPECT: f64 = 10.0;
const QUAD_POINTS: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HydroParams {
    pub dim: usize,
    pub diffusion: f64,
    pub chi0: f64,
    /// Probe width.
    pub ell: f64,
    /// Linear system size.
    pub length: f64,
    pub g: f64,
    pub temperature: f64,
}

impl Default for HydroParams {
    fn default() -> Self {
        Self { dim: 1, diffusion: 1.0, chi0: 1.0, ell: 1.0, length: 1000.0, g: 0.2, temperature: 1.0 }
    }
}

impl HydroParams {
    /// Hard errors for invalid values; soft warnings are returned.
    pub fn validate(&self) -> Result<Vec<String>> {
        let mut errs = Vec::new();
        if !(1..=3).contains(&self.dim) {
            errs.push(format!("dimension must be 1, 2 or 3, got {}", self.dim));
        }
        for (name, v) in [
            ("diffusion", self.diffusion),
            ("chi0", self.chi0),
            ("ell", self.ell),
            ("length", self.length),
            ("g", self.g),
            ("temperature", self.temperature),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                errs.push(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !errs.is_empty() {
            return Err(Error::Validation(errs));
        }
        let mut warnings = Vec::new();
        if self.ell > self.length / MIN_ASPECT {
            warnings.push(format!("probe width {} is not small against L/{MIN_ASPECT} = {}", self.ell, self.length / MIN_ASPECT));
        }
        Ok(warnings)
    }

    pub fn with_length(mut self, length: f64) -> Self {
        self.length = length;
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    /// `chi_k |u_k|^2`.
    pub fn weight(&self, k2: f64) -> f64 {
        self.chi0 * (-self.ell * self.ell * k2).exp()
    }

    /// Wavevector beyond which `exp(-ell^2 k^2 / 2) < tol`.
    pub fn k_max(&self, tol: f64) -> Result<f64> {
        if !(tol > 0.0 && tol <= MODE_TOLERANCE) {
            return Err(Error::InvalidParameter(format!("mode cutoff weight {tol} too large; need <= {MODE_TOLERANCE}")));
        }
        Ok((-2.0 * tol.ln()).sqrt() / self.ell)
    }

    /// Relaxation time of the slowest diffusive mode, `L^2 / (4 pi^2 D)`.
    pub fn thouless_time(&self) -> f64 {
        self.length * self.length / (4.0 * PI * PI * self.diffusion)
    }

    fn sphere_area(&self) -> f64 {
        match self.dim {
            1 => 2.0,
            2 => 2.0 * PI,
            _ => 4.0 * PI,
        }
    }
}

/// `int_a^b f(k) dk` by Simpson's rule in `ln k`.
fn log_simpson(f: impl Fn(f64) -> f64 + Sync, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let (ua, ub) = (a.ln(), b.ln());
    let h = (ub - ua) / n as f64;
    let sum: f64 = (0..=n)
        .into_par_iter()
        .map(|i| {
            let k = (ua + h * i as f64).exp();
            let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            w * f(k) * k
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    sum * h / 3.0
}

/// `(2 pi)^{-d} int d^d k f(|k|)` as a radial integral.
fn continuum(p: &HydroParams, f: impl Fn(f64) -> f64 + Sync, k_lo: f64) -> Result<f64> {
    let k_hi = p.k_max(MODE_TOLERANCE)?;
    let d = p.dim as i32;
    let pref = p.sphere_area() / (2.0 * PI).powi(d);
    Ok(pref * log_simpson(|k| k.powi(d - 1) * f(k), k_lo.min(0.5 * k_hi), k_hi, QUAD_POINTS))
}

/// Lattice modes `k = 2 pi n / L`, `n != 0`, grouped into shells of equal
/// `|k|^2`, each with weight `multiplicity chi_k |u_k|^2 / L^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSet {
    pub k2: Vec<f64>,
    pub weight: Vec<f64>,
}

impl ModeSet {
    pub fn new(p: &HydroParams) -> Result<Self> {
        p.validate()?;
        let k_hi = p.k_max(MODE_TOLERANCE)?;
        let n_max = (k_hi * p.length / (2.0 * PI)).floor() as usize;
        let shells = Self::shell_counts(p.dim, n_max)?;
        let dk = 2.0 * PI / p.length;
        let vol = p.length.powi(p.dim as i32);
        let (mut k2, mut weight) = (Vec::new(), Vec::new());
        for (m, c) in shells {
            let q = dk * dk * m as f64;
            k2.push(q);
            weight.push(c as f64 * p.weight(q) / vol);
        }
        if k2.is_empty() {
            return Err(Error::Domain("no lattice modes below the probe cutoff; the box is smaller than the probe".into()));
        }
        Ok(Self { k2, weight })
    }

    /// `(n^2, multiplicity)` for nonzero integer vectors with `|n| <= n_max`.
    fn shell_counts(dim: usize, n_max: usize) -> Result<Vec<(usize, u64)>> {
        if dim == 1 {
            return Ok((1..=n_max).map(|n| (n * n, 2)).collect());
        }
        let m_max = n_max * n_max;
        if m_max > MAX_SHELLS {
            return Err(Error::Resource(format!("{m_max} lattice shells exceed the guard {MAX_SHELLS}")));
        }
        // representation counts of m as a sum of d squares, by convolution
        let mut single = vec![0u64; m_max + 1];
        single[0] = 1;
        for n in 1..=n_max {
            single[n * n] = 2;
        }
        let mut counts = single.clone();
        for _ in 1..dim {
            let mut next = vec![0u64; m_max + 1];
            for (m, &c) in counts.iter().enumerate().filter(|(_, c)| **c > 0) {
                for n in 0..=n_max {
                    let s = m + n * n;
                    if s > m_max {
                        break;
                    }
                    next[s] += c * single[n * n];
                }
            }
            counts = next;
        }
        Ok(counts.into_iter().enumerate().skip(1).filter(|(_, c)| *c > 0).collect())
    }

    /// `L^{-d} sum chi_k |u_k|^2`, the static susceptibility seen by the probe.
    pub fn total_weight(&self) -> f64 {
        self.weight.iter().sum()
    }
}

pub fn diffusive_response_modes(p: &HydroParams, modes: &ModeSet, omega: f64) -> f64 {
    modes
        .k2
        .iter()
        .zip(&modes.weight)
        .map(|(&k2, &w)| {
            let a = p.diffusion * k2;
            w * a * omega / (omega * omega + a * a)
        })
        .sum()
}

pub fn diffusive_response_continuum(p: &HydroParams, omega: f64) -> Result<f64> {
    p.validate()?;
    if omega == 0.0 {
        return Ok(0.0);
    }
    let w = omega.abs();
    let k_lo = 1e-7 * (w / p.diffusion).sqrt().min(1.0 / p.ell);
    let v = continuum(
        p,
        |k| {
            let a = p.diffusion * k * k;
            p.weight(k * k) * a * w / (w * w + a * a)
        },
        k_lo,
    )?;
    Ok(v.copysign(omega))
}

/// Classical noise at zero frequency from the mode sum, `2 T sum w / (D k^2)`.
pub fn zero_frequency_noise(p: &HydroParams, modes: &ModeSet) -> f64 {
    2.0 * p.temperature * modes.k2.iter().zip(&modes.weight).map(|(k2, w)| w / (p.diffusion * k2)).sum::<f64>()
}

/// Renormalised coupling `g^2 (2 pi)^{-3} int d^3k |u_k|^2 / k^2` by quadrature.
pub fn renormalised_coupling(p: &HydroParams) -> Result<f64> {
    let k_hi = p.k_max(MODE_TOLERANCE)? * 1.5;
    let radial = log_simpson(|k| (-p.ell * p.ell * k * k).exp(), 1e-12 / p.ell, k_hi, QUAD_POINTS);
    Ok(p.g * p.g * 4.0 * PI * radial / (8.0 * PI.powi(3)))
}

/// Three-dimensional rate `2 gbar^2 chi0 T / D`.
pub fn gamma_3d(p: &HydroParams) -> Result<f64> {
    p.validate()?;
    if p.dim != 3 {
        return Err(Error::Domain(format!("the bulk rate formula needs d = 3, got {}", p.dim)));
    }
    Ok(2.0 * renormalised_coupling(p)? * p.chi0 * p.temperature / p.diffusion)
}

/// Low-dimensional rate with the infrared cutoff `2 pi / L`:
/// `g^2 2T/D (2 pi)^{-d} int_{k > 2 pi/L} d^dk chi_k |u_k|^2 / k^2`.
pub fn gamma_low_dim(p: &HydroParams) -> Result<f64> {
    p.validate()?;
    if p.dim > 2 {
        return Err(Error::Domain(format!("the finite-size rate formula is for d = 1, 2, got {}", p.dim)));
    }
    if p.length < MIN_ASPECT * p.ell {
        return Err(Error::Domain(format!("L = {} is below {MIN_ASPECT} probe widths", p.length)));
    }
    let k_lo = 2.0 * PI / p.length;
    let v = continuum(p, |k| p.weight(k * k) / (k * k), k_lo)?;
    Ok(p.g * p.g * 2.0 * p.temperature / p.diffusion * v)
}

/// Rates over a size sweep and the fitted growth law: the slope of
/// `gamma` against `ln L` (2D) or of `ln gamma` against `ln L` (1D).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeSweep {
    pub length: Vec<f64>,
    pub gamma: Vec<f64>,
    pub fit: LinearFit,
}

pub fn size_sweep(p: &HydroParams, lengths: &[f64]) -> Result<SizeSweep> {
    let gamma: Vec<f64> = lengths.iter().map(|&l| gamma_low_dim(&p.with_length(l))).collect::<Result<_>>()?;
    let x: Vec<f64> = lengths.iter().map(|l| l.ln()).collect();
    let fit = if p.dim == 1 {
        linear_fit(&x, &gamma.iter().map(|g| g.ln()).collect::<Vec<_>>())?
    } else {
        linear_fit(&x, &gamma)?
    };
    Ok(SizeSweep { length: lengths.to_vec(), gamma, fit })
}

/// Classical noise in time from the mode sum, `T sum w exp(-D k^2 tau)`.
pub fn noise_tail_modes(p: &HydroParams, modes: &ModeSet, tau: f64) -> f64 {
    p.temperature * modes.k2.iter().zip(&modes.weight).map(|(k2, w)| w * (-p.diffusion * k2 * tau).exp()).sum::<f64>()
}

/// Continuum noise in time by radial quadrature.
pub fn noise_tail_continuum(p: &HydroParams, tau: f64) -> Result<f64> {
    p.validate()?;
    if !(tau >= 0.0) {
        return Err(Error::Domain(format!("noise tail needs tau >= 0, got {tau}")));
    }
    let k_lo = 1e-10 / p.ell;
    Ok(p.temperature * continuum(p, |k| p.weight(k * k) * (-p.diffusion * k * k * tau).exp(), k_lo)?)
}

/// Closed form of the continuum tail, `T chi0 (4 pi (ell^2 + D tau))^{-d/2}`.
pub fn noise_tail_closed_form(p: &HydroParams, tau: f64) -> f64 {
    p.temperature * p.chi0 * (4.0 * PI * (p.ell * p.ell + p.diffusion * tau)).powf(-0.5 * p.dim as f64)
}

/// `Gamma(t) = 2 g^2 int_0^t (t - tau) S(tau) dtau` by composite Simpson.
pub fn second_cumulant(s: impl Fn(f64) -> f64 + Sync, g: f64, t: f64, intervals: usize) -> f64 {
    let n = (intervals + intervals % 2).max(2);
    let h = t / n as f64;
    let sum: f64 = (0..=n)
        .into_par_iter()
        .map(|i| {
            let tau = h * i as f64;
            let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            w * (t - tau) * s(tau)
        })
        // ordered sum: identical for every thread count
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    2.0 * g * g * sum * h / 3.0
}

/// `int_0^t (t - tau) exp(-a tau) dtau`, and its `t` derivative.
fn mode_kernel(a: f64, t: f64) -> (f64, f64) {
    let x = a * t;
    if x < 1e-4 {
        let val = t * t * (0.5 - x / 6.0 + x * x / 24.0);
        let der = t * (1.0 - x / 2.0 + x * x / 6.0);
        (val, der)
    } else {
        ((x + (-x).exp_m1()) / (a * a), -(-x).exp_m1() / a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Shorter than the diffusion time across the probe.
    Ballistic,
    /// Diffusive spreading before the Thouless time.
    Diffusive,
    /// After the Thouless time: exponential decay.
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossoverPoint {
    pub t: f64,
    pub gamma: f64,
    /// `d ln Gamma / d ln t`.
    pub slope: f64,
    pub regime: Regime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Crossover {
    pub points: Vec<CrossoverPoint>,
    pub thouless_time: f64,
    /// Long-time rate `g^2 S(0)` from the same mode sum.
    pub rate: f64,
}

impl Crossover {
    /// Smallest and largest local slope with `t` inside `[lo, hi]`.
    pub fn slope_range(&self, lo: f64, hi: f64) -> Option<(f64, f64)> {
        self.points
            .iter()
            .filter(|p| p.t >= lo && p.t <= hi)
            .map(|p| p.slope)
            .fold(None, |acc, s| Some(acc.map_or((s, s), |(a, b): (f64, f64)| (a.min(s), b.max(s)))))
    }
}

/// Dephasing exponent from the finite-box mode sum, with exact local slopes.
pub fn dephasing_crossover(p: &HydroParams, t_grid: &[f64]) -> Result<Crossover> {
    let modes = ModeSet::new(p)?;
    let t_thouless = p.thouless_time();
    match (t_grid.first(), t_grid.last()) {
        (Some(&a), Some(&b)) if a > 0.0 && a < t_thouless && b > t_thouless => {}
        _ => {
            return Err(Error::Domain(format!(
                "time grid must be positive and straddle the Thouless time {t_thouless}"
            )))
        }
    }
    let pref = 2.0 * p.g * p.g * p.temperature;
    let t_probe = p.ell * p.ell / p.diffusion;
    let points = t_grid
        .par_iter()
        .map(|&t| {
            let (mut val, mut der) = (0.0, 0.0);
            for (k2, w) in modes.k2.iter().zip(&modes.weight) {
                let (v, d) = mode_kernel(p.diffusion * k2, t);
                val += w * v;
                der += w * d;
            }
            let regime = if t < t_probe {
                Regime::Ballistic
            } else if t < t_thouless {
                Regime::Diffusive
            } else {
                Regime::Exponential
            };
            CrossoverPoint { t, gamma: pref * val, slope: t * der / val, regime }
        })
        .collect();
    Ok(Crossover { points, thouless_time: t_thouless, rate: p.g * p.g * zero_frequency_noise(p, &modes) })
}

/// Logarithmically spaced grid.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..points).map(|i| (a + (b - a) * i as f64 / (points - 1).max(1) as f64).exp()).collect()
}

/// Least-squares log-log slope of `y` against `x`.
pub fn log_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    Ok(crate::fit::power_law_fit(x, y)?.slope)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p1() -> HydroParams {
        HydroParams { length: 1e4, ..HydroParams::default() }
    }

    #[test]
    fn validation_lists_every_problem() {
        let bad = HydroParams { dim: 4, diffusion: -1.0, ell: 0.0, ..HydroParams::default() };
        match bad.validate() {
            Err(Error::Validation(v)) => assert_eq!(v.len(), 3),
            other => panic!("{other:?}"),
        }
        let narrow = HydroParams { length: 5.0, ..HydroParams::default() };
        assert_eq!(narrow.validate().unwrap().len(), 1);
        assert!(HydroParams::default().k_max(1e-3).is_err());
    }

    #[test]
    fn response_is_odd_and_vanishes_at_zero() {
        let p = HydroParams { length: 100.0, ..HydroParams::default() };
        let m = ModeSet::new(&p).unwrap();
        assert_eq!(diffusive_response_modes(&p, &m, 0.0), 0.0);
        assert_eq!(diffusive_response_continuum(&p, 0.0).unwrap(), 0.0);
        let w = 0.37;
        assert_eq!(diffusive_response_modes(&p, &m, -w), -diffusive_response_modes(&p, &m, w));
        assert_eq!(diffusive_response_continuum(&p, -w).unwrap(), -diffusive_response_continuum(&p, w).unwrap());
    }

    #[test]
    fn shell_multiplicities_match_brute_force() {
        for d in 1..=3 {
            let p = HydroParams { dim: d, length: 12.0, ..HydroParams::default() };
            let m = ModeSet::new(&p).unwrap();
            let k_hi = p.k_max(MODE_TOLERANCE).unwrap();
            let n_max = (k_hi * p.length / (2.0 * PI)).floor() as i64;
            let dk = 2.0 * PI / p.length;
            let mut brute = 0.0;
            let range: Vec<i64> = (-n_max..=n_max).collect();
            let dims = |i: usize| if i < d { range.clone() } else { vec![0] };
            for a in dims(0) {
                for b in dims(1) {
                    for c in dims(2) {
                        let s = (a * a + b * b + c * c) as usize;
                        if s > 0 && s <= (n_max * n_max) as usize {
                            brute += p.weight(dk * dk * s as f64);
                        }
                    }
                }
            }
            brute /= p.length.powi(d as i32);
            assert!((m.total_weight() - brute).abs() < 1e-14 * brute, "d={d}");
        }
    }

    #[test]
    fn one_dimensional_square_root_response() {
        // leading term chi0 sqrt(w / (8 D)) from int s^2 / (1 + s^4) = pi / (2 sqrt 2)
        let p = p1();
        let w = log_grid(1e-6, 1e-4, 9);
        let chi: Vec<f64> = w.iter().map(|&x| diffusive_response_continuum(&p, x).unwrap()).collect();
        assert!((log_slope(&w, &chi).unwrap() - 0.5).abs() < 0.02);
        let lead = p.chi0 * (1e-6 / (8.0 * p.diffusion)).sqrt();
        assert!((chi[0] / lead - 1.0).abs() < 0.01);
    }

    #[test]
    fn three_dimensional_ohmic_response() {
        let p = HydroParams { dim: 3, ..HydroParams::default() };
        let w = log_grid(1e-6, 1e-4, 9);
        let chi: Vec<f64> = w.iter().map(|&x| diffusive_response_continuum(&p, x).unwrap()).collect();
        assert!((log_slope(&w, &chi).unwrap() - 1.0).abs() < 0.02);
        // the Ohmic coefficient is the bulk rate over 2 g^2 T
        let coeff = gamma_3d(&p).unwrap() / (2.0 * p.g * p.g * p.temperature);
        assert!((chi[0] / w[0] / coeff - 1.0).abs() < 0.01);
    }

    #[test]
    fn two_dimensional_log_response() {
        // chi'' / w ~ -ln(ell^2 w / D) / (4 pi D): consecutive decades differ by ln 10 / (8 pi D)
        let p = HydroParams { dim: 2, ..HydroParams::default() };
        let r = |w: f64| diffusive_response_continuum(&p, w).unwrap() / w;
        let step = r(1e-7) - r(1e-6);
        assert!((step / (10f64.ln() * p.chi0 / (4.0 * PI * p.diffusion)) - 1.0).abs() < 0.01);
    }

    #[test]
    fn renormalised_coupling_closed_form() {
        for ell in [0.3, 1.0, 4.2] {
            let p = HydroParams { dim: 3, ell, ..HydroParams::default() };
            let exact = p.g * p.g * PI.sqrt() / (4.0 * PI * PI * ell);
            assert!((renormalised_coupling(&p).unwrap() / exact - 1.0).abs() < 1e-8);
        }
        assert!(gamma_3d(&HydroParams::default()).is_err());
    }

    proptest! {
        #[test]
        fn bulk_rate_identity(t in 0.1f64..50.0, d in 0.1f64..10.0, chi in 0.1f64..5.0, ell in 0.5f64..3.0) {
            let p = HydroParams { dim: 3, temperature: t, diffusion: d, chi0: chi, ell, ..HydroParams::default() };
            let g = gamma_3d(&p).unwrap();
            prop_assert!((g * d / (2.0 * chi * t) / renormalised_coupling(&p).unwrap() - 1.0).abs() < 1e-12);
            let g2 = gamma_3d(&p.with_temperature(2.0 * t)).unwrap();
            prop_assert!((g2 / g - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn low_dimensional_growth() {
        let p = HydroParams::default();
        // closed form in 1D: int_a e^{-l^2 k^2}/k^2 = e^{-l^2 a^2}/a - l sqrt(pi) erfc(l a); erfc ~ 1 here
        let l = 1e3;
        let a = 2.0 * PI / l;
        let approx = (-(a * a)).exp() / a - PI.sqrt() * (1.0 - 2.0 * a / PI.sqrt());
        let exact = p.g * p.g * 2.0 * p.temperature / (PI * p.diffusion) * p.chi0 * approx;
        let g = gamma_low_dim(&p.with_length(l)).unwrap();
        assert!((g / exact - 1.0).abs() < 1e-6);
        let sweep = size_sweep(&p, &log_grid(1e3, 1e5, 5)).unwrap();
        assert!((sweep.fit.slope - 1.0).abs() < 0.01);
        let t2 = gamma_low_dim(&p.with_length(l).with_temperature(2.0)).unwrap();
        assert!((t2 / g - 2.0).abs() < 1e-12);
        assert!(gamma_low_dim(&p.with_length(5.0)).is_err());

        let p2 = HydroParams { dim: 2, ..HydroParams::default() };
        let e = std::f64::consts::E;
        let inc = |l: f64| gamma_low_dim(&p2.with_length(l)).unwrap() - gamma_low_dim(&p2.with_length(l / e)).unwrap();
        let limit = p2.g * p2.g * p2.temperature * p2.chi0 / (PI * p2.diffusion);
        assert!((inc(1e4) / limit - 1.0).abs() < 1e-3);
        assert!((inc(1e5) - inc(1e4)).abs() < 1e-3 * limit);
    }

    #[test]
    fn mode_rate_matches_continuum_formula_at_large_size() {
        // finite-box sum and cutoff integral share the leading L term
        let p = HydroParams::default().with_length(1e5);
        let m = ModeSet::new(&p).unwrap();
        let from_modes = p.g * p.g * zero_frequency_noise(&p, &m);
        let from_integral = gamma_low_dim(&p).unwrap();
        // leading terms T L / (6 D) from sum 1/n^2 against T L / (pi^2 D)
        assert!((from_modes / from_integral / (PI * PI / 6.0) - 1.0).abs() < 0.01);
    }

    #[test]
    fn noise_tail_quadrature_and_power_law() {
        for d in 1..=3 {
            let p = HydroParams { dim: d, ..HydroParams::default() };
            for tau in [0.0, 0.5, 10.0, 1e3] {
                let q = noise_tail_continuum(&p, tau).unwrap();
                assert!((q / noise_tail_closed_form(&p, tau) - 1.0).abs() < 1e-8, "d={d} tau={tau}");
            }
        }
        let p = p1();
        let tau = log_grid(1e3, 1e5, 9);
        let s: Vec<f64> = tau.iter().map(|&t| noise_tail_continuum(&p, t).unwrap()).collect();
        assert!((log_slope(&tau, &s).unwrap() + 0.5).abs() < 0.02);
        // value at tau = 0 scales as ell^-d
        let a = noise_tail_continuum(&HydroParams { dim: 2, ell: 2.0, ..p }, 0.0).unwrap();
        let b = noise_tail_continuum(&HydroParams { dim: 2, ell: 1.0, ..p }, 0.0).unwrap();
        assert!((b / a - 4.0).abs() < 1e-8);
    }

    #[test]
    fn finite_box_knee() {
        let p = HydroParams::default().with_length(200.0);
        let m = ModeSet::new(&p).unwrap();
        let tt = p.thouless_time();
        let early = noise_tail_modes(&p, &m, 1e-3 * tt) / noise_tail_closed_form(&p, 1e-3 * tt);
        let late = noise_tail_modes(&p, &m, 3.0 * tt) / noise_tail_closed_form(&p, 3.0 * tt);
        assert!((early - 1.0).abs() < 0.05, "{early}");
        assert!(late < 0.5, "{late}");
    }

    #[test]
    fn frequency_and_time_domains_agree() {
        let p = HydroParams::default().with_length(60.0);
        let m = ModeSet::new(&p).unwrap();
        let tt = p.thouless_time();
        // 2 int_0^inf S, split at 40 t_T where the remainder is below 1e-15
        let upper = 40.0 * tt;
        let s_time = 2.0 * log_simpson(|t| noise_tail_modes(&p, &m, t), 1e-9, upper, 40_000);
        let s_freq = zero_frequency_noise(&p, &m);
        assert!((s_time / s_freq - 1.0).abs() < 0.01);
        // static sum rule: int dw chi'' / (pi w) over both signs
        let sum = 2.0 / PI * log_simpson(|w| diffusive_response_modes(&p, &m, w) / w, 1e-12, 1e6, 60_000);
        assert!((sum / m.total_weight() - 1.0).abs() < 1e-4);
    }

    #[test]
    fn second_cumulant_limits() {
        let g = 0.3;
        for t in [0.5, 2.0, 7.0] {
            assert!((second_cumulant(|_| 1.7, g, t, 2) - g * g * 1.7 * t * t).abs() < 1e-12);
        }
        // S = (l^2 + 2 D tau)^{-1/2}: int_0^t (t - tau) S = (2/3)(u^{3/2} - l^3)/(2D)^2... in u = l^2 + 2 D tau
        let (l, d) = (1.0, 1.0);
        let exact = |t: f64| {
            let u1: f64 = l * l + 2.0 * d * t;
            let c = 1.0 / (2.0 * d);
            // int_{l^2}^{u1} (t - (u - l^2)/(2D)) u^{-1/2} du / (2D)
            let a = t + l * l * c;
            c * (a * 2.0 * (u1.sqrt() - l) - c * (2.0 / 3.0) * (u1.powf(1.5) - l * l * l))
        };
        let f = |tau: f64| (l * l + 2.0 * d * tau).powf(-0.5);
        for t in [1.0, 100.0, 1e4] {
            let q = second_cumulant(f, 0.5, t, 200_000);
            assert!((q / (2.0 * 0.25 * exact(t)) - 1.0).abs() < 1e-8);
        }
        let ts = [1e5, 1e6];
        let vals: Vec<f64> = ts.iter().map(|&t| exact(t)).collect();
        assert!((log_slope(&ts, &vals).unwrap() - 1.5).abs() < 0.01);
    }

    #[test]
    fn crossover_plateaus_and_late_rate() {
        let p = p1();
        let tt = p.thouless_time();
        let grid = log_grid(1e-2, 1e4 * tt, 200);
        let c = dephasing_crossover(&p, &grid).unwrap();
        let (lo, hi) = c.slope_range(100.0, 1e-2 * tt).unwrap();
        assert!(lo > 1.4 && hi < 1.6, "{lo} {hi}");
        let (lo, hi) = c.slope_range(20.0 * tt, 1e4 * tt).unwrap();
        assert!(lo > 0.95 && hi < 1.05, "{lo} {hi}");
        let last = c.points.last().unwrap();
        assert!(((last.gamma / last.t) / c.rate - 1.0).abs() < 1e-3);
        assert_eq!(c.points[0].regime, Regime::Ballistic);
        assert_eq!(last.regime, Regime::Exponential);
        // kernel closed form against quadrature of the same mode sum
        let m = ModeSet::new(&HydroParams::default().with_length(50.0)).unwrap();
        let q = HydroParams::default().with_length(50.0);
        let t = 30.0;
        let quad = second_cumulant(|s| noise_tail_modes(&q, &m, s), q.g, t, 20_000);
        let cc = dephasing_crossover(&q, &[t, 2.0 * q.thouless_time()]).unwrap();
        assert!((cc.points[0].gamma / quad - 1.0).abs() < 1e-9);
        assert!(dephasing_crossover(&p, &[1.0, 2.0]).is_err());
    }
}

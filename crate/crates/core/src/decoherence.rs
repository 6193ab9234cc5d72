//! Qubit dephasing: the exact decoherence function from two branch
//! propagations, its second-order cumulant approximation from the noise and
//! response spectra, asymptotic rates, and the reduced qubit state.
//!
//! Conventions: `v = |v| exp(-i phi)`, `|v|^2 = exp(-Gamma)`, `phi = Phi`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::linear_fit;
use crate::hilbert::StateVector;
use crate::par::*;
use crate::propagator::{
    energy_moments, step_count, CorrelationSeries, EvolutionConfig, Perturbed, Propagator, Renormalize, Static,
};
use crate::sparse::SparseOperator;
use crate::spectral::{thermodynamic_susceptibility, SpectralData};
use crate::vecops;

/// Slack allowed on `|v| <= 1`.
pub const MODULUS_SLACK: f64 = 1e-9;
/// Window on `|v|^2` used for exponential-rate fits.
pub const FIT_WINDOW: (f64, f64) = (0.1, 0.9);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceSource {
    Exact,
    Cumulant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoherenceTrace {
    /// Times measured from the coupling switch-on `t0`.
    pub t: Vec<f64>,
    pub v: Vec<Complex64>,
    pub g: f64,
    pub source: TraceSource,
}

impl DecoherenceTrace {
    pub fn abs_sq(&self) -> Vec<f64> {
        self.v.iter().map(|v| v.norm_sqr()).collect()
    }

    /// `phi(t)` with `v = |v| exp(-i phi)`, unwrapped to be continuous.
    pub fn phase(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.v.len());
        let mut prev = 0.0;
        for v in &self.v {
            let mut p = -v.arg();
            if !out.is_empty() {
                let two_pi = std::f64::consts::TAU;
                p += two_pi * ((prev - p) / two_pi).round();
            }
            out.push(p);
            prev = p;
        }
        out
    }

    pub fn entropy(&self) -> Result<Vec<f64>> {
        self.v.iter().map(|v| qubit_entropy(*v)).collect()
    }

    /// `|v| <= 1 + slack` everywhere and `v(0) = 1`.
    pub fn check(&self) -> Result<()> {
        if let Some((k, v)) = self.v.iter().enumerate().find(|(_, v)| v.norm() > 1.0 + MODULUS_SLACK) {
            return Err(Error::Numerical(format!("|v| = {} > 1 at t = {}", v.norm(), self.t[k])));
        }
        if let (Some(t), Some(v)) = (self.t.first(), self.v.first()) {
            if t.abs() < 1e-12 && (v - Complex64::new(1.0, 0.0)).norm() > 1e-12 {
                return Err(Error::Numerical(format!("v(t0) = {v} instead of 1")));
            }
        }
        Ok(())
    }
}

/// `v(t) = <psi(t)|psi'(t)>` with `psi` evolved under `H` and `psi'` under
/// `H + g A`, both from `psi0` at `t0`.
///
/// The branches run concurrently, share the reference energy `<H>` of
/// `psi0` (so the frame phase cancels in the overlap), and are renormalised
/// every step unless `cfg.renormalize` is `Never`. Samples are taken every
/// `cfg.record_stride` steps over `duration`.
pub fn exact_decoherence(
    h: &SparseOperator,
    a: &SparseOperator,
    g: f64,
    psi0: &StateVector,
    duration: f64,
    cfg: &EvolutionConfig,
) -> Result<DecoherenceTrace> {
    cfg.validate()?;
    psi0.check_dim(h.dim())?;
    if !g.is_finite() {
        return Err(Error::InvalidParameter(format!("coupling must be finite, got {g}")));
    }
    let n = step_count(duration, cfg.dt)?;
    let renorm = cfg.renormalize != Renormalize::Never;
    let bare = Static(h);
    let coupled = Perturbed::new(h, a, g)?;
    let mut psi = psi0.amplitudes().to_vec();
    if !(vecops::normalize(&mut psi) > 0.0) {
        return Err(Error::Domain("decoherence needs a non-zero state".into()));
    }
    let mut psi_c = psi.clone();
    let e_ref = if cfg.reference_frame { energy_moments(h, &psi).e_bar } else { 0.0 };
    let mut p0 = Propagator::new(&bare, 0.0, cfg.dt, renorm).with_reference_energy(e_ref);
    let mut p1 = Propagator::new(&coupled, 0.0, cfg.dt, renorm).with_reference_energy(e_ref);
    let mut t = vec![0.0];
    let mut v = vec![Complex64::new(1.0, 0.0)];
    for k in 1..=n {
        let (r0, r1) = join(|| p0.step(&mut psi), || p1.step(&mut psi_c));
        r0?;
        r1?;
        if k % cfg.record_stride == 0 || k == n {
            let overlap = vecops::dot(&psi, &psi_c) / (vecops::norm(&psi) * vecops::norm(&psi_c));
            t.push(k as f64 * cfg.dt);
            v.push(overlap);
        }
    }
    let trace = DecoherenceTrace { t, v, g, source: TraceSource::Exact };
    trace.check()?;
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulantTrace {
    pub t: Vec<f64>,
    pub gamma: Vec<f64>,
    pub phi: Vec<f64>,
    pub g: f64,
}

impl CumulantTrace {
    /// `v = exp(-Gamma / 2 - i Phi)`.
    pub fn to_trace(&self) -> DecoherenceTrace {
        let v = self
            .gamma
            .iter()
            .zip(&self.phi)
            .map(|(gm, ph)| Complex64::from_polar((-0.5 * gm).exp(), -ph))
            .collect();
        DecoherenceTrace { t: self.t.clone(), v, g: self.g, source: TraceSource::Cumulant }
    }
}

/// `sin^2(w t / 2) / w^2`, equal to `t^2 / 4` at `w = 0`.
fn gamma_kernel(w: f64, t: f64) -> f64 {
    let x = 0.5 * w * t;
    if x.abs() < 1e-4 {
        0.25 * t * t * (1.0 - x * x / 3.0)
    } else {
        (x.sin() / w).powi(2)
    }
}

/// `(sin(w t) - w t) / w^2`, which vanishes at `w = 0`.
fn phi_kernel(w: f64, t: f64) -> f64 {
    let x = w * t;
    if x.abs() < 1e-3 {
        // -x^3/6 + x^5/120, divided by w^2
        -t * x / 6.0 * (1.0 - x * x / 20.0) * t
    } else {
        (x.sin() - x) / (w * w)
    }
}

/// `int_x^inf (1 - cos u) / u^2 du`.
fn one_minus_cos_tail(x: f64) -> f64 {
    const SWITCH: f64 = 40.0;
    // asymptotic series of int_y^inf cos u / u^2 du for large y
    let far = |y: f64| {
        let (s, c) = y.sin_cos();
        let series = -s / y.powi(2) + 2.0 * c / y.powi(3) + 6.0 * s / y.powi(4) - 24.0 * c / y.powi(5)
            - 120.0 * s / y.powi(6)
            + 720.0 * c / y.powi(7);
        1.0 / y - series
    };
    if x >= SWITCH {
        return far(x);
    }
    // Simpson on [x, SWITCH]; the integrand is smooth and bounded by 1/2
    let n = 8000;
    let h = (SWITCH - x) / n as f64;
    let f = |u: f64| if u.abs() < 1e-4 { 0.5 - u * u / 24.0 } else { (1.0 - u.cos()) / (u * u) };
    let mut s = f(x) + f(SWITCH);
    for k in 1..n {
        s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(x + k as f64 * h);
    }
    s * h / 3.0 + far(SWITCH)
}

/// `Gamma(t)` and `Phi(t)` from the spectra by quadrature over frequency.
///
/// The grid values are joined linearly and the oscillating kernels are
/// sampled at least 32 times per period `2 pi / t`. Beyond the grid edge
/// `S~` is held at its edge values, with the kernel integrated in closed form
/// (this makes white noise exact); `chi''` is taken to vanish there.
pub fn cumulant_gamma_phi(spec: &SpectralData, mean_a: f64, g: f64, t_grid: &[f64]) -> Result<CumulantTrace> {
    if t_grid.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
        return Err(Error::InvalidParameter("cumulant times must be finite and non-negative".into()));
    }
    let om = &spec.omega;
    let n = om.len();
    if n < 2 {
        return Err(Error::Domain("spectral grid needs at least two points".into()));
    }
    let g2 = g * g;
    let inv_2pi = 1.0 / std::f64::consts::TAU;
    let values: Vec<(f64, f64)> = t_grid
        .par_iter()
        .map(|&t| {
            if t == 0.0 {
                return (0.0, 0.0);
            }
            let mut ig = 0.0;
            let mut ip = 0.0;
            for k in 0..n - 1 {
                let (w0, w1) = (om[k], om[k + 1]);
                let step = w1 - w0;
                let m = ((step * t * 32.0 / std::f64::consts::TAU).ceil() as usize).max(1);
                let h = step / m as f64;
                for j in 0..=m {
                    let f = j as f64 / m as f64;
                    let w = w0 + f * step;
                    let wt = if j == 0 || j == m { 0.5 * h } else { h };
                    let s = spec.s_tilde[k] + f * (spec.s_tilde[k + 1] - spec.s_tilde[k]);
                    let c = spec.chi_tilde[k] + f * (spec.chi_tilde[k + 1] - spec.chi_tilde[k]);
                    ig += wt * s * gamma_kernel(w, t);
                    ip += wt * c * phi_kernel(w, t);
                }
            }
            let tail = |edge: f64, s: f64| s * 0.5 * t * one_minus_cos_tail(edge.abs() * t);
            let tails = tail(om[0], spec.s_tilde[0]) + tail(om[n - 1], spec.s_tilde[n - 1]);
            (4.0 * g2 * inv_2pi * (ig + tails), g * mean_a * t + g2 * inv_2pi * ip)
        })
        .collect();
    Ok(CumulantTrace {
        t: t_grid.to_vec(),
        gamma: values.iter().map(|v| v.0).collect(),
        phi: values.iter().map(|v| v.1).collect(),
        g,
    })
}

/// The same cumulants directly in time:
/// `Gamma = 2 g^2 int_0^t (t - tau) Re C`, `Phi = g A t + g^2 int_0^t (t - tau) Im C`,
/// with `C` taken as zero beyond `tau_star`.
pub fn cumulant_time_domain(c: &CorrelationSeries, tau_star: f64, mean_a: f64, g: f64, t_grid: &[f64]) -> Result<CumulantTrace> {
    if c.tau.len() < 2 || c.tau[0] != 0.0 {
        return Err(Error::Domain("correlation series must start at zero lag".into()));
    }
    let end = tau_star.min(*c.tau.last().unwrap());
    let g2 = g * g;
    let mut gamma = Vec::with_capacity(t_grid.len());
    let mut phi = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let upper = t.min(end);
        let mut acc = Complex64::new(0.0, 0.0);
        for k in 0..c.tau.len() - 1 {
            let (a, b) = (c.tau[k], c.tau[k + 1]);
            if a >= upper {
                break;
            }
            let f = |tau: f64, v: Complex64| v * (t - tau);
            let fa = f(a, c.values[k]);
            if b <= upper {
                acc += (fa + f(b, c.values[k + 1])) * (0.5 * (b - a));
            } else {
                let s = (upper - a) / (b - a);
                let vu = c.values[k] + (c.values[k + 1] - c.values[k]) * s;
                acc += (fa + f(upper, vu)) * (0.5 * (upper - a));
            }
        }
        gamma.push(2.0 * g2 * acc.re);
        phi.push(g * mean_a * t + g2 * acc.im);
    }
    Ok(CumulantTrace { t: t_grid.to_vec(), gamma, phi, g })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticRates {
    /// `g^2 S~(0)`.
    pub gamma: f64,
    /// `g <A> - g^2 chi_A / 2`.
    pub phi_dot: f64,
    pub susceptibility: f64,
}

pub fn asymptotic_rates(spec: &SpectralData, mean_a: f64, g: f64) -> AsymptoticRates {
    let chi = thermodynamic_susceptibility(spec);
    AsymptoticRates { gamma: g * g * spec.zero_frequency, phi_dot: g * mean_a - 0.5 * g * g * chi, susceptibility: chi }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    /// `-d ln|v|^2 / dt`.
    pub rate: f64,
    pub intercept: f64,
    /// Time span of the points used.
    pub window: (f64, f64),
    pub points: usize,
}

/// Least-squares slope of `ln |v|^2` over the samples with `|v|^2` inside
/// `window`.
pub fn fit_decay_rate(trace: &DecoherenceTrace, window: (f64, f64)) -> Result<RateFit> {
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (t, v) in trace.t.iter().zip(&trace.v) {
        let p = v.norm_sqr();
        if p >= window.0 && p <= window.1 {
            x.push(*t);
            y.push(p.ln());
        }
    }
    if x.len() < 3 {
        return Err(Error::Domain(format!(
            "only {} samples with |v|^2 in [{}, {}]; extend the run",
            x.len(),
            window.0,
            window.1
        )));
    }
    let f = linear_fit(&x, &y)?;
    Ok(RateFit { rate: -f.slope, intercept: f.intercept, window: (x[0], x[x.len() - 1]), points: x.len() })
}

/// Von Neumann entropy of the qubit with coherence `v`: the eigenvalues of
/// its density matrix are `(1 +- |v|) / 2`.
pub fn qubit_entropy(v: Complex64) -> Result<f64> {
    let r = v.norm();
    if !(r <= 1.0 + MODULUS_SLACK) {
        return Err(Error::Numerical(format!("|v| = {r} exceeds 1")));
    }
    let r = r.min(1.0);
    let h = |p: f64| if p > 0.0 { -p * p.ln() } else { 0.0 };
    Ok(h(0.5 * (1.0 + r)) + h(0.5 * (1.0 - r)))
}

/// `rho_q = (1 + b . sigma) / 2` with Bloch vector `b = (Re v, -Im v, 0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QubitState {
    pub v: Complex64,
}

impl QubitState {
    pub fn new(v: Complex64) -> Result<Self> {
        if !(v.norm() <= 1.0 + MODULUS_SLACK) {
            return Err(Error::Numerical(format!("|v| = {} exceeds 1", v.norm())));
        }
        Ok(Self { v })
    }

    pub fn bloch(&self) -> [f64; 3] {
        [self.v.re, -self.v.im, 0.0]
    }

    /// Rows and columns ordered `(down, up)`, the ordering in which this
    /// Bloch vector gives `<down| rho |up> = v / 2`.
    pub fn density_matrix(&self) -> [[Complex64; 2]; 2] {
        let half = Complex64::new(0.5, 0.0);
        let [x, y, z] = self.bloch();
        [
            [half * (1.0 + z), Complex64::new(0.5 * x, -0.5 * y)],
            [Complex64::new(0.5 * x, 0.5 * y), half * (1.0 - z)],
        ]
    }

    pub fn eigenvalues(&self) -> (f64, f64) {
        let r = self.v.norm();
        (0.5 * (1.0 - r), 0.5 * (1.0 + r))
    }

    pub fn entropy(&self) -> f64 {
        qubit_entropy(self.v).unwrap_or(0.0)
    }
}

/// `P_up = (1 + Re[exp(i theta) v]) / 2`.
pub fn ramsey_signal(v: Complex64, theta: f64) -> f64 {
    0.5 * (1.0 + (Complex64::from_polar(1.0, theta) * v).re)
}

/// `v` from Ramsey fringes `(theta, P_up)` by a least-squares fit of
/// `P = c + (Re v cos theta - Im v sin theta) / 2`.
pub fn reconstruct_from_ramsey(samples: &[(f64, f64)]) -> Result<Complex64> {
    if samples.len() < 3 {
        return Err(Error::Domain("need at least three phase settings".into()));
    }
    // normal equations for the basis (1, cos, sin)
    let mut m = [[0.0f64; 3]; 3];
    let mut r = [0.0f64; 3];
    for &(th, p) in samples {
        let b = [1.0, th.cos(), th.sin()];
        for i in 0..3 {
            r[i] += b[i] * p;
            for j in 0..3 {
                m[i][j] += b[i] * b[j];
            }
        }
    }
    let x = solve3(m, r).ok_or_else(|| Error::Domain("phase settings do not determine the fringe".into()))?;
    Ok(Complex64::new(2.0 * x[1], -2.0 * x[2]))
}

fn solve3(mut m: [[f64; 3]; 3], mut r: [f64; 3]) -> Option<[f64; 3]> {
    let scale = m.iter().flatten().fold(0.0f64, |a, b| a.max(b.abs()));
    for c in 0..3 {
        let p = (c..3).max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs()))?;
        if m[p][c].abs() <= 1e-12 * scale {
            return None;
        }
        m.swap(c, p);
        r.swap(c, p);
        for i in c + 1..3 {
            let f = m[i][c] / m[c][c];
            for j in c..3 {
                m[i][j] -= f * m[c][j];
            }
            r[i] -= f * r[c];
        }
    }
    let mut x = [0.0; 3];
    for i in (0..3).rev() {
        let s: f64 = (i + 1..3).map(|j| m[i][j] * x[j]).sum();
        x[i] = (r[i] - s) / m[i][i];
    }
    Some(x)
}

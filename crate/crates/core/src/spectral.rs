//! Noise and response spectra from stationary correlation functions.
//!
//! Conventions: `S(tau) = Re C(tau)` is even and `Im C(tau)` is odd, and
//!
//! ```text
//! S~(w)   =  2 int_0^tau* Re C(tau) cos(w tau) dtau
//! chi''(w) = -2 int_0^tau* Im C(tau) sin(w tau) dtau
//! ```
//!
//! so that detailed balance reads `chi''(w) = tanh(beta w / 2) S~(w)` with
//! `beta > 0` for states below the spectrum centre.

use crate::error::{Error, Result};
use crate::par::*;
use crate::propagator::CorrelationSeries;

/// Coarsest lag spacing accepted by [`fourier_noise_response`].
pub const MAX_TAU_SPACING: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OmegaGrid {
    /// Grid spans `[-max, max]`.
    pub max: f64,
    pub step: f64,
}

impl Default for OmegaGrid {
    fn default() -> Self {
        Self { max: 25.0, step: 0.01 }
    }
}

impl OmegaGrid {
    pub fn points(&self) -> Vec<f64> {
        let n = (self.max / self.step).round() as i64;
        (-n..=n).map(|k| k as f64 * self.step).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralData {
    pub omega: Vec<f64>,
    pub s_tilde: Vec<f64>,
    pub chi_tilde: Vec<f64>,
    pub tau_star: f64,
    /// `2 int_0^tau* Re C dtau`.
    pub zero_frequency: f64,
    /// `-2 int_0^tau* Im C dtau`, the time-domain susceptibility.
    pub susceptibility_time: f64,
}

/// Trapezoid weights for samples `tau[0..n]`.
fn trapezoid_weights(tau: &[f64]) -> Vec<f64> {
    let n = tau.len();
    let mut w = vec![0.0; n];
    for k in 0..n.saturating_sub(1) {
        let h = tau[k + 1] - tau[k];
        w[k] += 0.5 * h;
        w[k + 1] += 0.5 * h;
    }
    w
}

/// Cosine and sine transforms of `C` on `[0, tau_star]` (rectangular cutoff,
/// trapezoid rule).
pub fn fourier_noise_response(c: &CorrelationSeries, tau_star: f64, grid: OmegaGrid) -> Result<SpectralData> {
    if c.tau.len() < 2 || c.tau[0] != 0.0 {
        return Err(Error::InvalidParameter("correlation must start at zero lag with at least two samples".into()));
    }
    if c.tau.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("lags must increase".into()));
    }
    let spacing = c.tau.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    if spacing > MAX_TAU_SPACING + 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "lag spacing {spacing} exceeds {MAX_TAU_SPACING}; the transform would alias"
        )));
    }
    let last = *c.tau.last().unwrap();
    if last < tau_star - 1e-9 {
        return Err(Error::InvalidParameter(format!("lags end at {last}, before the cutoff {tau_star}")));
    }
    if !(grid.step > 0.0 && grid.max > 0.0) {
        return Err(Error::InvalidParameter("frequency grid needs positive extent and step".into()));
    }
    let n = c.tau.iter().take_while(|&&t| t <= tau_star + 1e-9).count();
    let tau = &c.tau[..n];
    let w = trapezoid_weights(tau);
    let re: Vec<f64> = c.values[..n].iter().zip(&w).map(|(v, w)| v.re * w).collect();
    let im: Vec<f64> = c.values[..n].iter().zip(&w).map(|(v, w)| v.im * w).collect();
    let omega = grid.points();
    let pairs: Vec<(f64, f64)> = omega
        .par_iter()
        .map(|&om| {
            let mut s = 0.0;
            let mut x = 0.0;
            for k in 0..n {
                let (sn, cs) = (om * tau[k]).sin_cos();
                s += re[k] * cs;
                x += im[k] * sn;
            }
            (2.0 * s, -2.0 * x)
        })
        .collect();
    Ok(SpectralData {
        s_tilde: pairs.iter().map(|p| p.0).collect(),
        chi_tilde: pairs.iter().map(|p| p.1).collect(),
        omega,
        tau_star: tau[n - 1],
        zero_frequency: 2.0 * re.iter().sum::<f64>(),
        susceptibility_time: -2.0 * im.iter().sum::<f64>(),
    })
}

impl SpectralData {
    /// Builds spectral data directly from sampled functions on a frequency
    /// grid; the time-domain scalars are taken from the grid.
    pub fn from_functions(omega: Vec<f64>, s_tilde: Vec<f64>, chi_tilde: Vec<f64>) -> Result<Self> {
        if omega.len() != s_tilde.len() || omega.len() != chi_tilde.len() {
            return Err(Error::DimensionMismatch { expected: omega.len(), found: s_tilde.len().min(chi_tilde.len()) });
        }
        let mut d = Self { omega, s_tilde, chi_tilde, tau_star: f64::INFINITY, zero_frequency: 0.0, susceptibility_time: 0.0 };
        d.zero_frequency = d.interpolate_s(0.0);
        d.susceptibility_time = thermodynamic_susceptibility(&d);
        Ok(d)
    }

    pub fn step(&self) -> f64 {
        self.omega[1] - self.omega[0]
    }

    /// Linear interpolation of `S~` at `om` (clamped to the grid).
    pub fn interpolate_s(&self, om: f64) -> f64 {
        interpolate(&self.omega, &self.s_tilde, om)
    }

    /// `chi''/S~` on the grid; NaN where `S~` vanishes.
    pub fn ratio(&self) -> Vec<f64> {
        self.s_tilde.iter().zip(&self.chi_tilde).map(|(s, c)| if *s != 0.0 { c / s } else { f64::NAN }).collect()
    }

    /// Largest `|S~(w) - S~(-w)|` and `|chi''(w) + chi''(-w)|`.
    pub fn symmetry_residuals(&self) -> (f64, f64) {
        let n = self.omega.len();
        let mut rs = 0.0f64;
        let mut rc = 0.0f64;
        for k in 0..n {
            let m = n - 1 - k;
            if (self.omega[k] + self.omega[m]).abs() > 1e-9 * self.step() {
                continue;
            }
            rs = rs.max((self.s_tilde[k] - self.s_tilde[m]).abs());
            rc = rc.max((self.chi_tilde[k] + self.chi_tilde[m]).abs());
        }
        (rs, rc)
    }

    /// Whether `chi''/S~` is odd and non-decreasing on `|w| <= omega_max`,
    /// up to `band` absolute noise.
    pub fn ratio_is_monotone(&self, omega_max: f64, band: f64) -> bool {
        let r = self.ratio();
        let idx: Vec<usize> = (0..self.omega.len()).filter(|&k| self.omega[k].abs() <= omega_max + 1e-12).collect();
        idx.windows(2).all(|w| r[w[1]] >= r[w[0]] - band)
    }
}

fn interpolate(x: &[f64], y: &[f64], at: f64) -> f64 {
    if at <= x[0] {
        return y[0];
    }
    if at >= x[x.len() - 1] {
        return y[y.len() - 1];
    }
    let k = x.partition_point(|&v| v <= at) - 1;
    let f = (at - x[k]) / (x[k + 1] - x[k]);
    y[k] + f * (y[k + 1] - y[k])
}

#[derive(Debug, Clone, PartialEq)]
pub struct BetaFit {
    pub beta: f64,
    /// Fit range actually used.
    pub omega_max: f64,
    /// Set when the range had to shrink because `S~` approached zero.
    pub shrunk: bool,
    pub points: usize,
}

/// Inverse temperature from the least-squares slope of `chi''/S~` against `w`
/// on `|w| <= omega_max`: `beta = 2 * slope`.
///
/// If `S~` drops below `1e-3 max|S~|` inside the range, the range shrinks to
/// the largest symmetric window where it stays positive and the fit is flagged.
pub fn fit_beta_fdt(spec: &SpectralData, omega_max: f64) -> Result<BetaFit> {
    let smax = spec.s_tilde.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(smax > 0.0) {
        return Err(Error::Domain("noise spectrum vanishes identically".into()));
    }
    let floor = 1e-3 * smax;
    let mut range = omega_max;
    let mut shrunk = false;
    for (om, s) in spec.omega.iter().zip(&spec.s_tilde) {
        if om.abs() <= omega_max && *s <= floor {
            let cut = om.abs() - spec.step();
            if cut < range {
                range = cut;
                shrunk = true;
            }
        }
    }
    let (mut sx, mut sy, mut sxx, mut sxy, mut n) = (0.0, 0.0, 0.0, 0.0, 0usize);
    for ((om, s), c) in spec.omega.iter().zip(&spec.s_tilde).zip(&spec.chi_tilde) {
        if om.abs() <= range + 1e-12 {
            let r = c / s;
            sx += om;
            sy += r;
            sxx += om * om;
            sxy += om * r;
            n += 1;
        }
    }
    if n < 3 {
        return Err(Error::Domain(format!("only {n} usable points for the FDT fit")));
    }
    let nf = n as f64;
    let slope = (nf * sxy - sx * sy) / (nf * sxx - sx * sx);
    Ok(BetaFit { beta: 2.0 * slope, omega_max: range, shrunk, points: n })
}

/// `S~(0) = 2 int_0^tau* Re C dtau`.
pub fn zero_frequency_noise(spec: &SpectralData) -> f64 {
    spec.zero_frequency
}

/// `chi_A = int dw chi''(w) / (pi w)` by trapezoid quadrature over the grid.
/// The integrand is even and finite; its value at `w = 0` is extrapolated
/// from the neighbouring samples.
pub fn thermodynamic_susceptibility(spec: &SpectralData) -> f64 {
    let f: Vec<f64> = spec
        .omega
        .iter()
        .zip(&spec.chi_tilde)
        .map(|(om, c)| if *om != 0.0 { c / (std::f64::consts::PI * om) } else { f64::NAN })
        .collect();
    let mut f = f;
    for k in 0..f.len() {
        if f[k].is_nan() {
            // even function: quadratic extrapolation through w = h, 2h
            let (a, b) = if k + 2 < f.len() { (f[k + 1], f[k + 2]) } else { (f[k - 1], f[k - 2]) };
            f[k] = (4.0 * a - b) / 3.0;
        }
    }
    let mut total = 0.0;
    for k in 0..f.len() - 1 {
        total += 0.5 * (f[k] + f[k + 1]) * (spec.omega[k + 1] - spec.omega[k]);
    }
    total
}

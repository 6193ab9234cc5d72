//! Temperature estimation with the dephasing qubit: quantum Fisher
//! information and its split into contrast and phase parts, the optimal
//! measurement axis, the best interrogation time, and error budgets.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::decoherence::ramsey_signal;
use crate::error::{Error, Result};
use crate::par::*;

/// Contrast cap that keeps `1 / (1 - |v|^2)` finite.
pub const MAX_CONTRAST: f64 = 1.0 - 1e-9;
/// Default finite-difference step in temperature.
pub const DELTA_T: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FisherParts {
    pub quantum: f64,
    /// `(d|v|/dT)^2 / (1 - |v|^2)`, from measuring along the Bloch vector.
    pub parallel: f64,
    /// `|v|^2 (d phi/dT)^2`, from measuring perpendicular to it.
    pub perpendicular: f64,
}

pub fn qfi_decomposition(abs_v: f64, d_abs_v: f64, d_phi: f64) -> Result<FisherParts> {
    if !(abs_v >= 0.0 && abs_v <= 1.0 + 1e-9) {
        return Err(Error::Domain(format!("contrast |v| = {abs_v} outside [0, 1]")));
    }
    let r = abs_v.min(MAX_CONTRAST);
    let parallel = d_abs_v * d_abs_v / (1.0 - r * r);
    let perpendicular = r * r * d_phi * d_phi;
    Ok(FisherParts { quantum: parallel + perpendicular, parallel, perpendicular })
}

/// Angle of the symmetric logarithmic derivative from the parallel axis
/// toward the perpendicular one, in `(-pi/2, pi/2]`:
/// `tan = |v| (1 - |v|^2) dphi / d|v|`.
pub fn sld_angle(abs_v: f64, d_abs_v: f64, d_phi: f64) -> Result<f64> {
    let r = abs_v.min(MAX_CONTRAST);
    let par = d_abs_v / (1.0 - r * r);
    let perp = r * d_phi;
    if par == 0.0 && perp == 0.0 {
        return Err(Error::Domain("both temperature derivatives vanish; the SLD is undefined".into()));
    }
    if par == 0.0 {
        return Ok(std::f64::consts::FRAC_PI_2);
    }
    Ok((perp / par).atan())
}

/// Fisher information of a projective measurement of the spin along the
/// equatorial axis at `angle` from the Bloch vector.
pub fn measurement_fisher(abs_v: f64, d_abs_v: f64, d_phi: f64, angle: f64) -> f64 {
    let r = abs_v.min(MAX_CONTRAST);
    let (s, c) = angle.sin_cos();
    let m = r * c;
    let dm = d_abs_v * c + r * d_phi * s;
    dm * dm / (1.0 - m * m)
}

/// Natural cubic spline through strictly increasing knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubicSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    /// Second derivatives at the knots.
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn natural(x: &[f64], y: &[f64]) -> Result<Self> {
        let n = x.len();
        if y.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: y.len() });
        }
        if n < 3 {
            return Err(Error::Domain("a spline needs at least three knots".into()));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain("spline knots must be strictly increasing".into()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("spline values must be finite".into()));
        }
        // tridiagonal system for the interior second derivatives (Thomas algorithm)
        let mut m = vec![0.0; n];
        let k = n - 2;
        let mut diag = vec![0.0; k];
        let mut upper = vec![0.0; k];
        let mut rhs = vec![0.0; k];
        for i in 1..n - 1 {
            let (h0, h1) = (x[i] - x[i - 1], x[i + 1] - x[i]);
            diag[i - 1] = 2.0 * (h0 + h1);
            upper[i - 1] = h1;
            rhs[i - 1] = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
        }
        for i in 1..k {
            let lower = x[i + 1] - x[i];
            let f = lower / diag[i - 1];
            diag[i] -= f * upper[i - 1];
            rhs[i] -= f * rhs[i - 1];
        }
        for i in (0..k).rev() {
            let next = if i + 1 < k { m[i + 2] } else { 0.0 };
            m[i + 1] = (rhs[i] - upper[i] * next) / diag[i];
        }
        Ok(Self { x: x.to_vec(), y: y.to_vec(), m })
    }

    fn segment(&self, t: f64) -> usize {
        match self.x.partition_point(|&v| v <= t) {
            0 => 0,
            p => (p - 1).min(self.x.len() - 2),
        }
    }

    /// Value, extrapolating the end cubics outside the knots.
    pub fn eval(&self, t: f64) -> f64 {
        let i = self.segment(t);
        let h = self.x[i + 1] - self.x[i];
        let (a, b) = ((self.x[i + 1] - t) / h, (t - self.x[i]) / h);
        a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let i = self.segment(t);
        let h = self.x[i + 1] - self.x[i];
        let (a, b) = ((self.x[i + 1] - t) / h, (t - self.x[i]) / h);
        (self.y[i + 1] - self.y[i]) / h + ((1.0 - 3.0 * a * a) * self.m[i] + (3.0 * b * b - 1.0) * self.m[i + 1]) * h / 6.0
    }

    pub fn knots(&self) -> &[f64] {
        &self.x
    }
}

/// Weak-coupling rates against temperature, with `|v| = exp(-gamma t / 2)`
/// and `phi = phi_dot t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermometryCurve {
    pub temperature: Vec<f64>,
    pub gamma: Vec<f64>,
    pub phi_dot: Vec<f64>,
    gamma_spline: CubicSpline,
    phi_spline: CubicSpline,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateDerivatives {
    pub gamma: f64,
    pub phi_dot: f64,
    pub d_gamma: f64,
    pub d_phi_dot: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Derivative {
    /// Analytic derivative of the spline.
    Spline,
    /// Forward difference of the spline with the given step.
    FiniteDifference,
}

impl ThermometryCurve {
    pub fn new(temperature: Vec<f64>, gamma: Vec<f64>, phi_dot: Vec<f64>) -> Result<Self> {
        if gamma.len() != temperature.len() || phi_dot.len() != temperature.len() {
            return Err(Error::DimensionMismatch { expected: temperature.len(), found: gamma.len().min(phi_dot.len()) });
        }
        if gamma.iter().any(|g| !(*g >= 0.0)) {
            return Err(Error::Domain("decay rates must be non-negative".into()));
        }
        let gamma_spline = CubicSpline::natural(&temperature, &gamma)?;
        let phi_spline = CubicSpline::natural(&temperature, &phi_dot)?;
        Ok(Self { temperature, gamma, phi_dot, gamma_spline, phi_spline })
    }

    /// Smallest knot spacing; finite differences need a step at least this
    /// large to avoid resolving spline artefacts below the data.
    pub fn min_spacing(&self) -> f64 {
        self.temperature.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
    }

    pub fn rates(&self, t: f64, method: Derivative, delta_t: f64) -> RateDerivatives {
        let (gs, ps) = (&self.gamma_spline, &self.phi_spline);
        let (d_gamma, d_phi_dot) = match method {
            Derivative::Spline => (gs.derivative(t), ps.derivative(t)),
            Derivative::FiniteDifference => {
                ((gs.eval(t + delta_t) - gs.eval(t)) / delta_t, (ps.eval(t + delta_t) - ps.eval(t)) / delta_t)
            }
        };
        RateDerivatives { gamma: gs.eval(t), phi_dot: ps.eval(t), d_gamma, d_phi_dot }
    }

    /// Fisher information at temperature `temp` and interrogation time `t`.
    pub fn fisher(&self, temp: f64, t: f64, method: Derivative, delta_t: f64) -> Result<FisherParts> {
        let r = self.rates(temp, method, delta_t);
        let abs_v = (-0.5 * r.gamma * t).exp();
        let d_abs_v = -0.5 * t * r.d_gamma * abs_v;
        qfi_decomposition(abs_v, d_abs_v, r.d_phi_dot * t)
    }

    /// Fisher information on a time grid at one temperature.
    pub fn fisher_curve(&self, temp: f64, times: &[f64], method: Derivative, delta_t: f64) -> Result<Vec<FisherParts>> {
        times.par_iter().map(|&t| self.fisher(temp, t, method, delta_t)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalTime {
    pub t_star: f64,
    pub value: f64,
    /// Set when the maximum sits on the first or last grid point.
    pub at_boundary: bool,
}

/// Maximum of a sampled curve with parabolic refinement through the best
/// sample and its neighbours. Ties go to the smaller time.
pub fn optimal_time(t: &[f64], f: &[f64]) -> Result<OptimalTime> {
    if t.len() != f.len() {
        return Err(Error::DimensionMismatch { expected: t.len(), found: f.len() });
    }
    if t.len() < 3 || t.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Domain("need at least three strictly increasing times".into()));
    }
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("curve contains non-finite values".into()));
    }
    let mut k = 0;
    for i in 1..f.len() {
        if f[i] > f[k] {
            k = i;
        }
    }
    if k == 0 || k == f.len() - 1 {
        return Ok(OptimalTime { t_star: t[k], value: f[k], at_boundary: true });
    }
    let (x0, x1, x2) = (t[k - 1], t[k], t[k + 1]);
    let (y0, y1, y2) = (f[k - 1], f[k], f[k + 1]);
    let d0 = (y1 - y0) / (x1 - x0);
    let d1 = (y2 - y1) / (x2 - x1);
    let curv = (d1 - d0) / (x2 - x0);
    if !(curv < 0.0) {
        return Ok(OptimalTime { t_star: x1, value: y1, at_boundary: false });
    }
    // vertex of the interpolating parabola
    let ts = 0.5 * (x0 + x1) - d0 / (2.0 * curv);
    let ts = ts.clamp(x0, x2);
    let value = y1 + d0 * (ts - x1) + curv * (ts - x0) * (ts - x1);
    Ok(OptimalTime { t_star: ts, value: value.max(y1), at_boundary: false })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermometryRow {
    pub temperature: f64,
    /// Time maximising the quantum Fisher information.
    pub t_star: f64,
    pub fisher: FisherParts,
    pub scaled_parallel: f64,
    pub at_boundary: bool,
}

impl ThermometryRow {
    pub const HEADER: [&'static str; 6] = ["T", "t_star", "F_Q", "F_par", "F_perp", "T2F_par"];

    pub fn record(&self) -> [f64; 6] {
        let f = &self.fisher;
        [self.temperature, self.t_star, f.quantum, f.parallel, f.perpendicular, self.scaled_parallel]
    }
}

/// Fisher information at the best interrogation time for each temperature.
pub fn thermometry_table(
    curve: &ThermometryCurve,
    temperatures: &[f64],
    times: &[f64],
    method: Derivative,
    delta_t: f64,
) -> Result<Vec<ThermometryRow>> {
    temperatures
        .par_iter()
        .map(|&temp| {
            let parts = curve.fisher_curve(temp, times, method, delta_t)?;
            let q: Vec<f64> = parts.iter().map(|f| f.quantum).collect();
            let opt = optimal_time(times, &q)?;
            let fisher = curve.fisher(temp, opt.t_star, method, delta_t)?;
            Ok(ThermometryRow {
                temperature: temp,
                t_star: opt.t_star,
                fisher,
                scaled_parallel: temp * temp * fisher.parallel,
                at_boundary: opt.at_boundary,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorBudget {
    /// Lower bound on `dT / T`; infinite when the Fisher information vanishes.
    pub relative_error: f64,
    pub bounded: bool,
}

/// Cramer-Rao bound `dT / T >= 1 / sqrt(M T^2 F)`.
pub fn error_budget(fisher: f64, temperature: f64, repetitions: u64) -> Result<ErrorBudget> {
    if repetitions < 1 {
        return Err(Error::InvalidParameter("at least one repetition is needed".into()));
    }
    if !(fisher >= 0.0) || !(temperature > 0.0) {
        return Err(Error::InvalidParameter(format!("need F >= 0 and T > 0, got {fisher} and {temperature}")));
    }
    let x = repetitions as f64 * temperature * temperature * fisher;
    if x == 0.0 {
        return Ok(ErrorBudget { relative_error: f64::INFINITY, bounded: false });
    }
    Ok(ErrorBudget { relative_error: 1.0 / x.sqrt(), bounded: true })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorStatistics {
    pub mean: f64,
    pub variance: f64,
    pub trials: usize,
    /// Trials whose outcome frequency fell outside the model's range.
    pub failures: usize,
}

/// Maximum-likelihood temperature estimates from simulated Ramsey shots.
///
/// Each trial draws `shots` Bernoulli outcomes with `P_up` from `model` at
/// `true_t` and phase `theta`, then inverts `P_up(T)` by bisection inside
/// `bracket`, which must contain a single monotone branch.
pub fn simulate_estimator(
    model: impl Fn(f64) -> Complex64 + Sync,
    true_t: f64,
    theta: f64,
    shots: u64,
    trials: usize,
    bracket: (f64, f64),
    seed: u64,
) -> Result<EstimatorStatistics> {
    let p = |temp: f64| ramsey_signal(model(temp), theta);
    let p_true = p(true_t);
    let (plo, phi) = (p(bracket.0), p(bracket.1));
    if !((plo - p_true) * (phi - p_true) < 0.0) {
        return Err(Error::Domain("bracket does not straddle the true temperature".into()));
    }
    let binom = Binomial::new(shots, p_true).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let estimates: Vec<Option<f64>> = (0..trials)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let freq = binom.sample(&mut rng) as f64 / shots as f64;
            if (plo - freq) * (phi - freq) > 0.0 {
                return None;
            }
            let (mut a, mut b) = bracket;
            let fa = plo - freq;
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if (p(m) - freq).signum() == fa.signum() {
                    a = m;
                } else {
                    b = m;
                }
            }
            Some(0.5 * (a + b))
        })
        .collect();
    let good: Vec<f64> = estimates.iter().flatten().copied().collect();
    if good.len() < 2 {
        return Err(Error::Domain("too few trials produced an estimate".into()));
    }
    let n = good.len() as f64;
    let mean = good.iter().sum::<f64>() / n;
    let variance = good.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(EstimatorStatistics { mean, variance, trials, failures: trials - good.len() })
}

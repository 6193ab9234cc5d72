//! Fixed-step fourth-order Runge-Kutta propagation of `i d/dt psi = H(t) psi`,
//! energy moments, time averages and two-point correlation functions.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::StateVector;
use crate::operators::{drive_coefficient, weighted_sz_diagonal, DriveParams, GroundState};
use crate::hilbert::BasisSector;
use crate::par::*;
use crate::sparse::SparseOperator;
use crate::vecops;

/// Largest step accepted by [`EvolutionConfig::validate`].
pub const MAX_DT: f64 = 0.05;
/// Runs longer than this renormalise every step under [`Renormalize::Auto`].
pub const LONG_RUN: f64 = 100.0;
/// Shortest averaging window that does not raise a warning.
pub const MIN_AVERAGE_WINDOW: f64 = 20.0;

/// A possibly time-dependent Hamiltonian acting on state vectors.
pub trait Generator: Sync {
    fn dim(&self) -> usize;
    /// `y = H(t) x`.
    fn apply(&self, t: f64, x: &[Complex64], y: &mut [Complex64]);
}

/// Time-independent `H`.
pub struct Static<'a>(pub &'a SparseOperator);

impl Generator for Static<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn apply(&self, _t: f64, x: &[Complex64], y: &mut [Complex64]) {
        self.0.apply_into(x, y);
    }
}

/// `H + a sin(omega0 t) sz_j0`.
pub struct Driven<'a> {
    h: &'a SparseOperator,
    sz: Vec<f64>,
    drive: DriveParams,
}

impl<'a> Driven<'a> {
    pub fn new(h: &'a SparseOperator, sector: &BasisSector, drive: DriveParams) -> Result<Self> {
        drive.validate(sector.sites())?;
        if h.dim() != sector.dim() {
            return Err(Error::DimensionMismatch { expected: sector.dim(), found: h.dim() });
        }
        let mut w = vec![0.0; sector.sites()];
        w[drive.site - 1] = 1.0;
        Ok(Self { h, sz: weighted_sz_diagonal(&w, sector)?, drive })
    }
}

impl Generator for Driven<'_> {
    fn dim(&self) -> usize {
        self.h.dim()
    }
    fn apply(&self, t: f64, x: &[Complex64], y: &mut [Complex64]) {
        self.h.apply_into(x, y);
        let c = drive_coefficient(t, &self.drive);
        if c != 0.0 {
            y.par_iter_mut().zip(x.par_iter()).zip(self.sz.par_iter()).for_each(|((yi, xi), s)| {
                *yi += xi * (c * s);
            });
        }
    }
}

/// `H + g A` for a diagonal `A`.
pub struct Perturbed<'a> {
    h: &'a SparseOperator,
    ga: Vec<f64>,
}

impl<'a> Perturbed<'a> {
    pub fn new(h: &'a SparseOperator, a: &SparseOperator, g: f64) -> Result<Self> {
        if !a.is_diagonal() {
            return Err(Error::InvalidParameter("coupling operator must be diagonal".into()));
        }
        if a.dim() != h.dim() {
            return Err(Error::DimensionMismatch { expected: h.dim(), found: a.dim() });
        }
        Ok(Self { h, ga: a.diagonal().iter().map(|x| g * x).collect() })
    }
}

impl Generator for Perturbed<'_> {
    fn dim(&self) -> usize {
        self.h.dim()
    }
    fn apply(&self, _t: f64, x: &[Complex64], y: &mut [Complex64]) {
        self.h.apply_into(x, y);
        y.par_iter_mut().zip(x.par_iter()).zip(self.ga.par_iter()).for_each(|((yi, xi), s)| {
            *yi += xi * *s;
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Renormalize {
    /// Renormalise only when the run is longer than [`LONG_RUN`].
    Auto,
    Always,
    Never,
}

impl Renormalize {
    pub fn active(self, duration: f64) -> bool {
        match self {
            Renormalize::Auto => duration.abs() > LONG_RUN,
            Renormalize::Always => true,
            Renormalize::Never => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolutionConfig {
    pub dt: f64,
    pub renormalize: Renormalize,
    pub t_start: f64,
    pub t_end: f64,
    /// Steps between recorded samples.
    pub record_stride: usize,
    /// Integrate relative to the initial mean energy (see [`Propagator`]).
    pub reference_frame: bool,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self { dt: 0.01, renormalize: Renormalize::Auto, t_start: 0.0, t_end: 50.0, record_stride: 10, reference_frame: true }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.dt > 0.0 && self.dt <= MAX_DT) {
            errs.push(format!("dt must lie in (0, {MAX_DT}], got {}", self.dt));
        }
        if !(self.t_end >= self.t_start) {
            errs.push(format!("t_end {} precedes t_start {}", self.t_end, self.t_start));
        }
        if self.record_stride == 0 {
            errs.push("record_stride must be positive".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }
}

/// Number of `dt` steps covering `duration`, which must be a whole multiple
/// of `dt` up to rounding.
pub fn step_count(duration: f64, dt: f64) -> Result<usize> {
    let n = (duration / dt).round();
    if !(n >= 0.0) || (n * dt - duration).abs() > 1e-9 * duration.abs().max(1.0) {
        return Err(Error::InvalidParameter(format!(
            "duration {duration} is not a whole number of steps of {dt}"
        )));
    }
    Ok(n as usize)
}

/// Scratch vectors for one RK4 integrator.
pub struct Rk4Workspace {
    k: Vec<Complex64>,
    acc: Vec<Complex64>,
    stage: Vec<Complex64>,
}

impl Rk4Workspace {
    pub fn new(dim: usize) -> Self {
        let z = Complex64::new(0.0, 0.0);
        Self { k: vec![z; dim], acc: vec![z; dim], stage: vec![z; dim] }
    }
}

/// One classical RK4 step of `d psi/dt = -i H(t) psi`, in place.
///
/// Stage times are `t`, `t + dt/2`, `t + dt/2`, `t + dt`. Fails if the state
/// picks up a non-finite entry.
pub fn rk4_step<G: Generator + ?Sized>(
    gen: &G,
    psi: &mut [Complex64],
    t: f64,
    dt: f64,
    ws: &mut Rk4Workspace,
) -> Result<()> {
    let mi = Complex64::new(0.0, -1.0);
    let Rk4Workspace { k, acc, stage } = ws;
    // k1
    gen.apply(t, psi, k);
    combine(acc, stage, psi, k, mi, dt / 6.0, dt / 2.0, true);
    // k2
    gen.apply(t + 0.5 * dt, stage, k);
    combine(acc, stage, psi, k, mi, dt / 3.0, dt / 2.0, false);
    // k3
    gen.apply(t + 0.5 * dt, stage, k);
    combine(acc, stage, psi, k, mi, dt / 3.0, dt, false);
    // k4
    gen.apply(t + dt, stage, k);
    let w = mi * (dt / 6.0);
    psi.par_iter_mut().zip(acc.par_iter()).zip(k.par_iter()).for_each(|((p, a), kk)| {
        *p += a + kk * w;
    });
    let n = vecops::norm_sqr(psi);
    if !n.is_finite() {
        return Err(Error::Numerical(format!("non-finite state after RK4 step at t = {t}, dt = {dt}")));
    }
    Ok(())
}

/// With `hk = H psi_stage`: `acc (+)= wa (-i hk)` and `stage = psi + ws (-i hk)`.
#[allow(clippy::too_many_arguments)]
fn combine(
    acc: &mut [Complex64],
    stage: &mut [Complex64],
    psi: &[Complex64],
    hk: &[Complex64],
    mi: Complex64,
    wa: f64,
    ws: f64,
    first: bool,
) {
    let ca = mi * wa;
    let cs = mi * ws;
    acc.par_iter_mut()
        .zip(stage.par_iter_mut())
        .zip(psi.par_iter())
        .zip(hk.par_iter())
        .for_each(|(((a, s), p), k)| {
            if first {
                *a = k * ca;
            } else {
                *a += k * ca;
            }
            *s = p + k * cs;
        });
}

/// `H - e` for a constant reference energy `e`.
struct Shifted<'g, G: ?Sized> {
    inner: &'g G,
    shift: f64,
}

impl<G: Generator + ?Sized> Generator for Shifted<'_, G> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn apply(&self, t: f64, x: &[Complex64], y: &mut [Complex64]) {
        self.inner.apply(t, x, y);
        if self.shift != 0.0 {
            let e = self.shift;
            y.par_iter_mut().zip(x.par_iter()).for_each(|(yi, xi)| *yi -= xi * e);
        }
    }
}

/// Integrator state for repeated steps under one generator.
///
/// An optional reference energy `e` is subtracted from the generator. This
/// only changes the global phase, which [`Propagator::restore_phase`] puts
/// back exactly, but the RK4 truncation error scales with powers of
/// `(E - e) dt`, so integrating relative to the state's mean energy is much
/// more accurate for states with a narrow energy distribution.
pub struct Propagator<'g, G: Generator + ?Sized> {
    gen: Shifted<'g, G>,
    dt: f64,
    renormalize: bool,
    ws: Rk4Workspace,
    t0: f64,
    pub t: f64,
    pub steps: usize,
}

impl<'g, G: Generator + ?Sized> Propagator<'g, G> {
    /// `dt` may be negative for backward propagation.
    pub fn new(gen: &'g G, t0: f64, dt: f64, renormalize: bool) -> Self {
        Self {
            gen: Shifted { inner: gen, shift: 0.0 },
            dt,
            renormalize,
            ws: Rk4Workspace::new(gen.dim()),
            t0,
            t: t0,
            steps: 0,
        }
    }

    pub fn with_reference_energy(mut self, e: f64) -> Self {
        self.gen.shift = e;
        self
    }

    pub fn reference_energy(&self) -> f64 {
        self.gen.shift
    }

    /// Advances one step; returns the factor the state was divided by when
    /// renormalising, else 1.
    pub fn step(&mut self, psi: &mut [Complex64]) -> Result<f64> {
        rk4_step(&self.gen, psi, self.t, self.dt, &mut self.ws)?;
        self.steps += 1;
        self.t = self.t0 + self.steps as f64 * self.dt;
        if self.renormalize {
            return Ok(vecops::normalize(psi));
        }
        Ok(1.0)
    }

    pub fn run(&mut self, psi: &mut [Complex64], n: usize) -> Result<()> {
        for _ in 0..n {
            self.step(psi)?;
        }
        Ok(())
    }

    /// Multiplies by `exp(-i e (t - t0))`, turning a state integrated in the
    /// shifted frame back into the lab-frame solution.
    pub fn restore_phase(&self, psi: &mut [Complex64]) {
        if self.gen.shift != 0.0 {
            let ph = Complex64::from_polar(1.0, -self.gen.shift * (self.t - self.t0));
            psi.par_iter_mut().for_each(|x| *x *= ph);
        }
    }
}

fn reference(cfg: &EvolutionConfig, e: f64) -> f64 {
    if cfg.reference_frame {
        e
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyMoments {
    pub e_bar: f64,
    pub var_e: f64,
    /// Ground-state energy reference, when known.
    pub e0: Option<f64>,
}

impl EnergyMoments {
    pub fn delta_e(&self) -> f64 {
        self.var_e.sqrt()
    }
}

/// `<H>` and `<H^2> - <H>^2` from one matvec, normalised by `<psi|psi>`.
pub fn energy_moments(h: &SparseOperator, psi: &[Complex64]) -> EnergyMoments {
    let hpsi = h.apply(psi);
    let n = vecops::norm_sqr(psi);
    let e_bar = vecops::dot(psi, &hpsi).re / n;
    let e2 = vecops::norm_sqr(&hpsi) / n;
    EnergyMoments { e_bar, var_e: (e2 - e_bar * e_bar).max(0.0), e0: None }
}

/// `<psi|A|psi>` for a real symmetric `A`, normalised by `<psi|psi>`.
pub fn expectation(a: &SparseOperator, psi: &[Complex64]) -> f64 {
    if a.is_diagonal() {
        let d = a.diagonal();
        return vecops::weighted_dot(psi, &d, psi).re / vecops::norm_sqr(psi);
    }
    vecops::dot(psi, &a.apply(psi)).re / vecops::norm_sqr(psi)
}

#[derive(Debug, Clone)]
pub struct PreparedState {
    pub state: StateVector,
    /// Drive duration actually applied (rounded to whole steps).
    pub t_prep: f64,
    pub moments: EnergyMoments,
}

/// Drives the ground state for `drive.t_prep` and returns the final state.
pub fn prepare_driven_state(
    h: &SparseOperator,
    sector: &BasisSector,
    ground: &GroundState,
    drive: &DriveParams,
    cfg: &EvolutionConfig,
) -> Result<PreparedState> {
    cfg.validate()?;
    let gen = Driven::new(h, sector, *drive)?;
    let n = step_count(drive.t_prep, cfg.dt)?;
    let mut psi = ground.state.amplitudes().to_vec();
    let mut prop = Propagator::new(&gen, 0.0, cfg.dt, cfg.renormalize.active(drive.t_prep))
        .with_reference_energy(reference(cfg, ground.energy));
    prop.run(&mut psi, n)?;
    prop.restore_phase(&mut psi);
    let mut moments = energy_moments(h, &psi);
    moments.e0 = Some(ground.energy);
    Ok(PreparedState { state: StateVector::from_amplitudes(psi), t_prep: n as f64 * cfg.dt, moments })
}

/// Energy after driving for each time in `t_grid` (ascending, whole steps),
/// from one continuous driven trajectory.
pub fn drive_sweep(
    h: &SparseOperator,
    sector: &BasisSector,
    ground: &GroundState,
    drive: &DriveParams,
    cfg: &EvolutionConfig,
    t_grid: &[f64],
) -> Result<Vec<(f64, EnergyMoments)>> {
    cfg.validate()?;
    if t_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("drive sweep grid must be ascending".into()));
    }
    let gen = Driven::new(h, sector, *drive)?;
    let t_max = t_grid.last().copied().unwrap_or(0.0);
    let mut prop = Propagator::new(&gen, 0.0, cfg.dt, cfg.renormalize.active(t_max))
        .with_reference_energy(reference(cfg, ground.energy));
    let mut psi = ground.state.amplitudes().to_vec();
    let mut out = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let n = step_count(t, cfg.dt)?;
        prop.run(&mut psi, n - prop.steps)?;
        let mut m = energy_moments(h, &psi);
        m.e0 = Some(ground.energy);
        out.push((n as f64 * cfg.dt, m));
    }
    Ok(out)
}

/// Shortest drive time whose final mean energy reaches `target`.
///
/// The mean energy rises on average but oscillates at the drive period, so
/// the search scans forward on a coarse grid, then re-propagates the last
/// bracket step by step from a stored snapshot.
pub fn t_prep_for_energy(
    h: &SparseOperator,
    sector: &BasisSector,
    ground: &GroundState,
    drive: &DriveParams,
    cfg: &EvolutionConfig,
    target: f64,
    t_max: f64,
) -> Result<PreparedState> {
    cfg.validate()?;
    if target < ground.energy {
        return Err(Error::Domain(format!("target energy {target} lies below the ground energy {}", ground.energy)));
    }
    let gen = Driven::new(h, sector, *drive)?;
    let coarse = 10usize;
    let n_max = step_count((t_max / cfg.dt).round() * cfg.dt, cfg.dt)?;
    let renorm = cfg.renormalize.active(t_max);
    let e_ref = reference(cfg, ground.energy);
    let mut prop = Propagator::new(&gen, 0.0, cfg.dt, renorm).with_reference_energy(e_ref);
    let mut psi = ground.state.amplitudes().to_vec();
    let mut snapshot = (psi.clone(), 0usize);
    let done = |p: &Propagator<'_, Driven<'_>>, mut psi: Vec<Complex64>| -> PreparedState {
        p.restore_phase(&mut psi);
        let mut m = energy_moments(h, &psi);
        m.e0 = Some(ground.energy);
        PreparedState { state: StateVector::from_amplitudes(psi), t_prep: p.steps as f64 * cfg.dt, moments: m }
    };
    if energy_moments(h, &psi).e_bar >= target {
        return Ok(done(&prop, psi));
    }
    while prop.steps < n_max {
        let n = coarse.min(n_max - prop.steps);
        prop.run(&mut psi, n)?;
        if energy_moments(h, &psi).e_bar >= target {
            let (mut fine, start) = std::mem::take(&mut snapshot);
            let mut p = Propagator::new(&gen, 0.0, cfg.dt, renorm).with_reference_energy(e_ref);
            p.steps = start;
            p.t = start as f64 * cfg.dt;
            while p.steps < prop.steps {
                p.step(&mut fine)?;
                if energy_moments(h, &fine).e_bar >= target {
                    break;
                }
            }
            return Ok(done(&p, fine));
        }
        snapshot = (psi.clone(), prop.steps);
    }
    Err(Error::Domain(format!("mean energy did not reach {target} within t_prep <= {t_max}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub a_mean: f64,
    pub e_bar: f64,
    pub norm: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub samples: Vec<TrajectorySample>,
    pub final_state: StateVector,
}

/// Evolves under static `H` from `cfg.t_start` to `cfg.t_end`, recording
/// `<A>`, `<H>` and the norm every `record_stride` steps (and at both ends).
pub fn evolve(h: &SparseOperator, a: &SparseOperator, psi: &StateVector, cfg: &EvolutionConfig) -> Result<Trajectory> {
    cfg.validate()?;
    psi.check_dim(h.dim())?;
    let duration = cfg.t_end - cfg.t_start;
    let n = step_count(duration, cfg.dt)?;
    let gen = Static(h);
    let mut amps = psi.amplitudes().to_vec();
    let e_ref = reference(cfg, energy_moments(h, &amps).e_bar);
    let mut prop =
        Propagator::new(&gen, cfg.t_start, cfg.dt, cfg.renormalize.active(duration)).with_reference_energy(e_ref);
    let sample = |t: f64, v: &[Complex64]| TrajectorySample {
        t,
        a_mean: expectation(a, v),
        e_bar: energy_moments(h, v).e_bar,
        norm: vecops::norm(v),
    };
    let mut samples = vec![sample(cfg.t_start, &amps)];
    for k in 1..=n {
        prop.step(&mut amps)?;
        if k % cfg.record_stride == 0 || k == n {
            samples.push(sample(cfg.t_start + k as f64 * cfg.dt, &amps));
        }
    }
    prop.restore_phase(&mut amps);
    Ok(Trajectory { samples, final_state: StateVector::from_amplitudes(amps) })
}

/// Advances a state under static `H` for `duration` without recording.
pub fn relax(h: &SparseOperator, psi: &mut StateVector, duration: f64, cfg: &EvolutionConfig) -> Result<()> {
    psi.check_dim(h.dim())?;
    let n = step_count(duration, cfg.dt)?;
    let gen = Static(h);
    let e_ref = reference(cfg, energy_moments(h, psi.amplitudes()).e_bar);
    let mut prop = Propagator::new(&gen, 0.0, cfg.dt, cfg.renormalize.active(duration)).with_reference_energy(e_ref);
    prop.run(psi.amplitudes_mut(), n)?;
    prop.restore_phase(psi.amplitudes_mut());
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeAverage {
    pub mean: f64,
    pub samples: usize,
    pub window: f64,
    /// Set when the window is shorter than [`MIN_AVERAGE_WINDOW`].
    pub warning: Option<String>,
}

/// Mean of `<A(t)>` sampled every `record_stride` steps over a window of
/// length `window` starting from `psi`.
pub fn time_average_observable(
    h: &SparseOperator,
    psi: &StateVector,
    a: &SparseOperator,
    window: f64,
    cfg: &EvolutionConfig,
) -> Result<TimeAverage> {
    let run = EvolutionConfig { t_start: 0.0, t_end: window, ..*cfg };
    let traj = evolve(h, a, psi, &run)?;
    let values: Vec<f64> = traj.samples.iter().map(|s| s.a_mean).collect();
    let warning = (window < MIN_AVERAGE_WINDOW)
        .then(|| format!("averaging window {window} is shorter than {MIN_AVERAGE_WINDOW}"));
    Ok(TimeAverage { mean: mean(&values), samples: values.len(), window, warning })
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSeries {
    /// Non-negative lags, starting at 0.
    pub tau: Vec<f64>,
    pub values: Vec<Complex64>,
    /// Absolute time of the first operator insertion.
    pub t_reference: f64,
    /// `<A>` at the reference time.
    pub a_reference: f64,
    /// Time-averaged `<A>` over the correlation window.
    pub mean_a: f64,
}

impl CorrelationSeries {
    /// Lags `-tau_max..=tau_max` with `C(-tau) = conj C(tau)`.
    pub fn two_sided(&self) -> (Vec<f64>, Vec<Complex64>) {
        let n = self.tau.len();
        let mut tau = Vec::with_capacity(2 * n - 1);
        let mut vals = Vec::with_capacity(2 * n - 1);
        for k in (1..n).rev() {
            tau.push(-self.tau[k]);
            vals.push(self.values[k].conj());
        }
        tau.extend_from_slice(&self.tau);
        vals.extend_from_slice(&self.values);
        (tau, vals)
    }

    pub fn spacing(&self) -> f64 {
        if self.tau.len() < 2 {
            0.0
        } else {
            self.tau[1] - self.tau[0]
        }
    }
}

/// Connected `C(tau) = <A(t+tau) A(t)> - <A(t+tau)><A(t)>` for `tau` in
/// `0..=tau_max` sampled every `stride` steps.
///
/// `psi` is the state at the reference time `t_reference`. With `backward`
/// the lags are negative and obtained by genuine backward propagation, which
/// is only needed to check the conjugate symmetry used for negative lags.
pub fn two_point_correlation(
    h: &SparseOperator,
    psi: &StateVector,
    a: &SparseOperator,
    t_reference: f64,
    tau_max: f64,
    stride: usize,
    cfg: &EvolutionConfig,
    backward: bool,
) -> Result<CorrelationSeries> {
    cfg.validate()?;
    psi.check_dim(h.dim())?;
    if stride == 0 {
        return Err(Error::InvalidParameter("stride must be positive".into()));
    }
    let n = step_count(tau_max, cfg.dt)?;
    let gen = Static(h);
    let dt = if backward { -cfg.dt } else { cfg.dt };
    let renorm = cfg.renormalize.active(tau_max);
    let mut psi_t = psi.amplitudes().to_vec();
    let nrm = vecops::normalize(&mut psi_t);
    if !(nrm > 0.0) {
        return Err(Error::Domain("correlation needs a non-zero state".into()));
    }
    let mut phi = a.apply(&psi_t);
    let a_ref = vecops::dot(&psi_t, &phi).re;
    // both branches share the reference energy, so the frame phase cancels in C
    let e_ref = reference(cfg, energy_moments(h, &psi_t).e_bar);
    let mut pa = Propagator::new(&gen, t_reference, dt, false).with_reference_energy(e_ref);
    let mut pb = Propagator::new(&gen, t_reference, dt, false).with_reference_energy(e_ref);
    let mut tau = Vec::new();
    let mut values = Vec::new();
    let mut a_path = Vec::new();
    let mut record = |k: usize, psi_t: &[Complex64], phi: &[Complex64]| {
        let apsi = a.apply(psi_t);
        let norm = vecops::norm_sqr(psi_t);
        let a_now = vecops::dot(psi_t, &apsi).re / norm;
        let corr = vecops::dot(&apsi, phi) / norm - a_now * a_ref;
        tau.push(k as f64 * dt);
        values.push(corr);
        a_path.push(a_now);
    };
    record(0, &psi_t, &phi);
    for k in 1..=n {
        let (ra, rb) = join(|| pa.step(&mut psi_t), || pb.step(&mut phi));
        ra?;
        rb?;
        if renorm {
            // the map is linear, so scale both branches by the same factor
            let s = vecops::normalize(&mut psi_t);
            vecops::scale(&mut phi, 1.0 / s);
        }
        if k % stride == 0 {
            record(k, &psi_t, &phi);
        }
    }
    Ok(CorrelationSeries { tau, values, t_reference, a_reference: a_ref, mean_a: mean(&a_path) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense;
    use crate::operators::{build_probe_observable, build_static_hamiltonian, ground_state, ChainParams, ProbeProfile};

    fn chain(l: usize) -> (BasisSector, SparseOperator) {
        let s = BasisSector::half_filling(l).unwrap();
        let h = build_static_hamiltonian(&ChainParams::new(l), &s).unwrap();
        (s, h)
    }

    #[test]
    fn zero_hamiltonian_leaves_state_unchanged() {
        let h = SparseOperator::from_diagonal(&[0.0; 4]);
        let gen = Static(&h);
        let mut psi = vec![Complex64::new(0.5, 0.5); 4];
        let before = psi.clone();
        let mut p = Propagator::new(&gen, 0.0, 0.01, false);
        p.run(&mut psi, 100).unwrap();
        assert_eq!(psi, before);
    }

    #[test]
    fn two_level_rotation_per_step() {
        // L=2, N=1: H = [[d, 2t], [2t, -d]] in the {01, 10} basis
        let s = BasisSector::enumerate(2, 1).unwrap();
        let p = ChainParams { sites: 2, ..ChainParams::new(2) };
        let h = build_static_hamiltonian(&p, &s).unwrap();
        let (a, b, c) = (h.entry(0, 0), h.entry(0, 1), h.entry(1, 1));
        // closed form: exp(-i H t) = e^{-i m t}[cos(wt) - i sin(wt) (H - m)/w]
        let m = 0.5 * (a + c);
        let dz = 0.5 * (a - c);
        let w = (dz * dz + b * b).sqrt();
        let dt = 0.002;
        let exact = |t: f64, x: [Complex64; 2]| -> [Complex64; 2] {
            let ph = Complex64::from_polar(1.0, -m * t);
            let (co, si) = ((w * t).cos(), (w * t).sin());
            let i = Complex64::new(0.0, 1.0);
            [
                ph * (x[0] * (co - i * si * dz / w) - i * si * b / w * x[1]),
                ph * (x[1] * (co + i * si * dz / w) - i * si * b / w * x[0]),
            ]
        };
        let gen = Static(&h);
        let mut psi = vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];
        let mut prop = Propagator::new(&gen, 0.0, dt, false);
        for _ in 0..500 {
            let expect = exact(dt, [psi[0], psi[1]]);
            prop.step(&mut psi).unwrap();
            assert!((psi[0] - expect[0]).norm() < 1e-10);
            assert!((psi[1] - expect[1]).norm() < 1e-10);
        }
    }

    #[test]
    fn eigenstate_is_stationary() {
        let (_, h) = chain(8);
        let gs = ground_state(&h).unwrap();
        let cfg = EvolutionConfig { t_end: 5.0, renormalize: Renormalize::Always, ..Default::default() };
        let a = SparseOperator::from_diagonal(&vec![1.0; h.dim()]);
        let tr = evolve(&h, &a, &gs.state, &cfg).unwrap();
        let ov = gs.state.overlap(&tr.final_state).norm();
        assert!((ov - 1.0).abs() < 1e-8);
        let m = energy_moments(&h, tr.final_state.amplitudes());
        assert!(m.var_e < 1e-9);
    }

    #[test]
    fn two_eigenstate_superposition_variance() {
        let (_, h) = chain(6);
        let e = dense::symmetric_eigen(&h.to_dense()).unwrap();
        let (i, j) = (3usize, 7usize);
        let amps: Vec<Complex64> = (0..h.dim())
            .map(|k| Complex64::new((e.vectors[(k, i)] + e.vectors[(k, j)]) / 2f64.sqrt(), 0.0))
            .collect();
        let m = energy_moments(&h, &amps);
        let eps = 0.5 * (e.values[j] - e.values[i]);
        assert!((m.var_e - eps * eps).abs() < 1e-9);
        assert!((m.e_bar - 0.5 * (e.values[i] + e.values[j])).abs() < 1e-12);
    }

    #[test]
    fn zero_amplitude_drive_keeps_ground_energy() {
        let (s, h) = chain(8);
        let gs = ground_state(&h).unwrap();
        let drive = DriveParams { amplitude: 0.0, ..DriveParams::new(8, 3.0) };
        let p = prepare_driven_state(&h, &s, &gs, &drive, &EvolutionConfig::default()).unwrap();
        assert!((p.moments.e_bar - gs.energy).abs() < 1e-8);
        let none = DriveParams { t_prep: 0.0, ..DriveParams::new(8, 0.0) };
        let p0 = prepare_driven_state(&h, &s, &gs, &none, &EvolutionConfig::default()).unwrap();
        assert_eq!(p0.moments.e_bar, energy_moments(&h, gs.state.amplitudes()).e_bar);
    }

    #[test]
    fn drive_heats_and_energy_search_lands_on_target() {
        let (s, h) = chain(8);
        let gs = ground_state(&h).unwrap();
        let drive = DriveParams::new(8, 0.0);
        let cfg = EvolutionConfig::default();
        let sweep = drive_sweep(&h, &s, &gs, &drive, &cfg, &[0.0, 5.0, 10.0, 20.0]).unwrap();
        assert!(sweep.last().unwrap().1.e_bar > sweep[0].1.e_bar + 1.0);
        let target = gs.energy + 3.0;
        let p = t_prep_for_energy(&h, &s, &gs, &drive, &cfg, target, 50.0).unwrap();
        assert!(p.moments.e_bar >= target);
        let before = prepare_driven_state(&h, &s, &gs, &DriveParams { t_prep: p.t_prep - cfg.dt, ..drive }, &cfg).unwrap();
        assert!(before.moments.e_bar < target);
    }

    #[test]
    fn correlation_of_identity_vanishes_and_variance_at_zero_lag() {
        let (s, h) = chain(8);
        let gs = ground_state(&h).unwrap();
        let mut psi = gs.state.clone();
        // a non-stationary state: add some structure
        psi.amplitudes_mut()[0] += Complex64::new(0.3, 0.1);
        psi.renormalize();
        let cfg = EvolutionConfig::default();
        let id = build_probe_observable(&ProbeProfile::uniform(8).unwrap(), &s).unwrap();
        let c = two_point_correlation(&h, &psi, &id, 0.0, 1.0, 10, &cfg, false).unwrap();
        assert!(c.values.iter().all(|v| v.norm() < 1e-12));
        let a = build_probe_observable(&ProbeProfile::gaussian(8, 5).unwrap(), &s).unwrap();
        let c = two_point_correlation(&h, &psi, &a, 0.0, 1.0, 10, &cfg, false).unwrap();
        let var = expectation(&SparseOperator::from_diagonal(&a.diagonal().iter().map(|x| x * x).collect::<Vec<_>>()), psi.amplitudes())
            - expectation(&a, psi.amplitudes()).powi(2);
        assert!(c.values[0].im.abs() < 1e-14);
        assert!((c.values[0].re - var).abs() < 1e-12);
        assert!(c.values[0].re >= 0.0);
    }

    #[test]
    fn time_average_of_eigenstate_and_short_window_warning() {
        let (s, h) = chain(8);
        let gs = ground_state(&h).unwrap();
        let a = build_probe_observable(&ProbeProfile::gaussian(8, 5).unwrap(), &s).unwrap();
        let cfg = EvolutionConfig::default();
        let avg = time_average_observable(&h, &gs.state, &a, 2.0, &cfg).unwrap();
        assert!((avg.mean - expectation(&a, gs.state.amplitudes())).abs() < 1e-9);
        assert!(avg.warning.is_some());
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = EvolutionConfig { dt: 0.1, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(Error::Validation(_))));
        assert!(step_count(0.015, 0.01).is_err());
        assert_eq!(step_count(0.3, 0.01).unwrap(), 30);
    }
}

//! Run configuration: a TOML document with one table per stage. Every key
//! has a default, so a file only lists what it changes.
//!
//! ```toml
//! seed = 7
//! [chain]
//! sites = 10
//! [preparation]
//! t_prep = [2.0, 4.0]
//! [decoherence]
//! couplings = [0.2]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hydro::HydroParams;
use crate::io::sha256_hex;
use crate::kpm::KpmConfig;
use crate::operators::{probe_center, ChainParams, DriveParams, ProbeProfile};
use crate::propagator::EvolutionConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriveSection {
    pub amplitude: f64,
    pub omega0: f64,
    /// Driven site; defaults to the probe centre.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub site: Option<usize>,
}

impl Default for DriveSection {
    fn default() -> Self {
        Self { amplitude: 2.0, omega0: 8.0, site: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    #[default]
    Gaussian,
    SingleSite,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSection {
    pub kind: ProbeKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub center: Option<usize>,
}

/// Temperatures are set through the drive time, either directly or by a
/// target mean energy that fixes the shortest drive reaching it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreparationSection {
    pub t_prep: Vec<f64>,
    pub target_energy: Vec<f64>,
    /// Longest drive tried when targeting an energy.
    pub t_max: f64,
    /// Free evolution between the drive and the first measurement.
    pub relax: f64,
}

impl Default for PreparationSection {
    fn default() -> Self {
        Self { t_prep: vec![4.0], target_energy: Vec::new(), t_max: 200.0, relax: 20.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrelationSection {
    pub tau_star: f64,
    /// RK4 steps between stored lags.
    pub stride: usize,
    pub omega_max: f64,
    pub omega_step: f64,
    /// Half-width of the frequency window for the temperature fit.
    pub beta_fit_omega: f64,
}

impl Default for CorrelationSection {
    fn default() -> Self {
        Self { tau_star: 10.0, stride: 5, omega_max: 25.0, omega_step: 0.01, beta_fit_omega: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EthSection {
    pub enabled: bool,
    pub omega_bin: f64,
    pub omega_max: f64,
    pub window: f64,
    pub central_fraction: f64,
    pub beta_tolerance: f64,
}

impl Default for EthSection {
    fn default() -> Self {
        Self { enabled: false, omega_bin: 0.2, omega_max: 10.0, window: 0.02, central_fraction: 0.1, beta_tolerance: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoherenceSection {
    pub couplings: Vec<f64>,
    pub duration: f64,
    pub record_stride: usize,
}

impl Default for DecoherenceSection {
    fn default() -> Self {
        Self { couplings: vec![0.2], duration: 100.0, record_stride: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetrologySection {
    /// Finite-difference step and minimum spacing of the temperature grid.
    pub delta_t: f64,
    pub repetitions: u64,
    /// Interrogation-time grid `(0, t_max]` with `time_points` samples.
    pub t_max: f64,
    pub time_points: usize,
}

impl Default for MetrologySection {
    fn default() -> Self {
        Self { delta_t: 0.2, repetitions: 500, t_max: 5000.0, time_points: 5000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HydroSection {
    pub dim: usize,
    pub diffusion: f64,
    pub chi0: f64,
    pub ell: f64,
    pub length: f64,
    pub g: f64,
    pub temperature: f64,
    /// Whether the finite-size rate sweep runs (d < 3 only).
    pub sweep: bool,
    pub sweep_lengths: Vec<f64>,
    /// Points per decade on the crossover time grid.
    pub points_per_decade: usize,
}

impl Default for HydroSection {
    fn default() -> Self {
        let p = HydroParams::default();
        Self {
            dim: p.dim,
            diffusion: p.diffusion,
            chi0: p.chi0,
            ell: p.ell,
            length: p.length,
            g: p.g,
            temperature: p.temperature,
            sweep: true,
            sweep_lengths: vec![1e3, 2e3, 4e3, 8e3, 16e3],
            points_per_decade: 20,
        }
    }
}

impl HydroSection {
    pub fn params(&self) -> HydroParams {
        HydroParams {
            dim: self.dim,
            diffusion: self.diffusion,
            chi0: self.chi0,
            ell: self.ell,
            length: self.length,
            g: self.g,
            temperature: self.temperature,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub output: PathBuf,
    pub chain: ChainParams,
    pub drive: DriveSection,
    pub probe: ProbeSection,
    pub preparation: PreparationSection,
    pub evolution: EvolutionConfig,
    pub correlation: CorrelationSection,
    pub kpm: KpmConfig,
    pub eth: EthSection,
    pub decoherence: DecoherenceSection,
    pub metrology: MetrologySection,
    pub hydro: HydroSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            output: PathBuf::from("runs"),
            chain: ChainParams::default(),
            drive: DriveSection::default(),
            probe: ProbeSection::default(),
            preparation: PreparationSection::default(),
            evolution: EvolutionConfig::default(),
            correlation: CorrelationSection::default(),
            kpm: KpmConfig::default(),
            eth: EthSection::default(),
            decoherence: DecoherenceSection::default(),
            metrology: MetrologySection::default(),
            hydro: HydroSection::default(),
        }
    }
}

fn collect(errs: &mut Vec<String>, section: &str, r: Result<impl Sized>) {
    match r {
        Ok(_) => {}
        Err(Error::Validation(v)) => errs.extend(v.into_iter().map(|m| format!("{section}: {m}"))),
        Err(e) => errs.push(format!("{section}: {e}")),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::parse("config", e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))
    }

    /// Canonical TOML text; equal configs give equal text.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::parse("config", e))
    }

    pub fn drive(&self) -> DriveParams {
        DriveParams {
            amplitude: self.drive.amplitude,
            omega0: self.drive.omega0,
            site: self.drive.site.unwrap_or_else(|| probe_center(self.chain.sites)),
            t_prep: 0.0,
        }
    }

    pub fn probe(&self) -> Result<ProbeProfile> {
        let l = self.chain.sites;
        let c = self.probe.center.unwrap_or_else(|| probe_center(l));
        match self.probe.kind {
            ProbeKind::Gaussian => ProbeProfile::gaussian(l, c),
            ProbeKind::SingleSite => ProbeProfile::single_site(l, c),
            ProbeKind::Uniform => ProbeProfile::uniform(l),
        }
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| {
            Error::InvalidParameter("a seed is required: set `seed` in the config or pass --seed".into())
        })
    }

    /// Every violation in one pass, each prefixed by its section.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.seed.is_none() {
            errs.push("seed: required for reproducible runs".into());
        }
        collect(&mut errs, "chain", self.chain.validate());
        if self.chain.validate().is_ok() {
            collect(&mut errs, "drive", self.drive().validate(self.chain.sites));
            collect(&mut errs, "probe", self.probe());
        }
        collect(&mut errs, "evolution", self.evolution.validate());
        collect(&mut errs, "kpm", self.kpm.validate());
        collect(&mut errs, "hydro", self.hydro.params().validate());

        let p = &self.preparation;
        if p.t_prep.is_empty() && p.target_energy.is_empty() {
            errs.push("preparation: give at least one t_prep or target_energy".into());
        }
        if p.t_prep.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
            errs.push("preparation: t_prep values must be non-negative".into());
        }
        if p.target_energy.iter().any(|e| !e.is_finite()) {
            errs.push("preparation: target energies must be finite".into());
        }
        if !(p.t_max > 0.0) || !(p.relax >= 0.0) {
            errs.push("preparation: t_max must be positive and relax non-negative".into());
        }
        let c = &self.correlation;
        if !(c.tau_star > 0.0) || c.stride == 0 {
            errs.push("correlation: tau_star must be positive and stride at least 1".into());
        }
        if !(c.omega_step > 0.0 && c.omega_max > c.omega_step) {
            errs.push("correlation: need 0 < omega_step < omega_max".into());
        }
        if !(c.beta_fit_omega > 0.0 && c.beta_fit_omega <= c.omega_max) {
            errs.push("correlation: beta_fit_omega must lie in (0, omega_max]".into());
        }
        if c.stride as f64 * self.evolution.dt > crate::spectral::MAX_TAU_SPACING + 1e-12 {
            errs.push(format!(
                "correlation: lag spacing stride * dt exceeds {}",
                crate::spectral::MAX_TAU_SPACING
            ));
        }
        let d = &self.decoherence;
        if d.couplings.is_empty() || d.couplings.iter().any(|g| !(*g >= 0.0 && g.is_finite())) {
            errs.push("decoherence: couplings must be a non-empty list of non-negative numbers".into());
        }
        if !(d.duration > 0.0) || d.record_stride == 0 {
            errs.push("decoherence: duration must be positive and record_stride at least 1".into());
        }
        let m = &self.metrology;
        if !(m.delta_t > 0.0) || m.repetitions == 0 || !(m.t_max > 0.0) || m.time_points < 3 {
            errs.push("metrology: need delta_t > 0, repetitions >= 1, t_max > 0 and time_points >= 3".into());
        }
        let e = &self.eth;
        if !(e.omega_bin > 0.0 && e.omega_max > e.omega_bin && e.window > 0.0) {
            errs.push("eth: need positive window and 0 < omega_bin < omega_max".into());
        }
        if !(e.central_fraction > 0.0 && e.central_fraction <= 1.0 && e.beta_tolerance > 0.0 && e.beta_tolerance < 1.0) {
            errs.push("eth: central_fraction must lie in (0, 1] and beta_tolerance in (0, 1)".into());
        }
        if self.hydro.sweep_lengths.len() < 2 || self.hydro.points_per_decade < 2 {
            errs.push("hydro: need at least two sweep lengths and two points per decade".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }

    /// Canonical text without the output directory, which does not change
    /// what a run computes.
    fn identity_text(&self) -> Result<String> {
        Self { output: PathBuf::new(), ..self.clone() }.to_toml()
    }

    /// SHA-256 of the canonical text, output directory excluded.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(self.identity_text()?.as_bytes()))
    }

    /// Short identifier from the configuration and seed.
    pub fn run_id(&self) -> Result<String> {
        let seed = self.seed()?;
        let text = format!("{}\nseed={seed}", self.identity_text()?);
        Ok(sha256_hex(text.as_bytes())[..12].to_string())
    }
}

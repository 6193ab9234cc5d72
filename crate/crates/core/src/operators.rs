//! Chain Hamiltonian, drive and probe observables in the sector basis.
//!
//! Pauli normalisation throughout: `sx sx + sy sy` exchanges neighbouring
//! `10 <-> 01` with amplitude 2, and `sz` has eigenvalues +-1.

use serde::{Deserialize, Serialize};

use crate::dense;
use crate::error::{Error, Result};
use crate::hilbert::{BasisSector, StateVector};
use crate::lanczos::{self, LanczosConfig};
use crate::sparse::SparseOperator;

/// Sector dimension above which the ground state is found iteratively.
pub const DENSE_GROUND_STATE_MAX_DIM: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChainParams {
    pub sites: usize,
    /// Exchange energy; sets the unit of energy.
    pub j: f64,
    /// Anisotropy of the `sz sz` coupling.
    pub delta: f64,
    /// Staggered field on odd sites.
    pub h: f64,
    /// Extra field on site 1 that breaks translation invariance; zero disables it.
    pub delta_h: f64,
}

impl Default for ChainParams {
    fn default() -> Self {
        Self::new(12)
    }
}

impl ChainParams {
    pub fn new(sites: usize) -> Self {
        Self { sites, j: 1.0, delta: 0.55, h: 1.0, delta_h: 0.1 }
    }

    pub fn without_site_one_field(mut self) -> Self {
        self.delta_h = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.j > 0.0 && self.j.is_finite()) {
            errs.push(format!("exchange J must be positive, got {}", self.j));
        }
        if self.sites < 2 || self.sites % 2 != 0 {
            errs.push(format!("chain length must be even and at least 2, got {}", self.sites));
        }
        for (name, v) in [("delta", self.delta), ("h", self.h), ("delta_h", self.delta_h)] {
            if !v.is_finite() {
                errs.push(format!("{name} must be finite"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveParams {
    pub amplitude: f64,
    pub omega0: f64,
    /// Driven site, 1-based and odd.
    pub site: usize,
    pub t_prep: f64,
}

impl DriveParams {
    pub fn new(sites: usize, t_prep: f64) -> Self {
        Self { amplitude: 2.0, omega0: 8.0, site: probe_center(sites), t_prep }
    }

    pub fn validate(&self, sites: usize) -> Result<()> {
        let mut errs = Vec::new();
        if self.site % 2 == 0 || self.site == 0 || self.site > sites {
            errs.push(format!("driven site must be odd and within 1..={sites}, got {}", self.site));
        }
        if !(self.t_prep >= 0.0 && self.t_prep.is_finite()) {
            errs.push(format!("t_prep must be non-negative, got {}", self.t_prep));
        }
        if !(self.amplitude.is_finite() && self.omega0.is_finite()) {
            errs.push("drive amplitude and frequency must be finite".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }
}

/// `a sin(omega0 t)`, the coefficient of `sz` on the driven site.
pub fn drive_coefficient(t: f64, drive: &DriveParams) -> f64 {
    drive.amplitude * (drive.omega0 * t).sin()
}

/// Probe centre: `L/2` when that is odd, else `L/2 + 1`. Always odd.
pub fn probe_center(sites: usize) -> usize {
    let half = sites / 2;
    if half % 2 == 1 {
        half
    } else {
        half + 1
    }
}

/// Site weights of the probe observable `sum_j u_j sz_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeProfile {
    pub center: usize,
    /// `weights[j - 1]` is the weight of site `j`.
    pub weights: Vec<f64>,
}

/// Gaussian weights below this value are dropped.
pub const PROBE_CUTOFF: f64 = 1e-3;

impl ProbeProfile {
    /// `u_j ~ exp(-(j - center)^2)` with ring distance, truncated below
    /// [`PROBE_CUTOFF`] and normalised to unit sum.
    pub fn gaussian(sites: usize, center: usize) -> Result<Self> {
        Self::check_site(sites, center)?;
        let mut weights = vec![0.0; sites];
        for j in 1..=sites {
            let d = j.abs_diff(center);
            let d = d.min(sites - d) as f64;
            let w = (-d * d).exp();
            if w >= PROBE_CUTOFF {
                weights[j - 1] += w;
            }
        }
        Self::normalised(center, weights)
    }

    pub fn single_site(sites: usize, site: usize) -> Result<Self> {
        Self::check_site(sites, site)?;
        let mut weights = vec![0.0; sites];
        weights[site - 1] = 1.0;
        Ok(Self { center: site, weights })
    }

    pub fn uniform(sites: usize) -> Result<Self> {
        Self::normalised(1, vec![1.0; sites])
    }

    fn check_site(sites: usize, site: usize) -> Result<()> {
        if site == 0 || site > sites {
            return Err(Error::InvalidParameter(format!("site {site} outside 1..={sites}")));
        }
        Ok(())
    }

    fn normalised(center: usize, mut weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidParameter("probe weights must be non-negative".into()));
        }
        let s: f64 = weights.iter().sum();
        if !(s > 0.0) {
            return Err(Error::InvalidParameter("probe weights sum to zero".into()));
        }
        weights.iter_mut().for_each(|w| *w /= s);
        Ok(Self { center, weights })
    }

    pub fn sites(&self) -> usize {
        self.weights.len()
    }

    pub fn support(&self) -> Vec<usize> {
        (1..=self.sites()).filter(|&j| self.weights[j - 1] > 0.0).collect()
    }
}

fn check_sites(expected: usize, sector: &BasisSector) -> Result<()> {
    if sector.sites() != expected {
        return Err(Error::DimensionMismatch { expected, found: sector.sites() });
    }
    Ok(())
}

/// Static chain Hamiltonian with periodic boundaries.
pub fn build_static_hamiltonian(params: &ChainParams, sector: &BasisSector) -> Result<SparseOperator> {
    params.validate()?;
    check_sites(params.sites, sector)?;
    let l = params.sites;
    let hop = 2.0 * params.j;
    let zz = params.j * params.delta;
    let rows = sector
        .configs()
        .iter()
        .map(|&mask| {
            let spin = |site: usize| if mask >> (site - 1) & 1 == 1 { 1.0 } else { -1.0 };
            let mut diag = 0.0;
            let mut row = Vec::with_capacity(l + 1);
            for j in 1..=l {
                let k = j % l + 1;
                diag += zz * spin(j) * spin(k);
                if spin(j) != spin(k) {
                    let flipped = mask ^ (1 << (j - 1)) ^ (1 << (k - 1));
                    row.push((sector.rank_unchecked(flipped) as u32, hop));
                }
                if j % 2 == 1 {
                    diag += params.h * spin(j);
                }
            }
            diag += params.delta_h * spin(1);
            row.push((sector.rank_unchecked(mask) as u32, diag));
            row
        })
        .collect();
    SparseOperator::from_rows(sector.dim(), rows)
}

/// Diagonal of `sum_j w_j sz_j` in the configuration basis.
pub fn weighted_sz_diagonal(weights: &[f64], sector: &BasisSector) -> Result<Vec<f64>> {
    check_sites(weights.len(), sector)?;
    Ok(sector
        .configs()
        .iter()
        .map(|&mask| {
            weights
                .iter()
                .enumerate()
                .map(|(b, w)| if mask >> b & 1 == 1 { *w } else { -*w })
                .sum()
        })
        .collect())
}

/// `sz` on 1-based `site`.
pub fn build_sigma_z(site: usize, sector: &BasisSector) -> Result<SparseOperator> {
    let p = ProbeProfile::single_site(sector.sites(), site)?;
    build_probe_observable(&p, sector)
}

/// The probe observable `sum_j u_j sz_j`, diagonal in the configuration basis.
pub fn build_probe_observable(profile: &ProbeProfile, sector: &BasisSector) -> Result<SparseOperator> {
    Ok(SparseOperator::from_diagonal(&weighted_sz_diagonal(&profile.weights, sector)?))
}

#[derive(Debug, Clone)]
pub struct GroundState {
    pub energy: f64,
    pub state: StateVector,
    pub residual: f64,
}

/// Lowest eigenpair: dense solve up to [`DENSE_GROUND_STATE_MAX_DIM`], Lanczos above.
pub fn ground_state(h: &SparseOperator) -> Result<GroundState> {
    let dim = h.dim();
    let bound = 1e-8 * h.max_abs() * (dim as f64).sqrt();
    let (energy, vector) = if dim <= DENSE_GROUND_STATE_MAX_DIM {
        let e = dense::symmetric_eigen(&h.to_dense())?;
        (e.values[0], e.vectors.col_as_slice(0).to_vec())
    } else {
        let cfg = LanczosConfig { tol: 0.1 * bound, ..Default::default() };
        let p = lanczos::lowest(h, &cfg)?;
        (p.value, p.vector)
    };
    let hv = h.apply(&vector);
    let residual = hv.iter().zip(&vector).map(|(a, b)| (a - energy * b).powi(2)).sum::<f64>().sqrt();
    if residual > bound {
        return Err(Error::Numerical(format!(
            "ground state residual {residual:.3e} exceeds {bound:.3e}"
        )));
    }
    Ok(GroundState { energy, state: StateVector::normalized(StateVector::from_real(&vector).into_amplitudes())?, residual })
}

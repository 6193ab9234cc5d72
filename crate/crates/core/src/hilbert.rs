//! Fixed-magnetisation sectors of an L-site spin-1/2 chain.
//!
//! Site `j` (1-based) is bit `j - 1` of a configuration mask; a set bit means
//! sigma^z = +1 on that site.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::vecops;

/// Largest chain handled; beyond this the sector does not fit in memory for
/// the dense parts of the toolkit.
pub const MAX_SITES: usize = 20;

/// Enumerated basis of all L-bit masks with exactly N set bits.
#[derive(Debug, Clone)]
pub struct BasisSector {
    sites: usize,
    filling: usize,
    configs: Vec<u32>,
    /// `binom[n][k]` for n <= sites, used by the combinatorial rank.
    binom: Vec<Vec<usize>>,
}

/// Pascal's triangle up to row `n`.
fn pascal(n: usize) -> Vec<Vec<usize>> {
    let mut rows = vec![vec![0usize; n + 2]; n + 1];
    for i in 0..=n {
        rows[i][0] = 1;
        for k in 1..=i {
            rows[i][k] = rows[i - 1][k - 1] + rows[i - 1][k];
        }
    }
    rows
}

/// Next larger integer with the same popcount (Gosper's hack).
fn next_same_popcount(x: u32) -> u32 {
    let c = x & x.wrapping_neg();
    let r = x + c;
    (((r ^ x) >> 2) / c) | r
}

impl BasisSector {
    /// Enumerates the sector with `filling` up-spins on `sites` sites, masks
    /// in ascending numeric order.
    pub fn enumerate(sites: usize, filling: usize) -> Result<Self> {
        if sites == 0 {
            return Err(Error::InvalidParameter("chain must have at least one site".into()));
        }
        if sites > MAX_SITES {
            return Err(Error::Resource(format!(
                "L = {sites} exceeds the supported maximum of {MAX_SITES} sites"
            )));
        }
        if filling > sites {
            return Err(Error::InvalidParameter(format!(
                "filling N = {filling} exceeds site count L = {sites}"
            )));
        }
        let binom = pascal(sites);
        let dim = binom[sites][filling];
        let mut configs = Vec::with_capacity(dim);
        if filling == 0 {
            configs.push(0);
        } else {
            let limit = 1u64 << sites;
            let mut mask: u32 = (1u32 << filling) - 1;
            while (mask as u64) < limit {
                configs.push(mask);
                if configs.len() == dim {
                    break;
                }
                mask = next_same_popcount(mask);
            }
        }
        debug_assert_eq!(configs.len(), dim);
        Ok(Self { sites, filling, configs, binom })
    }

    /// The N = L/2 sector; L must be even.
    pub fn half_filling(sites: usize) -> Result<Self> {
        if sites % 2 != 0 {
            return Err(Error::InvalidParameter(format!(
                "half filling requires an even number of sites, got L = {sites}"
            )));
        }
        Self::enumerate(sites, sites / 2)
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn filling(&self) -> usize {
        self.filling
    }

    pub fn dim(&self) -> usize {
        self.configs.len()
    }

    pub fn configs(&self) -> &[u32] {
        &self.configs
    }

    pub fn config(&self, index: usize) -> u32 {
        self.configs[index]
    }

    /// Ordinal of `mask`. Uses the combinatorial number system, whose
    /// colexicographic order coincides with ascending mask order at fixed
    /// popcount, so the lookup is O(N) with no table.
    pub fn index_of(&self, mask: u32) -> Result<usize> {
        if self.sites < 32 && mask >> self.sites != 0 {
            return Err(Error::Domain(format!(
                "mask {mask:#b} has bits beyond site {}",
                self.sites
            )));
        }
        if mask.count_ones() as usize != self.filling {
            return Err(Error::Domain(format!(
                "mask {mask:#b} has {} set bits, sector requires {}",
                mask.count_ones(),
                self.filling
            )));
        }
        Ok(self.rank_unchecked(mask))
    }

    #[inline]
    pub(crate) fn rank_unchecked(&self, mask: u32) -> usize {
        let mut rank = 0;
        let mut m = mask;
        let mut k = 1;
        while m != 0 {
            let pos = m.trailing_zeros() as usize;
            rank += self.binom[pos][k];
            k += 1;
            m &= m - 1;
        }
        rank
    }

    /// sigma^z eigenvalue (+1 or -1) of 1-based `site` in configuration `index`.
    #[inline]
    pub fn spin(&self, index: usize, site: usize) -> f64 {
        if self.configs[index] >> (site - 1) & 1 == 1 {
            1.0
        } else {
            -1.0
        }
    }
}

/// Spatial reflection `j -> L + 2 - j` (mod L) that fixes sites 1 and L/2 + 1.
///
/// It commutes with the staggered-field chain including the extra field on
/// site 1, so it splits the half-filled sector into even and odd blocks.
#[derive(Debug, Clone, Copy)]
pub struct Reflection {
    sites: usize,
}

impl Reflection {
    pub fn new(sites: usize) -> Self {
        Self { sites }
    }

    /// Image of 1-based `site`.
    pub fn site_image(&self, site: usize) -> usize {
        (self.sites - (site - 1)) % self.sites + 1
    }

    pub fn apply(&self, mask: u32) -> u32 {
        let mut out = 0u32;
        for site in 1..=self.sites {
            if mask >> (site - 1) & 1 == 1 {
                out |= 1 << (self.site_image(site) - 1);
            }
        }
        out
    }
}

/// Complex amplitudes over a sector basis.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    amps: Vec<Complex64>,
}

impl StateVector {
    pub fn from_amplitudes(amps: Vec<Complex64>) -> Self {
        Self { amps }
    }

    /// Builds a normalised state; refuses the zero vector.
    pub fn normalized(mut amps: Vec<Complex64>) -> Result<Self> {
        let n = vecops::normalize(&mut amps);
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::Domain("cannot normalise a zero or non-finite vector".into()));
        }
        Ok(Self { amps })
    }

    /// The configuration basis state `|mask>`.
    pub fn basis_state(sector: &BasisSector, mask: u32) -> Result<Self> {
        let idx = sector.index_of(mask)?;
        let mut amps = vec![Complex64::new(0.0, 0.0); sector.dim()];
        amps[idx] = Complex64::new(1.0, 0.0);
        Ok(Self { amps })
    }

    pub fn from_real(values: &[f64]) -> Self {
        Self { amps: values.iter().map(|&x| Complex64::new(x, 0.0)).collect() }
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amps
    }

    pub fn into_amplitudes(self) -> Vec<Complex64> {
        self.amps
    }

    pub fn norm(&self) -> f64 {
        vecops::norm(&self.amps)
    }

    pub fn renormalize(&mut self) -> f64 {
        vecops::normalize(&mut self.amps)
    }

    /// `<self|other>`.
    pub fn overlap(&self, other: &StateVector) -> Complex64 {
        vecops::dot(&self.amps, &other.amps)
    }

    pub fn check_dim(&self, dim: usize) -> Result<()> {
        if self.amps.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: self.amps.len() });
        }
        Ok(())
    }
}

//! Cell-size spectra and spectrum-driven fixture tables.
//!
//! The spectrum of a table maps each cell size k to the proportion of cells
//! holding k. Computed from original data it is the tau2 profile that drives
//! the analytic risk formulas; computed from synthetic data it is tau1.
//! [`SpectrumSpec`] is the generative counterpart: a target spectrum, with an
//! optional open-ended tail bucket, from which desk-scale fixture tables can
//! be drawn when real microdata cannot be shipped.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, Uniform, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{grid_dims, Schema};
use crate::table::{CellTable, ContingencyTable};

/// How real-valued cells are assigned to integer size bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Binning {
    /// Count only exact integer sizes; reject tables with fractional cells.
    Exact,
    /// Round each cell to the nearest integer (halves away from zero).
    UnitRounded,
}

/// Proportion of cells per cell size. Proportions sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpectrumRepr", into = "SpectrumRepr")]
pub struct TauSpectrum {
    proportions: BTreeMap<u64, f64>,
    total_cells: usize,
}

#[derive(Serialize, Deserialize)]
struct SpectrumRepr {
    proportions: BTreeMap<u64, f64>,
    total_cells: usize,
}

impl TryFrom<SpectrumRepr> for TauSpectrum {
    type Error = Error;
    fn try_from(repr: SpectrumRepr) -> Result<Self> {
        TauSpectrum::new(repr.proportions, repr.total_cells)
    }
}

impl From<TauSpectrum> for SpectrumRepr {
    fn from(s: TauSpectrum) -> Self {
        SpectrumRepr {
            proportions: s.proportions,
            total_cells: s.total_cells,
        }
    }
}

impl TauSpectrum {
    /// Sum of proportions must be 1 within 1e-12; entries must lie in [0, 1].
    pub fn new(proportions: BTreeMap<u64, f64>, total_cells: usize) -> Result<Self> {
        if total_cells == 0 {
            return Err(Error::InvalidParameter(
                "spectrum needs at least one cell".into(),
            ));
        }
        for (&k, &p) in &proportions {
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter(format!(
                    "proportion for cell size {k} is {p}; must lie in [0, 1]"
                )));
            }
        }
        let sum: f64 = proportions.values().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "spectrum proportions sum to {sum}, not 1"
            )));
        }
        Ok(TauSpectrum {
            proportions,
            total_cells,
        })
    }

    pub fn proportions(&self) -> &BTreeMap<u64, f64> {
        &self.proportions
    }

    /// Proportion of cells of size `k` (zero when absent).
    pub fn get(&self, k: u64) -> f64 {
        self.proportions.get(&k).copied().unwrap_or(0.0)
    }

    /// Largest cell size with positive proportion.
    pub fn max_size(&self) -> u64 {
        self.proportions
            .iter()
            .rev()
            .find(|(_, &p)| p > 0.0)
            .map(|(&k, _)| k)
            .unwrap_or(0)
    }

    /// Total proportion of cells of size `from` or larger.
    pub fn tail_mass(&self, from: u64) -> f64 {
        self.proportions
            .range(from..)
            .map(|(_, &p)| p)
            .sum()
    }

    pub fn total_cells(&self) -> usize {
        self.total_cells
    }
}

/// Empirical spectrum of a table: the proportion of cells at each integer
/// size. With [`Binning::Exact`], real-valued tables must hold integral
/// values; [`Binning::UnitRounded`] bins to the nearest integer first.
pub fn tau_spectrum(table: &impl CellTable, binning: Binning) -> Result<TauSpectrum> {
    let cells = table.num_cells();
    if cells == 0 {
        return Err(Error::InvalidTable("spectrum of an empty table".into()));
    }
    let mut tallies: BTreeMap<u64, usize> = BTreeMap::new();
    for i in 0..cells {
        let v = table.cell(i);
        let k = match binning {
            Binning::Exact => {
                if v.fract() != 0.0 {
                    return Err(Error::InvalidTable(format!(
                        "cell {i} holds {v}; exact binning needs integral values \
                         (use unit-rounded binning for averaged tables)"
                    )));
                }
                v as u64
            }
            Binning::UnitRounded => v.round() as u64,
        };
        *tallies.entry(k).or_insert(0) += 1;
    }
    let proportions = tallies
        .into_iter()
        .map(|(k, c)| (k, c as f64 / cells as f64))
        .collect();
    TauSpectrum::new(proportions, cells)
}

/// An open-ended spectrum bucket: `mass` spread over sizes `start` and above.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailBucket {
    pub start: u64,
    pub mass: f64,
}

/// A generative cell-size distribution for fixture tables: exact point
/// masses plus an optional aggregated tail bucket.
///
/// Construction accepts rounding slack of up to 1e-3 in the total mass (as
/// published spectra are usually rounded) and renormalizes exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpectrumSpecRepr", into = "SpectrumSpecRepr")]
pub struct SpectrumSpec {
    point_masses: BTreeMap<u64, f64>,
    tail: Option<TailBucket>,
}

#[derive(Serialize, Deserialize)]
struct SpectrumSpecRepr {
    point_masses: BTreeMap<u64, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tail: Option<TailBucket>,
}

impl TryFrom<SpectrumSpecRepr> for SpectrumSpec {
    type Error = Error;
    fn try_from(repr: SpectrumSpecRepr) -> Result<Self> {
        SpectrumSpec::new(repr.point_masses, repr.tail)
    }
}

impl From<SpectrumSpec> for SpectrumSpecRepr {
    fn from(s: SpectrumSpec) -> Self {
        SpectrumSpecRepr {
            point_masses: s.point_masses,
            tail: s.tail,
        }
    }
}

impl SpectrumSpec {
    pub fn new(mut point_masses: BTreeMap<u64, f64>, tail: Option<TailBucket>) -> Result<Self> {
        for (&k, &p) in &point_masses {
            if !p.is_finite() || p < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "mass for cell size {k} is {p}; must be nonnegative"
                )));
            }
        }
        if let Some(t) = &tail {
            if !t.mass.is_finite() || t.mass < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "tail mass {} must be nonnegative",
                    t.mass
                )));
            }
            if let Some((&max_point, _)) = point_masses.iter().next_back() {
                if t.start <= max_point {
                    return Err(Error::InvalidParameter(format!(
                        "tail start {} overlaps point mass at {max_point}",
                        t.start
                    )));
                }
            }
        }
        let sum: f64 =
            point_masses.values().sum::<f64>() + tail.map(|t| t.mass).unwrap_or(0.0);
        if (sum - 1.0).abs() > 1e-3 {
            return Err(Error::InvalidParameter(format!(
                "spectrum masses sum to {sum}; expected 1 within 1e-3"
            )));
        }
        for p in point_masses.values_mut() {
            *p /= sum;
        }
        let tail = tail.map(|t| TailBucket {
            start: t.start,
            mass: t.mass / sum,
        });
        Ok(SpectrumSpec { point_masses, tail })
    }

    /// Point masses only (no tail bucket).
    pub fn from_point_masses(point_masses: BTreeMap<u64, f64>) -> Result<Self> {
        Self::new(point_masses, None)
    }

    /// A heavily zero-inflated size profile typical of large multi-way
    /// administrative tables: 90% unobserved cells, a thin band of small
    /// counts, and 3% of cells of size 6 or more.
    pub fn sparse_administrative() -> Self {
        let masses: BTreeMap<u64, f64> = [
            (0, 0.9038),
            (1, 0.0346),
            (2, 0.0148),
            (3, 0.0075),
            (4, 0.0056),
            (5, 0.0038),
        ]
        .into_iter()
        .collect();
        SpectrumSpec::new(masses, Some(TailBucket { start: 6, mass: 0.0300 }))
            .expect("built-in spectrum is valid")
    }

    pub fn point_masses(&self) -> &BTreeMap<u64, f64> {
        &self.point_masses
    }

    pub fn tail(&self) -> Option<TailBucket> {
        self.tail
    }
}

/// Draw a fixture table of `cells` cells with sizes sampled independently
/// from `spectrum`. Tail-bucket mass is spread uniformly over
/// `tail.start..=max_count`. The result is bit-reproducible for a fixed
/// seed; its schema is a synthetic grid factorization of `cells`.
pub fn fixture_from_spectrum(
    spectrum: &SpectrumSpec,
    cells: usize,
    max_count: u64,
    seed: u64,
) -> Result<ContingencyTable> {
    if cells == 0 {
        return Err(Error::InvalidParameter(
            "fixture needs at least one cell".into(),
        ));
    }
    if let Some(tail) = spectrum.tail {
        if tail.mass > 0.0 && max_count < tail.start {
            return Err(Error::InvalidParameter(format!(
                "max_count {max_count} is below the tail start {}",
                tail.start
            )));
        }
    }
    // entries: point masses, then the tail bucket last
    let mut sizes: Vec<u64> = spectrum.point_masses.keys().copied().collect();
    let mut weights: Vec<f64> = spectrum.point_masses.values().copied().collect();
    let tail_entry = sizes.len();
    if let Some(tail) = spectrum.tail {
        sizes.push(tail.start);
        weights.push(tail.mass);
    }
    let index = WeightedIndex::new(&weights)
        .map_err(|e| Error::InvalidParameter(format!("unusable spectrum weights: {e}")))?;
    let schema = Schema::grid(&grid_dims(cells))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tail_range = spectrum
        .tail
        .map(|t| Uniform::new_inclusive(t.start, max_count));
    let counts: Vec<u64> = (0..cells)
        .map(|_| {
            let e = index.sample(&mut rng);
            if e == tail_entry {
                tail_range.as_ref().expect("tail entry implies tail range").sample(&mut rng)
            } else {
                sizes[e]
            }
        })
        .collect();
    ContingencyTable::new(schema, counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::RealTable;

    #[test]
    fn spectrum_counts_cells() {
        let schema = Schema::grid(&[2, 2]).unwrap();
        let table = ContingencyTable::new(schema, vec![0, 0, 1, 1]).unwrap();
        let s = tau_spectrum(&table, Binning::Exact).unwrap();
        assert_eq!(s.get(0), 0.5);
        assert_eq!(s.get(1), 0.5);
        assert_eq!(s.get(2), 0.0);
        assert_eq!(s.total_cells(), 4);
    }

    #[test]
    fn all_zero_table_is_a_point_mass() {
        let schema = Schema::grid(&[3, 2]).unwrap();
        let table = ContingencyTable::new(schema, vec![0; 6]).unwrap();
        let s = tau_spectrum(&table, Binning::Exact).unwrap();
        assert_eq!(s.get(0), 1.0);
        assert_eq!(s.max_size(), 0);
    }

    #[test]
    fn unit_rounding_bins_reals() {
        let schema = Schema::grid(&[2, 2]).unwrap();
        let table = RealTable::new(schema, vec![0.4, 0.5, 1.49, 2.0]).unwrap();
        assert!(tau_spectrum(&table, Binning::Exact).is_err());
        let s = tau_spectrum(&table, Binning::UnitRounded).unwrap();
        assert_eq!(s.get(0), 0.25);
        assert_eq!(s.get(1), 0.5); // 0.5 rounds away from zero, 1.49 down
        assert_eq!(s.get(2), 0.25);
    }

    #[test]
    fn proportions_sum_to_one() {
        let spec = SpectrumSpec::sparse_administrative();
        let table = fixture_from_spectrum(&spec, 50_000, 50, 9).unwrap();
        let s = tau_spectrum(&table, Binning::Exact).unwrap();
        let sum: f64 = s.proportions().values().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_fixtures() {
        let all_zero =
            SpectrumSpec::from_point_masses([(0u64, 1.0)].into_iter().collect()).unwrap();
        let t = fixture_from_spectrum(&all_zero, 64, 50, 3).unwrap();
        assert!(t.counts().iter().all(|&c| c == 0));

        let all_one =
            SpectrumSpec::from_point_masses([(1u64, 1.0)].into_iter().collect()).unwrap();
        let t = fixture_from_spectrum(&all_one, 100, 50, 3).unwrap();
        assert!(t.counts().iter().all(|&c| c == 1));
        assert_eq!(t.total(), 100);
    }

    #[test]
    fn fixture_is_reproducible_and_seed_sensitive() {
        let spec = SpectrumSpec::sparse_administrative();
        let a = fixture_from_spectrum(&spec, 10_000, 50, 42).unwrap();
        let b = fixture_from_spectrum(&spec, 10_000, 50, 42).unwrap();
        assert_eq!(a, b);
        let c = fixture_from_spectrum(&spec, 10_000, 50, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn fixture_matches_target_spectrum() {
        let spec = SpectrumSpec::sparse_administrative();
        let k = 100_000usize;
        let t = fixture_from_spectrum(&spec, k, 50, 7).unwrap();
        let s = tau_spectrum(&t, Binning::Exact).unwrap();
        // binomial sampling error around each target mass
        let total = 0.9038 + 0.0346 + 0.0148 + 0.0075 + 0.0056 + 0.0038 + 0.03;
        for (size, target) in [(0u64, 0.9038), (1, 0.0346), (2, 0.0148), (3, 0.0075)] {
            let p = target / total;
            let se = (p * (1.0 - p) / k as f64).sqrt();
            assert!(
                (s.get(size) - p).abs() < 5.0 * se,
                "size {size}: got {} want {p}",
                s.get(size)
            );
        }
        let tail_p = 0.03 / total;
        let se = (tail_p * (1.0 - tail_p) / k as f64).sqrt();
        assert!((s.tail_mass(6) - tail_p).abs() < 5.0 * se);
        assert!(s.max_size() <= 50);
    }

    #[test]
    fn rejects_bad_specs() {
        // sum far from one
        assert!(SpectrumSpec::from_point_masses([(0u64, 0.5)].into_iter().collect()).is_err());
        // tail overlapping point masses
        assert!(SpectrumSpec::new(
            [(0u64, 0.5), (6, 0.2)].into_iter().collect(),
            Some(TailBucket { start: 6, mass: 0.3 }),
        )
        .is_err());
        // zero cells
        let ok = SpectrumSpec::from_point_masses([(0u64, 1.0)].into_iter().collect()).unwrap();
        assert!(fixture_from_spectrum(&ok, 0, 50, 1).is_err());
        // max_count below tail start
        let tailed = SpectrumSpec::new(
            [(0u64, 0.9)].into_iter().collect(),
            Some(TailBucket { start: 6, mass: 0.1 }),
        )
        .unwrap();
        assert!(fixture_from_spectrum(&tailed, 10, 5, 1).is_err());
    }
}

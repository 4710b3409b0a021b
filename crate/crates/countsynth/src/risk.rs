//! Disclosure-risk metrics over original/synthetic table pairs.
//!
//! The empirical metrics compare an original table with the cell-wise mean
//! of its synthetic replicates: tau1(k,d) is the share of mean synthetic
//! counts within d of k, tau3(k,d) the probability that an original k-cell
//! lands within d of k, and tau4(k,d) the probability that a mean synthetic
//! count within d of k came from an original k-cell. They satisfy
//! `tau3(k,d) * tau2(k) = tau4(k,d) * tau1(k,d)` identically.
//!
//! The analytic metrics approximate the same quantities from parameters
//! alone via the normal limit of the mean synthetic count (accurate for
//! large m), so a data holder can position a release before generating
//! anything. Band membership is a closed interval `|mean - k| <= d`,
//! evaluated in plain f64 arithmetic; values landing exactly on a band
//! boundary are therefore subject to ordinary floating-point rounding.
//! The analytic formulas assume no pseudocount (alpha = 0).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::spectrum::{tau_spectrum, Binning, TauSpectrum};
use crate::synthesis::{nbi_pmf, SyntheticEnsemble};
use crate::table::{ContingencyTable, RealTable};

/// Parameters of one analytic band query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauBandQuery {
    /// Original cell size.
    pub k: u64,
    /// Band half-width (need not be an integer).
    pub d: f64,
    /// NBI dispersion used for synthesis.
    pub sigma: f64,
    /// Number of replicates averaged.
    pub m: usize,
}

fn check_band(d: f64) -> Result<()> {
    if !d.is_finite() || d < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "band half-width must be finite and nonnegative, got {d}"
        )));
    }
    Ok(())
}

fn check_schemas(original: &ContingencyTable, averaged: &RealTable) -> Result<()> {
    if original.schema() != averaged.schema() {
        return Err(Error::SchemaMismatch(
            "original and synthetic tables use different schemas".into(),
        ));
    }
    Ok(())
}

fn in_band(value: f64, k: u64, d: f64) -> bool {
    (value - k as f64).abs() <= d
}

/// Share of mean synthetic counts within d of k: `#{|v_i - k| <= d} / K`.
pub fn tau1_band(averaged: &RealTable, k: u64, d: f64) -> Result<f64> {
    check_band(d)?;
    let hits = averaged.values().iter().filter(|&&v| in_band(v, k, d)).count();
    Ok(hits as f64 / averaged.values().len() as f64)
}

/// Probability that an original cell of size k is synthesized (on average)
/// to within d of k. `Ok(None)` when the original table has no k-cells:
/// the metric is undefined there, which is different from being zero.
pub fn tau3_empirical(
    original: &ContingencyTable,
    averaged: &RealTable,
    k: u64,
    d: f64,
) -> Result<Option<f64>> {
    check_band(d)?;
    check_schemas(original, averaged)?;
    let mut k_cells = 0usize;
    let mut hits = 0usize;
    for (i, &count) in original.counts().iter().enumerate() {
        if count == k {
            k_cells += 1;
            if in_band(averaged.values()[i], k, d) {
                hits += 1;
            }
        }
    }
    if k_cells == 0 {
        return Ok(None);
    }
    Ok(Some(hits as f64 / k_cells as f64))
}

/// Probability that a mean synthetic count within d of k originated from an
/// original cell of size k. `Ok(None)` when no mean synthetic count lies in
/// the band (empty denominator).
pub fn tau4_empirical(
    original: &ContingencyTable,
    averaged: &RealTable,
    k: u64,
    d: f64,
) -> Result<Option<f64>> {
    check_band(d)?;
    check_schemas(original, averaged)?;
    let mut band = 0usize;
    let mut from_k = 0usize;
    for (i, &v) in averaged.values().iter().enumerate() {
        if in_band(v, k, d) {
            band += 1;
            if original.counts()[i] == k {
                from_k += 1;
            }
        }
    }
    if band == 0 {
        return Ok(None);
    }
    Ok(Some(from_k as f64 / band as f64))
}

/// Exact tau3(k) for a single replicate and d = 0: the probability that a
/// k-cell is synthesized to exactly k, `nbi_pmf(k, k, sigma)`.
pub fn tau3_exact_m1(k: u64, sigma: f64) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidParameter(
            "tau3 is defined for original cell sizes k >= 1".into(),
        ));
    }
    nbi_pmf(k, k as f64, sigma)
}

/// Normal-limit approximation of tau3(k,d):
/// `2 Phi(d / sqrt((k + sigma k^2)/m)) - 1`. Accurate for large m; assumes
/// alpha = 0.
pub fn tau3_analytic(query: &TauBandQuery) -> Result<f64> {
    check_band(query.d)?;
    if query.k == 0 {
        return Err(Error::InvalidParameter(
            "the normal approximation needs k >= 1; zero cells are exact, not approximate".into(),
        ));
    }
    if !query.sigma.is_finite() || query.sigma < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "sigma must be finite and nonnegative, got {}",
            query.sigma
        )));
    }
    if query.m == 0 {
        return Err(Error::InvalidParameter("m must be at least 1".into()));
    }
    let k = query.k as f64;
    let sd = ((k + query.sigma * k * k) / query.m as f64).sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(2.0 * normal.cdf(query.d / sd) - 1.0)
}

/// Normal-limit approximation of tau4(k,d) given the original spectrum:
/// numerator `tau3_analytic(k,d) * tau2(k)`, denominator the same band
/// probability mixed over original sizes i = 1..=truncation weighted by
/// tau2(i).
///
/// The i = 0 term is excluded by default. With no pseudocount a zero cell
/// yields a mean synthetic count of exactly zero, which lies in the band
/// only when k <= d; `include_zero_cells` adds that exact correction term
/// to the denominator.
///
/// Returns `Ok(Some(0))` when tau2(k) = 0 and `Ok(None)` when the
/// denominator is empty.
pub fn tau4_analytic(
    query: &TauBandQuery,
    tau2: &TauSpectrum,
    truncation: u64,
    include_zero_cells: bool,
) -> Result<Option<f64>> {
    check_band(query.d)?;
    if truncation < tau2.max_size() {
        return Err(Error::InvalidParameter(format!(
            "truncation {truncation} drops spectrum mass at size {}",
            tau2.max_size()
        )));
    }
    let t2k = tau2.get(query.k);
    if t2k == 0.0 {
        return Ok(Some(0.0));
    }
    let numerator = tau3_analytic(query)? * t2k;
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let k = query.k as f64;
    let mut denominator = 0.0;
    for i in 1..=truncation {
        let weight = tau2.get(i);
        if weight == 0.0 {
            continue;
        }
        let fi = i as f64;
        let sd = ((fi + query.sigma * fi * fi) / query.m as f64).sqrt();
        let band =
            normal.cdf((k + query.d - fi) / sd) - normal.cdf((k - query.d - fi) / sd);
        denominator += band * weight;
    }
    if include_zero_cells && k <= query.d {
        denominator += tau2.get(0);
    }
    if denominator <= 0.0 {
        return Ok(None);
    }
    Ok(Some(numerator / denominator))
}

/// Which route produced a set of tau values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TauMode {
    Empirical,
    Analytic,
}

impl std::fmt::Display for TauMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TauMode::Empirical => "empirical",
            TauMode::Analytic => "analytic",
        })
    }
}

/// Risk summary over a set of (k, d) bands. Band maps are keyed `"k:d"`;
/// undefined bands are omitted rather than reported as zero. tau1 is only
/// available on the empirical route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau1: Option<TauSpectrum>,
    pub tau2: TauSpectrum,
    pub tau3: BTreeMap<String, f64>,
    pub tau4: BTreeMap<String, f64>,
    pub mode: TauMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
}

/// Canonical `"k:d"` key for band maps.
pub fn band_key(k: u64, d: f64) -> String {
    format!("{k}:{d}")
}

/// Empirical tau report for an ensemble against its original table.
pub fn empirical_tau_report(
    original: &ContingencyTable,
    ensemble: &SyntheticEnsemble,
    bands: &[(u64, f64)],
) -> Result<TauReport> {
    if original.schema() != ensemble.schema() {
        return Err(Error::SchemaMismatch(
            "ensemble was synthesized from a different schema".into(),
        ));
    }
    let averaged = ensemble.average();
    let tau2 = tau_spectrum(original, Binning::Exact)?;
    let tau1 = tau_spectrum(&averaged, Binning::UnitRounded)?;
    let mut tau3 = BTreeMap::new();
    let mut tau4 = BTreeMap::new();
    for &(k, d) in bands {
        if let Some(v) = tau3_empirical(original, &averaged, k, d)? {
            tau3.insert(band_key(k, d), v);
        }
        if let Some(v) = tau4_empirical(original, &averaged, k, d)? {
            tau4.insert(band_key(k, d), v);
        }
    }
    Ok(TauReport {
        tau1: Some(tau1),
        tau2,
        tau3,
        tau4,
        mode: TauMode::Empirical,
        sigma: Some(ensemble.params().sigma),
        m: Some(ensemble.m()),
    })
}

/// Analytic tau report from a spectrum alone; no synthetic data involved.
/// Requires alpha = 0 (the analytic formulas do not model pseudocounts).
pub fn analytic_tau_report(
    tau2: &TauSpectrum,
    bands: &[(u64, f64)],
    sigma: f64,
    m: usize,
    truncation: Option<u64>,
    include_zero_cells: bool,
) -> Result<TauReport> {
    let truncation = truncation.unwrap_or_else(|| tau2.max_size());
    let mut tau3 = BTreeMap::new();
    let mut tau4 = BTreeMap::new();
    for &(k, d) in bands {
        let query = TauBandQuery { k, d, sigma, m };
        tau3.insert(band_key(k, d), tau3_analytic(&query)?);
        if let Some(v) = tau4_analytic(&query, tau2, truncation, include_zero_cells)? {
            tau4.insert(band_key(k, d), v);
        }
    }
    Ok(TauReport {
        tau1: None,
        tau2: tau2.clone(),
        tau3,
        tau4,
        mode: TauMode::Analytic,
        sigma: Some(sigma),
        m: Some(m),
    })
}

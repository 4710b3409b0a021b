//! Risk-utility trade-off grids over (m, sigma).
//!
//! For each dispersion value the evaluator generates max(ms) replicates once
//! per replication and walks m-prefixes of that ensemble, mirroring how a
//! release would be tuned in practice ("take the first five data sets for
//! m = 5"). Prefixing keeps monotone-in-m comparisons free of fresh
//! randomness, and per-replicate sub-seeding makes every prefix bit-equal to
//! an independent run of that size. The analytic route computes the same
//! risk surface from the original spectrum alone, with no sampling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{
    analyze_replicates, log_odds_ratio, marginalize_2x2, AnalysisMode, Estimator,
    MarginalOddsSpec,
};
use crate::risk::{tau3_analytic, tau3_empirical, tau4_analytic, tau4_empirical, TauBandQuery};
use crate::spectrum::TauSpectrum;
use crate::synthesis::{derive_seed, synthesize, SynthesisParams};
use crate::table::{ContingencyTable, RealTable};
use crate::utility::{ci_overlap, euclidean, hellinger, DistanceBasis, IntervalEstimate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskMetricKind {
    Tau3,
    Tau4,
}

impl std::fmt::Display for RiskMetricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RiskMetricKind::Tau3 => "tau3",
            RiskMetricKind::Tau4 => "tau4",
        })
    }
}

/// Which tau band drives the risk axis of the trade-off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskSpec {
    pub metric: RiskMetricKind,
    pub k: u64,
    pub d: f64,
    /// Add the exact zero-cell term to the tau4 denominator (analytic route).
    #[serde(default)]
    pub include_zero_cells: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UtilityMetricKind {
    Hellinger,
    Euclidean,
    CiOverlap,
}

impl std::fmt::Display for UtilityMetricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            UtilityMetricKind::Hellinger => "hellinger",
            UtilityMetricKind::Euclidean => "euclidean",
            UtilityMetricKind::CiOverlap => "ci-overlap",
        })
    }
}

/// Which utility measure drives the utility axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilitySpec {
    pub metric: UtilityMetricKind,
    /// Distance basis for Hellinger (counts unless stated otherwise).
    #[serde(default = "default_basis")]
    pub basis: DistanceBasis,
    /// Confidence level for the interval-overlap utility.
    #[serde(default = "default_level")]
    pub level: f64,
    /// Continuity correction passed to the odds-ratio analysis.
    #[serde(default)]
    pub correction: f64,
}

fn default_basis() -> DistanceBasis {
    DistanceBasis::Counts
}

fn default_level() -> f64 {
    0.95
}

/// The (m, sigma) grid to evaluate, with seeds and metric selectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridRepr", into = "GridRepr")]
pub struct GridSpec {
    pub sigmas: Vec<f64>,
    /// Replicate counts, strictly ascending so prefixes can be reused.
    pub ms: Vec<usize>,
    /// Bands reported alongside the trade-off (k, d); may be empty.
    pub bands: Vec<(u64, f64)>,
    pub risk: RiskSpec,
    pub utility: Option<UtilitySpec>,
    /// Monte Carlo repetitions per grid point for smoothing.
    pub replications: usize,
    pub alpha: f64,
    pub size_factor: f64,
    pub master_seed: u64,
}

#[derive(Serialize, Deserialize)]
struct GridRepr {
    sigmas: Vec<f64>,
    ms: Vec<usize>,
    #[serde(default)]
    bands: Vec<(u64, f64)>,
    risk: RiskSpec,
    #[serde(default)]
    utility: Option<UtilitySpec>,
    #[serde(default = "one_rep")]
    replications: usize,
    #[serde(default)]
    alpha: f64,
    #[serde(default = "one_f")]
    size_factor: f64,
    master_seed: u64,
}

fn one_rep() -> usize {
    1
}

fn one_f() -> f64 {
    1.0
}

impl TryFrom<GridRepr> for GridSpec {
    type Error = Error;
    fn try_from(r: GridRepr) -> Result<Self> {
        let spec = GridSpec {
            sigmas: r.sigmas,
            ms: r.ms,
            bands: r.bands,
            risk: r.risk,
            utility: r.utility,
            replications: r.replications,
            alpha: r.alpha,
            size_factor: r.size_factor,
            master_seed: r.master_seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<GridSpec> for GridRepr {
    fn from(g: GridSpec) -> Self {
        GridRepr {
            sigmas: g.sigmas,
            ms: g.ms,
            bands: g.bands,
            risk: g.risk,
            utility: g.utility,
            replications: g.replications,
            alpha: g.alpha,
            size_factor: g.size_factor,
            master_seed: g.master_seed,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sigmas.is_empty() {
            return Err(Error::InvalidParameter("grid needs at least one sigma".into()));
        }
        if self.sigmas.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::InvalidParameter(
                "sigmas must be finite and nonnegative".into(),
            ));
        }
        if self.ms.is_empty() {
            return Err(Error::InvalidParameter("grid needs at least one m".into()));
        }
        if self.ms[0] == 0 {
            return Err(Error::InvalidParameter("m must be at least 1".into()));
        }
        if !self.ms.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidParameter(
                "ms must be strictly ascending so prefixes can be reused".into(),
            ));
        }
        if self.replications == 0 {
            return Err(Error::InvalidParameter(
                "replications must be at least 1".into(),
            ));
        }
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::InvalidParameter(
                "alpha must be finite and nonnegative".into(),
            ));
        }
        if !self.size_factor.is_finite() || self.size_factor <= 0.0 {
            return Err(Error::InvalidParameter(
                "size factor must be finite and positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Empirical,
    Analytic,
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Provenance::Empirical => "empirical",
            Provenance::Analytic => "analytic",
        })
    }
}

/// One grid point. `utility` is standardized onto [0, 1] (1 = best) within
/// the run; `utility_raw` keeps the unstandardized measure since the
/// standardized value is only comparable inside one run. Standard errors are
/// present when `replications > 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub m: usize,
    pub sigma: f64,
    pub risk: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub risk_se: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub utility: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub utility_raw: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub utility_se: Option<f64>,
    pub provenance: Provenance,
}

fn mean_and_se(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, Some((var / n).sqrt()))
}

/// Evaluate the empirical trade-off grid: synthesize max(ms) replicates per
/// (sigma, replication) job, then measure the selected risk and utility on
/// every m-prefix. `analysis` is required for the interval-overlap utility.
/// Jobs run in parallel; output order and values do not depend on the
/// worker count.
pub fn evaluate_grid(
    table: &ContingencyTable,
    grid: &GridSpec,
    analysis: Option<&MarginalOddsSpec>,
) -> Result<Vec<TradeoffPoint>> {
    grid.validate()?;
    let overlap_wanted = matches!(
        grid.utility,
        Some(UtilitySpec { metric: UtilityMetricKind::CiOverlap, .. })
    );
    if overlap_wanted && analysis.is_none() {
        return Err(Error::InvalidParameter(
            "the interval-overlap utility needs an analysis spec (marginal odds ratio)".into(),
        ));
    }
    // the original-data interval that synthetic intervals are compared against
    let original_interval: Option<IntervalEstimate> = match (overlap_wanted, analysis) {
        (true, Some(spec)) => {
            let u = grid.utility.as_ref().expect("overlap implies utility");
            let est = log_odds_ratio(&marginalize_2x2(table, spec)?, u.correction)?;
            let z = statrs::distribution::ContinuousCDF::inverse_cdf(
                &statrs::distribution::Normal::new(0.0, 1.0).expect("standard normal"),
                0.5 * (1.0 + u.level),
            );
            let half = z * est.v.sqrt();
            Some(IntervalEstimate::new(est.q, est.q - half, est.q + half, u.level)?)
        }
        _ => None,
    };

    let max_m = *grid.ms.last().expect("validated nonempty");
    let jobs: Vec<(usize, usize)> = (0..grid.sigmas.len())
        .flat_map(|s| (0..grid.replications).map(move |r| (s, r)))
        .collect();

    // per job: for each m in ms, (risk, utility_raw)
    let per_job: Vec<Vec<(f64, Option<f64>)>> = jobs
        .par_iter()
        .map(|&(sigma_idx, rep)| -> Result<Vec<(f64, Option<f64>)>> {
            let sigma = grid.sigmas[sigma_idx];
            let seed = derive_seed(grid.master_seed, &[sigma_idx as u64, rep as u64]);
            let params =
                SynthesisParams::new(sigma, grid.alpha, max_m, grid.size_factor, seed)?;
            let ensemble = synthesize(table, &params)?;
            let cells = table.schema().num_cells();
            let mut sums = vec![0u64; cells];
            let mut next_checkpoint = 0usize;
            let mut out = Vec::with_capacity(grid.ms.len());
            for l in 0..max_m {
                for (s, &c) in sums.iter_mut().zip(ensemble.replicate(l)) {
                    *s += c;
                }
                let m = l + 1;
                if m != grid.ms[next_checkpoint] {
                    continue;
                }
                next_checkpoint += 1;
                let averaged = RealTable::new(
                    table.schema().clone(),
                    sums.iter().map(|&s| s as f64 / m as f64).collect(),
                )?;
                let risk = match grid.risk.metric {
                    RiskMetricKind::Tau3 => {
                        tau3_empirical(table, &averaged, grid.risk.k, grid.risk.d)?
                    }
                    RiskMetricKind::Tau4 => {
                        tau4_empirical(table, &averaged, grid.risk.k, grid.risk.d)?
                    }
                }
                .ok_or_else(|| {
                    Error::UndefinedMetric(format!(
                        "{}({}, {}) is undefined at m={m}, sigma={sigma}",
                        grid.risk.metric, grid.risk.k, grid.risk.d
                    ))
                })?;
                let utility = match &grid.utility {
                    None => None,
                    Some(u) => Some(match u.metric {
                        UtilityMetricKind::Hellinger => hellinger(table, &averaged, u.basis)?,
                        UtilityMetricKind::Euclidean => euclidean(table, &averaged)?,
                        UtilityMetricKind::CiOverlap => {
                            let spec = analysis.expect("validated above");
                            let (mode, estimator) = if m >= 2 {
                                (AnalysisMode::Separate, Estimator::Tp)
                            } else {
                                (AnalysisMode::Averaged, Estimator::Ts)
                            };
                            let combined = analyze_replicates(
                                &ensemble,
                                m,
                                spec,
                                mode,
                                estimator,
                                u.level,
                                u.correction,
                            )?;
                            ci_overlap(
                                original_interval.as_ref().expect("built above"),
                                &combined.interval,
                            )?
                        }
                    }),
                };
                out.push((risk, utility));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    // reduce replications per (sigma, m) in canonical order
    let mut points = Vec::with_capacity(grid.sigmas.len() * grid.ms.len());
    for sigma_idx in 0..grid.sigmas.len() {
        for (m_idx, &m) in grid.ms.iter().enumerate() {
            let risks: Vec<f64> = (0..grid.replications)
                .map(|r| per_job[sigma_idx * grid.replications + r][m_idx].0)
                .collect();
            let utils: Option<Vec<f64>> = grid.utility.as_ref().map(|_| {
                (0..grid.replications)
                    .map(|r| {
                        per_job[sigma_idx * grid.replications + r][m_idx]
                            .1
                            .expect("utility configured")
                    })
                    .collect()
            });
            let (risk, risk_se) = mean_and_se(&risks);
            let (utility_raw, utility_se) = match &utils {
                Some(u) => {
                    let (m, s) = mean_and_se(u);
                    (Some(m), s)
                }
                None => (None, None),
            };
            points.push(TradeoffPoint {
                m,
                sigma: grid.sigmas[sigma_idx],
                risk,
                risk_se,
                utility: None,
                utility_raw,
                utility_se,
                provenance: Provenance::Empirical,
            });
        }
    }

    // standardize the utility axis onto [0, 1] within this run
    if let Some(u) = &grid.utility {
        match u.metric {
            UtilityMetricKind::CiOverlap => {
                for p in &mut points {
                    p.utility = p.utility_raw;
                }
            }
            UtilityMetricKind::Hellinger | UtilityMetricKind::Euclidean => {
                let max = points
                    .iter()
                    .filter_map(|p| p.utility_raw)
                    .fold(0.0f64, f64::max);
                for p in &mut points {
                    let raw = p.utility_raw.expect("utility configured");
                    p.utility = Some(if max > 0.0 { 1.0 - raw / max } else { 1.0 });
                    p.utility_se = p.utility_se.map(|se| if max > 0.0 { se / max } else { 0.0 });
                }
            }
        }
    }
    Ok(points)
}

/// Compute the risk surface of the grid purely from the original spectrum
/// via the normal-limit formulas; no synthetic data is generated. Utility
/// metrics need data, so a grid that asks for one is rejected with guidance
/// to `evaluate_grid`. Assumes alpha = 0.
pub fn analytic_grid(tau2: &TauSpectrum, grid: &GridSpec) -> Result<Vec<TradeoffPoint>> {
    grid.validate()?;
    if grid.utility.is_some() {
        return Err(Error::InvalidParameter(
            "utility metrics need synthetic data; use evaluate_grid for the utility axis".into(),
        ));
    }
    if grid.alpha != 0.0 {
        return Err(Error::InvalidParameter(
            "the analytic risk formulas assume alpha = 0".into(),
        ));
    }
    let truncation = tau2.max_size();
    let mut points = Vec::with_capacity(grid.sigmas.len() * grid.ms.len());
    for &sigma in &grid.sigmas {
        for &m in &grid.ms {
            let query = TauBandQuery { k: grid.risk.k, d: grid.risk.d, sigma, m };
            let risk = match grid.risk.metric {
                RiskMetricKind::Tau3 => tau3_analytic(&query)?,
                RiskMetricKind::Tau4 => {
                    tau4_analytic(&query, tau2, truncation, grid.risk.include_zero_cells)?
                        .ok_or_else(|| {
                            Error::UndefinedMetric(format!(
                                "analytic tau4({}, {}) has an empty denominator",
                                grid.risk.k, grid.risk.d
                            ))
                        })?
                }
            };
            points.push(TradeoffPoint {
                m,
                sigma,
                risk,
                risk_se: None,
                utility: None,
                utility_raw: None,
                utility_se: None,
                provenance: Provenance::Analytic,
            });
        }
    }
    Ok(points)
}

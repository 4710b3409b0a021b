//! Analyst-side estimation and variance combining for ensembles.
//!
//! The built-in analysis is the log marginal odds ratio of a 2x2 table
//! obtained by filtering and dichotomising two schema variables; its closed
//! form `q = log(n11 n00 / (n10 n01))` with asymptotic variance
//! `v = sum 1/n_ij` is the maximum-likelihood slope of the corresponding
//! one-predictor logistic regression, so no iterative fitter is needed.
//!
//! Two combining routes turn per-replicate estimates into one interval:
//!
//! * `combine_tp` - analyse the m replicates separately, then pool with the
//!   partial-synthesis estimator `T_p = b_m / m + mean(v)` and a
//!   t reference with `nu_p = (m-1)(1 + m vbar / b_m)^2` degrees of freedom.
//! * `combine_ts` - analyse a single (typically averaged) table and use
//!   `T_s = vbar (n_syn / n + 1/m)` with a normal reference; valid in large
//!   samples and usable even at m = 1.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};
use crate::synthesis::{average_replicates, SyntheticEnsemble};
use crate::table::CellTable;
use crate::utility::IntervalEstimate;

/// Dichotomisation of one variable: listed categories map to level 1, the
/// remaining (kept) categories to level 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinarySplit {
    pub variable: String,
    pub one_categories: Vec<String>,
}

/// Restrict a variable to a subset of its categories before analysis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryFilter {
    pub variable: String,
    pub keep: Vec<String>,
}

/// Specification of a marginal 2x2 analysis: two dichotomised variables and
/// optional category filters (for example, restrict a language variable to
/// two of its categories, then split age at a threshold).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarginalOddsSpec {
    pub row: BinarySplit,
    pub col: BinarySplit,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub filters: Vec<CategoryFilter>,
}

/// A 2x2 marginal table. Cells are real-valued so that averaged ensembles
/// marginalize without rounding; `n11` counts (row = 1, col = 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoByTwo {
    pub n11: f64,
    pub n10: f64,
    pub n01: f64,
    pub n00: f64,
}

impl TwoByTwo {
    pub fn total(&self) -> f64 {
        self.n11 + self.n10 + self.n01 + self.n00
    }

    fn cells(&self) -> [f64; 4] {
        [self.n11, self.n10, self.n01, self.n00]
    }
}

struct ResolvedSpec {
    row_var: usize,
    col_var: usize,
    /// per-variable keep mask (None = keep all categories)
    keep: Vec<Option<Vec<bool>>>,
    row_one: Vec<bool>,
    col_one: Vec<bool>,
}

fn resolve(spec: &MarginalOddsSpec, schema: &crate::schema::Schema) -> Result<ResolvedSpec> {
    let row_var = schema.variable_index(&spec.row.variable)?;
    let col_var = schema.variable_index(&spec.col.variable)?;
    if row_var == col_var {
        return Err(Error::InvalidParameter(format!(
            "row and column use the same variable {:?}",
            spec.row.variable
        )));
    }
    let mut keep: Vec<Option<Vec<bool>>> = vec![None; schema.variables().len()];
    for filter in &spec.filters {
        let var = schema.variable_index(&filter.variable)?;
        let categories = &schema.variables()[var].categories;
        let mut mask = vec![false; categories.len()];
        for label in &filter.keep {
            let pos = categories.iter().position(|c| c == label).ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "filter keeps unknown category {label:?} of variable {:?}",
                    filter.variable
                ))
            })?;
            mask[pos] = true;
        }
        if !mask.iter().any(|&b| b) {
            return Err(Error::InvalidParameter(format!(
                "filter on {:?} keeps no categories",
                filter.variable
            )));
        }
        keep[var] = Some(mask);
    }
    let one_mask = |split: &BinarySplit, var: usize| -> Result<Vec<bool>> {
        let categories = &schema.variables()[var].categories;
        let mut mask = vec![false; categories.len()];
        for label in &split.one_categories {
            let pos = categories.iter().position(|c| c == label).ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "split lists unknown category {label:?} of variable {:?}",
                    split.variable
                ))
            })?;
            mask[pos] = true;
        }
        Ok(mask)
    };
    let row_one = one_mask(&spec.row, row_var)?;
    let col_one = one_mask(&spec.col, col_var)?;
    // both levels of each split must be reachable after filtering
    for (var, one, name) in [
        (row_var, &row_one, &spec.row.variable),
        (col_var, &col_one, &spec.col.variable),
    ] {
        let kept = |pos: usize| keep[var].as_ref().map_or(true, |m| m[pos]);
        let ones = (0..one.len()).filter(|&p| kept(p) && one[p]).count();
        let zeros = (0..one.len()).filter(|&p| kept(p) && !one[p]).count();
        if ones == 0 || zeros == 0 {
            return Err(Error::InvalidParameter(format!(
                "dichotomisation of {name:?} leaves an empty level \
                 ({ones} categories at level 1, {zeros} at level 0)"
            )));
        }
    }
    Ok(ResolvedSpec {
        row_var,
        col_var,
        keep,
        row_one,
        col_one,
    })
}

/// Collapse a table into the 2x2 marginal defined by `spec`, summing cell
/// values after applying the category filters.
pub fn marginalize_2x2(table: &impl CellTable, spec: &MarginalOddsSpec) -> Result<TwoByTwo> {
    let schema = table.schema();
    let resolved = resolve(spec, schema)?;
    let strides = schema.strides();
    let cards: Vec<usize> = schema
        .variables()
        .iter()
        .map(|v| v.categories.len())
        .collect();
    let mut quadrants = [0.0f64; 4];
    'cells: for index in 0..table.num_cells() {
        for (var, mask) in resolved.keep.iter().enumerate() {
            if let Some(mask) = mask {
                let pos = (index / strides[var]) % cards[var];
                if !mask[pos] {
                    continue 'cells;
                }
            }
        }
        let row_pos = (index / strides[resolved.row_var]) % cards[resolved.row_var];
        let col_pos = (index / strides[resolved.col_var]) % cards[resolved.col_var];
        let row1 = resolved.row_one[row_pos];
        let col1 = resolved.col_one[col_pos];
        let q = match (row1, col1) {
            (true, true) => 0,
            (true, false) => 1,
            (false, true) => 2,
            (false, false) => 3,
        };
        quadrants[q] += table.cell(index);
    }
    Ok(TwoByTwo {
        n11: quadrants[0],
        n10: quadrants[1],
        n01: quadrants[2],
        n00: quadrants[3],
    })
}

/// One analysis result: point estimate, its variance estimate, and the size
/// of the analysed table (real-valued so averaged tables fit).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicateEstimate {
    pub q: f64,
    pub v: f64,
    pub n_syn: f64,
}

/// Log marginal odds ratio of a 2x2 with its asymptotic variance.
///
/// `correction` is added to every cell first (0 disables it). With a zero
/// cell and no correction the estimate does not exist; the error suggests
/// the Haldane-Anscombe value 0.5. No correction is ever applied silently.
pub fn log_odds_ratio(table: &TwoByTwo, correction: f64) -> Result<ReplicateEstimate> {
    if !correction.is_finite() || correction < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "continuity correction must be finite and nonnegative, got {correction}"
        )));
    }
    let cells = table.cells();
    if cells.iter().any(|&c| !c.is_finite() || c < 0.0) {
        return Err(Error::InvalidParameter(
            "2x2 cells must be finite and nonnegative".into(),
        ));
    }
    let adjusted = cells.map(|c| c + correction);
    if adjusted.iter().any(|&c| c <= 0.0) {
        return Err(Error::InvalidParameter(
            "2x2 has a zero cell; pass a continuity correction such as 0.5".into(),
        ));
    }
    let [n11, n10, n01, n00] = adjusted;
    let q = (n11 * n00 / (n10 * n01)).ln();
    let v = adjusted.iter().map(|&c| 1.0 / c).sum();
    Ok(ReplicateEstimate {
        q,
        v,
        n_syn: table.total(),
    })
}

/// Which variance estimator produced a combined result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Tp,
    Ts,
}

/// Whether replicates were analysed separately or averaged first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnalysisMode {
    Separate,
    Averaged,
}

/// A combined estimate with its interval. `dof` is `None` for a normal
/// reference (T_s always; T_p when the between-synthesis variance is zero).
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedEstimate {
    pub q_bar: f64,
    pub b_m: Option<f64>,
    pub v_bar: f64,
    pub variance: f64,
    pub dof: Option<f64>,
    pub interval: IntervalEstimate,
    pub estimator: Estimator,
    pub mode: AnalysisMode,
}

impl Serialize for CombinedEstimate {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        CombinedRepr::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for CombinedEstimate {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = CombinedRepr::deserialize(deserializer)?;
        repr.try_into().map_err(serde::de::Error::custom)
    }
}

/// Flat JSON contract: q_bar, b_m, v_bar, variance, dof, lower, upper,
/// level, estimator, mode.
#[derive(Serialize, Deserialize)]
struct CombinedRepr {
    q_bar: f64,
    b_m: Option<f64>,
    v_bar: f64,
    variance: f64,
    dof: Option<f64>,
    lower: f64,
    upper: f64,
    level: f64,
    estimator: Estimator,
    mode: AnalysisMode,
}

impl From<&CombinedEstimate> for CombinedRepr {
    fn from(e: &CombinedEstimate) -> Self {
        CombinedRepr {
            q_bar: e.q_bar,
            b_m: e.b_m,
            v_bar: e.v_bar,
            variance: e.variance,
            dof: e.dof,
            lower: e.interval.lower,
            upper: e.interval.upper,
            level: e.interval.level,
            estimator: e.estimator,
            mode: e.mode,
        }
    }
}

impl TryFrom<CombinedRepr> for CombinedEstimate {
    type Error = Error;
    fn try_from(r: CombinedRepr) -> Result<Self> {
        Ok(CombinedEstimate {
            q_bar: r.q_bar,
            b_m: r.b_m,
            v_bar: r.v_bar,
            variance: r.variance,
            dof: r.dof,
            interval: IntervalEstimate::new(r.q_bar, r.lower, r.upper, r.level)?,
            estimator: r.estimator,
            mode: r.mode,
        })
    }
}

fn check_level(level: f64) -> Result<()> {
    if !level.is_finite() || !(0.0 < level && level < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    Ok(())
}

fn normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(p)
}

/// Pool separately-analysed replicate estimates with the partial-synthesis
/// estimator T_p. Needs m >= 2 (the between-synthesis variance is a sample
/// variance); for m = 1 use `combine_ts`.
pub fn combine_tp(estimates: &[ReplicateEstimate], level: f64) -> Result<CombinedEstimate> {
    check_level(level)?;
    let m = estimates.len();
    if m < 2 {
        return Err(Error::InvalidParameter(
            "T_p needs at least two replicate estimates; T_s is the m = 1 route".into(),
        ));
    }
    let mf = m as f64;
    let q_bar = estimates.iter().map(|e| e.q).sum::<f64>() / mf;
    let b_m = estimates
        .iter()
        .map(|e| (e.q - q_bar) * (e.q - q_bar))
        .sum::<f64>()
        / (mf - 1.0);
    let v_bar = estimates.iter().map(|e| e.v).sum::<f64>() / mf;
    let variance = b_m / mf + v_bar;
    let p = 0.5 * (1.0 + level);
    let (dof, quantile) = if b_m > 0.0 {
        let nu = (mf - 1.0) * (1.0 + mf * v_bar / b_m).powi(2);
        // beyond ~1e7 degrees of freedom the t quantile equals the normal
        // one to within 1e-6, and statrs's root finder stalls there
        let q = if nu > 1e7 {
            normal_quantile(p)
        } else {
            StudentsT::new(0.0, 1.0, nu)
                .map_err(|e| Error::InvalidParameter(format!("t reference with nu={nu}: {e}")))?
                .inverse_cdf(p)
        };
        (Some(nu), q)
    } else {
        (None, normal_quantile(p))
    };
    let half = quantile * variance.sqrt();
    Ok(CombinedEstimate {
        q_bar,
        b_m: Some(b_m),
        v_bar,
        variance,
        dof,
        interval: IntervalEstimate::new(q_bar, q_bar - half, q_bar + half, level)?,
        estimator: Estimator::Tp,
        mode: AnalysisMode::Separate,
    })
}

/// Combine with the completely-synthesized estimator
/// `T_s = v_bar (n_syn / n + 1/m)` under a normal reference. Valid in large
/// samples and usable at m = 1.
pub fn combine_ts(
    v_bar: f64,
    q_bar: f64,
    m: usize,
    n_syn: f64,
    n: f64,
    level: f64,
) -> Result<CombinedEstimate> {
    check_level(level)?;
    if m == 0 {
        return Err(Error::InvalidParameter("m must be at least 1".into()));
    }
    if !v_bar.is_finite() || v_bar < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "v_bar must be finite and nonnegative, got {v_bar}"
        )));
    }
    if !n.is_finite() || n <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "original sample size must be positive, got {n}"
        )));
    }
    if !n_syn.is_finite() || n_syn < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "synthetic sample size must be finite and nonnegative, got {n_syn}"
        )));
    }
    let variance = v_bar * (n_syn / n + 1.0 / m as f64);
    let half = normal_quantile(0.5 * (1.0 + level)) * variance.sqrt();
    Ok(CombinedEstimate {
        q_bar,
        b_m: None,
        v_bar,
        variance,
        dof: None,
        interval: IntervalEstimate::new(q_bar, q_bar - half, q_bar + half, level)?,
        estimator: Estimator::Ts,
        mode: AnalysisMode::Averaged,
    })
}

/// Run the marginal odds-ratio analysis over an ensemble.
///
/// Separate mode analyses each replicate and combines with T_p (requires
/// m >= 2). Averaged mode analyses the cell-wise mean table once and
/// combines with T_s, plugging in the mean replicate total for n_syn and
/// recovering n from the configured size factor as mean(n_syn) / rho.
pub fn analyze_ensemble(
    ensemble: &SyntheticEnsemble,
    spec: &MarginalOddsSpec,
    mode: AnalysisMode,
    estimator: Estimator,
    level: f64,
    correction: f64,
) -> Result<CombinedEstimate> {
    analyze_replicates(ensemble, ensemble.m(), spec, mode, estimator, level, correction)
}

/// As `analyze_ensemble`, but over the first `m_prefix` replicates only.
/// Sub-seeding guarantees the prefix equals an independent smaller run.
pub fn analyze_replicates(
    ensemble: &SyntheticEnsemble,
    m_prefix: usize,
    spec: &MarginalOddsSpec,
    mode: AnalysisMode,
    estimator: Estimator,
    level: f64,
    correction: f64,
) -> Result<CombinedEstimate> {
    if m_prefix == 0 || m_prefix > ensemble.m() {
        return Err(Error::InvalidParameter(format!(
            "prefix {m_prefix} outside the ensemble of {} replicates",
            ensemble.m()
        )));
    }
    match (mode, estimator) {
        (AnalysisMode::Separate, Estimator::Tp) => {
            let estimates: Vec<ReplicateEstimate> = (0..m_prefix)
                .map(|l| {
                    let table = marginalize_2x2(&ensemble.replicate_view(l), spec)?;
                    log_odds_ratio(&table, correction)
                })
                .collect::<Result<_>>()?;
            combine_tp(&estimates, level)
        }
        (AnalysisMode::Averaged, Estimator::Ts) => {
            let averaged =
                average_replicates(ensemble.schema(), &ensemble.replicates()[..m_prefix]);
            let table = marginalize_2x2(&averaged, spec)?;
            let est = log_odds_ratio(&table, correction)?;
            let n_syn_mean = ensemble.totals()[..m_prefix]
                .iter()
                .map(|&t| t as f64)
                .sum::<f64>()
                / m_prefix as f64;
            let n = n_syn_mean / ensemble.params().size_factor;
            combine_ts(est.v, est.q, m_prefix, n_syn_mean, n, level)
        }
        (AnalysisMode::Separate, Estimator::Ts) => Err(Error::InvalidParameter(
            "separate analysis pools with T_p; averaged mode uses T_s".into(),
        )),
        (AnalysisMode::Averaged, Estimator::Tp) => Err(Error::InvalidParameter(
            "averaged analysis yields one estimate, which T_p cannot pool; use T_s".into(),
        )),
    }
}

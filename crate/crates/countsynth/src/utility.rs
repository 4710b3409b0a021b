//! General utility measures between original and synthetic tables.
//!
//! Distances (Hellinger, Euclidean) and per-cell percentage differences
//! quantify how far the mean synthetic counts drifted from the original
//! counts; the confidence-interval overlap compares an analysis run on both
//! sides. All functions are pure.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::{ContingencyTable, RealTable};

/// Whether distances operate on raw counts or on normalized probabilities.
/// The probability basis bounds the Hellinger distance by 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceBasis {
    Counts,
    Probabilities,
}

fn check_schemas(original: &ContingencyTable, synthetic: &RealTable) -> Result<()> {
    if original.schema() != synthetic.schema() {
        return Err(Error::SchemaMismatch(
            "original and synthetic tables use different schemas".into(),
        ));
    }
    Ok(())
}

/// Percentage difference `100 (v_i - f_i) / f_i` for every cell with
/// f_i >= min_count. Zero cells are excluded whenever min_count >= 1
/// (the default that callers should use; the ratio is undefined at f = 0).
pub fn percent_differences(
    original: &ContingencyTable,
    synthetic: &RealTable,
    min_count: u64,
) -> Result<Vec<f64>> {
    check_schemas(original, synthetic)?;
    if min_count == 0 {
        return Err(Error::InvalidParameter(
            "percentage differences need min_count >= 1; they are undefined at f = 0".into(),
        ));
    }
    Ok(original
        .counts()
        .iter()
        .zip(synthetic.values())
        .filter(|(&f, _)| f >= min_count)
        .map(|(&f, &v)| 100.0 * (v - f as f64) / f as f64)
        .collect())
}

/// Percentage differences stratified by the original cell size.
pub fn percent_differences_by_size(
    original: &ContingencyTable,
    synthetic: &RealTable,
    min_count: u64,
) -> Result<BTreeMap<u64, Vec<f64>>> {
    check_schemas(original, synthetic)?;
    if min_count == 0 {
        return Err(Error::InvalidParameter(
            "percentage differences need min_count >= 1; they are undefined at f = 0".into(),
        ));
    }
    let mut strata: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for (&f, &v) in original.counts().iter().zip(synthetic.values()) {
        if f >= min_count {
            strata
                .entry(f)
                .or_default()
                .push(100.0 * (v - f as f64) / f as f64);
        }
    }
    Ok(strata)
}

/// Hellinger distance `sqrt(sum (sqrt(f_i) - sqrt(v_i))^2) / sqrt(2)`,
/// either on raw counts or on cell probabilities.
pub fn hellinger(
    original: &ContingencyTable,
    synthetic: &RealTable,
    basis: DistanceBasis,
) -> Result<f64> {
    check_schemas(original, synthetic)?;
    let (scale_f, scale_v) = match basis {
        DistanceBasis::Counts => (1.0, 1.0),
        DistanceBasis::Probabilities => {
            let nf = original.total() as f64;
            let nv = synthetic.total();
            if nf == 0.0 || nv == 0.0 {
                return Err(Error::InvalidTable(
                    "probability basis needs a nonzero table total".into(),
                ));
            }
            (nf, nv)
        }
    };
    let sum: f64 = original
        .counts()
        .iter()
        .zip(synthetic.values())
        .map(|(&f, &v)| {
            let a = (f as f64 / scale_f).sqrt();
            let b = (v / scale_v).sqrt();
            (a - b) * (a - b)
        })
        .sum();
    Ok((sum / 2.0).sqrt())
}

/// Euclidean distance between the count vectors.
pub fn euclidean(original: &ContingencyTable, synthetic: &RealTable) -> Result<f64> {
    check_schemas(original, synthetic)?;
    let sum: f64 = original
        .counts()
        .iter()
        .zip(synthetic.values())
        .map(|(&f, &v)| {
            let d = f as f64 - v;
            d * d
        })
        .sum();
    Ok(sum.sqrt())
}

/// A point estimate with a two-sided confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "IntervalRepr", into = "IntervalRepr")]
pub struct IntervalEstimate {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
}

#[derive(Serialize, Deserialize)]
struct IntervalRepr {
    point: f64,
    lower: f64,
    upper: f64,
    level: f64,
}

impl TryFrom<IntervalRepr> for IntervalEstimate {
    type Error = Error;
    fn try_from(r: IntervalRepr) -> Result<Self> {
        IntervalEstimate::new(r.point, r.lower, r.upper, r.level)
    }
}

impl From<IntervalEstimate> for IntervalRepr {
    fn from(i: IntervalEstimate) -> Self {
        IntervalRepr {
            point: i.point,
            lower: i.lower,
            upper: i.upper,
            level: i.level,
        }
    }
}

impl IntervalEstimate {
    pub fn new(point: f64, lower: f64, upper: f64, level: f64) -> Result<Self> {
        if !(lower <= point && point <= upper) {
            return Err(Error::InvalidParameter(format!(
                "interval must satisfy lower <= point <= upper, got [{lower}, {point}, {upper}]"
            )));
        }
        if !level.is_finite() || !(0.0 < level && level < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "confidence level must lie in (0, 1), got {level}"
            )));
        }
        Ok(IntervalEstimate {
            point,
            lower,
            upper,
            level,
        })
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Symmetric confidence-interval overlap: with intersection length L,
/// `0.5 (L / len_original + L / len_synthetic)`, floored at 0 for disjoint
/// intervals. Identical intervals score 1; an interval vastly wider (or
/// narrower) than the other tends to 0.5. A zero-length interval
/// contributes its share as 1 when its point lies inside the other interval
/// and 0 otherwise (the shrinking-interval limit).
pub fn ci_overlap(original: &IntervalEstimate, synthetic: &IntervalEstimate) -> Result<f64> {
    if original.level != synthetic.level {
        return Err(Error::InvalidParameter(format!(
            "intervals use different confidence levels ({} vs {})",
            original.level, synthetic.level
        )));
    }
    let inter = (original.upper.min(synthetic.upper) - original.lower.max(synthetic.lower))
        .max(0.0);
    let share = |own: &IntervalEstimate, other: &IntervalEstimate| -> f64 {
        if own.width() > 0.0 {
            inter / own.width()
        } else if other.lower <= own.point && own.point <= other.upper {
            1.0
        } else {
            0.0
        }
    };
    let overlap = 0.5 * (share(original, synthetic) + share(synthetic, original));
    Ok(overlap.clamp(0.0, 1.0))
}

/// Bundle of general utility measures for one (original, ensemble-average)
/// pair. Quantile keys are the probability levels rendered as strings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityReport {
    pub hellinger: f64,
    pub euclidean: f64,
    pub pct_diff_quantiles: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci_overlap: Option<f64>,
}

/// Empirical quantile by linear interpolation of the sorted sample.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Assemble a utility report. `overlap` is filled by the caller when an
/// analysis-specific comparison is available.
pub fn utility_report(
    original: &ContingencyTable,
    synthetic: &RealTable,
    basis: DistanceBasis,
    min_count: u64,
    overlap: Option<f64>,
) -> Result<UtilityReport> {
    let mut diffs = percent_differences(original, synthetic, min_count)?;
    diffs.sort_by(|a, b| a.total_cmp(b));
    let mut pct_diff_quantiles = BTreeMap::new();
    if !diffs.is_empty() {
        for (label, p) in [
            ("0.05", 0.05),
            ("0.25", 0.25),
            ("0.5", 0.5),
            ("0.75", 0.75),
            ("0.95", 0.95),
        ] {
            pct_diff_quantiles.insert(label.to_string(), quantile(&diffs, p));
        }
    }
    Ok(UtilityReport {
        hellinger: hellinger(original, synthetic, basis)?,
        euclidean: euclidean(original, synthetic)?,
        pct_diff_quantiles,
        ci_overlap: overlap,
    })
}

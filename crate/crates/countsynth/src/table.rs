//! Integer and real-valued contingency tables, and microdata aggregation.
//!
//! [`ContingencyTable`] holds observed (or pooled synthetic) integer counts;
//! [`RealTable`] holds nonnegative reals such as the cell means of a synthetic
//! ensemble. Keeping the two apart lets integer invariants stay checkable
//! while averaged analyses work on reals. Both are immutable after
//! construction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::Schema;

/// Read-only cell access shared by integer and real tables.
pub trait CellTable {
    fn schema(&self) -> &Schema;
    /// Cell value as a real number, in row-major cell order.
    fn cell(&self, index: usize) -> f64;
    fn num_cells(&self) -> usize {
        self.schema().num_cells()
    }
}

/// A multi-way table of nonnegative integer counts with an optional
/// structural-zero mask.
///
/// Structural zeros mark cells that are impossible rather than merely
/// unobserved; they are caller-supplied metadata and never inferred. Masked
/// cells must hold a zero count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TableRepr", into = "TableRepr")]
pub struct ContingencyTable {
    schema: Schema,
    counts: Vec<u64>,
    structural_zeros: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct TableRepr {
    schema: Schema,
    counts: Vec<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    structural_zeros: Vec<usize>,
}

impl TryFrom<TableRepr> for ContingencyTable {
    type Error = Error;
    fn try_from(repr: TableRepr) -> Result<Self> {
        ContingencyTable::with_structural_zeros(repr.schema, repr.counts, repr.structural_zeros)
    }
}

impl From<ContingencyTable> for TableRepr {
    fn from(t: ContingencyTable) -> Self {
        TableRepr {
            schema: t.schema,
            counts: t.counts,
            structural_zeros: t.structural_zeros,
        }
    }
}

impl ContingencyTable {
    pub fn new(schema: Schema, counts: Vec<u64>) -> Result<Self> {
        Self::with_structural_zeros(schema, counts, Vec::new())
    }

    /// `structural_zeros` lists masked cell indices; order and duplicates are
    /// normalized away.
    pub fn with_structural_zeros(
        schema: Schema,
        counts: Vec<u64>,
        mut structural_zeros: Vec<usize>,
    ) -> Result<Self> {
        if counts.len() != schema.num_cells() {
            return Err(Error::InvalidTable(format!(
                "counts length {} does not match schema cell count {}",
                counts.len(),
                schema.num_cells()
            )));
        }
        structural_zeros.sort_unstable();
        structural_zeros.dedup();
        for &i in &structural_zeros {
            if i >= counts.len() {
                return Err(Error::InvalidTable(format!(
                    "structural zero index {i} out of range for {} cells",
                    counts.len()
                )));
            }
            if counts[i] != 0 {
                return Err(Error::InvalidTable(format!(
                    "cell {i} is a structural zero but holds count {}",
                    counts[i]
                )));
            }
        }
        Ok(ContingencyTable {
            schema,
            counts,
            structural_zeros,
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Total count n.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn structural_zero_indices(&self) -> &[usize] {
        &self.structural_zeros
    }

    pub fn is_structural_zero(&self, index: usize) -> bool {
        self.structural_zeros.binary_search(&index).is_ok()
    }

    /// View of the counts as a real table (shares the schema by clone).
    pub fn to_real(&self) -> RealTable {
        RealTable {
            schema: self.schema.clone(),
            values: self.counts.iter().map(|&c| c as f64).collect(),
        }
    }
}

impl CellTable for ContingencyTable {
    fn schema(&self) -> &Schema {
        &self.schema
    }
    fn cell(&self, index: usize) -> f64 {
        self.counts[index] as f64
    }
}

/// A multi-way table of nonnegative reals, e.g. ensemble cell means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RealTableRepr", into = "RealTableRepr")]
pub struct RealTable {
    schema: Schema,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RealTableRepr {
    schema: Schema,
    values: Vec<f64>,
}

impl TryFrom<RealTableRepr> for RealTable {
    type Error = Error;
    fn try_from(repr: RealTableRepr) -> Result<Self> {
        RealTable::new(repr.schema, repr.values)
    }
}

impl From<RealTable> for RealTableRepr {
    fn from(t: RealTable) -> Self {
        RealTableRepr {
            schema: t.schema,
            values: t.values,
        }
    }
}

impl RealTable {
    pub fn new(schema: Schema, values: Vec<f64>) -> Result<Self> {
        if values.len() != schema.num_cells() {
            return Err(Error::InvalidTable(format!(
                "values length {} does not match schema cell count {}",
                values.len(),
                schema.num_cells()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidTable(format!(
                "cell {i} holds {}; values must be finite and nonnegative",
                values[i]
            )));
        }
        Ok(RealTable { schema, values })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

impl CellTable for RealTable {
    fn schema(&self) -> &Schema {
        &self.schema
    }
    fn cell(&self, index: usize) -> f64 {
        self.values[index]
    }
}

/// Tally microdata records into a contingency table over `schema`.
///
/// Each record must carry one label per schema variable, in schema order.
/// The structural-zero mask of the result is empty: aggregation cannot tell
/// a structural zero from a sampling zero.
pub fn aggregate_microdata<S: AsRef<str>>(
    records: &[Vec<S>],
    schema: &Schema,
) -> Result<ContingencyTable> {
    let lookup = schema.label_lookup();
    let strides = schema.strides();
    let mut counts = vec![0u64; schema.num_cells()];
    for (rec_idx, record) in records.iter().enumerate() {
        if record.len() != schema.variables().len() {
            return Err(Error::InvalidTable(format!(
                "record {rec_idx} has {} fields; schema declares {} variables",
                record.len(),
                schema.variables().len()
            )));
        }
        let mut cell = 0usize;
        for (var, label) in record.iter().enumerate() {
            let pos = lookup[var].get(label.as_ref()).ok_or_else(|| {
                Error::UnknownCategory {
                    record: rec_idx,
                    variable: schema.variables()[var].name.clone(),
                    label: label.as_ref().to_string(),
                }
            })?;
            cell += pos * strides[var];
        }
        counts[cell] += 1;
    }
    ContingencyTable::new(schema.clone(), counts)
}

//! Variable schemas and row-major cell indexing for multi-way tables.
//!
//! A [`Schema`] fixes an ordered list of categorical variables, each with an
//! ordered list of category labels. Every table in this crate linearizes its
//! cells in row-major order over that schema: the first variable varies
//! slowest, the last fastest. All modules index cells identically, so tables,
//! ensembles and metrics can be compared cell-by-cell without translation.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One categorical variable: a name plus its ordered category labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub categories: Vec<String>,
}

/// An ordered set of categorical variables defining a multi-way table.
///
/// Invariants enforced at construction: variable names are unique, every
/// declared variable has at least two categories, labels are unique within a
/// variable, and the cell count (the product of category counts) fits in
/// `usize`. A schema with no variables is permitted and describes a single
/// cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SchemaRepr", into = "SchemaRepr")]
pub struct Schema {
    variables: Vec<Variable>,
    cell_count: usize,
}

#[derive(Serialize, Deserialize)]
struct SchemaRepr {
    variables: Vec<Variable>,
}

impl TryFrom<SchemaRepr> for Schema {
    type Error = Error;

    fn try_from(repr: SchemaRepr) -> Result<Self> {
        Schema::new(repr.variables)
    }
}

impl From<Schema> for SchemaRepr {
    fn from(schema: Schema) -> Self {
        SchemaRepr {
            variables: schema.variables,
        }
    }
}

impl Schema {
    pub fn new(variables: Vec<Variable>) -> Result<Self> {
        let mut seen = HashMap::new();
        for (i, var) in variables.iter().enumerate() {
            if let Some(prev) = seen.insert(var.name.clone(), i) {
                return Err(Error::InvalidSchema(format!(
                    "variable {:?} declared twice (positions {prev} and {i})",
                    var.name
                )));
            }
            if var.categories.len() < 2 {
                return Err(Error::InvalidSchema(format!(
                    "variable {:?} has {} categories; at least 2 required",
                    var.name,
                    var.categories.len()
                )));
            }
            let mut labels = HashMap::new();
            for (j, label) in var.categories.iter().enumerate() {
                if labels.insert(label, j).is_some() {
                    return Err(Error::InvalidSchema(format!(
                        "variable {:?} repeats category label {label:?}",
                        var.name
                    )));
                }
            }
        }
        let mut cell_count: usize = 1;
        for var in &variables {
            cell_count = cell_count.checked_mul(var.categories.len()).ok_or_else(|| {
                Error::InvalidSchema("cell count overflows usize".to_string())
            })?;
        }
        Ok(Schema {
            variables,
            cell_count,
        })
    }

    /// A synthetic schema with one variable per entry of `dims`, used for
    /// generated fixtures. Variables are named `v1..vp` with categories
    /// `c1..cN`. An empty `dims` yields the single-cell schema.
    pub fn grid(dims: &[usize]) -> Result<Self> {
        let variables = dims
            .iter()
            .enumerate()
            .map(|(i, &n)| Variable {
                name: format!("v{}", i + 1),
                categories: (1..=n).map(|j| format!("c{j}")).collect(),
            })
            .collect();
        Schema::new(variables)
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    /// Total number of cells K in row-major linearization.
    pub fn num_cells(&self) -> usize {
        self.cell_count
    }

    /// Position of the named variable.
    pub fn variable_index(&self, name: &str) -> Result<usize> {
        self.variables
            .iter()
            .position(|v| v.name == name)
            .ok_or_else(|| Error::InvalidSchema(format!("no variable named {name:?}")))
    }

    /// Row-major strides: cell index = sum over variables of
    /// `category_position * stride`.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1usize; self.variables.len()];
        for i in (0..self.variables.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.variables[i + 1].categories.len();
        }
        strides
    }

    /// Category position of variable `var` within cell `index`.
    pub fn category_position(&self, index: usize, var: usize) -> usize {
        let stride = self.strides()[var];
        (index / stride) % self.variables[var].categories.len()
    }

    /// Label-to-position lookup tables, one per variable, for bulk ingestion.
    pub fn label_lookup(&self) -> Vec<HashMap<&str, usize>> {
        self.variables
            .iter()
            .map(|v| {
                v.categories
                    .iter()
                    .enumerate()
                    .map(|(j, label)| (label.as_str(), j))
                    .collect()
            })
            .collect()
    }
}

/// Factor `cells` into grid dimensions, each kept small where possible, for
/// [`Schema::grid`]. A prime factor larger than 1024 becomes its own
/// dimension. Returns dimensions in descending order.
pub fn grid_dims(cells: usize) -> Vec<usize> {
    let mut rem = cells;
    let mut primes = Vec::new();
    let mut p = 2usize;
    while p.saturating_mul(p) <= rem {
        while rem % p == 0 {
            primes.push(p);
            rem /= p;
        }
        p += 1;
    }
    if rem > 1 {
        primes.push(rem);
    }
    primes.sort_unstable_by(|a, b| b.cmp(a));
    let mut dims: Vec<usize> = Vec::new();
    for f in primes {
        match dims.iter_mut().find(|d| **d * f <= 1024) {
            Some(d) => *d *= f,
            None => dims.push(f),
        }
    }
    dims.sort_unstable_by(|a, b| b.cmp(a));
    dims
}

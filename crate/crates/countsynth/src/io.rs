//! File formats: microdata CSV, table/spectrum/grid JSON, ensemble
//! persistence, and the CSV report writers used by the CLI.
//!
//! An ensemble persists as a directory holding `manifest.json` (parameters,
//! seed, schema, per-replicate totals, replicate file names) plus one table
//! JSON per replicate. A columnar CSV export (`cell_index, rep_1..rep_m`) is
//! available for spreadsheet work but is not a load format, as it drops the
//! schema and parameters. All writers format numbers with the shortest
//! round-trip representation, so identical inputs give byte-identical files.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TradeoffPoint;
use crate::risk::TauReport;
use crate::schema::{Schema, Variable};
use crate::synthesis::{SynthesisParams, SyntheticEnsemble};
use crate::table::{aggregate_microdata, ContingencyTable};

pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    fs::write(path, body)?;
    Ok(())
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let body = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&body)?)
}

/// Read a microdata CSV: a header row naming the variables, then one record
/// per line. Labels are taken verbatim (no trimming).
pub fn read_microdata_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::None)
        .from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        rows.push(record.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

/// Build a schema from observed microdata: one variable per column, with the
/// sorted distinct labels as categories.
pub fn infer_schema(header: &[String], rows: &[Vec<String>]) -> Result<Schema> {
    let mut variables = Vec::with_capacity(header.len());
    for (col, name) in header.iter().enumerate() {
        let mut labels: Vec<String> = rows
            .iter()
            .filter_map(|r| r.get(col))
            .cloned()
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        labels.sort();
        if labels.len() < 2 {
            return Err(Error::InvalidSchema(format!(
                "column {name:?} shows {} distinct label(s); schemas need at least 2 \
                 (pass an explicit schema instead of inferring one)",
                labels.len()
            )));
        }
        variables.push(Variable {
            name: name.clone(),
            categories: labels,
        });
    }
    Schema::new(variables)
}

/// Aggregate a microdata CSV into a table, inferring the schema when none is
/// supplied. With an explicit schema, CSV columns are matched to schema
/// variables by name and may appear in any order.
pub fn aggregate_csv(path: &Path, schema: Option<Schema>) -> Result<ContingencyTable> {
    let (header, rows) = read_microdata_csv(path)?;
    match schema {
        None => {
            let schema = infer_schema(&header, &rows)?;
            aggregate_microdata(&rows, &schema)
        }
        Some(schema) => {
            // permutation: schema variable index -> CSV column
            let columns: Vec<usize> = schema
                .variables()
                .iter()
                .map(|v| {
                    header.iter().position(|h| *h == v.name).ok_or_else(|| {
                        Error::InvalidSchema(format!(
                            "CSV is missing a column for variable {:?}",
                            v.name
                        ))
                    })
                })
                .collect::<Result<_>>()?;
            let reordered: Vec<Vec<&str>> = rows
                .iter()
                .enumerate()
                .map(|(i, row)| {
                    if row.len() != header.len() {
                        return Err(Error::InvalidTable(format!(
                            "record {i} has {} fields; header has {}",
                            row.len(),
                            header.len()
                        )));
                    }
                    Ok(columns.iter().map(|&c| row[c].as_str()).collect())
                })
                .collect::<Result<_>>()?;
            aggregate_microdata(&reordered, &schema)
        }
    }
}

#[derive(Serialize, Deserialize)]
struct EnsembleManifest {
    params: SynthesisParams,
    schema: Schema,
    n_syn: Vec<u64>,
    replicate_files: Vec<String>,
}

/// Persist an ensemble as `manifest.json` plus one replicate table per file.
pub fn save_ensemble(ensemble: &SyntheticEnsemble, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let width = ensemble.m().to_string().len().max(4);
    let replicate_files: Vec<String> = (0..ensemble.m())
        .map(|l| format!("rep_{:0width$}.json", l + 1))
        .collect();
    for (l, name) in replicate_files.iter().enumerate() {
        let table = ContingencyTable::new(
            ensemble.schema().clone(),
            ensemble.replicate(l).to_vec(),
        )?;
        save_json(&table, &dir.join(name))?;
    }
    let manifest = EnsembleManifest {
        params: *ensemble.params(),
        schema: ensemble.schema().clone(),
        n_syn: ensemble.totals().to_vec(),
        replicate_files,
    };
    save_json(&manifest, &dir.join("manifest.json"))
}

/// Load an ensemble saved by [`save_ensemble`], re-validating schemas and
/// totals.
pub fn load_ensemble(dir: &Path) -> Result<SyntheticEnsemble> {
    let manifest: EnsembleManifest = load_json(&dir.join("manifest.json"))?;
    if manifest.replicate_files.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let mut replicates = Vec::with_capacity(manifest.replicate_files.len());
    for name in &manifest.replicate_files {
        let table: ContingencyTable = load_json(&dir.join(name))?;
        if table.schema() != &manifest.schema {
            return Err(Error::SchemaMismatch(format!(
                "replicate {name} does not match the manifest schema"
            )));
        }
        replicates.push(table.counts().to_vec());
    }
    let ensemble =
        SyntheticEnsemble::from_parts(manifest.schema, replicates, manifest.params)?;
    if ensemble.totals() != manifest.n_syn.as_slice() {
        return Err(Error::InvalidTable(
            "replicate totals disagree with the manifest n_syn".into(),
        ));
    }
    Ok(ensemble)
}

/// Columnar CSV export of an ensemble: `cell_index, rep_1..rep_m`.
pub fn write_ensemble_csv<W: Write>(ensemble: &SyntheticEnsemble, mut out: W) -> Result<()> {
    let header: Vec<String> = std::iter::once("cell_index".to_string())
        .chain((1..=ensemble.m()).map(|l| format!("rep_{l}")))
        .collect();
    writeln!(out, "{}", header.join(","))?;
    for i in 0..ensemble.num_cells() {
        let mut row = String::new();
        row.push_str(&i.to_string());
        for l in 0..ensemble.m() {
            row.push(',');
            row.push_str(&ensemble.replicate(l)[i].to_string());
        }
        writeln!(out, "{row}")?;
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Flat CSV rendering of a tau report: `k, d, sigma, m, tau3, tau4, mode`,
/// one row per requested band. Undefined entries are left blank.
pub fn write_risk_csv<W: Write>(
    report: &TauReport,
    bands: &[(u64, f64)],
    mut out: W,
) -> Result<()> {
    writeln!(out, "k,d,sigma,m,tau3,tau4,mode")?;
    for &(k, d) in bands {
        let key = crate::risk::band_key(k, d);
        writeln!(
            out,
            "{k},{d},{},{},{},{},{}",
            fmt_opt(report.sigma),
            report.m.map(|m| m.to_string()).unwrap_or_default(),
            fmt_opt(report.tau3.get(&key).copied()),
            fmt_opt(report.tau4.get(&key).copied()),
            report.mode
        )?;
    }
    Ok(())
}

/// One row of the utility CSV: `sigma, m, hellinger, euclidean, ci_overlap`.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityRow {
    pub sigma: f64,
    pub m: usize,
    pub hellinger: f64,
    pub euclidean: f64,
    pub ci_overlap: Option<f64>,
}

pub fn write_utility_csv<W: Write>(rows: &[UtilityRow], mut out: W) -> Result<()> {
    writeln!(out, "sigma,m,hellinger,euclidean,ci_overlap")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.sigma,
            r.m,
            r.hellinger,
            r.euclidean,
            fmt_opt(r.ci_overlap)
        )?;
    }
    Ok(())
}

/// Trade-off points as CSV. Column contract: one row per (m, sigma) grid
/// point; `risk` is the selected tau metric at its (k, d); `utility` is the
/// run-standardized value in [0, 1] and `utility_raw` the unstandardized
/// measure; `*_se` columns are empty unless replications > 1.
pub fn write_tradeoff_csv<W: Write>(
    points: &[TradeoffPoint],
    risk_label: &str,
    utility_label: Option<&str>,
    mut out: W,
) -> Result<()> {
    writeln!(
        out,
        "m,sigma,provenance,risk_metric,risk,risk_se,utility_metric,utility_raw,utility,utility_se"
    )?;
    for p in points {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            p.m,
            p.sigma,
            p.provenance,
            risk_label,
            p.risk,
            fmt_opt(p.risk_se),
            utility_label.unwrap_or(""),
            fmt_opt(p.utility_raw),
            fmt_opt(p.utility),
            fmt_opt(p.utility_se),
        )?;
    }
    Ok(())
}

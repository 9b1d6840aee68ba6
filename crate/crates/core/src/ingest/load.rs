use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{pca_reduce, DoseBins};
use crate::model::{CovariateSet, ObservationSet};
use crate::{Error, Result};

pub const OBSERVATION_COLUMNS: [&str; 5] = ["chemical_id", "gene_id", "dose_um", "replicate", "response"];
pub const RESPONSE_KIND_COLUMN: &str = "response_kind";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseKind {
    /// log2-fold induction over a negative control.
    #[default]
    Log2foldNegctrl,
    /// Percent activity against a positive control.
    PercentActivity,
}

impl std::str::FromStr for ResponseKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "log2fold_negctrl" => Ok(Self::Log2foldNegctrl),
            "percent_activity" => Ok(Self::PercentActivity),
            other => Err(format!("unknown response kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRecord {
    pub chemical_id: String,
    pub gene_id: String,
    pub dose_um: f64,
    pub replicate: u32,
    pub response: f64,
    pub kind: ResponseKind,
    /// Line in the source file, for messages.
    pub line: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    PercentActivity,
    DoseOutOfRange,
    ChemicalMissingFromW,
    InconsistentReplicates,
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DropReason::PercentActivity => "percent_activity",
            DropReason::DoseOutOfRange => "dose_out_of_range",
            DropReason::ChemicalMissingFromW => "chemical_missing_from_w",
            DropReason::InconsistentReplicates => "inconsistent_replicates",
        })
    }
}

/// Row accounting for one ingestion: `input_rows = retained_rows + sum(dropped)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IngestReport {
    pub input_rows: usize,
    pub retained_rows: usize,
    pub dropped: BTreeMap<DropReason, usize>,
    pub notes: Vec<String>,
}

impl IngestReport {
    fn drop_rows(&mut self, reason: DropReason, count: usize) {
        if count > 0 {
            *self.dropped.entry(reason).or_default() += count;
        }
    }

    pub fn is_balanced(&self) -> bool {
        self.input_rows == self.retained_rows + self.dropped.values().sum::<usize>()
    }
}

/// Drop percent-activity rows, keeping log2-fold rows unchanged.
pub fn harmonize_response(records: Vec<ObservationRecord>, report: &mut IngestReport) -> Vec<ObservationRecord> {
    let before = records.len();
    let kept: Vec<_> = records
        .into_iter()
        .filter(|r| r.kind == ResponseKind::Log2foldNegctrl)
        .collect();
    report.drop_rows(DropReason::PercentActivity, before - kept.len());
    kept
}

fn parse_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn next_record(path: &Path, row: std::result::Result<csv::StringRecord, csv::Error>) -> Result<(u64, csv::StringRecord)> {
    match row {
        Ok(r) => Ok((r.position().map_or(0, |p| p.line()), r)),
        Err(e) => {
            let line = e.position().map_or(0, |p| p.line());
            Err(parse_error(path, line, e.to_string()))
        }
    }
}

fn field<T: std::str::FromStr>(path: &Path, line: u64, record: &csv::StringRecord, idx: usize, name: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    let raw = record.get(idx).unwrap_or("");
    raw.parse()
        .map_err(|e| parse_error(path, line, format!("bad {name} `{raw}`: {e}")))
}

/// Parse an observations CSV, validating its header and every field.
pub fn read_observations(path: &Path) -> Result<Vec<ObservationRecord>> {
    let mut reader = csv_reader(path)?;
    let header = reader.headers()?.clone();
    let names: Vec<&str> = header.iter().collect();
    let required_ok = names.len() >= 5 && names[..5] == OBSERVATION_COLUMNS;
    let extra_ok = names.len() == 5 || (names.len() == 6 && names[5] == RESPONSE_KIND_COLUMN);
    if !required_ok || !extra_ok {
        return Err(parse_error(
            path,
            1,
            format!(
                "header must be `{}` optionally followed by `{RESPONSE_KIND_COLUMN}`, got `{}`",
                OBSERVATION_COLUMNS.join(","),
                names.join(",")
            ),
        ));
    }
    let has_kind = names.len() == 6;
    let mut out = Vec::new();
    for row in reader.records() {
        let (line, record) = next_record(path, row)?;
        let chemical_id = record.get(0).unwrap_or("").to_string();
        let gene_id = record.get(1).unwrap_or("").to_string();
        if chemical_id.is_empty() || gene_id.is_empty() {
            return Err(parse_error(path, line, "empty chemical or gene id"));
        }
        let dose_um: f64 = field(path, line, &record, 2, "dose_um")?;
        if !(dose_um > 0.0) || !dose_um.is_finite() {
            return Err(parse_error(path, line, format!("dose_um must be positive, got {dose_um}")));
        }
        let replicate: u32 = field(path, line, &record, 3, "replicate")?;
        if replicate == 0 {
            return Err(parse_error(path, line, "replicate numbers start at 1"));
        }
        let response: f64 = field(path, line, &record, 4, "response")?;
        if !response.is_finite() {
            return Err(parse_error(path, line, "response must be finite"));
        }
        let kind = if has_kind {
            field(path, line, &record, 5, RESPONSE_KIND_COLUMN)?
        } else {
            ResponseKind::default()
        };
        out.push(ObservationRecord {
            chemical_id,
            gene_id,
            dose_um,
            replicate,
            response,
            kind,
            line,
        });
    }
    Ok(out)
}

/// An id column followed by named numeric columns.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMatrix {
    pub ids: Vec<String>,
    pub columns: Vec<String>,
    pub values: DMatrix<f64>,
}

impl LabeledMatrix {
    fn row_of(&self) -> BTreeMap<&str, usize> {
        self.ids.iter().enumerate().map(|(r, id)| (id.as_str(), r)).collect()
    }
}

pub fn read_labeled_matrix(path: &Path, id_column: &str) -> Result<LabeledMatrix> {
    let mut reader = csv_reader(path)?;
    let header = reader.headers()?.clone();
    if header.get(0) != Some(id_column) || header.len() < 2 {
        return Err(parse_error(path, 1, format!("header must start with `{id_column}` and name at least one column")));
    }
    let columns: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let distinct: BTreeSet<&String> = columns.iter().collect();
    if distinct.len() != columns.len() || columns.iter().any(String::is_empty) {
        return Err(parse_error(path, 1, "column names must be unique and non-empty"));
    }
    let mut ids = Vec::new();
    let mut seen = BTreeSet::new();
    let mut values = Vec::new();
    for row in reader.records() {
        let (line, record) = next_record(path, row)?;
        let id = record.get(0).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(parse_error(path, line, "empty id"));
        }
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateKey {
                path: path.to_path_buf(),
                line,
                key: id,
            });
        }
        for (c, name) in columns.iter().enumerate() {
            let v: f64 = field(path, line, &record, c + 1, name)?;
            if !v.is_finite() {
                return Err(parse_error(path, line, format!("{name} is not finite")));
            }
            values.push(v);
        }
        ids.push(id);
    }
    Ok(LabeledMatrix {
        values: DMatrix::from_row_slice(ids.len(), columns.len(), &values),
        ids,
        columns,
    })
}

/// Where the inputs of a run live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub observations: PathBuf,
    #[serde(default)]
    pub w: Option<PathBuf>,
    #[serde(default)]
    pub z: Option<PathBuf>,
    /// Reduce W to this many principal components; `None` uses W as given.
    #[serde(default)]
    pub w_components: Option<usize>,
}

/// Validated inputs with their id dictionaries (index = position).
#[derive(Debug, Clone)]
pub struct Ingested {
    pub data: ObservationSet,
    pub covariates: CovariateSet,
    pub chemicals: Vec<String>,
    pub genes: Vec<String>,
    pub report: IngestReport,
}

/// Read, filter and index observations and covariates.
///
/// Rows are dropped, and counted, for percent-activity responses, doses
/// outside the bin range, chemicals absent from W, and replicates that were
/// not run at every dose of their pair. Repeated
/// `(chemical, gene, dose, replicate)` keys are an error.
pub fn load_and_validate(config: &DataConfig, bins: &DoseBins) -> Result<Ingested> {
    bins.validate()?;
    let path = config.observations.as_path();
    let mut report = IngestReport::default();
    let records = read_observations(path)?;
    report.input_rows = records.len();

    let mut seen = BTreeSet::new();
    for r in &records {
        let key = (r.chemical_id.as_str(), r.gene_id.as_str(), r.dose_um.to_bits(), r.replicate);
        if !seen.insert(key) {
            return Err(Error::DuplicateKey {
                path: path.to_path_buf(),
                line: r.line,
                key: format!("{}/{}/{}/{}", r.chemical_id, r.gene_id, r.dose_um, r.replicate),
            });
        }
    }

    let records = harmonize_response(records, &mut report);
    let before = records.len();
    let mut records: Vec<_> = records.into_iter().filter(|r| bins.bin(r.dose_um).is_ok()).collect();
    report.drop_rows(DropReason::DoseOutOfRange, before - records.len());

    let w_raw = config.w.as_deref().map(|p| read_labeled_matrix(p, "chemical_id")).transpose()?;
    if let Some(w) = &w_raw {
        let known: BTreeSet<&str> = w.ids.iter().map(String::as_str).collect();
        let missing: BTreeSet<String> = records
            .iter()
            .filter(|r| !known.contains(r.chemical_id.as_str()))
            .map(|r| r.chemical_id.clone())
            .collect();
        let before = records.len();
        records.retain(|r| !missing.contains(&r.chemical_id));
        report.drop_rows(DropReason::ChemicalMissingFromW, before - records.len());
        for id in &missing {
            report.notes.push(format!("chemical {id} has no W row; its observations were dropped"));
        }
    }

    // a replicate is kept only if it was run at every dose of its pair
    let mut doses: BTreeMap<(&str, &str), BTreeSet<u64>> = BTreeMap::new();
    let mut by_rep: BTreeMap<(&str, &str, u32), BTreeSet<u64>> = BTreeMap::new();
    for r in &records {
        doses.entry((&r.chemical_id, &r.gene_id)).or_default().insert(r.dose_um.to_bits());
        by_rep
            .entry((&r.chemical_id, &r.gene_id, r.replicate))
            .or_default()
            .insert(r.dose_um.to_bits());
    }
    let keep: Vec<bool> = records
        .iter()
        .map(|r| by_rep[&(r.chemical_id.as_str(), r.gene_id.as_str(), r.replicate)] == doses[&(r.chemical_id.as_str(), r.gene_id.as_str())])
        .collect();
    let mut inconsistent = BTreeSet::new();
    for (r, k) in records.iter().zip(&keep) {
        if !k {
            inconsistent.insert((r.chemical_id.clone(), r.gene_id.clone()));
        }
    }
    for (c, g) in &inconsistent {
        report.notes.push(format!("pair {c}/{g}: replicates not run at every dose were dropped"));
    }
    let before = records.len();
    let records: Vec<_> = records.into_iter().zip(keep).filter_map(|(r, k)| k.then_some(r)).collect();
    report.drop_rows(DropReason::InconsistentReplicates, before - records.len());
    report.retained_rows = records.len();

    let chemicals: Vec<String> = records.iter().map(|r| r.chemical_id.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let genes: Vec<String> = records.iter().map(|r| r.gene_id.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let chem_idx: BTreeMap<&str, usize> = chemicals.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let gene_idx: BTreeMap<&str, usize> = genes.iter().enumerate().map(|(j, g)| (g.as_str(), j)).collect();

    let mut cells: BTreeMap<(usize, usize, usize), Vec<(u32, u64, f64)>> = BTreeMap::new();
    for r in &records {
        let key = (chem_idx[r.chemical_id.as_str()], gene_idx[r.gene_id.as_str()], bins.bin(r.dose_um)?);
        cells.entry(key).or_default().push((r.replicate, r.dose_um.to_bits(), r.response));
    }
    let mut data = ObservationSet::new(chemicals.len(), genes.len(), bins.grid()?);
    for (key, mut reps) in cells {
        reps.sort_by(|a, b| (a.0, f64::from_bits(a.1)).partial_cmp(&(b.0, f64::from_bits(b.1))).expect("finite doses"));
        data.set_cell(key, reps.into_iter().map(|r| r.2).collect())?;
    }

    let w = match w_raw {
        None => None,
        Some(w) => {
            let rows = w.row_of();
            let mut m = DMatrix::zeros(chemicals.len(), w.columns.len());
            for (i, c) in chemicals.iter().enumerate() {
                m.set_row(i, &w.values.row(rows[c.as_str()]));
            }
            match config.w_components {
                None => Some(m),
                Some(c) => {
                    let pca = pca_reduce(&m, c)?;
                    report.notes.push(format!(
                        "W reduced to {c} principal components explaining {:.1}% of the variance",
                        100.0 * pca.explained.iter().sum::<f64>()
                    ));
                    Some(pca.scores)
                }
            }
        }
    };
    let z = match config.z.as_deref() {
        None => None,
        Some(p) => {
            let z = read_labeled_matrix(p, "gene_id")?;
            if let Some(bad) = z.values.iter().find(|v| **v != 0.0 && **v != 1.0) {
                return Err(parse_error(p, 0, format!("pathway indicators must be 0 or 1, found {bad}")));
            }
            let rows = z.row_of();
            let mut m = DMatrix::zeros(genes.len(), z.columns.len());
            let mut absent = 0;
            for (j, g) in genes.iter().enumerate() {
                match rows.get(g.as_str()) {
                    Some(&r) => m.set_row(j, &z.values.row(r)),
                    None => absent += 1,
                }
            }
            if absent > 0 {
                report.notes.push(format!("{absent} gene(s) have no Z row and get all-zero indicators"));
            }
            Some(m)
        }
    };
    let covariates = CovariateSet::new(w, z)?;
    debug_assert!(report.is_balanced());
    Ok(Ingested {
        data,
        covariates,
        chemicals,
        genes,
        report,
    })
}

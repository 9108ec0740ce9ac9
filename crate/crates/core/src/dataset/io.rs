//! Ingestion from delimited or JSON-lines files and the canonical CSV form.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    bin_index, DatasetError, FactorKind, FactorSpec, FactorValue, ScoredDataset, ScoredRecord,
    MISSING_TOKEN,
};

/// What to do with a row whose factor cell is absent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    #[default]
    DropRow,
    /// Missing categorical cells become the `<missing>` token; missing group
    /// flags count as absent. Continuous cells cannot form a category, so
    /// those rows are dropped under either policy.
    OwnCategory,
}

/// Column lookup for one factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FactorColumns {
    Single(String),
    /// member name -> column name
    Members(BTreeMap<String, String>),
}

/// Maps dataset columns onto the score, the label, and each declared factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub score: String,
    pub label: String,
    #[serde(default)]
    pub factors: BTreeMap<String, FactorColumns>,
}

impl ColumnSchema {
    /// Schema in which every factor (and group member) reads the column of
    /// its own name.
    pub fn from_specs(specs: &[FactorSpec]) -> Self {
        let mut factors = BTreeMap::new();
        for spec in specs {
            let cols = match &spec.kind {
                FactorKind::Group { members } => FactorColumns::Members(
                    members.iter().map(|m| (m.clone(), m.clone())).collect(),
                ),
                _ => FactorColumns::Single(spec.name.clone()),
            };
            factors.insert(spec.name.clone(), cols);
        }
        ColumnSchema {
            score: "score".to_string(),
            label: "label".to_string(),
            factors,
        }
    }
}

/// A row that did not make it into the dataset, and why.
#[derive(Debug, Clone, PartialEq)]
pub struct RowIssue {
    /// 1-based data row (header excluded).
    pub row: usize,
    pub message: String,
}

impl fmt::Display for RowIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at row {}", self.message, self.row)
    }
}

pub struct Ingested {
    pub dataset: ScoredDataset,
    /// Rejected and policy-dropped rows with row-numbered diagnostics.
    pub issues: Vec<RowIssue>,
}

struct RawTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_table(path: &Path) -> Result<RawTable, DatasetError> {
    let display = path.display().to_string();
    let unreadable = |source| DatasetError::UnreadableFile {
        path: display.clone(),
        source,
    };
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    if matches!(ext.as_str(), "jsonl" | "ndjson" | "json") {
        let mut text = String::new();
        std::fs::File::open(path)
            .map_err(&unreadable)?
            .read_to_string(&mut text)
            .map_err(&unreadable)?;
        let mut keys: BTreeSet<String> = BTreeSet::new();
        let mut objects = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let obj: BTreeMap<String, serde_json::Value> =
                serde_json::from_str(line).map_err(|e| DatasetError::UnreadableFile {
                    path: display.clone(),
                    source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
                })?;
            keys.extend(obj.keys().cloned());
            objects.push(obj);
        }
        let header: Vec<String> = keys.into_iter().collect();
        let rows = objects
            .into_iter()
            .map(|obj| {
                header
                    .iter()
                    .map(|k| match obj.get(k) {
                        None | Some(serde_json::Value::Null) => String::new(),
                        Some(serde_json::Value::String(s)) => s.clone(),
                        Some(v) => v.to_string(),
                    })
                    .collect()
            })
            .collect();
        return Ok(RawTable { header, rows });
    }
    let mut reader = csv::ReaderBuilder::new()
        .flexible(false)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => unreadable(source),
            other => DatasetError::UnreadableFile {
                path: display.clone(),
                source: std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{other:?}")),
            },
        })?;
    let header = reader
        .headers()
        .map_err(|e| DatasetError::UnreadableFile {
            path: display.clone(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
        })?
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| DatasetError::UnreadableFile {
            path: display.clone(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
        })?;
        rows.push(rec.iter().map(|s| s.to_string()).collect());
    }
    Ok(RawTable { header, rows })
}

fn is_missing(cell: &str) -> bool {
    let t = cell.trim();
    t.is_empty() || t == "NA" || t == "na" || t == "null"
}

/// Distinct non-missing values of each named column, one set per input name.
/// Lets callers infer a categorical vocabulary before ingestion fixes it.
pub(crate) fn scan_columns(
    path: &Path,
    columns: &[String],
) -> Result<Vec<BTreeSet<String>>, DatasetError> {
    let display = path.display().to_string();
    let table = read_table(path)?;
    let mut indices = Vec::with_capacity(columns.len());
    for column in columns {
        let idx = table
            .header
            .iter()
            .position(|h| h == column)
            .ok_or_else(|| DatasetError::UnknownColumn {
                column: column.clone(),
                path: display.clone(),
            })?;
        indices.push(idx);
    }
    let mut sets = vec![BTreeSet::new(); columns.len()];
    for cells in &table.rows {
        for (set, &idx) in sets.iter_mut().zip(&indices) {
            let cell = cells.get(idx).map(String::as_str).unwrap_or("");
            if !is_missing(cell) {
                set.insert(cell.to_string());
            }
        }
    }
    Ok(sets)
}

/// Read `path`, map columns through `schema`, validate against `specs`, and
/// return the surviving rows as a dataset. Continuous factors come back as
/// raw reals awaiting [`super::bin_continuous`].
pub fn ingest(
    path: impl AsRef<Path>,
    schema: &ColumnSchema,
    specs: &[FactorSpec],
    policy: MissingPolicy,
    site_id: &str,
) -> Result<Ingested, DatasetError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let table = read_table(path)?;
    let col = |name: &str| -> Result<usize, DatasetError> {
        table
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DatasetError::UnknownColumn {
                column: name.to_string(),
                path: display.clone(),
            })
    };
    let score_col = col(&schema.score)?;
    let label_col = col(&schema.label)?;

    enum Cols {
        Single(usize),
        Members(Vec<(String, usize)>),
    }
    let mut factor_cols = Vec::with_capacity(specs.len());
    for spec in specs {
        let mapping = schema.factors.get(&spec.name);
        let cols = match (&spec.kind, mapping) {
            (FactorKind::Group { members }, m) => {
                let lookup: BTreeMap<&str, &str> = match m {
                    Some(FactorColumns::Members(map)) => {
                        map.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect()
                    }
                    _ => BTreeMap::new(),
                };
                let mut resolved = Vec::with_capacity(members.len());
                for member in members {
                    let column = lookup.get(member.as_str()).copied().unwrap_or(member);
                    resolved.push((member.clone(), col(column)?));
                }
                Cols::Members(resolved)
            }
            (_, Some(FactorColumns::Single(c))) => Cols::Single(col(c)?),
            (_, Some(FactorColumns::Members(_))) => {
                return Err(DatasetError::SpecInvalid {
                    name: spec.name.clone(),
                    reason: "member columns given for a non-group factor".to_string(),
                })
            }
            (_, None) => Cols::Single(col(&spec.name)?),
        };
        factor_cols.push(cols);
    }

    // Under own-category the missing token joins each categorical vocabulary.
    let mut specs: Vec<FactorSpec> = specs.to_vec();
    if policy == MissingPolicy::OwnCategory {
        for spec in &mut specs {
            if let FactorKind::Categorical { vocabulary } = &mut spec.kind {
                if !vocabulary.iter().any(|v| v == MISSING_TOKEN) {
                    vocabulary.push(MISSING_TOKEN.to_string());
                }
            }
        }
    }

    let mut issues = Vec::new();
    let mut records = Vec::with_capacity(table.rows.len());
    'rows: for (i, cells) in table.rows.iter().enumerate() {
        let row = i + 1;
        let reject = |issues: &mut Vec<RowIssue>, message: String| {
            issues.push(RowIssue { row, message });
        };
        let score_cell = cells[score_col].trim();
        let score: f64 = match score_cell.parse() {
            Ok(v) => v,
            Err(_) => {
                reject(&mut issues, format!("unparseable score '{score_cell}'"));
                continue;
            }
        };
        if !score.is_finite() || !(0.0..=1.0).contains(&score) {
            reject(&mut issues, "score out of [0,1]".to_string());
            continue;
        }
        let label_cell = cells[label_col].trim();
        let label = match label_cell.parse::<f64>() {
            Ok(v) if v == 0.0 => 0u8,
            Ok(v) if v == 1.0 => 1u8,
            _ => {
                reject(&mut issues, format!("label '{label_cell}' not in {{0,1}}"));
                continue;
            }
        };
        let mut factors = BTreeMap::new();
        for (spec, cols) in specs.iter().zip(&factor_cols) {
            let value = match (&spec.kind, cols) {
                (FactorKind::Categorical { vocabulary }, Cols::Single(c)) => {
                    let cell = cells[*c].trim();
                    if is_missing(cell) {
                        match policy {
                            MissingPolicy::DropRow => {
                                reject(
                                    &mut issues,
                                    format!("missing value for '{}' (row dropped)", spec.name),
                                );
                                continue 'rows;
                            }
                            MissingPolicy::OwnCategory => {
                                FactorValue::Category(MISSING_TOKEN.to_string())
                            }
                        }
                    } else if vocabulary.iter().any(|v| v == cell) {
                        FactorValue::Category(cell.to_string())
                    } else {
                        reject(
                            &mut issues,
                            format!("category '{cell}' not in vocabulary of '{}'", spec.name),
                        );
                        continue 'rows;
                    }
                }
                (FactorKind::ContinuousBinned { bin_edges }, Cols::Single(c)) => {
                    let cell = cells[*c].trim();
                    if is_missing(cell) {
                        reject(
                            &mut issues,
                            format!("missing value for '{}' (row dropped)", spec.name),
                        );
                        continue 'rows;
                    }
                    // Canonical files store already-binned indices as plain
                    // integers; raw values always carry a '.' or exponent.
                    if !bin_edges.is_empty() && cell.bytes().all(|b| b.is_ascii_digit()) {
                        match cell.parse::<usize>() {
                            Ok(b) if b <= bin_edges.len() => FactorValue::Bin(b),
                            _ => {
                                reject(
                                    &mut issues,
                                    format!("bin index '{cell}' out of range for '{}'", spec.name),
                                );
                                continue 'rows;
                            }
                        }
                    } else {
                        match cell.parse::<f64>() {
                            Ok(x) if x.is_finite() => {
                                if bin_edges.is_empty() {
                                    FactorValue::Real(x)
                                } else {
                                    FactorValue::Bin(bin_index(x, bin_edges))
                                }
                            }
                            _ => {
                                reject(
                                    &mut issues,
                                    format!("unparseable value '{cell}' for '{}'", spec.name),
                                );
                                continue 'rows;
                            }
                        }
                    }
                }
                (FactorKind::Group { .. }, Cols::Members(members)) => {
                    let mut set = BTreeSet::new();
                    for (member, c) in members {
                        let cell = cells[*c].trim();
                        if is_missing(cell) {
                            match policy {
                                MissingPolicy::DropRow => {
                                    reject(
                                        &mut issues,
                                        format!(
                                            "missing flag '{member}' of '{}' (row dropped)",
                                            spec.name
                                        ),
                                    );
                                    continue 'rows;
                                }
                                MissingPolicy::OwnCategory => continue,
                            }
                        }
                        match cell.parse::<f64>() {
                            Ok(v) if v == 0.0 => {}
                            Ok(v) if v == 1.0 => {
                                set.insert(member.clone());
                            }
                            _ => {
                                reject(
                                    &mut issues,
                                    format!("flag '{member}' of '{}' must be 0 or 1", spec.name),
                                );
                                continue 'rows;
                            }
                        }
                    }
                    FactorValue::Flags(set)
                }
                _ => unreachable!("column resolution matches spec kind"),
            };
            factors.insert(spec.name.clone(), value);
        }
        records.push(ScoredRecord { score, label, factors });
    }

    if records.is_empty() {
        return Err(DatasetError::NoSurvivingRows { path: display });
    }
    let dataset = ScoredDataset::new(site_id, records, specs)?;
    Ok(Ingested { dataset, issues })
}

fn canonical_cell(value: &FactorValue) -> String {
    match value {
        FactorValue::Category(c) => c.clone(),
        FactorValue::Bin(b) => b.to_string(),
        FactorValue::Real(x) => format!("{x:.16e}"),
        FactorValue::Flags(_) => unreachable!("flags expand to member columns"),
    }
}

/// Write the canonical CSV form: scores at 17 significant digits, group
/// factors expanded to one 0/1 column per member. Re-ingesting the file with
/// the same specs reproduces the records bit for bit.
pub fn write_canonical(dataset: &ScoredDataset, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let failed = |source: std::io::Error| DatasetError::WriteFailed {
        path: path.display().to_string(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => failed(source),
        other => failed(std::io::Error::other(format!("{other:?}"))),
    })?;
    let mut header = vec!["score".to_string(), "label".to_string()];
    for spec in dataset.specs() {
        match &spec.kind {
            FactorKind::Group { members } => header.extend(members.iter().cloned()),
            _ => header.push(spec.name.clone()),
        }
    }
    w.write_record(&header).map_err(|e| failed(std::io::Error::other(e)))?;
    for rec in dataset.records() {
        let mut cells = vec![format!("{:.16e}", rec.score), rec.label.to_string()];
        for spec in dataset.specs() {
            match (&spec.kind, rec.factors.get(&spec.name)) {
                (FactorKind::Group { members }, Some(FactorValue::Flags(set))) => {
                    for m in members {
                        cells.push(if set.contains(m) { "1" } else { "0" }.to_string());
                    }
                }
                (_, Some(v)) => cells.push(canonical_cell(v)),
                (_, None) => cells.push(String::new()),
            }
        }
        w.write_record(&cells).map_err(|e| failed(std::io::Error::other(e)))?;
    }
    w.flush().map_err(failed)
}

/// Read a file produced by [`write_canonical`] back under the same specs.
pub fn read_canonical(
    path: impl AsRef<Path>,
    specs: &[FactorSpec],
    site_id: &str,
) -> Result<ScoredDataset, DatasetError> {
    let schema = ColumnSchema::from_specs(specs);
    let ingested = ingest(path, &schema, specs, MissingPolicy::DropRow, site_id)?;
    Ok(ingested.dataset)
}

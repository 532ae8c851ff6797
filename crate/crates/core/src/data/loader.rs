use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Label,
}

/// Per-column declaration. Columns absent from `columns` take `default`,
/// or are dropped when no default is set.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    #[serde(default)]
    pub columns: BTreeMap<String, ColumnKind>,
    #[serde(default)]
    pub default: Option<ColumnKind>,
}

impl Schema {
    pub fn new<I, S>(columns: I) -> Self
    where
        I: IntoIterator<Item = (S, ColumnKind)>,
        S: Into<String>,
    {
        Self {
            columns: columns.into_iter().map(|(n, k)| (n.into(), k)).collect(),
            default: None,
        }
    }

    fn kind_of(&self, column: &str) -> Option<ColumnKind> {
        self.columns.get(column).copied().or(self.default)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RawValues {
    Numeric(Vec<f64>),
    Categorical(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawColumn {
    pub name: String,
    pub values: RawValues,
}

/// Typed cells of a CSV file; labels already mapped to dense ids.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub columns: Vec<RawColumn>,
    pub labels: Vec<usize>,
    /// Original label strings, indexed by label id.
    pub class_names: Vec<String>,
}

impl RawTable {
    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }
}

/// Reads a headed RFC 4180 CSV file according to `schema`.
///
/// Label values are mapped to ids in order of first appearance.
pub fn load_csv_dataset(path: impl AsRef<Path>, schema: &Schema) -> Result<RawTable> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    if let Some(missing) = schema.columns.keys().find(|c| !headers.contains(c)) {
        return Err(Error::UnknownColumn(missing.clone()));
    }

    let kinds: Vec<Option<ColumnKind>> = headers.iter().map(|h| schema.kind_of(h)).collect();
    let label_cols: Vec<usize> = kinds
        .iter()
        .enumerate()
        .filter(|(_, k)| **k == Some(ColumnKind::Label))
        .map(|(i, _)| i)
        .collect();
    if label_cols.len() != 1 {
        return Err(Error::LabelColumnCount(label_cols.len()));
    }
    let label_col = label_cols[0];

    let mut columns: Vec<(usize, RawColumn)> = kinds
        .iter()
        .enumerate()
        .filter_map(|(i, k)| {
            let values = match k {
                Some(ColumnKind::Numeric) => RawValues::Numeric(Vec::new()),
                Some(ColumnKind::Categorical) => RawValues::Categorical(Vec::new()),
                _ => return None,
            };
            Some((
                i,
                RawColumn {
                    name: headers[i].clone(),
                    values,
                },
            ))
        })
        .collect();

    let mut label_ids: HashMap<String, usize> = HashMap::new();
    let mut class_names = Vec::new();
    let mut labels = Vec::new();

    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let row = row + 1;
        for (i, col) in columns.iter_mut() {
            let cell = record.get(*i).unwrap_or("").trim();
            match &mut col.values {
                RawValues::Numeric(v) => {
                    let x: f64 = cell.parse().map_err(|_| Error::Parse {
                        row,
                        column: col.name.clone(),
                        value: cell.to_owned(),
                    })?;
                    if !x.is_finite() {
                        return Err(Error::Parse {
                            row,
                            column: col.name.clone(),
                            value: cell.to_owned(),
                        });
                    }
                    v.push(x);
                }
                RawValues::Categorical(v) => v.push(cell.to_owned()),
            }
        }
        let raw_label = record.get(label_col).unwrap_or("").trim().to_owned();
        let next = label_ids.len();
        let id = *label_ids.entry(raw_label.clone()).or_insert_with(|| {
            class_names.push(raw_label);
            next
        });
        labels.push(id);
    }

    if labels.is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    if class_names.len() < 2 {
        return Err(Error::TooFewClasses);
    }
    Ok(RawTable {
        columns: columns.into_iter().map(|(_, c)| c).collect(),
        labels,
        class_names,
    })
}

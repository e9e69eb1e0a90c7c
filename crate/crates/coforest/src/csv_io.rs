//! Labelled CSV datasets and bare numeric matrices.

use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use coforest_core::{Dataset, Matrix};

use crate::error::{AppError, Result};

/// Which CSV column holds the class label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    Name(String),
    Index(usize),
}

impl FromStr for LabelColumn {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => Self::Index(i),
            Err(_) => Self::Name(s.to_string()),
        })
    }
}

impl Default for LabelColumn {
    /// The last column.
    fn default() -> Self {
        Self::Index(usize::MAX)
    }
}

/// A dataset plus what is needed to write it back: the original label
/// strings in class-index order and the label column's header.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledData {
    pub dataset: Dataset,
    pub class_names: Vec<String>,
    pub label_name: String,
}

pub fn load_csv(path: &Path, label: &LabelColumn) -> Result<LabeledData> {
    load_csv_with_classes(path, label, None)
}

/// Like [`load_csv`], but labels are mapped through `classes` (in index
/// order) instead of first appearance. Unknown labels are an error.
pub fn load_csv_with_classes(path: &Path, label: &LabelColumn, classes: Option<&[String]>) -> Result<LabeledData> {
    let file = std::fs::File::open(path).map_err(|e| AppError::io(path, e))?;
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    read_csv(file, &path.display().to_string(), &name, label, classes)
}

/// Parses a headed CSV with one label column and numeric features.
/// `source` is used in error messages, `name` becomes the dataset name.
pub fn read_csv<R: Read>(
    reader: R,
    source: &str,
    name: &str,
    label: &LabelColumn,
    classes: Option<&[String]>,
) -> Result<LabeledData> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| AppError::Format(format!("{source}: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.len() < 2 {
        return Err(AppError::Format(format!("{source}: need a label column and at least one feature column")));
    }
    let label_idx = match label {
        LabelColumn::Index(usize::MAX) => headers.len() - 1,
        LabelColumn::Index(i) if *i < headers.len() => *i,
        LabelColumn::Index(i) => {
            return Err(AppError::Format(format!("{source}: label column {i} out of range ({} columns)", headers.len())))
        }
        LabelColumn::Name(n) => headers
            .iter()
            .position(|h| h == n)
            .ok_or_else(|| AppError::Format(format!("{source}: no column named `{n}`")))?,
    };
    let feature_names: Vec<String> =
        headers.iter().enumerate().filter(|&(i, _)| i != label_idx).map(|(_, h)| h.clone()).collect();

    let mut class_names: Vec<String> = classes.map(<[String]>::to_vec).unwrap_or_default();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| AppError::Format(format!("{source}: {e}")))?;
        let line = record.position().map_or(0, |p| p.line());
        for (i, cell) in record.iter().enumerate() {
            if i == label_idx {
                let class = match class_names.iter().position(|c| c == cell) {
                    Some(c) => c,
                    None if classes.is_some() => {
                        return Err(AppError::Parse {
                            path: source.to_string(),
                            line,
                            column: headers[i].clone(),
                            message: format!("label `{cell}` is not one of the model's classes"),
                        })
                    }
                    None => {
                        class_names.push(cell.to_string());
                        class_names.len() - 1
                    }
                };
                labels.push(class);
                continue;
            }
            let v: f64 = cell.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| AppError::Parse {
                path: source.to_string(),
                line,
                column: headers[i].clone(),
                message: format!("`{cell}` is not a finite number"),
            })?;
            values.push(v);
        }
    }
    if labels.is_empty() {
        return Err(AppError::Format(format!("{source}: empty dataset")));
    }
    if class_names.len() < 2 {
        return Err(AppError::Format(format!("{source}: fewer than 2 classes")));
    }
    let instances = Matrix::from_vec(labels.len(), feature_names.len(), values)?;
    let dataset = Dataset::new(name, feature_names, instances, labels, class_names.len())?;
    Ok(LabeledData { dataset, class_names, label_name: headers[label_idx].clone() })
}

/// Writes features followed by the label column, using the original label
/// strings. Values are written in shortest round-trip form.
pub fn write_csv(path: &Path, data: &LabeledData) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path).map_err(|e| AppError::Format(format!("{}: {e}", path.display())))?;
    let ds = &data.dataset;
    let mut header: Vec<&str> = ds.feature_names.iter().map(String::as_str).collect();
    header.push(&data.label_name);
    let to_err = |e: csv::Error| AppError::Format(format!("{}: {e}", path.display()));
    wtr.write_record(&header).map_err(to_err)?;
    for (x, &y) in ds.instances.iter_rows().zip(&ds.labels) {
        let mut row: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        row.push(data.class_names[y].clone());
        wtr.write_record(&row).map_err(to_err)?;
    }
    wtr.flush().map_err(|e| AppError::io(path, e))
}

/// A header-less CSV of numbers, one matrix row per line.
pub fn read_matrix_csv(path: &Path) -> Result<Matrix> {
    let text = crate::error::read_to_string(path)?;
    parse_matrix_csv(&text, &path.display().to_string())
}

pub fn parse_matrix_csv(text: &str, source: &str) -> Result<Matrix> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| AppError::Format(format!("{source}: {e}")))?;
        let line = record.position().map_or(0, |p| p.line());
        let row = record
            .iter()
            .enumerate()
            .map(|(i, cell)| {
                cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| AppError::Parse {
                    path: source.to_string(),
                    line,
                    column: i.to_string(),
                    message: format!("`{cell}` is not a finite number"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(AppError::Format(format!("{source}: empty matrix")));
    }
    Ok(Matrix::from_rows(&rows)?)
}

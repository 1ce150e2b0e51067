use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{GmedError, Result};

/// Which CSV columns play which role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub outcome: String,
    pub mediator: String,
    pub exposure: String,
    pub confounders: Vec<String>,
    pub weights: Option<String>,
}

impl ColumnMap {
    pub fn new(outcome: &str, mediator: &str, exposure: &str, confounders: &[&str]) -> Self {
        Self {
            outcome: outcome.into(),
            mediator: mediator.into(),
            exposure: exposure.into(),
            confounders: confounders.iter().map(|s| s.to_string()).collect(),
            weights: None,
        }
    }

    pub fn with_weights(mut self, column: &str) -> Self {
        self.weights = Some(column.into());
        self
    }
}

/// Treatment of missing cells (`""`, `NA`, `NaN`) in mapped columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissingPolicy {
    #[default]
    Error,
    DropRows,
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim(), "" | "NA" | "na" | "NaN" | "nan" | "null")
}

/// Reads a header-first CSV file into a [`Dataset`].
pub fn load_csv(path: impl AsRef<Path>, columns: &ColumnMap, missing: MissingPolicy) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path.as_ref())
        .map_err(|e| GmedError::Io(e.to_string()))?;
    let headers = reader.headers().map_err(|e| GmedError::Io(e.to_string()))?.clone();
    let locate = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| GmedError::MissingColumn(name.to_string()))
    };

    let mut wanted: Vec<(String, usize)> = Vec::new();
    for name in [&columns.outcome, &columns.mediator, &columns.exposure] {
        wanted.push((name.clone(), locate(name)?));
    }
    for name in &columns.confounders {
        wanted.push((name.clone(), locate(name)?));
    }
    if let Some(w) = &columns.weights {
        wanted.push((w.clone(), locate(w)?));
    }

    let mut table: Vec<Vec<f64>> = vec![Vec::new(); wanted.len()];
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| GmedError::Io(e.to_string()))?;
        let row = row_idx + 1;
        let mut values = Vec::with_capacity(wanted.len());
        let mut skip = false;
        for (name, col) in &wanted {
            let cell = record.get(*col).unwrap_or("");
            if is_missing(cell) {
                match missing {
                    MissingPolicy::DropRows => {
                        skip = true;
                        break;
                    }
                    MissingPolicy::Error => {
                        return Err(GmedError::NonNumericCell { row, column: name.clone(), value: cell.to_string() })
                    }
                }
            }
            let v: f64 = cell.trim().parse().map_err(|_| GmedError::NonNumericCell {
                row,
                column: name.clone(),
                value: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(GmedError::NonNumericCell { row, column: name.clone(), value: cell.to_string() });
            }
            values.push(v);
        }
        if skip {
            continue;
        }
        for (col, v) in table.iter_mut().zip(values) {
            col.push(v);
        }
    }

    let n = table[0].len();
    if n == 0 {
        return Err(GmedError::EmptyAfterFiltering);
    }
    let vec = |i: usize| DVector::from_vec(table[i].clone());
    let k = columns.confounders.len();
    let z = DMatrix::from_fn(n, k, |i, j| table[3 + j][i]);
    let weights = columns.weights.as_ref().map(|_| vec(3 + k));
    Dataset::with_names(vec(0), vec(1), vec(2), z, weights, columns.confounders.clone())
}

/// Writes a dataset as CSV with columns `y,m,x,<confounders>,w`.
///
/// Values use the shortest representation that parses back to the same
/// double, so `load_csv` recovers the data bit for bit.
pub fn write_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<ColumnMap> {
    let mut writer = csv::Writer::from_path(path.as_ref()).map_err(|e| GmedError::Io(e.to_string()))?;
    let mut header = vec!["y".to_string(), "m".to_string(), "x".to_string()];
    header.extend(data.confounder_names().iter().cloned());
    header.push("w".to_string());
    writer.write_record(&header).map_err(|e| GmedError::Io(e.to_string()))?;
    let z = data.confounders();
    for i in 0..data.n() {
        let mut row = vec![
            data.outcome()[i].to_string(),
            data.mediator()[i].to_string(),
            data.exposure()[i].to_string(),
        ];
        for j in 1..z.ncols() {
            row.push(z[(i, j)].to_string());
        }
        row.push(data.weights()[i].to_string());
        writer.write_record(&row).map_err(|e| GmedError::Io(e.to_string()))?;
    }
    writer.flush()?;
    Ok(ColumnMap {
        outcome: "y".into(),
        mediator: "m".into(),
        exposure: "x".into(),
        confounders: data.confounder_names().to_vec(),
        weights: Some("w".into()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file_with(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    const FOUR_ROWS: &str = "y,m,x,z\n1.0,0.5,0,0.1\n2.0,0.7,1,-0.4\n0.5,0.2,1,1.3\n1.5,0.9,0,0.0\n";

    #[test]
    fn four_row_file_parses() {
        let f = file_with(FOUR_ROWS);
        let d = load_csv(f.path(), &ColumnMap::new("y", "m", "x", &["z"]), MissingPolicy::Error).unwrap();
        assert_eq!(d.n(), 4);
        assert_eq!(d.confounders().ncols(), 2);
        assert_eq!(d.confounders()[(1, 1)], -0.4);
    }

    #[test]
    fn missing_column_reported() {
        let f = file_with(FOUR_ROWS);
        let err = load_csv(f.path(), &ColumnMap::new("y", "m", "treat", &["z"]), MissingPolicy::Error).unwrap_err();
        assert_eq!(err, GmedError::MissingColumn("treat".into()));
    }

    #[test]
    fn na_dropped_or_rejected() {
        let text = "y,m,x,z\n1.0,0.5,0,0.1\n2.0,NA,1,-0.4\n0.5,0.2,1,1.3\n1.5,0.9,0,0.0\n3.0,0.1,1,0.2\n0.2,0.4,0,0.9\n";
        let f = file_with(text);
        let map = ColumnMap::new("y", "m", "x", &["z"]);
        let d = load_csv(f.path(), &map, MissingPolicy::DropRows).unwrap();
        assert_eq!(d.n(), 5);
        let err = load_csv(f.path(), &map, MissingPolicy::Error).unwrap_err();
        assert!(matches!(err, GmedError::NonNumericCell { row: 2, .. }));
    }

    #[test]
    fn non_numeric_cell_reports_position() {
        let f = file_with("y,m,x,z\n1.0,0.5,0,0.1\n2.0,0.7,1,abc\n");
        let err = load_csv(f.path(), &ColumnMap::new("y", "m", "x", &["z"]), MissingPolicy::Error).unwrap_err();
        assert_eq!(err, GmedError::NonNumericCell { row: 2, column: "z".into(), value: "abc".into() });
    }

    #[test]
    fn all_rows_dropped_is_an_error() {
        let f = file_with("y,m,x,z\nNA,0.5,0,0.1\n2.0,,1,0.3\n");
        let err = load_csv(f.path(), &ColumnMap::new("y", "m", "x", &["z"]), MissingPolicy::DropRows).unwrap_err();
        assert_eq!(err, GmedError::EmptyAfterFiltering);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let n = 8;
        let vals = |s: f64| DVector::from_fn(n, |i, _| (i as f64 + s).sin() / 3.0 + 1e-17 * i as f64);
        let d = Dataset::with_names(
            vals(0.1),
            vals(0.7),
            DVector::from_fn(n, |i, _| (i % 2) as f64),
            DMatrix::from_fn(n, 2, |i, j| ((i * 7 + j) as f64).cos() * 1e5),
            Some(vals(3.0).map(|v| v.abs() + 0.1)),
            vec!["age".into(), "dose".into()],
        )
        .unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        let map = write_csv(&d, f.path()).unwrap();
        let back = load_csv(f.path(), &map, MissingPolicy::Error).unwrap();
        assert_eq!(back, d);
    }
}

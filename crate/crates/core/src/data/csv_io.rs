use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use super::{Dataset, MaskedView, Task};
use crate::error::{Error, Result};

/// Load a complete table. Every feature cell must be numeric.
pub fn load_csv(path: impl AsRef<Path>, task: Task, label_column: &str) -> Result<Dataset> {
    let file = open(path.as_ref())?;
    let view = read_table(file, task, label_column, false)?;
    Ok(Dataset {
        features: view.values,
        labels: view.labels,
        feature_names: view.feature_names,
        task: view.task,
        class_count: view.class_count,
        class_names: view.class_names,
    })
}

/// Load a table whose feature cells may be missing (empty or `NA`).
pub fn load_csv_masked(path: impl AsRef<Path>, task: Task, label_column: &str) -> Result<MaskedView> {
    let file = open(path.as_ref())?;
    read_table(file, task, label_column, true)
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| Error::LoadFile(format!("{}: {e}", path.display())))
}

pub(crate) fn read_table(reader: impl Read, task: Task, label_column: &str, allow_missing: bool) -> Result<MaskedView> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::LoadFile(format!("cannot read header: {e}")))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(Error::LoadFile("empty file or missing header row".into()));
    }
    let Some(label_idx) = headers.iter().position(|h| h == label_column) else {
        return Err(Error::Load {
            row: 1,
            column: label_column.to_string(),
            message: "label column not found in header".into(),
        });
    };
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != label_idx)
        .map(|(_, h)| h.clone())
        .collect();
    if feature_names.is_empty() {
        return Err(Error::LoadFile("no feature columns besides the label".into()));
    }

    let mut values = Vec::new();
    let mut missing = Vec::new();
    let mut labels = Vec::new();
    let mut class_index: HashMap<String, usize> = HashMap::new();
    let mut class_names = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        // header is line 1
        let line = r + 2;
        let record = record.map_err(|e| Error::Load { row: line, column: String::new(), message: e.to_string() })?;
        if record.len() != headers.len() {
            return Err(Error::Load {
                row: line,
                column: String::new(),
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        let mut row = Vec::with_capacity(feature_names.len());
        let mut row_missing = Vec::with_capacity(feature_names.len());
        for (c, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            if c == label_idx {
                if is_missing(cell) {
                    return Err(Error::Load { row: line, column: headers[c].clone(), message: "label is missing".into() });
                }
                let label = match task {
                    Task::Regression => parse_number(cell).ok_or_else(|| Error::Load {
                        row: line,
                        column: headers[c].clone(),
                        message: format!("non-numeric label {cell:?}"),
                    })?,
                    Task::Classification => {
                        let next = class_index.len();
                        let idx = *class_index.entry(cell.to_string()).or_insert_with(|| {
                            class_names.push(cell.to_string());
                            next
                        });
                        idx as f64
                    }
                };
                labels.push(label);
                continue;
            }
            if is_missing(cell) {
                if !allow_missing {
                    return Err(Error::Load { row: line, column: headers[c].clone(), message: "missing value".into() });
                }
                row.push(f64::NAN);
                row_missing.push(true);
                continue;
            }
            let v = parse_number(cell).ok_or_else(|| Error::Load {
                row: line,
                column: headers[c].clone(),
                message: format!("non-numeric value {cell:?}"),
            })?;
            row.push(v);
            row_missing.push(false);
        }
        values.push(row);
        missing.push(row_missing);
    }
    if values.is_empty() {
        return Err(Error::LoadFile("file has a header but no data rows".into()));
    }
    Ok(MaskedView {
        values,
        missing,
        labels,
        feature_names,
        task,
        class_count: if task == Task::Classification { class_names.len() } else { 0 },
        class_names: if task == Task::Classification { class_names } else { Vec::new() },
    })
}

fn is_missing(cell: &str) -> bool {
    cell.is_empty() || cell == "NA"
}

fn parse_number(cell: &str) -> Option<f64> {
    cell.parse::<f64>().ok().filter(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_numeric_table() {
        let csv = "a,b,y\n1,2,0.5\n3,4,1.5\n5,6,2.5\n";
        let v = read_table(csv.as_bytes(), Task::Regression, "y", false).unwrap();
        assert_eq!(v.values.len(), 3);
        assert_eq!(v.feature_names, vec!["a", "b"]);
        assert_eq!(v.labels, vec![0.5, 1.5, 2.5]);
    }

    #[test]
    fn classification_labels_by_first_appearance() {
        let csv = "x,cls\n1,B\n2,A\n3,B\n";
        let v = read_table(csv.as_bytes(), Task::Classification, "cls", false).unwrap();
        assert_eq!(v.labels, vec![0.0, 1.0, 0.0]);
        assert_eq!(v.class_count, 2);
        assert_eq!(v.class_names, vec!["B", "A"]);
    }

    #[test]
    fn non_numeric_cell_is_located() {
        let csv = "a,b,y\n1,2,0\n3,oops,1\n";
        match read_table(csv.as_bytes(), Task::Regression, "y", false) {
            Err(Error::Load { row, column, .. }) => {
                assert_eq!(row, 3);
                assert_eq!(column, "b");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_label_column() {
        let csv = "a,b\n1,2\n";
        match read_table(csv.as_bytes(), Task::Regression, "y", false) {
            Err(Error::Load { column, .. }) => assert_eq!(column, "y"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_inputs() {
        assert!(read_table("".as_bytes(), Task::Regression, "y", false).is_err());
        assert!(read_table("a,y\n".as_bytes(), Task::Regression, "y", false).is_err());
    }

    #[test]
    fn missing_cells_when_allowed() {
        let csv = "a,b,y\n1,,0\nNA,4,1\n";
        assert!(read_table(csv.as_bytes(), Task::Regression, "y", false).is_err());
        let v = read_table(csv.as_bytes(), Task::Regression, "y", true).unwrap();
        assert_eq!(v.missing, vec![vec![false, true], vec![true, false]]);
        assert_eq!(v.missing_count(), 2);
    }
}

//! CSV datasets with a mandatory header.
//!
//! All cells are numeric. One named column holds the label; the rest are
//! features in header order. Classification labels are integer class ids,
//! one-hot encoded on load. Written files round-trip bit-exactly (floats are
//! printed with Rust's shortest-roundtrip format).

use super::{Dataset, LabelKind};
use crate::{Error, Result, Tensor};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CsvTask {
    /// Label column holds class ids `0..classes`; loaded as one-hot.
    Classification { classes: usize },
    /// Label column is a real target.
    Regression,
}

#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub label_column: String,
    pub task: CsvTask,
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::CsvParse {
        path: path.to_path_buf(),
        row: 0,
        col: 0,
        detail: "empty file (missing header)".to_string(),
    })?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    let label_idx = columns
        .iter()
        .position(|&c| c == schema.label_column)
        .ok_or_else(|| Error::CsvParse {
            path: path.to_path_buf(),
            row: 1,
            col: 0,
            detail: format!("label column {:?} not in header {columns:?}", schema.label_column),
        })?;
    let d = columns.len() - 1;
    if d == 0 {
        return Err(Error::CsvParse {
            path: path.to_path_buf(),
            row: 1,
            col: 0,
            detail: "no feature columns".to_string(),
        });
    }

    let mut features = Vec::new();
    let mut raw_labels = Vec::new();
    let mut n = 0usize;
    for (line_no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != columns.len() {
            return Err(Error::CsvParse {
                path: path.to_path_buf(),
                row: line_no + 1,
                col: cells.len(),
                detail: format!("{} cells, header has {}", cells.len(), columns.len()),
            });
        }
        for (col, cell) in cells.iter().enumerate() {
            let value: f64 = cell.parse().map_err(|_| Error::CsvParse {
                path: path.to_path_buf(),
                row: line_no + 1,
                col: col + 1,
                detail: format!("non-numeric cell {cell:?}"),
            })?;
            if col == label_idx {
                raw_labels.push(value);
            } else {
                features.push(value);
            }
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::CsvParse {
            path: path.to_path_buf(),
            row: 1,
            col: 0,
            detail: "no data rows".to_string(),
        });
    }

    let features = Tensor::new(vec![n, d], features)?;
    let provenance = format!("csv {}", path.display());
    match &schema.task {
        CsvTask::Regression => Dataset::new(
            features,
            Tensor::new(vec![n, 1], raw_labels)?,
            LabelKind::Real,
            "full",
            provenance,
        ),
        CsvTask::Classification { classes } => {
            let mut labels = Tensor::zeros(&[n, *classes]);
            for (i, &v) in raw_labels.iter().enumerate() {
                let c = v as usize;
                if v.fract() != 0.0 || c >= *classes {
                    return Err(Error::CsvParse {
                        path: path.to_path_buf(),
                        row: i + 2,
                        col: label_idx + 1,
                        detail: format!("class id {v} outside 0..{classes}"),
                    });
                }
                labels.data_mut()[i * classes + c] = 1.0;
            }
            Dataset::new(features, labels, LabelKind::OneHot, "full", provenance)
        }
    }
}

/// Write features plus a label column (`x1..xd`, then the label). One-hot
/// labels are written back as class ids.
pub fn write_csv(dataset: &Dataset, label_column: &str, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let d = dataset.feature_dim();
    let mut out = String::new();
    for j in 0..d {
        out.push_str(&format!("x{},", j + 1));
    }
    out.push_str(label_column);
    out.push('\n');
    let class_ids = match dataset.label_kind() {
        LabelKind::OneHot => Some(dataset.labels().argmax_rows()?),
        LabelKind::Real => None,
    };
    for i in 0..dataset.len() {
        for v in dataset.features().row(i) {
            out.push_str(&format!("{v},"));
        }
        match &class_ids {
            Some(ids) => out.push_str(&format!("{}", ids[i])),
            None => out.push_str(&format!("{}", dataset.labels().row(i)[0])),
        }
        out.push('\n');
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, out).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_synthetic, SyntheticKind};
    use std::io::Write;

    fn fixture(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn three_row_fixture_parses_exactly() {
        let f = fixture("x1,x2,y\n1.0,2.0,0\n3.0,4.0,1\n-0.5,0.25,1\n");
        let ds = load_csv(
            f.path(),
            &CsvSchema {
                label_column: "y".to_string(),
                task: CsvTask::Classification { classes: 2 },
            },
        )
        .unwrap();
        assert_eq!(ds.features().data(), &[1.0, 2.0, 3.0, 4.0, -0.5, 0.25]);
        assert_eq!(ds.labels().data(), &[1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn label_column_position_does_not_reorder_features() {
        // Features keep header order with the label column removed.
        let f = fixture("a,y,b\n1.0,0.5,2.0\n3.0,0.25,4.0\n");
        let ds = load_csv(
            f.path(),
            &CsvSchema {
                label_column: "y".to_string(),
                task: CsvTask::Regression,
            },
        )
        .unwrap();
        assert_eq!(ds.features().data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(ds.labels().data(), &[0.5, 0.25]);
    }

    #[test]
    fn empty_file_is_an_error() {
        let f = fixture("");
        let schema = CsvSchema {
            label_column: "y".to_string(),
            task: CsvTask::Regression,
        };
        assert!(load_csv(f.path(), &schema).is_err());
        let f2 = fixture("x1,y\n");
        assert!(load_csv(f2.path(), &schema).is_err());
    }

    #[test]
    fn non_numeric_cell_reports_position() {
        let f = fixture("x1,x2,y\n1.0,oops,0.5\n");
        let err = load_csv(
            f.path(),
            &CsvSchema {
                label_column: "y".to_string(),
                task: CsvTask::Regression,
            },
        )
        .unwrap_err();
        match err {
            Error::CsvParse { row, col, .. } => {
                assert_eq!((row, col), (2, 2));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_label_column_rejected() {
        let f = fixture("x1,x2\n1.0,2.0\n");
        let err = load_csv(
            f.path(),
            &CsvSchema {
                label_column: "y".to_string(),
                task: CsvTask::Regression,
            },
        )
        .unwrap_err();
        assert!(err.to_string().contains("label column"), "{err}");
    }

    #[test]
    fn roundtrip_is_bit_identical() {
        let ds = make_synthetic(&SyntheticKind::Xor { jitter: 0.35 }, 40, 21).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.csv");
        write_csv(&ds, "y", &path).unwrap();
        let back = load_csv(
            &path,
            &CsvSchema {
                label_column: "y".to_string(),
                task: CsvTask::Classification { classes: 2 },
            },
        )
        .unwrap();
        assert!(ds.features().bits_eq(back.features()));
        assert!(ds.labels().bits_eq(back.labels()));
    }
}

//! Result files: per-sample scores, loss traces, ROC points and the
//! metrics summary.
//!
//! | file          | columns / keys                                  |
//! |---------------|-------------------------------------------------|
//! | `scores.csv`  | `sample_id,label,score,fold`                    |
//! | loss trace    | `epoch,loss`                                    |
//! | `roc.csv`     | `fpr,tpr,threshold` (first threshold is `inf`)  |
//! | `metrics.json`| `auc, accuracy, precision, sensitivity, counts` |

use std::fs::{self, File};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{MetricsReport, RocCurve};

/// One row of a score file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub sample_id: String,
    pub label: u8,
    pub score: f64,
    pub fold: usize,
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    if e.is_io_error() {
        if let csv::ErrorKind::Io(io) = e.into_kind() {
            return Error::io(path, io);
        }
        unreachable!("is_io_error implies an Io kind");
    }
    Error::Csv {
        path: path.to_path_buf(),
        line,
        detail: e.to_string(),
    }
}

fn write_rows<S: Serialize>(path: &Path, rows: impl IntoIterator<Item = S>) -> Result<()> {
    let mut w = csv_writer(path)?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_scores(path: impl AsRef<Path>, rows: &[ScoreRecord]) -> Result<()> {
    write_rows(path.as_ref(), rows)
}

/// Reads a score file, rejecting files without rows, labels outside
/// {0, 1} and non-finite scores. Errors carry the 1-based line number.
pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<ScoreRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let expected = ["sample_id", "label", "score", "fold"];
    if headers.iter().ne(expected) {
        return Err(Error::Csv {
            path: path.to_path_buf(),
            line: 1,
            detail: format!(
                "expected header {}, got {}",
                expected.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    let mut rows = Vec::new();
    for record in reader.deserialize::<ScoreRecord>() {
        let row = record.map_err(|e| csv_error(path, e))?;
        let line = rows.len() as u64 + 2;
        let bad = |detail: String| Error::Csv {
            path: path.to_path_buf(),
            line,
            detail,
        };
        if row.label > 1 {
            return Err(bad(format!("label {} is not 0 or 1", row.label)));
        }
        if !row.score.is_finite() {
            return Err(bad(format!("score {} is not finite", row.score)));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Csv {
            path: path.to_path_buf(),
            line: 1,
            detail: "no score rows".into(),
        });
    }
    Ok(rows)
}

pub fn write_loss_trace(path: impl AsRef<Path>, losses: &[f64]) -> Result<()> {
    #[derive(Serialize)]
    struct Row {
        epoch: usize,
        loss: f64,
    }
    write_rows(
        path.as_ref(),
        losses
            .iter()
            .enumerate()
            .map(|(epoch, &loss)| Row { epoch, loss }),
    )
}

pub fn write_roc(path: impl AsRef<Path>, curve: &RocCurve) -> Result<()> {
    write_rows(path.as_ref(), &curve.points)
}

/// Writes any serializable value as pretty-printed JSON with a trailing
/// newline.
pub fn write_json<S: Serialize + ?Sized>(path: impl AsRef<Path>, value: &S) -> Result<()> {
    let path = path.as_ref();
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| Error::Malformed(e.to_string()))?;
    text.push('\n');
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(text.as_bytes())
        .map_err(|e| Error::io(path, e))
}

pub fn write_metrics(path: impl AsRef<Path>, report: &MetricsReport) -> Result<()> {
    write_json(path, &report.to_json())
}

/// Creates `dir` and its parents if missing.
pub fn ensure_dir(dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::roc_points;

    fn rows() -> Vec<ScoreRecord> {
        vec![
            ScoreRecord {
                sample_id: "a".into(),
                label: 1,
                score: 0.875,
                fold: 0,
            },
            ScoreRecord {
                sample_id: "b,c".into(),
                label: 0,
                score: 0.1 + 0.2,
                fold: 3,
            },
        ]
    }

    #[test]
    fn scores_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.csv");
        write_scores(&path, &rows()).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("sample_id,label,score,fold\n"));
        assert_eq!(read_scores(&path).unwrap(), rows());
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        for (body, line) in [
            ("sample_id,label,score,fold\na,1,0.5,0\nb,1,oops,0\n", 3),
            ("sample_id,label,score,fold\na,2,0.5,0\n", 2),
            ("sample_id,label,score,fold\na,1,NaN,0\n", 2),
            ("sample_id,label,score,fold\n", 1),
            ("", 1),
            ("id,label,score,fold\na,1,0.5,0\n", 1),
        ] {
            fs::write(&path, body).unwrap();
            match read_scores(&path) {
                Err(Error::Csv { line: l, .. }) => assert_eq!(l, line, "{body:?}"),
                other => panic!("{body:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn roc_and_loss_files() {
        let dir = tempfile::tempdir().unwrap();
        let roc = dir.path().join("roc.csv");
        write_roc(&roc, &roc_points(&[0.9, 0.2], &[1, 0]).unwrap()).unwrap();
        assert_eq!(
            fs::read_to_string(&roc).unwrap(),
            "fpr,tpr,threshold\n0.0,0.0,inf\n0.0,1.0,0.9\n1.0,1.0,0.2\n"
        );
        let loss = dir.path().join("loss.csv");
        write_loss_trace(&loss, &[0.5, 0.25]).unwrap();
        assert_eq!(
            fs::read_to_string(&loss).unwrap(),
            "epoch,loss\n0,0.5\n1,0.25\n"
        );
    }
}

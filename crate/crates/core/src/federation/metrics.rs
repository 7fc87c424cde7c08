use std::fs::File;
use std::path::Path;

use crate::error::{FlstError, Result};

/// One outer-iteration record.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsRow {
    pub iteration: u64,
    pub probabilities: Vec<f64>,
    pub selected: Vec<usize>,
    pub action: Option<[f64; 2]>,
    pub batch_size: Option<usize>,
    pub inner_loss: Option<f64>,
    pub meta_loss: Option<f64>,
    pub validation_accuracy: Vec<Option<f64>>,
    pub test_accuracy: Option<f64>,
    pub reward: Option<f64>,
    pub flags: Vec<String>,
}

/// Column names for a federation of `node_count` nodes.
pub fn metrics_header(node_count: usize) -> Vec<String> {
    let mut h = vec!["iteration".to_string()];
    h.extend((0..node_count).map(|i| format!("p_{i}")));
    h.extend(
        [
            "selected",
            "a1",
            "a2",
            "batch_size",
            "inner_loss",
            "meta_loss",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    h.extend((0..node_count).map(|i| format!("val_acc_{i}")));
    h.extend(
        ["test_accuracy", "reward", "flags"]
            .iter()
            .map(|s| s.to_string()),
    );
    h
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

impl MetricsRow {
    pub fn to_record(&self) -> Vec<String> {
        let mut r = vec![self.iteration.to_string()];
        r.extend(self.probabilities.iter().map(|p| format!("{p:?}")));
        r.push(
            self.selected
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join(";"),
        );
        r.push(opt(self.action.map(|a| a[0])));
        r.push(opt(self.action.map(|a| a[1])));
        r.push(self.batch_size.map(|b| b.to_string()).unwrap_or_default());
        r.push(opt(self.inner_loss));
        r.push(opt(self.meta_loss));
        r.extend(self.validation_accuracy.iter().map(|&v| opt(v)));
        r.push(opt(self.test_accuracy));
        r.push(opt(self.reward));
        r.push(self.flags.join(";"));
        r
    }

    /// Inverse of [`MetricsRow::to_record`]; `row` is the 1-based data row for error messages.
    pub fn from_record(record: &[&str], node_count: usize, row: usize) -> Result<MetricsRow> {
        let expected = metrics_header(node_count).len();
        if record.len() != expected {
            return Err(FlstError::Parse {
                row,
                reason: format!("expected {expected} fields, found {}", record.len()),
            });
        }
        let float = |s: &str, name: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                return Ok(None);
            }
            s.parse::<f64>().map(Some).map_err(|_| FlstError::Parse {
                row,
                reason: format!("{name}: cannot parse {s:?} as a number"),
            })
        };
        let int = |s: &str, name: &str| -> Result<usize> {
            s.parse::<usize>().map_err(|_| FlstError::Parse {
                row,
                reason: format!("{name}: cannot parse {s:?} as an integer"),
            })
        };
        let mut it = record.iter().copied();
        let mut next = || it.next().unwrap();
        let iteration = int(next(), "iteration")? as u64;
        let mut probabilities = Vec::with_capacity(node_count);
        for i in 0..node_count {
            let name = format!("p_{i}");
            probabilities.push(float(next(), &name)?.ok_or_else(|| FlstError::Parse {
                row,
                reason: format!("{name} is empty"),
            })?);
        }
        let sel = next();
        let selected = if sel.is_empty() {
            Vec::new()
        } else {
            sel.split(';')
                .map(|s| int(s, "selected"))
                .collect::<Result<Vec<_>>>()?
        };
        if let Some(&bad) = selected.iter().find(|&&s| s >= node_count) {
            return Err(FlstError::Parse {
                row,
                reason: format!("selected node {bad} out of range"),
            });
        }
        let a1 = float(next(), "a1")?;
        let a2 = float(next(), "a2")?;
        let action = match (a1, a2) {
            (Some(x), Some(y)) => Some([x, y]),
            (None, None) => None,
            _ => {
                return Err(FlstError::Parse {
                    row,
                    reason: "a1 and a2 must be both present or both empty".into(),
                })
            }
        };
        let bs = next();
        let batch_size = if bs.is_empty() {
            None
        } else {
            Some(int(bs, "batch_size")?)
        };
        let inner_loss = float(next(), "inner_loss")?;
        let meta_loss = float(next(), "meta_loss")?;
        let mut validation_accuracy = Vec::with_capacity(node_count);
        for i in 0..node_count {
            validation_accuracy.push(float(next(), &format!("val_acc_{i}"))?);
        }
        let test_accuracy = float(next(), "test_accuracy")?;
        let reward = float(next(), "reward")?;
        let fl = next();
        let flags = if fl.is_empty() {
            Vec::new()
        } else {
            fl.split(';').map(str::to_string).collect()
        };
        Ok(MetricsRow {
            iteration,
            probabilities,
            selected,
            action,
            batch_size,
            inner_loss,
            meta_loss,
            validation_accuracy,
            test_accuracy,
            reward,
            flags,
        })
    }
}

/// Append-only CSV sink with a fixed header.
pub struct MetricsWriter {
    inner: csv::Writer<File>,
    node_count: usize,
}

impl MetricsWriter {
    pub fn create(path: &Path, node_count: usize) -> Result<Self> {
        let file = File::create(path).map_err(|e| FlstError::io(path, e))?;
        let mut inner = csv::Writer::from_writer(file);
        inner
            .write_record(metrics_header(node_count))
            .map_err(|e| csv_io(path, e))?;
        Ok(MetricsWriter { inner, node_count })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        if row.probabilities.len() != self.node_count {
            return Err(FlstError::shape("metrics row has the wrong node count"));
        }
        self.inner
            .write_record(row.to_record())
            .map_err(|e| csv_io(Path::new("metrics.csv"), e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner
            .flush()
            .map_err(|e| FlstError::io("metrics.csv", e))
    }
}

fn csv_io(path: &Path, e: csv::Error) -> FlstError {
    FlstError::io(path, std::io::Error::other(e.to_string()))
}

/// Reads a metrics CSV back; the node count is inferred from the header.
pub fn read_metrics(path: &Path) -> Result<(usize, Vec<MetricsRow>)> {
    let file = File::open(path).map_err(|e| FlstError::io(path, e))?;
    read_metrics_from(file)
}

pub fn read_metrics_from<R: std::io::Read>(reader: R) -> Result<(usize, Vec<MetricsRow>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| FlstError::Parse {
            row: 0,
            reason: e.to_string(),
        })?
        .clone();
    let node_count = header.iter().filter(|h| h.starts_with("p_")).count();
    let expected = metrics_header(node_count);
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(FlstError::Parse {
            row: 0,
            reason: "header does not match the metrics schema".into(),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| FlstError::Parse {
            row: i + 1,
            reason: e.to_string(),
        })?;
        let fields: Vec<&str> = rec.iter().collect();
        rows.push(MetricsRow::from_record(&fields, node_count, i + 1)?);
    }
    Ok((node_count, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> MetricsRow {
        MetricsRow {
            iteration: 7,
            probabilities: vec![0.25, 0.75],
            selected: vec![1],
            action: Some([0.1, -1.0]),
            batch_size: Some(32),
            inner_loss: Some(0.5),
            meta_loss: Some(1.25),
            validation_accuracy: vec![Some(0.5), None],
            test_accuracy: None,
            reward: Some(-0.01),
            flags: vec!["node_failure".into()],
        }
    }

    #[test]
    fn record_roundtrip() {
        let row = sample();
        let rec = row.to_record();
        assert_eq!(rec.len(), metrics_header(2).len());
        let fields: Vec<&str> = rec.iter().map(String::as_str).collect();
        assert_eq!(MetricsRow::from_record(&fields, 2, 1).unwrap(), row);
    }

    #[test]
    fn file_roundtrip_and_row_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let mut w = MetricsWriter::create(&path, 2).unwrap();
        w.write(&sample()).unwrap();
        w.write(&MetricsRow {
            iteration: 8,
            ..sample()
        })
        .unwrap();
        w.flush().unwrap();
        let (n, rows) = read_metrics(&path).unwrap();
        assert_eq!((n, rows.len()), (2, 2));

        let text = std::fs::read_to_string(&path).unwrap() + "9,0.5,oops,,,,,,,,,,,\n";
        std::fs::write(&path, text).unwrap();
        match read_metrics(&path) {
            Err(FlstError::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
    }
}

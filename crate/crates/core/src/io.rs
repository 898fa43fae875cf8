//! Workload CSV (`id,metric[,truth]`) reading and writing.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{InstancePair, Label, Workload};

/// Parses a workload CSV with header `id,metric[,truth]`, truth in {0,1}.
pub fn read_workload<R: Read>(reader: R, subset_size: usize) -> Result<Workload> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let id_col = column("id").ok_or(Error::Parse {
        line: 1,
        reason: "missing `id` column".into(),
    })?;
    let metric_col = column("metric").ok_or(Error::Parse {
        line: 1,
        reason: "missing `metric` column".into(),
    })?;
    let truth_col = column("truth");

    let mut pairs = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| Error::Parse {
            line,
            reason: e.to_string(),
        })?;
        let field = |col: usize| record.get(col).unwrap_or("");
        let id = field(id_col);
        if id.is_empty() {
            return Err(Error::Parse {
                line,
                reason: "empty id".into(),
            });
        }
        let metric: f64 = field(metric_col).parse().map_err(|_| Error::Parse {
            line,
            reason: format!("metric `{}` is not a number", field(metric_col)),
        })?;
        if !(0.0..=1.0).contains(&metric) {
            return Err(Error::Parse {
                line,
                reason: format!("metric {metric} outside [0, 1]"),
            });
        }
        let truth = match truth_col.map(field) {
            None | Some("") => None,
            Some("1") => Some(Label::Match),
            Some("0") => Some(Label::Unmatch),
            Some(other) => {
                return Err(Error::Parse {
                    line,
                    reason: format!("truth `{other}` must be 0 or 1"),
                })
            }
        };
        pairs.push(InstancePair::new(id, metric, truth));
    }
    Workload::new(pairs, subset_size)
}

pub fn read_workload_file(path: &Path, subset_size: usize) -> Result<Workload> {
    read_workload(std::fs::File::open(path)?, subset_size)
}

/// Writes the workload in sorted order; the truth column is emitted only
/// when every pair carries ground truth.
pub fn write_workload<W: Write>(workload: &Workload, writer: W) -> Result<()> {
    let with_truth = workload.has_truth();
    let mut w = csv::Writer::from_writer(writer);
    if with_truth {
        w.write_record(["id", "metric", "truth"])?;
    } else {
        w.write_record(["id", "metric"])?;
    }
    for pair in workload.pairs() {
        let metric = pair.metric.to_string();
        match pair.truth {
            Some(t) if with_truth => {
                w.write_record([pair.id.as_str(), &metric, if t.is_match() { "1" } else { "0" }])?
            }
            _ => w.write_record([pair.id.as_str(), &metric])?,
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_workload_file(workload: &Workload, path: &Path) -> Result<()> {
    write_workload(workload, std::io::BufWriter::new(std::fs::File::create(path)?))
}

//! Per-iteration loss log as CSV.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::distill::{ProgressSink, StepRecord};
use crate::error::{Error, Result};

pub const METRICS_HEADER: [&str; 4] = ["iteration", "l_sam", "l_mmd", "total"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iteration: usize,
    pub l_sam: f64,
    pub l_mmd: f64,
    pub total: f64,
}

impl From<&StepRecord> for MetricsRow {
    fn from(r: &StepRecord) -> Self {
        MetricsRow {
            iteration: r.iteration,
            l_sam: r.breakdown.l_sam,
            l_mmd: r.breakdown.l_mmd,
            total: r.breakdown.total,
        }
    }
}

/// Writes the header immediately, so a run of zero iterations still
/// leaves a well-formed file.
pub struct MetricsWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl MetricsWriter<File> {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(File::create(path)?)
    }
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(w: W) -> Result<Self> {
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        inner.write_record(METRICS_HEADER)?;
        Ok(MetricsWriter { inner })
    }

    pub fn write_row(&mut self, row: &MetricsRow) -> Result<()> {
        self.inner.serialize(row)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush()?;
        self.inner.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

impl<W: Write> ProgressSink for MetricsWriter<W> {
    fn record(&mut self, record: &StepRecord) -> Result<()> {
        self.write_row(&record.into())
    }
}

/// Reads a log back, checking the header and that every value is finite.
pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.iter().ne(METRICS_HEADER) {
        return Err(Error::Config(format!("unexpected metrics header {header:?}")));
    }
    let mut rows = Vec::new();
    for row in r.deserialize() {
        let row: MetricsRow = row?;
        if ![row.l_sam, row.l_mmd, row.total].iter().all(|v| v.is_finite()) {
            return Err(Error::Config(format!("non-finite metrics at iteration {}", row.iteration)));
        }
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_only_when_empty() {
        let w = MetricsWriter::new(Vec::new()).unwrap();
        assert_eq!(String::from_utf8(w.finish().unwrap()).unwrap(), "iteration,l_sam,l_mmd,total\n");
    }

    #[test]
    fn rows_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let rows = vec![
            MetricsRow { iteration: 0, l_sam: 0.1, l_mmd: 2.5e-7, total: 0.1 + 0.01 * 2.5e-7 },
            MetricsRow { iteration: 1, l_sam: 1.0 / 3.0, l_mmd: 0.0, total: 1.0 / 3.0 },
        ];
        let mut w = MetricsWriter::create(&path).unwrap();
        for r in &rows {
            w.write_row(r).unwrap();
        }
        w.finish().unwrap();
        assert_eq!(read_metrics(&path).unwrap(), rows);
    }
}

//! JSON-lines metrics log.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::Split;
use crate::error::{Error, Result};

/// One evaluation. `mults`/`adds` are the forward-pass operations spent
/// producing this record (per-example counts × examples evaluated).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iteration: u64,
    pub split: Split,
    pub loss: f64,
    /// Fraction in `[0,1]`.
    pub accuracy: f64,
    pub mults: u64,
    pub adds: u64,
    /// Wall-clock seconds since the run started.
    pub seconds: f64,
}

impl MetricsRecord {
    pub fn percent(&self) -> f64 {
        self.accuracy * 100.0
    }
}

/// Single-writer sink; every record is flushed as it is written.
#[derive(Debug)]
pub struct MetricsSink {
    path: PathBuf,
    file: File,
}

impl MetricsSink {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(MetricsSink {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn append(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(MetricsSink {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn write(&mut self, record: &MetricsRecord) -> Result<()> {
        if !(0.0..=1.0).contains(&record.accuracy) {
            return Err(Error::Format(format!("accuracy {} outside [0,1]", record.accuracy)));
        }
        let mut line = serde_json::to_string(record).map_err(|e| Error::Format(e.to_string()))?;
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?);
    }
    Ok(out)
}

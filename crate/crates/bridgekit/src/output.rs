//! CSV and JSON writers with byte-stable formatting.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::ExperimentConfig;

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// A CSV table built row by row.
#[derive(Debug, Clone, Default)]
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(|s| s.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    /// Column names `prefix_0 .. prefix_{n-1}`.
    pub fn indexed(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}_{i}")).collect()
    }

    pub fn row(&mut self) -> Row<'_> {
        self.rows.push(Vec::with_capacity(self.header.len()));
        Row {
            cells: self.rows.last_mut().expect("just pushed"),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            debug_assert_eq!(r.len(), self.header.len());
            w.write_record(r)?;
        }
        w.into_inner().context("flushing CSV")
    }
}

pub struct Row<'a> {
    cells: &'a mut Vec<String>,
}

impl Row<'_> {
    pub fn int(self, v: impl ToString) -> Self {
        self.cells.push(v.to_string());
        self
    }

    pub fn float(self, v: f64) -> Self {
        self.cells.push(fmt_f64(v));
        self
    }

    pub fn floats(self, v: &[f64]) -> Self {
        self.cells.extend(v.iter().map(|x| fmt_f64(*x)));
        self
    }

    pub fn text(self, v: &str) -> Self {
        self.cells.push(v.to_string());
        self
    }
}

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Directory receiving one run's artifacts.
#[derive(Debug, Clone)]
pub struct OutputDir {
    dir: PathBuf,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn csv(&self, name: &str, table: &Table) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, table.to_bytes()?).with_context(|| format!("writing {}", path.display()))
    }

    pub fn json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, to_json(value)?).with_context(|| format!("writing {}", path.display()))
    }

    pub fn echo_config(&self, cfg: &ExperimentConfig) -> Result<()> {
        let path = self.path("resolved_config.toml");
        fs::write(&path, cfg.to_toml()).with_context(|| format!("writing {}", path.display()))
    }
}

/// Reads a numeric CSV with one header row into row vectors.
pub fn read_matrix(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.with_context(|| format!("{}: row {}", path.display(), i + 2))?;
        let row = rec
            .iter()
            .map(|c| c.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("{}: row {} is not numeric", path.display(), i + 2))?;
        rows.push(row);
    }
    Ok(rows)
}

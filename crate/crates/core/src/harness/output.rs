//! Deterministic CSV and JSON artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::HarnessError;

/// Version tag of every CSV layout written here.
pub const CSV_VERSION: &str = "csv-v1";

/// Shortest round-trip scientific notation, independent of locale.
pub fn num(x: f64) -> String {
    format!("{x:e}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: &[&'static str]) -> Self {
        Self {
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// Two comment lines, the header, then one row per record; every row
    /// ends with the config hash. A failed run adds a `# partial:` trailer.
    pub fn render(&self, experiment: &str, seed: u64, hash: &str, partial: Option<&str>) -> String {
        let mut s = format!("# incompressa {experiment} {CSV_VERSION}\n# seed={seed} config_hash={hash}\n");
        s.push_str(&self.columns.join(","));
        s.push_str(",config_hash\n");
        for row in &self.rows {
            s.push_str(&row.join(","));
            s.push(',');
            s.push_str(hash);
            s.push('\n');
        }
        if let Some(msg) = partial {
            s.push_str("# partial: ");
            s.push_str(&msg.replace('\n', " "));
            s.push('\n');
        }
        s
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

pub fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf, HarnessError> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, bytes)?;
    Ok(path)
}

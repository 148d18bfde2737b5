//! CSV tables with a trailing checksum line, and the run manifest.

use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const CHECKSUM_PREFIX: &str = "# checksum sha256=";

/// Float formatting shared by every table.
pub fn num(x: f64) -> String {
    format!("{x:.12e}")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvTable {
    pub name: String,
    pub header: String,
    pub rows: Vec<String>,
}

impl CsvTable {
    pub fn new(name: &str, header: &str) -> Self {
        Self {
            name: name.into(),
            header: header.into(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: String) {
        self.rows.push(row);
    }

    /// Adopts text already written by a library `write_csv` (header first).
    pub fn from_text(name: &str, text: &str) -> Self {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default().to_string();
        Self {
            name: name.into(),
            header,
            rows: lines.map(str::to_string).collect(),
        }
    }

    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for r in &self.rows {
            h.update(r.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    pub fn render(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 2));
        out.push_str(&self.header);
        out.push('\n');
        for r in &self.rows {
            out.push_str(r);
            out.push('\n');
        }
        out.push_str(CHECKSUM_PREFIX);
        out.push_str(&self.checksum());
        out.push('\n');
        out
    }

    /// Column `name` of every data row.
    pub fn column(&self, name: &str) -> Option<Vec<String>> {
        let idx = self.header.split(',').position(|c| c == name)?;
        Some(
            self.rows
                .iter()
                .map(|r| r.split(',').nth(idx).unwrap_or_default().to_string())
                .collect(),
        )
    }

    pub fn column_f64(&self, name: &str) -> Option<Vec<f64>> {
        self.column(name)?.iter().map(|v| v.parse().ok()).collect()
    }
}

/// Checks the trailing checksum of a rendered table.
pub fn verify(text: &str) -> bool {
    let Some(body) = text.strip_suffix('\n') else {
        return false;
    };
    let Some(pos) = body.rfind('\n') else {
        return false;
    };
    let (content, last) = (&body[..pos], &body[pos + 1..]);
    let Some(expected) = last.strip_prefix(CHECKSUM_PREFIX) else {
        return false;
    };
    let data = match content.split_once('\n') {
        Some((_, rows)) => format!("{rows}\n"),
        None => String::new(),
    };
    hex::encode(Sha256::digest(data.as_bytes())) == expected
}

pub fn write_table(dir: &Path, table: &CsvTable) -> Result<(), CliError> {
    let path = dir.join(format!("{}.csv", table.name));
    fs::write(&path, table.render()).map_err(|source| CliError::Io { path, source })
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub experiment: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub version: String,
    pub started_at: String,
    pub wall_seconds: f64,
    pub outputs: Vec<String>,
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<(), CliError> {
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(manifest).map_err(|e| CliError::Config(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|source| CliError::Io { path, source })
}

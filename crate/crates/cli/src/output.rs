//! CSV tables and the JSON manifest.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

/// Finite values in shortest round-trip form, anything else as `nan`.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:?}")
    } else {
        "nan".to_string()
    }
}

pub struct Table {
    pub name: &'static str,
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &'static str, header: &[&'static str]) -> Self {
        Self { name, header: header.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Debug, Serialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rows: Option<usize>,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    experiment: &'a str,
    config_sha256: String,
    seed: u64,
    versions: Versions,
    wall_time_seconds: f64,
    status: &'a str,
    files: &'a [FileEntry],
}

#[derive(Debug, Serialize)]
struct Versions {
    heavytail_cli: &'static str,
    heavytail_core: &'static str,
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Collects the files of one run so the manifest can list them.
pub struct OutputDir {
    dir: PathBuf,
    files: Vec<FileEntry>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write_table(&mut self, table: &Table) -> Result<(), CliError> {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        w.write_record(&table.header)?;
        for row in &table.rows {
            w.write_record(row)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))?;
        self.write_bytes(table.name, &bytes, Some(table.len()))
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
        bytes.push(b'\n');
        self.write_bytes(name, &bytes, None)
    }

    fn write_bytes(&mut self, name: &str, bytes: &[u8], rows: Option<usize>) -> Result<(), CliError> {
        std::fs::write(self.path(name), bytes)?;
        self.files.push(FileEntry { name: name.to_string(), sha256: hex_digest(bytes), rows });
        Ok(())
    }

    pub fn finish(
        self,
        experiment: &str,
        config_text: &str,
        seed: u64,
        wall_time_seconds: f64,
        status: &str,
    ) -> Result<(), CliError> {
        let manifest = Manifest {
            experiment,
            config_sha256: hex_digest(config_text.as_bytes()),
            seed,
            versions: Versions {
                heavytail_cli: env!("CARGO_PKG_VERSION"),
                heavytail_core: env!("CARGO_PKG_VERSION"),
            },
            wall_time_seconds,
            status,
            files: &self.files,
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| CliError::Runtime(e.to_string()))?;
        bytes.push(b'\n');
        std::fs::write(self.path(&format!("{experiment}_manifest.json")), bytes)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip_or_are_nan() {
        for v in [0.1, -2.5e-17, 1e300, 3.0] {
            assert_eq!(num(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(num(f64::INFINITY), "nan");
        assert_eq!(num(f64::NAN), "nan");
    }
}

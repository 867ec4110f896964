//! Cohort manifest CSV: one row per case with bag paths and outcome.
//! Bag paths are resolved relative to the manifest's directory.

use super::{io_err, DataError, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestRow {
    pub case_id: String,
    pub histology_path: String,
    pub protein_path: String,
    pub time_months: f64,
    pub censor: u8,
}

impl ManifestRow {
    pub fn resolve_histology(&self, manifest_path: &Path) -> PathBuf {
        resolve(manifest_path, &self.histology_path)
    }

    pub fn resolve_protein(&self, manifest_path: &Path) -> PathBuf {
        resolve(manifest_path, &self.protein_path)
    }
}

fn resolve(manifest_path: &Path, entry: &str) -> PathBuf {
    let p = Path::new(entry);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest_path.parent().unwrap_or(Path::new(".")).join(p)
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| DataError::Config(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, record) in reader.deserialize::<ManifestRow>().enumerate() {
        let row = record
            .map_err(|e| DataError::Config(format!("{} row {}: {e}", path.display(), i + 1)))?;
        if row.censor > 1 {
            return Err(DataError::Config(format!(
                "{} row {}: censor must be 0 or 1, got {}",
                path.display(),
                i + 1,
                row.censor
            )));
        }
        if !(row.time_months > 0.0) {
            return Err(DataError::Config(format!(
                "{} row {}: time must be positive, got {}",
                path.display(),
                i + 1,
                row.time_months
            )));
        }
        for bag in [row.resolve_histology(path), row.resolve_protein(path)] {
            if !bag.exists() {
                return Err(DataError::Config(format!(
                    "{} row {}: referenced bag {} does not exist",
                    path.display(),
                    i + 1,
                    bag.display()
                )));
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| {
        io_err(
            path,
            std::io::Error::new(std::io::ErrorKind::Other, e.to_string()),
        )
    })?;
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| DataError::Config(format!("{}: {e}", path.display())))?;
    }
    writer
        .flush()
        .map_err(|e| io_err(path, e))?;
    Ok(())
}

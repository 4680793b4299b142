//! Matrix CSV files and the JSON batch manifest.
//!
//! A matrix file holds `d` rows of `d` comma-separated decimals, written with 17 significant
//! digits so values round-trip exactly. A manifest lists matrix files (relative to the
//! manifest's directory) with optional class labels.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::matrix::{SpdMatrix, SymmetricMatrix};
use crate::error::{Error, Result};

/// 17 significant digits, `.` decimal separator.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn matrix_to_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|&v| format_f64(v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn matrix_from_csv(text: &str) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse(format!("csv row {line}: {e}")))?;
        let row = record
            .iter()
            .map(|field| {
                field
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("csv row {line}: {field:?}: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let m = super::matrix::rows_to_matrix(&rows)?;
    if !m.is_square() {
        return Err(Error::Parse(format!(
            "matrix file must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m)
}

pub fn read_matrix(path: &Path) -> Result<SymmetricMatrix> {
    let text = fs::read_to_string(path)?;
    SymmetricMatrix::new(matrix_from_csv(&text)?)
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    write_atomic(path, matrix_to_csv(m).as_bytes())
}

/// Write through a sibling temporary file and rename, so readers never see partial output.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchManifest {
    pub dim: usize,
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    pub files: Vec<ManifestEntry>,
    /// Free-form provenance (generator spec and seed for synthetic data).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<serde_json::Value>,
}

/// A loaded batch: matrices plus optional labels, in manifest order.
#[derive(Clone, Debug)]
pub struct LabeledBatch {
    pub matrices: Vec<SymmetricMatrix>,
    pub labels: Vec<Option<usize>>,
}

impl BatchManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let manifest: BatchManifest = serde_json::from_str(&text)?;
        if manifest.count != manifest.files.len() {
            return Err(Error::Parse(format!(
                "manifest count {} does not match {} listed files",
                manifest.count,
                manifest.files.len()
            )));
        }
        Ok(manifest)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }

    /// Load every listed matrix, resolving paths against `base_dir`.
    pub fn load(&self, base_dir: &Path) -> Result<LabeledBatch> {
        let mut matrices = Vec::with_capacity(self.files.len());
        let mut labels = Vec::with_capacity(self.files.len());
        for entry in &self.files {
            let p: PathBuf = base_dir.join(&entry.path);
            let m = read_matrix(&p)?;
            if m.dim() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    found: m.dim(),
                });
            }
            matrices.push(m);
            labels.push(entry.label);
        }
        Ok(LabeledBatch { matrices, labels })
    }
}

/// Load a manifest and its matrices in one call.
pub fn load_batch(manifest_path: &Path) -> Result<(BatchManifest, LabeledBatch)> {
    let manifest = BatchManifest::read(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let batch = manifest.load(dir)?;
    Ok((manifest, batch))
}

pub fn spd_batch(batch: &[SymmetricMatrix]) -> Result<Vec<SpdMatrix>> {
    batch.iter().cloned().map(SpdMatrix::new).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trips_bitwise() {
        let m = DMatrix::from_row_slice(2, 2, &[0.1, 1.0 / 3.0, 1.0 / 3.0, 1e-300]);
        let text = matrix_to_csv(&m);
        assert_eq!(text.lines().count(), 2);
        assert_eq!(matrix_from_csv(&text).unwrap(), m);
    }

    #[test]
    fn csv_rejects_ragged_and_non_square() {
        assert!(matrix_from_csv("1,2\n3\n").is_err());
        assert!(matrix_from_csv("1,2\n").is_err());
        assert!(matrix_from_csv("1,x\n2,3\n").is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        write_matrix(&dir.path().join("a.csv"), &m).unwrap();
        let manifest = BatchManifest {
            dim: 2,
            count: 1,
            num_classes: None,
            files: vec![ManifestEntry {
                path: "a.csv".into(),
                label: Some(1),
            }],
            generator: None,
        };
        let mp = dir.path().join("manifest.json");
        manifest.write(&mp).unwrap();
        let (back, batch) = load_batch(&mp).unwrap();
        assert_eq!(back, manifest);
        assert_eq!(batch.matrices[0].as_matrix(), &m);
        assert_eq!(batch.labels, vec![Some(1)]);
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            BatchManifest::read(Path::new("/nonexistent/manifest.json")),
            Err(Error::Io(_))
        ));
    }
}

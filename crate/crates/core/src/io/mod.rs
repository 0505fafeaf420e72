//! Result emission: legacy VTK fields, response-curve CSV, run manifest.

pub mod curves;
pub mod manifest;
pub mod vtk;

pub use curves::{parse_curves, write_curves, Curves};
pub use manifest::{RunManifest, RunStatus};
pub use vtk::{parse_vtk, write_vtk, NodalFields, VtkData};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub fn write_text(path: &std::path::Path, text: &str) -> Result<(), IoError> {
    std::fs::write(path, text).map_err(|source| IoError::File { path: path.display().to_string(), source })
}

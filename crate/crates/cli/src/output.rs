//! Error records and file writers.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] ffdg::Error),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn module(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.module(),
            _ => "cli",
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            CliError::Config(_) => "ConfigError",
            CliError::Io { .. } => "IoError",
            CliError::Core(e) => e.code(),
            CliError::Internal(_) => "Internal",
        }
    }

    /// One-line JSON record for standard error.
    pub fn record(&self) -> String {
        serde_json::json!({
            "error": { "module": self.module(), "code": self.code(), "message": self.to_string() }
        })
        .to_string()
    }
}

macro_rules! core_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Core(e.into())
            }
        }
    )*};
}

core_error!(
    ffdg::model::ModelError,
    ffdg::stencil::StencilError,
    ffdg::dg_core::DgError,
    ffdg::operator_assembly::AssemblyError,
    ffdg::riccati::RiccatiError,
    ffdg::stationary::StationaryError,
    ffdg::montecarlo::SimulationError,
    ffdg::analysis::AnalysisError
);

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io { path: path.to_path_buf(), message: e.to_string() }
}

/// Output directory, created on first use.
pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| io_err(root, e))?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn csv(&self, name: &str) -> Result<CsvOut, CliError> {
        let path = self.path(name);
        let writer = csv::Writer::from_path(&path).map_err(|e| io_err(&path, e))?;
        Ok(CsvOut { path, writer })
    }

    pub fn json(&self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let path = self.path(name);
        let text = serde_json::to_string_pretty(value).map_err(|e| io_err(&path, e))?;
        fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))
    }

    /// Row-major matrix without a header.
    pub fn matrix(&self, name: &str, m: &DMatrix<f64>) -> Result<(), CliError> {
        let mut out = self.csv(name)?;
        for row in m.row_iter() {
            out.record(row.iter().map(|&x| num(x)))?;
        }
        out.finish()
    }
}

pub struct CsvOut {
    path: PathBuf,
    writer: csv::Writer<fs::File>,
}

impl CsvOut {
    pub fn record<I, S>(&mut self, fields: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).map_err(|e| io_err(&self.path, e))
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.writer.flush().map_err(|e| io_err(&self.path, e))
    }
}

/// Shortest representation that reads back to the same `f64`.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

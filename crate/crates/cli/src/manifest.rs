//! JSON sidecars describing how an output file was made.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::input::file_hash;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ConfigIdentity {
    Preset { name: String },
    File { path: String, sha256: String },
}

impl ConfigIdentity {
    /// The label written into CSV headers.
    pub fn label(&self) -> String {
        match self {
            ConfigIdentity::Preset { name } => name.clone(),
            ConfigIdentity::File { path, sha256 } => format!("{path} (sha256 {sha256})"),
        }
    }
}

/// Numeric parameters of a run; unused ones are left out.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_cap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reflect_t0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub period_offset: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refine: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRef {
    pub path: String,
    pub sha256: String,
}

impl FileRef {
    pub fn of(path: &Path) -> Result<Self, CliError> {
        Ok(FileRef { path: path.display().to_string(), sha256: file_hash(path)? })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name, as given.
    pub args: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<ConfigIdentity>,
    pub parameters: Parameters,
    pub inputs: Vec<FileRef>,
    pub output: FileRef,
    pub tool_version: String,
    pub wall_time_seconds: f64,
}

pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

impl RunManifest {
    pub fn write_beside(&self, out: &Path) -> Result<PathBuf, CliError> {
        let path = sidecar_path(out);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}

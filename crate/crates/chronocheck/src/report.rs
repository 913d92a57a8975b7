//! Report files under `<root>/<experiment>/<name>.{json,csv,png}`.
//!
//! Every JSON report wraps its payload with the run configuration and the
//! artifact version, so a report can be traced back to the inputs that
//! produced it. The wall-clock time is isolated in `metadata.generated_at`;
//! everything else is byte-identical across reruns with the same flags.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::settings::Resolved;

/// `git describe` of the source tree at build time, or the crate version.
pub const VERSION: &str = env!("CHRONOCHECK_VERSION");

/// The parameters of one command invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub settings: BTreeMap<String, Resolved>,
    /// Structured configuration records (model, training), when relevant.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub records: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub version: String,
    /// Seconds since the Unix epoch.
    pub generated_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub metadata: Metadata,
    pub run_config: RunConfig,
    pub result: T,
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("{path}: {message}")]
    Write { path: PathBuf, message: String },
}

/// Writes the files of one experiment.
pub struct Reporter {
    dir: PathBuf,
    run: RunConfig,
    written: Vec<PathBuf>,
}

impl Reporter {
    pub fn new(root: &Path, experiment: &str, run: RunConfig) -> Result<Self, ReportError> {
        let dir = root.join(experiment);
        fs::create_dir_all(&dir).map_err(|e| ReportError::Write {
            path: dir.clone(),
            message: e.to_string(),
        })?;
        Ok(Self { dir, run, written: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    fn target(&mut self, file: String) -> PathBuf {
        let p = self.dir.join(file);
        self.written.push(p.clone());
        p
    }

    fn fail(path: &Path, e: impl ToString) -> ReportError {
        ReportError::Write {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }

    pub fn json<T: Serialize>(&mut self, name: &str, result: &T) -> Result<PathBuf, ReportError> {
        let p = self.target(format!("{name}.json"));
        let env = Envelope {
            metadata: Metadata {
                version: VERSION.to_string(),
                generated_at: std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map_or(0, |d| d.as_secs()),
            },
            run_config: self.run.clone(),
            result,
        };
        let mut text = serde_json::to_string_pretty(&env).map_err(|e| Self::fail(&p, e))?;
        text.push('\n');
        fs::write(&p, text).map_err(|e| Self::fail(&p, e))?;
        Ok(p)
    }

    /// A CSV with a header row.
    pub fn csv<S: AsRef<str>>(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<S>>) -> Result<PathBuf, ReportError> {
        let p = self.target(format!("{name}.csv"));
        let mut w = csv::Writer::from_path(&p).map_err(|e| Self::fail(&p, e))?;
        w.write_record(header).map_err(|e| Self::fail(&p, e))?;
        for row in rows {
            w.write_record(row.iter().map(|s| s.as_ref())).map_err(|e| Self::fail(&p, e))?;
        }
        w.flush().map_err(|e| Self::fail(&p, e))?;
        Ok(p)
    }

    pub fn png(&mut self, name: &str, img: &RgbImage) -> Result<PathBuf, ReportError> {
        let p = self.target(format!("{name}.png"));
        img.save_with_format(&p, image::ImageFormat::Png).map_err(|e| Self::fail(&p, e))?;
        Ok(p)
    }
}

/// Strip `metadata.generated_at` so two reports can be compared byte for byte.
pub fn without_timestamp(json: &str) -> String {
    json.lines().filter(|l| !l.trim_start().starts_with("\"generated_at\"")).collect::<Vec<_>>().join("\n")
}

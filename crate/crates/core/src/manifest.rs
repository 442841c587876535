//! Run manifests and atomic output files.
//!
//! Every command writes its outputs through [`AtomicFile`] (temp file in the
//! target directory, renamed into place on commit) and finishes with a
//! `manifest.json` recording the resolved parameters, the exact system
//! definition and the SHA-256 of each output. Replaying a manifest reruns
//! the same computation and compares digests.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// A file written to a temporary sibling and renamed into place on
/// [`AtomicFile::commit`]; dropped without committing, nothing appears.
pub struct AtomicFile {
    path: PathBuf,
    writer: BufWriter<NamedTempFile>,
    hasher: Sha256,
}

impl AtomicFile {
    pub fn create(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        let tmp = NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self {
            path,
            writer: BufWriter::new(tmp),
            hasher: Sha256::new(),
        })
    }

    pub fn write_all(&mut self, bytes: &[u8]) -> Result<()> {
        self.hasher.update(bytes);
        self.writer
            .write_all(bytes)
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn write_line(&mut self, line: &str) -> Result<()> {
        self.write_all(line.as_bytes())?;
        self.write_all(b"\n")
    }

    /// Flushes, renames into place and returns the record of the file.
    pub fn commit(self) -> Result<OutputRecord> {
        let path = self.path;
        let tmp = self
            .writer
            .into_inner()
            .map_err(|e| Error::io(&path, e.into_error()))?;
        tmp.as_file().sync_all().map_err(|e| Error::io(&path, e))?;
        tmp.persist(&path).map_err(|e| Error::io(&path, e.error))?;
        Ok(OutputRecord {
            file: path
                .file_name()
                .map(|f| f.to_string_lossy().into_owned())
                .unwrap_or_default(),
            sha256: hex::encode(self.hasher.finalize()),
        })
    }
}

/// Writes `bytes` to `path` atomically.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<OutputRecord> {
    let mut f = AtomicFile::create(path)?;
    f.write_all(bytes)?;
    f.commit()
}

/// Pretty JSON with a trailing newline.
pub fn write_json(path: &Path, value: &Value) -> Result<OutputRecord> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub file: String,
    pub sha256: String,
}

/// The system definition a run used, verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemRecord {
    /// Path or bundled name given on the command line.
    pub source: String,
    pub sha256: String,
    pub definition: String,
}

impl SystemRecord {
    pub fn new(source: impl Into<String>, definition: impl Into<String>) -> Self {
        let definition = definition.into();
        Self {
            source: source.into(),
            sha256: sha256_hex(definition.as_bytes()),
            definition,
        }
    }

    /// Confirms the embedded definition still matches its digest.
    pub fn check(&self) -> Result<()> {
        let actual = sha256_hex(self.definition.as_bytes());
        if actual != self.sha256 {
            return Err(Error::invalid(format!(
                "system definition digest mismatch: recorded {}, found {actual}",
                self.sha256
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Every flag of the command after defaults and environment were
    /// applied; enough to rerun it.
    pub params: Value,
    /// Values computed from the parameters (`tau_M`, grid sizes, ...),
    /// recorded for reference only.
    #[serde(default)]
    pub derived: BTreeMap<String, String>,
    pub system: SystemRecord,
    pub outputs: Vec<OutputRecord>,
    pub version: String,
    pub timestamp: String,
}

impl RunManifest {
    pub fn new(command: &str, params: Value, system: SystemRecord) -> Self {
        Self {
            command: command.to_string(),
            params,
            derived: BTreeMap::new(),
            system,
            outputs: Vec::new(),
            version: crate::VERSION.to_string(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: RunManifest = serde_json::from_str(&text)?;
        m.system.check()?;
        Ok(m)
    }

    pub fn save(&self, dir: &Path) -> Result<OutputRecord> {
        write_json(&dir.join(MANIFEST_FILE), &serde_json::to_value(self)?)
    }

    /// Outputs whose digest differs from this manifest's record (or that
    /// are missing from `produced`).
    pub fn mismatches(&self, produced: &[OutputRecord]) -> Vec<String> {
        let mut bad = Vec::new();
        for rec in &self.outputs {
            match produced.iter().find(|p| p.file == rec.file) {
                Some(p) if p.sha256 == rec.sha256 => {}
                Some(_) => bad.push(format!("{}: contents differ", rec.file)),
                None => bad.push(format!("{}: not produced", rec.file)),
            }
        }
        for p in produced {
            if !self.outputs.iter().any(|r| r.file == p.file) {
                bad.push(format!("{}: not in the manifest", p.file));
            }
        }
        bad
    }
}

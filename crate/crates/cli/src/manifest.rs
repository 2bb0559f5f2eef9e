//! Image corpus manifests: a `day,arm,path` CSV.
//!
//! The first Day-0 entry is the reference every other frame is compared
//! against. Relative paths resolve against the manifest's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub day: u32,
    pub arm: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
    /// Index of the reference entry.
    pub reference: usize,
}

impl CorpusManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self, CliError> {
        let reference = entries
            .iter()
            .position(|e| e.day == 0)
            .ok_or_else(|| CliError::Config("manifest has no day 0 reference entry".into()))?;
        Ok(Self { entries, reference })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
            .clone();
        if headers.iter().collect::<Vec<_>>() != ["day", "arm", "path"] {
            return Err(CliError::Config(format!(
                "{}: manifest header must be day,arm,path",
                path.display()
            )));
        }
        let mut entries = Vec::new();
        for row in reader.deserialize::<ManifestEntry>() {
            let mut entry =
                row.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            if entry.path.is_relative() {
                entry.path = base.join(&entry.path);
            }
            entries.push(entry);
        }
        Self::new(entries)
    }

    /// Writes the manifest with paths relative to `dir` where possible.
    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let dir = path.parent().unwrap_or(Path::new("."));
        let mut out = String::from("day,arm,path\n");
        for e in &self.entries {
            let p = e.path.strip_prefix(dir).unwrap_or(&e.path);
            out.push_str(&format!("{},{},{}\n", e.day, e.arm, p.display()));
        }
        std::fs::write(path, out).map_err(|e| CliError::io(path, e))
    }
}

//! Fitted models saved as versioned JSON.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ordgam::fit::FitResult;
use ordgam::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const FORMAT_VERSION: u32 = 1;

/// Where a model came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub data_path: String,
    pub data_sha256: String,
    pub rows: usize,
    /// Unix time from `SOURCE_DATE_EPOCH`, when set.
    pub created: Option<u64>,
    /// Seeds consumed while fitting. Fitting is deterministic, so this is empty today.
    pub seeds: Vec<u64>,
}

impl Provenance {
    pub fn for_data(path: &Path, rows: usize) -> Result<Self> {
        Ok(Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            data_path: path.display().to_string(),
            data_sha256: sha256_file(path)?,
            rows,
            created: std::env::var("SOURCE_DATE_EPOCH")
                .ok()
                .and_then(|s| s.parse().ok()),
            seeds: Vec::new(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArchive {
    pub format_version: u32,
    pub provenance: Provenance,
    pub model: FitResult,
}

impl ModelArchive {
    pub fn new(model: FitResult, provenance: Provenance) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            provenance,
            model,
        }
    }

    pub fn to_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = BufWriter::new(writer);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    /// Checks the format version before decoding the rest.
    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_reader(reader)?;
        let found = value
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::Schema("model archive has no format_version".into()))?;
        if found != u64::from(FORMAT_VERSION) {
            return Err(Error::ArchiveVersion {
                found: u32::try_from(found).unwrap_or(u32::MAX),
                expected: FORMAT_VERSION,
            });
        }
        Ok(serde_json::from_value(value)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_writer(File::create(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_reader(BufReader::new(File::open(path)?))
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

//! Checkpoint container for [`StreamState`].
//!
//! Two encodings share one schema:
//!
//! * JSON: `{"format_version": 1, "state": {...}, ...}`. Floats are written
//!   in shortest round-trip form, so save → load is bit-exact.
//! * Binary: the 8 magic bytes `DASHCKPT`, the format version as a
//!   little-endian `u32`, then the bincode encoding of the same structure.
//!
//! [`load`] detects the encoding from the leading bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::StreamState;
use crate::error::{Error, Result};
use crate::normalize::{ColumnStats, StatsPolicy};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"DASHCKPT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Encoding {
    #[default]
    Json,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub state: StreamState,
    /// Scaling statistics for the next batch, when the stream is normalized.
    #[serde(default)]
    pub column_stats: Option<ColumnStats>,
    #[serde(default)]
    pub stats_policy: Option<StatsPolicy>,
}

impl Checkpoint {
    pub fn new(state: StreamState) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            state,
            column_stats: None,
            stats_policy: None,
        }
    }

    pub fn with_stats(mut self, stats: ColumnStats, policy: StatsPolicy) -> Self {
        self.column_stats = Some(stats);
        self.stats_policy = Some(policy);
        self
    }

    pub fn to_bytes(&self, encoding: Encoding) -> Result<Vec<u8>> {
        match encoding {
            Encoding::Json => Ok(serde_json::to_vec_pretty(self)?),
            Encoding::Binary => {
                let mut out = Vec::new();
                out.extend_from_slice(MAGIC);
                out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
                bincode::serialize_into(&mut out, self)?;
                Ok(out)
            }
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut ckpt: Checkpoint = if bytes.starts_with(MAGIC) {
            let version_bytes: [u8; 4] = bytes
                .get(8..12)
                .and_then(|b| b.try_into().ok())
                .ok_or(Error::CheckpointVersion(0))?;
            let version = u32::from_le_bytes(version_bytes);
            if version != FORMAT_VERSION {
                return Err(Error::CheckpointVersion(version));
            }
            bincode::deserialize(&bytes[12..])?
        } else {
            serde_json::from_slice(bytes)?
        };
        if ckpt.format_version != FORMAT_VERSION {
            return Err(Error::CheckpointVersion(ckpt.format_version));
        }
        ckpt.state.factors.validate()?;
        ckpt.state.rebuild_index();
        Ok(ckpt)
    }
}

pub fn save(path: &Path, ckpt: &Checkpoint, encoding: Encoding) -> Result<()> {
    let bytes = ckpt.to_bytes(encoding)?;
    let mut file = fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    Checkpoint::from_bytes(&bytes).map_err(|e| match e {
        Error::Json(err) => Error::format(path, err.to_string()),
        Error::Bincode(err) => Error::format(path, err.to_string()),
        other => other,
    })
}

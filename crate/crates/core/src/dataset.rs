//! Dataset manifest: one JSON object per line, `{image_id, lat, lon, source}`
//! with optional pixel `width`/`height` (1000x1000 when absent).

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::GeoCoordinate;

pub const DEFAULT_IMAGE_SIDE: u32 = 1000;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot open {path}: {source}")]
    Open {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("line {line}: duplicate image_id `{image_id}`")]
    Duplicate { line: usize, image_id: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_id: String,
    #[serde(flatten)]
    pub truth: GeoCoordinate,
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<u32>,
}

impl ManifestEntry {
    pub fn dimensions(&self) -> (u32, u32) {
        (
            self.width.unwrap_or(DEFAULT_IMAGE_SIDE),
            self.height.unwrap_or(DEFAULT_IMAGE_SIDE),
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct DatasetManifest {
    entries: Vec<ManifestEntry>,
    index: HashMap<String, usize>,
}

impl DatasetManifest {
    pub fn from_entries(entries: Vec<ManifestEntry>) -> Result<Self, ManifestError> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if index.insert(e.image_id.clone(), i).is_some() {
                return Err(ManifestError::Duplicate {
                    line: i + 1,
                    image_id: e.image_id.clone(),
                });
            }
        }
        Ok(Self { entries, index })
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self, ManifestError> {
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: ManifestEntry =
                serde_json::from_str(&line).map_err(|err| ManifestError::Invalid {
                    line: i + 1,
                    message: err.to_string(),
                })?;
            if e.width == Some(0) || e.height == Some(0) {
                return Err(ManifestError::Invalid {
                    line: i + 1,
                    message: "image dimensions must be positive".into(),
                });
            }
            entries.push(e);
        }
        Self::from_entries(entries)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ManifestError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| ManifestError::Open {
            path: path.display().to_string(),
            source,
        })?;
        Self::read(BufReader::new(file))
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for e in &self.entries {
            let line = serde_json::to_string(e).map_err(std::io::Error::other)?;
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn get(&self, image_id: &str) -> Option<&ManifestEntry> {
        self.index.get(image_id).map(|&i| &self.entries[i])
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

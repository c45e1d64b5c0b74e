//! Live-search seam for cache misses.
//!
//! Only offline providers ship here: [`NoFallback`] answers every miss with
//! an empty result list, [`StaticFallback`] serves canned results. Every
//! miss can be appended to a [`MissLog`] regardless of provider.

use std::collections::HashMap;
use std::io::Write;
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trajectory::BoundingBox;

#[derive(Debug, Clone, PartialEq)]
pub enum SearchRequest<'a> {
    Image {
        image_id: &'a str,
        bbox: BoundingBox,
        goal: Option<&'a str>,
    },
    Text {
        query: &'a str,
    },
}

/// A live result before numbering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FallbackResult {
    pub title: String,
    pub url: String,
    pub domain: String,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("fallback provider failed: {0}")]
pub struct FallbackError(pub String);

pub trait FallbackProvider: Send + Sync {
    fn search(&self, request: &SearchRequest<'_>) -> Result<Vec<FallbackResult>, FallbackError>;
}

/// Default provider: every miss returns no results.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoFallback;

impl FallbackProvider for NoFallback {
    fn search(&self, _: &SearchRequest<'_>) -> Result<Vec<FallbackResult>, FallbackError> {
        Ok(Vec::new())
    }
}

/// Always fails; stands in for an exhausted or unreachable API.
#[derive(Debug, Clone, Default)]
pub struct FailingFallback(pub String);

impl FallbackProvider for FailingFallback {
    fn search(&self, _: &SearchRequest<'_>) -> Result<Vec<FallbackResult>, FallbackError> {
        Err(FallbackError(self.0.clone()))
    }
}

/// Canned results keyed by image id (image search) or exact query text.
#[derive(Debug, Clone, Default)]
pub struct StaticFallback {
    pub image: HashMap<String, Vec<FallbackResult>>,
    pub text: HashMap<String, Vec<FallbackResult>>,
    /// Served when no key matches.
    pub default: Vec<FallbackResult>,
}

impl FallbackProvider for StaticFallback {
    fn search(&self, request: &SearchRequest<'_>) -> Result<Vec<FallbackResult>, FallbackError> {
        let hit = match request {
            SearchRequest::Image { image_id, .. } => self.image.get(*image_id),
            SearchRequest::Text { query } => self.text.get(*query),
        };
        Ok(hit.unwrap_or(&self.default).clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissRecord {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BoundingBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
}

impl MissRecord {
    pub fn for_request(request: &SearchRequest<'_>) -> Self {
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_millis() as u64);
        match request {
            SearchRequest::Image { image_id, bbox, .. } => Self {
                kind: "img".into(),
                image_id: Some(image_id.to_string()),
                bbox: Some(*bbox),
                query: None,
                timestamp,
            },
            SearchRequest::Text { query } => Self {
                kind: "txt".into(),
                image_id: None,
                bbox: None,
                query: Some(query.to_string()),
                timestamp,
            },
        }
    }
}

enum Sink {
    Memory(Vec<String>),
    Writer(Box<dyn Write + Send>),
}

/// Append-only miss log behind a single writer lock.
pub struct MissLog {
    sink: Mutex<Sink>,
}

impl std::fmt::Debug for MissLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MissLog").finish_non_exhaustive()
    }
}

impl MissLog {
    pub fn memory() -> Self {
        Self {
            sink: Mutex::new(Sink::Memory(Vec::new())),
        }
    }

    pub fn to_writer(w: impl Write + Send + 'static) -> Self {
        Self {
            sink: Mutex::new(Sink::Writer(Box::new(w))),
        }
    }

    pub fn record(&self, rec: &MissRecord) -> std::io::Result<()> {
        let line = serde_json::to_string(rec)?;
        let mut sink = self.sink.lock().unwrap_or_else(|e| e.into_inner());
        match &mut *sink {
            Sink::Memory(lines) => lines.push(line),
            Sink::Writer(w) => {
                writeln!(w, "{line}")?;
                w.flush()?;
            }
        }
        Ok(())
    }

    /// Lines recorded so far; empty for writer-backed logs.
    pub fn lines(&self) -> Vec<String> {
        match &*self.sink.lock().unwrap_or_else(|e| e.into_inner()) {
            Sink::Memory(lines) => lines.clone(),
            Sink::Writer(_) => Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_provider_is_empty() {
        let r = NoFallback
            .search(&SearchRequest::Text { query: "x" })
            .unwrap();
        assert!(r.is_empty());
    }

    #[test]
    fn miss_log_appends_one_line_per_miss() {
        let log = MissLog::memory();
        let req = SearchRequest::Image {
            image_id: "img",
            bbox: BoundingBox::full(),
            goal: None,
        };
        log.record(&MissRecord::for_request(&req)).unwrap();
        let lines = log.lines();
        assert_eq!(lines.len(), 1);
        let rec: MissRecord = serde_json::from_str(&lines[0]).unwrap();
        assert_eq!(rec.kind, "img");
        assert_eq!(rec.image_id.as_deref(), Some("img"));
        assert_eq!(rec.bbox, Some(BoundingBox::full()));
    }
}

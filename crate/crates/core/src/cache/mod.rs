//! Offline evidence store for image and text search.
//!
//! Image-search entries are keyed by `(image_id, call_index)` and carry the
//! annotated target box plus per-result usefulness labels. Text-search
//! entries are keyed by their normalized query. Both are matched fuzzily:
//! boxes by IoU against the target box, queries by token Jaccard similarity.
//!
//! File format: a version header line followed by one JSON object per entry.
//!
//! ```text
//! {"version":1,"kind":"reverse-cache"}
//! {"t":"img","image_id":"..","call_index":0,"bbox_gt":[x1,y1,x2,y2],"results":[..]}
//! {"t":"txt","raw_query":"..","results":[..]}
//! ```

mod fallback;
mod tokens;

pub use fallback::{
    FailingFallback, FallbackError, FallbackProvider, FallbackResult, MissLog, MissRecord,
    NoFallback, SearchRequest, StaticFallback,
};
pub use tokens::{jaccard_tokens, normalize_query, tokenize};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::toolbox::iou;
use crate::trajectory::BoundingBox;

pub const CACHE_VERSION: u32 = 1;
pub const CACHE_KIND: &str = "reverse-cache";

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cannot open cache {path}: {source}")]
    Open {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: bad header (expected version {CACHE_VERSION}, kind {CACHE_KIND})")]
    Header { line: usize },
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("line {line}: duplicate entry {key}")]
    Duplicate { line: usize, key: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SearchResult {
    pub index: usize,
    pub title: String,
    pub url: String,
    pub domain: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub is_geo_useful: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageSearchEntry {
    pub image_id: String,
    pub call_index: usize,
    pub bbox_gt: BoundingBox,
    pub results: Vec<SearchResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextSearchEntry {
    pub query_norm: String,
    pub raw_query: String,
    pub results: Vec<SearchResult>,
}

impl TextSearchEntry {
    pub fn new(raw_query: impl Into<String>, results: Vec<SearchResult>) -> Self {
        let raw_query = raw_query.into();
        Self {
            query_norm: normalize_query(&raw_query),
            raw_query,
            results,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CacheStats {
    pub images: usize,
    pub image_entries: usize,
    pub text_entries: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    kind: String,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "t")]
enum CacheLine {
    #[serde(rename = "img")]
    Image {
        image_id: String,
        call_index: usize,
        bbox_gt: BoundingBox,
        results: Vec<SearchResult>,
    },
    #[serde(rename = "txt")]
    Text {
        raw_query: String,
        results: Vec<SearchResult>,
    },
}

/// Immutable, fully indexed cache.
#[derive(Debug, Clone, Default)]
pub struct CacheStore {
    image_entries: BTreeMap<String, Vec<ImageSearchEntry>>,
    text_entries: Vec<TextSearchEntry>,
    text_tokens: Vec<BTreeSet<String>>,
    postings: HashMap<String, Vec<usize>>,
    text_keys: HashMap<String, usize>,
}

fn check_results(results: &[SearchResult], require_labels: bool) -> Result<(), String> {
    if results.is_empty() {
        return Err("entry has no results".into());
    }
    for (i, r) in results.iter().enumerate() {
        if r.index != i + 1 {
            return Err(format!(
                "result indices must run 1..{} in order",
                results.len()
            ));
        }
    }
    let labeled = results.iter().filter(|r| r.is_geo_useful.is_some()).count();
    if labeled != 0 && labeled != results.len() {
        return Err("labels must cover every result or none".into());
    }
    if require_labels && labeled == 0 {
        return Err("image-search entry is unlabeled".into());
    }
    Ok(())
}

impl CacheStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(
        images: impl IntoIterator<Item = ImageSearchEntry>,
        texts: impl IntoIterator<Item = TextSearchEntry>,
    ) -> Result<Self, CacheError> {
        let mut store = Self::new();
        for (i, e) in images.into_iter().enumerate() {
            store.insert_image(e, i + 1)?;
        }
        for (i, e) in texts.into_iter().enumerate() {
            store.insert_text(e, i + 1)?;
        }
        Ok(store)
    }

    fn insert_image(&mut self, entry: ImageSearchEntry, line: usize) -> Result<(), CacheError> {
        let schema = |message: String| CacheError::Schema { line, message };
        if entry.bbox_gt.is_degenerate() {
            return Err(schema(format!("degenerate bbox_gt {}", entry.bbox_gt)));
        }
        // labels are optional here; full-coverage data is enforced upstream
        check_results(&entry.results, false).map_err(schema)?;
        let slot = self
            .image_entries
            .entry(entry.image_id.clone())
            .or_default();
        match slot.binary_search_by_key(&entry.call_index, |e| e.call_index) {
            Ok(_) => Err(CacheError::Duplicate {
                line,
                key: format!("({}, {})", entry.image_id, entry.call_index),
            }),
            Err(pos) => {
                slot.insert(pos, entry);
                Ok(())
            }
        }
    }

    fn insert_text(&mut self, entry: TextSearchEntry, line: usize) -> Result<(), CacheError> {
        if entry.query_norm.is_empty() {
            return Err(CacheError::Schema {
                line,
                message: format!("query {:?} has no tokens", entry.raw_query),
            });
        }
        check_results(&entry.results, false)
            .map_err(|message| CacheError::Schema { line, message })?;
        if self.text_keys.contains_key(&entry.query_norm) {
            return Err(CacheError::Duplicate {
                line,
                key: format!("query {:?}", entry.query_norm),
            });
        }
        let id = self.text_entries.len();
        let toks = tokenize(&entry.raw_query);
        for t in &toks {
            self.postings.entry(t.clone()).or_default().push(id);
        }
        self.text_keys.insert(entry.query_norm.clone(), id);
        self.text_tokens.push(toks);
        self.text_entries.push(entry);
        Ok(())
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            images: self.image_entries.len(),
            image_entries: self.image_entries.values().map(Vec::len).sum(),
            text_entries: self.text_entries.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.image_entries.is_empty() && self.text_entries.is_empty()
    }

    pub fn image_entries(&self) -> impl Iterator<Item = &ImageSearchEntry> {
        self.image_entries.values().flatten()
    }

    pub fn entries_for(&self, image_id: &str) -> &[ImageSearchEntry] {
        self.image_entries.get(image_id).map_or(&[], Vec::as_slice)
    }

    pub fn text_entries(&self) -> &[TextSearchEntry] {
        &self.text_entries
    }

    /// Best entry for the image by IoU with its target box, if that IoU
    /// reaches `tau`. Ties go to the lowest call index.
    pub fn lookup_image(
        &self,
        image_id: &str,
        bbox_pred: &BoundingBox,
        tau: f64,
    ) -> Option<(&ImageSearchEntry, f64)> {
        let mut best: Option<(&ImageSearchEntry, f64)> = None;
        for e in self.entries_for(image_id) {
            let score = iou(bbox_pred, &e.bbox_gt);
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((e, score));
            }
        }
        best.filter(|(_, s)| *s >= tau)
    }

    /// Best text entry by token Jaccard similarity, if it reaches `theta`.
    /// Ties go to the earliest inserted entry.
    pub fn lookup_text(&self, query: &str, theta: f64) -> Option<(&TextSearchEntry, f64)> {
        let toks = tokenize(query);
        if toks.is_empty() || self.text_entries.is_empty() {
            return None;
        }
        let candidates: BTreeSet<usize> = toks
            .iter()
            .filter_map(|t| self.postings.get(t))
            .flatten()
            .copied()
            .collect();
        let mut best: Option<(usize, f64)> = None;
        for id in candidates {
            let score = tokens::jaccard_sets(&toks, &self.text_tokens[id]);
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((id, score));
            }
        }
        // entries sharing no token score 0; only reachable with theta <= 0
        let best = best.or(Some((0, 0.0)));
        best.filter(|(_, s)| *s >= theta)
            .map(|(id, s)| (&self.text_entries[id], s))
    }

    /// Merge another store's entries into this one, rejecting duplicates.
    pub fn merge(&mut self, other: CacheStore) -> Result<(), CacheError> {
        for e in other.image_entries.into_values().flatten() {
            self.insert_image(e, 0)?;
        }
        for e in other.text_entries {
            self.insert_text(e, 0)?;
        }
        Ok(())
    }

    /// Write the canonical form: header, image entries ordered by
    /// `(image_id, call_index)`, then text entries in insertion order.
    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header = Header {
            version: CACHE_VERSION,
            kind: CACHE_KIND.into(),
        };
        writeln!(w, "{}", serde_json::to_string(&header)?)?;
        for e in self.image_entries() {
            let line = CacheLine::Image {
                image_id: e.image_id.clone(),
                call_index: e.call_index,
                bbox_gt: e.bbox_gt,
                results: e.results.clone(),
            };
            writeln!(w, "{}", serde_json::to_string(&line)?)?;
        }
        for e in &self.text_entries {
            let line = CacheLine::Text {
                raw_query: e.raw_query.clone(),
                results: e.results.clone(),
            };
            writeln!(w, "{}", serde_json::to_string(&line)?)?;
        }
        w.flush()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self, CacheError> {
        let mut store = Self::new();
        let mut seen_header = false;
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            if !seen_header {
                let h: Header = serde_json::from_str(&line)
                    .map_err(|_| CacheError::Header { line: line_no })?;
                if h.version != CACHE_VERSION || h.kind != CACHE_KIND {
                    return Err(CacheError::Header { line: line_no });
                }
                seen_header = true;
                continue;
            }
            let parsed: CacheLine =
                serde_json::from_str(&line).map_err(|e| CacheError::Schema {
                    line: line_no,
                    message: e.to_string(),
                })?;
            match parsed {
                CacheLine::Image {
                    image_id,
                    call_index,
                    bbox_gt,
                    results,
                } => store.insert_image(
                    ImageSearchEntry {
                        image_id,
                        call_index,
                        bbox_gt,
                        results,
                    },
                    line_no,
                )?,
                CacheLine::Text { raw_query, results } => {
                    store.insert_text(TextSearchEntry::new(raw_query, results), line_no)?
                }
            }
        }
        Ok(store)
    }
}

/// Load a cache file. An empty file yields an empty store.
pub fn load_cache(path: impl AsRef<Path>) -> Result<CacheStore, CacheError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| CacheError::Open {
        path: path.display().to_string(),
        source,
    })?;
    CacheStore::read(BufReader::new(file))
}

pub fn write_cache(store: &CacheStore, path: impl AsRef<Path>) -> std::io::Result<()> {
    let file = std::fs::File::create(path)?;
    store.write(std::io::BufWriter::new(file))
}

//! Box geometry, zoom arithmetic and tool execution against the offline cache.
//!
//! Observations are plain text. Search results render one per line as
//! `[k] {title} --- {domain}` with 1-based `k`; an empty result list renders
//! as the single line [`NO_RESULTS`].

mod geometry;
mod resize;

pub use geometry::{denormalize, iou, PixelRect};
pub use resize::{smart_resize, ResizePolicy};

use serde::Serialize;
use thiserror::Error;

use crate::cache::{
    CacheStore, FallbackProvider, FallbackResult, MissLog, MissRecord, SearchRequest, SearchResult,
};
use crate::trajectory::{BoundingBox, ToolCall, ToolName};

pub const NO_RESULTS: &str = "NO RESULTS FOUND";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ToolError {
    #[error("degenerate bounding box {0}")]
    DegenerateBox(BoundingBox),
    #[error("invalid image dimensions {width}x{height}")]
    ImageDimensions { width: u32, height: u32 },
    #[error("invalid resize policy: {0}")]
    ResizePolicy(String),
}

/// The image a tool call operates on.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageContext {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
}

/// Shared, read-only resources for executing tools.
#[derive(Clone, Copy)]
pub struct ToolEnv<'a> {
    pub cache: &'a CacheStore,
    pub fallback: &'a dyn FallbackProvider,
    pub miss_log: Option<&'a MissLog>,
    /// IoU a predicted box needs against a cached target box.
    pub tau_iou: f64,
    /// Jaccard similarity a query needs against a cached query.
    pub text_theta: f64,
    pub resize: ResizePolicy,
}

/// Everything the reward engine needs to know about one executed call.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExecutionFacts {
    pub tool: ToolName,
    /// Best IoU between the call's box and the image's cached target boxes.
    pub matched_iou: Option<f64>,
    /// Target box of the best-matching cache entry.
    pub matched_box: Option<BoundingBox>,
    pub cache_hit: bool,
    /// Results as shown to the agent, numbered from 1.
    pub results: Vec<SearchResult>,
    /// Zoom box was degenerate or outside the normalized range.
    pub invalid_box: bool,
    pub valid_queries: usize,
    pub api_failure: bool,
    pub resized_to: Option<(u32, u32)>,
}

impl ExecutionFacts {
    fn new(tool: ToolName) -> Self {
        Self {
            tool,
            matched_iou: None,
            matched_box: None,
            cache_hit: false,
            results: Vec::new(),
            invalid_box: false,
            valid_queries: 0,
            api_failure: false,
            resized_to: None,
        }
    }

    /// Per-result usefulness labels, present only when every shown result
    /// carries one.
    pub fn labels(&self) -> Option<Vec<bool>> {
        if self.results.is_empty() {
            return None;
        }
        self.results.iter().map(|r| r.is_geo_useful).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToolExecution {
    pub observation: String,
    pub facts: ExecutionFacts,
}

/// Render results as the numbered observation list.
pub fn render_results(results: &[SearchResult]) -> String {
    if results.is_empty() {
        return NO_RESULTS.to_string();
    }
    results
        .iter()
        .map(|r| format!("[{}] {} --- {}", r.index, r.title, r.domain))
        .collect::<Vec<_>>()
        .join("\n")
}

fn number<I>(items: I) -> Vec<SearchResult>
where
    I: IntoIterator<Item = SearchResult>,
{
    items
        .into_iter()
        .enumerate()
        .map(|(i, mut r)| {
            r.index = i + 1;
            r
        })
        .collect()
}

fn from_fallback(items: Vec<FallbackResult>) -> Vec<SearchResult> {
    number(items.into_iter().map(|r| SearchResult {
        index: 0,
        title: r.title,
        url: r.url,
        domain: r.domain,
        is_geo_useful: None,
    }))
}

impl ToolEnv<'_> {
    fn on_miss(
        &self,
        request: &SearchRequest<'_>,
        facts: &mut ExecutionFacts,
    ) -> Vec<SearchResult> {
        if let Some(log) = self.miss_log {
            // a broken miss log does not fail the episode
            let _ = log.record(&MissRecord::for_request(request));
        }
        match self.fallback.search(request) {
            Ok(items) => from_fallback(items),
            Err(_) => {
                facts.api_failure = true;
                Vec::new()
            }
        }
    }
}

/// Execute a validated call. Deterministic for a fixed cache and a
/// deterministic fallback provider.
pub fn execute_tool(call: &ToolCall, image: &ImageContext, env: &ToolEnv<'_>) -> ToolExecution {
    match call.name {
        ToolName::Zoom => zoom(call, image, env),
        ToolName::ImageSearch => image_search(call, image, env),
        ToolName::TextSearch => text_search(call, env),
    }
}

fn zoom(call: &ToolCall, image: &ImageContext, env: &ToolEnv<'_>) -> ToolExecution {
    let mut facts = ExecutionFacts::new(ToolName::Zoom);
    let bbox = call.bbox.unwrap_or(BoundingBox::full());
    let crop = if call.bbox.is_none() || call.bbox_out_of_range {
        Err(ToolError::DegenerateBox(bbox))
    } else {
        denormalize(&bbox, image.width, image.height)
    };
    let observation = match crop {
        Ok(rect) => {
            let (w, h) = smart_resize(rect.width(), rect.height(), &env.resize);
            facts.resized_to = Some((w, h));
            format!(
                "Zoomed into {bbox}: crop ({}, {}, {}, {}) of the {}x{} image, resized to {w}x{h}.",
                rect.left, rect.top, rect.right, rect.bottom, image.width, image.height
            )
        }
        Err(_) => {
            facts.invalid_box = true;
            format!(
                "ERROR: invalid bounding box {bbox} for image_zoom_in_tool; coordinates must satisfy 0 <= x1 < x2 <= 1000 and 0 <= y1 < y2 <= 1000."
            )
        }
    };
    ToolExecution { observation, facts }
}

fn image_search(call: &ToolCall, image: &ImageContext, env: &ToolEnv<'_>) -> ToolExecution {
    let mut facts = ExecutionFacts::new(ToolName::ImageSearch);
    let bbox = match call.bbox {
        Some(b) if !b.is_degenerate() => b,
        other => {
            let shown = other.unwrap_or(BoundingBox::full());
            return ToolExecution {
                observation: format!(
                    "ERROR: invalid bounding box {shown} for image_search_tool; the crop region must have positive area."
                ),
                facts,
            };
        }
    };

    let best = env.cache.lookup_image(&image.image_id, &bbox, 0.0);
    facts.matched_iou = best.map(|(_, s)| s);
    facts.matched_box = best.map(|(e, _)| e.bbox_gt);
    let results = match best {
        Some((entry, score)) if score >= env.tau_iou => {
            facts.cache_hit = true;
            entry.results.clone()
        }
        _ => {
            let req = SearchRequest::Image {
                image_id: &image.image_id,
                bbox,
                goal: call.goal.as_deref(),
            };
            env.on_miss(&req, &mut facts)
        }
    };
    facts.results = results;
    ToolExecution {
        observation: render_results(&facts.results),
        facts,
    }
}

fn text_search(call: &ToolCall, env: &ToolEnv<'_>) -> ToolExecution {
    let mut facts = ExecutionFacts::new(ToolName::TextSearch);
    let queries: Vec<&str> = call
        .queries
        .iter()
        .map(|q| q.trim())
        .filter(|q| !q.is_empty())
        .collect();
    facts.valid_queries = queries.len();

    let mut all = Vec::new();
    let mut hits = 0;
    for q in &queries {
        match env.cache.lookup_text(q, env.text_theta) {
            Some((entry, _)) => {
                hits += 1;
                all.extend(entry.results.iter().cloned());
            }
            None => {
                let found = env.on_miss(&SearchRequest::Text { query: q }, &mut facts);
                all.extend(found);
            }
        }
    }
    facts.cache_hit = !queries.is_empty() && hits == queries.len();
    facts.results = number(all);
    ToolExecution {
        observation: render_results(&facts.results),
        facts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache::{
        FailingFallback, ImageSearchEntry, NoFallback, StaticFallback, TextSearchEntry,
    };

    fn results(n: usize) -> Vec<SearchResult> {
        (1..=n)
            .map(|i| SearchResult {
                index: i,
                title: format!("Result {i}"),
                url: format!("https://r{i}.example"),
                domain: format!("r{i}.example"),
                is_geo_useful: Some(i <= 3),
            })
            .collect()
    }

    fn store() -> CacheStore {
        CacheStore::from_entries(
            [ImageSearchEntry {
                image_id: "img".into(),
                call_index: 0,
                bbox_gt: BoundingBox::new(0, 0, 1000, 900).unwrap(),
                results: results(10),
            }],
            [TextSearchEntry::new("eiffel tower height", results(2))],
        )
        .unwrap()
    }

    fn image() -> ImageContext {
        ImageContext {
            image_id: "img".into(),
            width: 640,
            height: 480,
        }
    }

    fn env<'a>(
        cache: &'a CacheStore,
        fb: &'a dyn FallbackProvider,
        log: Option<&'a MissLog>,
    ) -> ToolEnv<'a> {
        ToolEnv {
            cache,
            fallback: fb,
            miss_log: log,
            tau_iou: 0.7,
            text_theta: 0.5,
            resize: ResizePolicy::default(),
        }
    }

    #[test]
    fn image_search_hit_renders_numbered_results() {
        let cache = store();
        let out = execute_tool(
            &ToolCall::image_search(BoundingBox::full(), "goal"),
            &image(),
            &env(&cache, &NoFallback, None),
        );
        let lines: Vec<&str> = out.observation.lines().collect();
        assert_eq!(lines.len(), 10);
        assert_eq!(lines[0], "[1] Result 1 --- r1.example");
        assert_eq!(lines[9], "[10] Result 10 --- r10.example");
        assert!(out.facts.cache_hit);
        assert!((out.facts.matched_iou.unwrap() - 0.9).abs() < 1e-12);
        assert_eq!(
            out.facts.labels().unwrap().iter().filter(|l| **l).count(),
            3
        );
    }

    #[test]
    fn image_search_below_gate_is_empty() {
        let cache = store();
        let log = MissLog::memory();
        // IoU 0.3 against the single target box
        let call = ToolCall::image_search(BoundingBox::new(0, 0, 1000, 270).unwrap(), "goal");
        let out = execute_tool(&call, &image(), &env(&cache, &NoFallback, Some(&log)));
        assert_eq!(out.observation, NO_RESULTS);
        assert!(!out.facts.cache_hit);
        assert!((out.facts.matched_iou.unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(out.facts.labels(), None);
        assert_eq!(log.lines().len(), 1);
    }

    #[test]
    fn fallback_results_are_numbered_and_unlabeled() {
        let cache = CacheStore::new();
        let canned = FallbackResult {
            title: "Live".into(),
            url: "https://live.example".into(),
            domain: "live.example".into(),
        };
        let fb = StaticFallback {
            default: vec![canned.clone(), canned],
            ..Default::default()
        };
        let out = execute_tool(
            &ToolCall::text_search(["anything"]),
            &image(),
            &env(&cache, &fb, None),
        );
        assert_eq!(
            out.observation,
            "[1] Live --- live.example\n[2] Live --- live.example"
        );
        assert_eq!(out.facts.labels(), None);
    }

    #[test]
    fn failing_fallback_sets_api_failure() {
        let cache = CacheStore::new();
        let fb = FailingFallback("quota".into());
        let out = execute_tool(
            &ToolCall::text_search(["x"]),
            &image(),
            &env(&cache, &fb, None),
        );
        assert_eq!(out.observation, NO_RESULTS);
        assert!(out.facts.api_failure);
    }

    #[test]
    fn multi_query_concatenates_and_renumbers() {
        let cache = store();
        let call = ToolCall::text_search(["Eiffel tower height", "eiffel tower height"]);
        let out = execute_tool(&call, &image(), &env(&cache, &NoFallback, None));
        assert_eq!(out.facts.results.len(), 4);
        assert_eq!(out.facts.valid_queries, 2);
        assert!(out.observation.ends_with("[4] Result 2 --- r2.example"));
    }

    #[test]
    fn zoom_reports_geometry() {
        let cache = store();
        let out = execute_tool(
            &ToolCall::zoom(BoundingBox::new(250, 250, 750, 750).unwrap()),
            &image(),
            &env(&cache, &NoFallback, None),
        );
        assert_eq!(
            out.observation,
            "Zoomed into [250, 250, 750, 750]: crop (160, 120, 480, 360) of the 640x480 image, resized to 364x280."
        );
        assert_eq!(out.facts.resized_to, Some((364, 280)));
        assert!(!out.facts.invalid_box);
    }

    #[test]
    fn degenerate_zoom_is_flagged() {
        let cache = store();
        let out = execute_tool(
            &ToolCall::zoom(BoundingBox::new(600, 0, 400, 500).unwrap()),
            &image(),
            &env(&cache, &NoFallback, None),
        );
        assert!(out
            .observation
            .starts_with("ERROR: invalid bounding box [600, 0, 400, 500]"));
        assert!(out.facts.invalid_box);

        let mut clamped = ToolCall::zoom(BoundingBox::new(0, 0, 1000, 500).unwrap());
        clamped.bbox_out_of_range = true;
        let out = execute_tool(&clamped, &image(), &env(&cache, &NoFallback, None));
        assert!(out.facts.invalid_box);
    }

    #[test]
    fn execution_is_deterministic() {
        let cache = store();
        let call = ToolCall::image_search(BoundingBox::new(0, 0, 1000, 950).unwrap(), "g");
        let a = execute_tool(&call, &image(), &env(&cache, &NoFallback, None));
        let b = execute_tool(&call, &image(), &env(&cache, &NoFallback, None));
        assert_eq!(a, b);
    }
}

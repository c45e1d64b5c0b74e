//! Teacher-log filtering into training splits, and offline cache
//! materialization from labeled trajectories.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{
    normalize_query, CacheError, CacheStats, CacheStore, ImageSearchEntry, TextSearchEntry,
};
use crate::config::{load_config_file, ConfigError};
use crate::trajectory::{ToolName, Trajectory, Turn};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid criteria: {0}")]
    Criteria(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("conflicting cache entries: {}", .0.join("; "))]
    Conflicts(Vec<String>),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error("split `{sub}` is not a subset of `{sup}` ({missing} records outside)")]
    SubsetViolation {
        sub: String,
        sup: String,
        missing: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterCriteria {
    pub max_error_km: f64,
    #[serde(default = "one")]
    pub min_tool_calls: usize,
    #[serde(default)]
    pub max_tool_calls: Option<usize>,
    #[serde(default = "ten")]
    pub max_turns: usize,
    #[serde(default)]
    pub require_labeled_searches: bool,
    #[serde(default)]
    pub require_positive_per_search: bool,
    #[serde(default = "yes")]
    pub exclude_api_failures: bool,
}

fn one() -> usize {
    1
}
fn ten() -> usize {
    10
}
fn yes() -> bool {
    true
}

impl FilterCriteria {
    pub fn base() -> Self {
        Self {
            max_error_km: 200.0,
            min_tool_calls: 1,
            max_tool_calls: None,
            max_turns: 10,
            require_labeled_searches: false,
            require_positive_per_search: false,
            exclude_api_failures: true,
        }
    }

    pub fn cold_start() -> Self {
        Self {
            max_tool_calls: Some(5),
            ..Self::base()
        }
    }

    pub fn full_coverage() -> Self {
        Self {
            require_labeled_searches: true,
            require_positive_per_search: true,
            ..Self::base()
        }
    }

    pub fn easy() -> Self {
        Self {
            max_error_km: 25.0,
            ..Self::full_coverage()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "base" => Some(Self::base()),
            "coldstart" => Some(Self::cold_start()),
            "fullcov" => Some(Self::full_coverage()),
            "easy" => Some(Self::easy()),
            _ => None,
        }
    }

    /// A preset name, or else a TOML/JSON criteria file.
    pub fn resolve(name_or_path: &str) -> Result<Self, PipelineError> {
        if let Some(c) = Self::preset(name_or_path) {
            return Ok(c);
        }
        let c: FilterCriteria = load_config_file(Path::new(name_or_path))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(self.max_error_km.is_finite() && self.max_error_km > 0.0) {
            return Err(PipelineError::Criteria(
                "max_error_km must be positive".into(),
            ));
        }
        if self.max_turns == 0 {
            return Err(PipelineError::Criteria("max_turns must be positive".into()));
        }
        if self
            .max_tool_calls
            .is_some_and(|m| m == 0 || m < self.min_tool_calls)
        {
            return Err(PipelineError::Criteria(
                "max_tool_calls must be positive and >= min_tool_calls".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RejectReason {
    MissingMeta,
    ImageInaccessible,
    ErrorTooLarge,
    NoToolCalls,
    TooManyCalls,
    TurnBudgetExceeded,
    ApiFailure,
    UnlabeledSearch,
    NoPositiveResult,
}

impl RejectReason {
    pub const ALL: [RejectReason; 9] = [
        RejectReason::MissingMeta,
        RejectReason::ImageInaccessible,
        RejectReason::ErrorTooLarge,
        RejectReason::NoToolCalls,
        RejectReason::TooManyCalls,
        RejectReason::TurnBudgetExceeded,
        RejectReason::ApiFailure,
        RejectReason::UnlabeledSearch,
        RejectReason::NoPositiveResult,
    ];
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SplitReport {
    pub input_count: usize,
    pub kept_count: usize,
    pub rejection_histogram: BTreeMap<RejectReason, usize>,
}

impl SplitReport {
    pub fn rejected_count(&self) -> usize {
        self.rejection_histogram.values().sum()
    }
}

fn image_search_turns(t: &Trajectory) -> impl Iterator<Item = &Turn> {
    t.turns
        .iter()
        .filter(|turn| turn.executed_tool() == Some(ToolName::ImageSearch))
}

fn fully_labeled(turn: &Turn) -> bool {
    turn.results
        .as_ref()
        .is_some_and(|r| !r.is_empty() && r.iter().all(|x| x.is_geo_useful.is_some()))
}

/// First failed criterion, checked in the order of [`RejectReason::ALL`].
pub fn classify(t: &Trajectory, c: &FilterCriteria) -> Option<RejectReason> {
    let Some(err) = t
        .meta
        .teacher_error_km
        .filter(|e| e.is_finite() && *e >= 0.0)
    else {
        return Some(RejectReason::MissingMeta);
    };
    if t.final_answer.is_none() {
        return Some(RejectReason::MissingMeta);
    }
    if t.meta.image_accessible == Some(false) {
        return Some(RejectReason::ImageInaccessible);
    }
    if err > c.max_error_km {
        return Some(RejectReason::ErrorTooLarge);
    }
    let calls = t.tool_call_count();
    if calls < c.min_tool_calls {
        return Some(RejectReason::NoToolCalls);
    }
    if c.max_tool_calls.is_some_and(|m| calls > m) {
        return Some(RejectReason::TooManyCalls);
    }
    if t.turns.len() > c.max_turns {
        return Some(RejectReason::TurnBudgetExceeded);
    }
    if c.exclude_api_failures && t.turns.iter().any(|turn| turn.api_failure) {
        return Some(RejectReason::ApiFailure);
    }
    if c.require_labeled_searches && !image_search_turns(t).all(fully_labeled) {
        return Some(RejectReason::UnlabeledSearch);
    }
    if c.require_positive_per_search
        && !image_search_turns(t).all(|turn| {
            turn.results
                .as_ref()
                .is_some_and(|r| r.iter().any(|x| x.is_geo_useful == Some(true)))
        })
    {
        return Some(RejectReason::NoPositiveResult);
    }
    None
}

pub fn filter_split(
    records: &[Trajectory],
    criteria: &FilterCriteria,
) -> (Vec<Trajectory>, SplitReport) {
    let mut report = SplitReport {
        input_count: records.len(),
        ..SplitReport::default()
    };
    let mut kept = Vec::new();
    for r in records {
        match classify(r, criteria) {
            None => kept.push(r.clone()),
            Some(reason) => *report.rejection_histogram.entry(reason).or_default() += 1,
        }
    }
    report.kept_count = kept.len();
    (kept, report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BuildReport {
    pub records: usize,
    pub image_entries: usize,
    pub text_entries: usize,
    pub images: usize,
    /// Image-search calls skipped for missing labels or an unusable box.
    pub skipped_image_calls: usize,
    /// Text-search calls skipped for carrying several queries or no results.
    pub skipped_text_calls: usize,
    pub duplicates_merged: usize,
}

impl BuildReport {
    pub fn matches(&self, image: &CacheStats, text: &CacheStats) -> bool {
        image.image_entries == self.image_entries
            && image.images == self.images
            && text.text_entries == self.text_entries
    }
}

pub struct BuiltCaches {
    pub image: CacheStore,
    pub text: CacheStore,
    pub report: BuildReport,
}

/// Materialize one image entry per labeled image-search call, keyed by
/// (image_id, position among the trajectory's tool calls), and one text entry
/// per distinct normalized single-query search. Identical duplicates merge;
/// differing duplicates are reported as conflicts.
pub fn build_caches(records: &[Trajectory]) -> Result<BuiltCaches, PipelineError> {
    let mut report = BuildReport {
        records: records.len(),
        ..BuildReport::default()
    };
    let mut images: BTreeMap<(String, usize), ImageSearchEntry> = BTreeMap::new();
    let mut texts: BTreeMap<String, TextSearchEntry> = BTreeMap::new();
    let mut conflicts = Vec::new();

    for t in records {
        let calls = t.turns.iter().filter(|turn| turn.executed_tool().is_some());
        for (call_index, turn) in calls.enumerate() {
            let call = turn.response.tool_call().expect("executed tool has a call");
            match call.name {
                ToolName::ImageSearch => {
                    let bbox = turn.bbox_gt.or(call.bbox).filter(|b| !b.is_degenerate());
                    let (Some(bbox_gt), true) = (bbox, fully_labeled(turn)) else {
                        report.skipped_image_calls += 1;
                        continue;
                    };
                    let entry = ImageSearchEntry {
                        image_id: t.image_id.clone(),
                        call_index,
                        bbox_gt,
                        results: turn.results.clone().unwrap_or_default(),
                    };
                    let key = (t.image_id.clone(), call_index);
                    match images.get(&key) {
                        Some(prev) if *prev == entry => report.duplicates_merged += 1,
                        Some(_) => conflicts.push(format!("image {} call {}", key.0, key.1)),
                        None => {
                            images.insert(key, entry);
                        }
                    }
                }
                ToolName::TextSearch => {
                    let results = turn.results.clone().unwrap_or_default();
                    let [query] = call.queries.as_slice() else {
                        report.skipped_text_calls += 1;
                        continue;
                    };
                    let labeled = results.iter().filter(|r| r.is_geo_useful.is_some()).count();
                    if results.is_empty() || (labeled != 0 && labeled != results.len()) {
                        report.skipped_text_calls += 1;
                        continue;
                    }
                    let norm = normalize_query(query);
                    if norm.is_empty() {
                        report.skipped_text_calls += 1;
                        continue;
                    }
                    match texts.get(&norm) {
                        Some(prev) if prev.results == results => report.duplicates_merged += 1,
                        Some(_) => conflicts.push(format!("query `{norm}`")),
                        None => {
                            texts.insert(norm, TextSearchEntry::new(query.clone(), results));
                        }
                    }
                }
                ToolName::Zoom => {}
            }
        }
    }
    if !conflicts.is_empty() {
        return Err(PipelineError::Conflicts(conflicts));
    }
    let image = CacheStore::from_entries(images.into_values(), [])?;
    let text = CacheStore::from_entries([], texts.into_values())?;
    let (is, ts) = (image.stats(), text.stats());
    report.image_entries = is.image_entries;
    report.images = is.images;
    report.text_entries = ts.text_entries;
    Ok(BuiltCaches {
        image,
        text,
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub counts: BTreeMap<String, usize>,
    /// Subset relations that were checked, as `(sub, sup)`.
    pub verified: Vec<(String, String)>,
}

/// Relations every split family must satisfy.
pub const SUBSET_CHAIN: [(&str, &str); 3] = [
    ("easy", "fullcov"),
    ("fullcov", "base"),
    ("coldstart", "base"),
];

/// Per-split counts, checking [`SUBSET_CHAIN`] for every pair present.
pub fn split_stats(
    splits: &BTreeMap<String, Vec<Trajectory>>,
) -> Result<SplitSummary, PipelineError> {
    let counts = splits.iter().map(|(k, v)| (k.clone(), v.len())).collect();
    let mut verified = Vec::new();
    for (sub, sup) in SUBSET_CHAIN {
        let (Some(a), Some(b)) = (splits.get(sub), splits.get(sup)) else {
            continue;
        };
        let sup_lines: HashSet<String> = b.iter().map(Trajectory::to_line).collect();
        let missing = a
            .iter()
            .filter(|t| !sup_lines.contains(&t.to_line()))
            .count();
        if missing > 0 {
            return Err(PipelineError::SubsetViolation {
                sub: sub.into(),
                sup: sup.into(),
                missing,
            });
        }
        verified.push((sub.to_string(), sup.to_string()));
    }
    Ok(SplitSummary { counts, verified })
}

/// All four preset splits of one corpus.
pub fn preset_splits(records: &[Trajectory]) -> BTreeMap<String, (Vec<Trajectory>, SplitReport)> {
    ["base", "coldstart", "fullcov", "easy"]
        .into_iter()
        .map(|name| {
            let c = FilterCriteria::preset(name).expect("preset");
            (name.to_string(), filter_split(records, &c))
        })
        .collect()
}

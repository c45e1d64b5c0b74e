//! Tag grammar and data model for multi-turn agent responses.
//!
//! Every assistant response is expected to carry a `<think>` trace, an
//! optional `<useful>[..]</useful>` evidence selection, and exactly one of a
//! `<tool_call>` JSON payload or an `<answer>` with
//! `country, city, latitude, longitude`.

mod log;
mod parse;

pub use log::{
    load_trajectory_log, write_trajectory_log, LogError, Trajectory, TrajectoryMeta, Turn,
};
pub use parse::{parse_answer, parse_response, parse_useful, render_useful};

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{GeoCoordinate, GeoError};

/// Side length of the normalized box coordinate space.
pub const BOX_SCALE: i32 = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoxError {
    #[error("box coordinate {0} outside [0, {BOX_SCALE}]")]
    OutOfRange(i64),
}

/// Axis-aligned box in normalized `[0, 1000]` coordinates.
///
/// Degenerate boxes (`x2 <= x1` or `y2 <= y1`) are representable; callers
/// check [`BoundingBox::is_degenerate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[i64; 4]", into = "[i64; 4]")]
pub struct BoundingBox {
    x1: i32,
    y1: i32,
    x2: i32,
    y2: i32,
}

impl BoundingBox {
    pub fn new(x1: i64, y1: i64, x2: i64, y2: i64) -> Result<Self, BoxError> {
        for v in [x1, y1, x2, y2] {
            if !(0..=BOX_SCALE as i64).contains(&v) {
                return Err(BoxError::OutOfRange(v));
            }
        }
        Ok(Self {
            x1: x1 as i32,
            y1: y1 as i32,
            x2: x2 as i32,
            y2: y2 as i32,
        })
    }

    /// Clamp raw coordinates into range. The flag reports whether any
    /// coordinate had to move.
    pub fn clamped(x1: i64, y1: i64, x2: i64, y2: i64) -> (Self, bool) {
        let clamp = |v: i64| v.clamp(0, BOX_SCALE as i64);
        let moved = [x1, y1, x2, y2].iter().any(|&v| clamp(v) != v);
        let b = Self::new(clamp(x1), clamp(y1), clamp(x2), clamp(y2))
            .expect("clamped coordinates are in range");
        (b, moved)
    }

    pub const fn full() -> Self {
        Self {
            x1: 0,
            y1: 0,
            x2: BOX_SCALE,
            y2: BOX_SCALE,
        }
    }

    pub fn x1(&self) -> i32 {
        self.x1
    }
    pub fn y1(&self) -> i32 {
        self.y1
    }
    pub fn x2(&self) -> i32 {
        self.x2
    }
    pub fn y2(&self) -> i32 {
        self.y2
    }

    pub fn is_degenerate(&self) -> bool {
        self.x2 <= self.x1 || self.y2 <= self.y1
    }

    /// Area in normalized units; zero for degenerate boxes.
    pub fn area(&self) -> i64 {
        if self.is_degenerate() {
            0
        } else {
            (self.x2 - self.x1) as i64 * (self.y2 - self.y1) as i64
        }
    }

    pub fn to_array(self) -> [i64; 4] {
        [
            self.x1 as i64,
            self.y1 as i64,
            self.x2 as i64,
            self.y2 as i64,
        ]
    }
}

impl TryFrom<[i64; 4]> for BoundingBox {
    type Error = BoxError;

    fn try_from(v: [i64; 4]) -> Result<Self, Self::Error> {
        BoundingBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [i64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.to_array()
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.x1, self.y1, self.x2, self.y2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ToolName {
    #[serde(rename = "image_search_tool")]
    ImageSearch,
    #[serde(rename = "text_search_tool")]
    TextSearch,
    #[serde(rename = "image_zoom_in_tool")]
    Zoom,
}

impl ToolName {
    pub const ALL: [ToolName; 3] = [ToolName::ImageSearch, ToolName::TextSearch, ToolName::Zoom];

    pub fn as_str(&self) -> &'static str {
        match self {
            ToolName::ImageSearch => "image_search_tool",
            ToolName::TextSearch => "text_search_tool",
            ToolName::Zoom => "image_zoom_in_tool",
        }
    }

    /// Short name used on the command line.
    pub fn short(&self) -> &'static str {
        match self {
            ToolName::ImageSearch => "img",
            ToolName::TextSearch => "txt",
            ToolName::Zoom => "zoom",
        }
    }

    pub fn is_search(&self) -> bool {
        matches!(self, ToolName::ImageSearch | ToolName::TextSearch)
    }
}

impl fmt::Display for ToolName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
#[error("unknown tool `{0}`")]
pub struct UnknownTool(pub String);

impl FromStr for ToolName {
    type Err = UnknownTool;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ToolName::ALL
            .into_iter()
            .find(|t| t.as_str() == s || t.short() == s)
            .ok_or_else(|| UnknownTool(s.to_string()))
    }
}

/// A validated tool invocation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToolCall {
    pub name: ToolName,
    pub bbox: Option<BoundingBox>,
    /// Set when the model's raw box had coordinates outside `[0, 1000]`
    /// and was clamped into `bbox`.
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub bbox_out_of_range: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub goal: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub queries: Vec<String>,
}

impl ToolCall {
    pub fn image_search(bbox: BoundingBox, goal: impl Into<String>) -> Self {
        Self {
            name: ToolName::ImageSearch,
            bbox: Some(bbox),
            bbox_out_of_range: false,
            goal: Some(goal.into()),
            queries: Vec::new(),
        }
    }

    pub fn text_search<I, S>(queries: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            name: ToolName::TextSearch,
            bbox: None,
            bbox_out_of_range: false,
            goal: None,
            queries: queries.into_iter().map(Into::into).collect(),
        }
    }

    pub fn zoom(bbox: BoundingBox) -> Self {
        Self {
            name: ToolName::Zoom,
            bbox: Some(bbox),
            bbox_out_of_range: false,
            goal: None,
            queries: Vec::new(),
        }
    }

    /// Render the call in the JSON shape the prompt asks for.
    pub fn to_payload(&self) -> serde_json::Value {
        let mut args = serde_json::Map::new();
        if let Some(b) = self.bbox {
            args.insert("bbox_2d".into(), serde_json::json!(b.to_array()));
        }
        if let Some(goal) = &self.goal {
            args.insert("goal".into(), goal.clone().into());
        }
        match self.queries.as_slice() {
            [] => {}
            [q] => {
                args.insert("query".into(), q.clone().into());
            }
            qs => {
                args.insert("query".into(), serde_json::json!(qs));
            }
        }
        serde_json::json!({ "name": self.name.as_str(), "arguments": args })
    }
}

/// The terminal prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawAnswer", into = "RawAnswer")]
pub struct FinalAnswer {
    pub country: String,
    pub city: String,
    pub coord: GeoCoordinate,
}

#[derive(Serialize, Deserialize)]
struct RawAnswer {
    country: String,
    city: String,
    lat: f64,
    lon: f64,
}

impl TryFrom<RawAnswer> for FinalAnswer {
    type Error = AnswerError;

    fn try_from(raw: RawAnswer) -> Result<Self, Self::Error> {
        FinalAnswer::new(raw.country, raw.city, raw.lat, raw.lon)
    }
}

impl From<FinalAnswer> for RawAnswer {
    fn from(a: FinalAnswer) -> Self {
        RawAnswer {
            country: a.country,
            city: a.city,
            lat: a.coord.lat(),
            lon: a.coord.lon(),
        }
    }
}

impl FinalAnswer {
    pub fn new(
        country: impl Into<String>,
        city: impl Into<String>,
        lat: f64,
        lon: f64,
    ) -> Result<Self, AnswerError> {
        let country = country.into();
        let city = city.into();
        if country.trim().is_empty() {
            return Err(AnswerError::EmptyField("country"));
        }
        if city.trim().is_empty() {
            return Err(AnswerError::EmptyField("city"));
        }
        Ok(Self {
            country,
            city,
            coord: GeoCoordinate::new(lat, lon)?,
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnswerError {
    #[error("expected `country, city, latitude, longitude`")]
    Shape,
    #[error("`{0}` is not a number")]
    NotNumeric(String),
    #[error("{0} is empty")]
    EmptyField(&'static str),
    #[error(transparent)]
    Coordinate(#[from] GeoError),
}

/// Content of a `<useful>` tag.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
#[serde(tag = "state", content = "indices", rename_all = "snake_case")]
pub enum UsefulTag {
    #[default]
    Absent,
    Indices(BTreeSet<usize>),
    /// The tag was present but its content did not parse.
    Invalid,
}

impl UsefulTag {
    pub fn indices(&self) -> Option<&BTreeSet<usize>> {
        match self {
            UsefulTag::Indices(s) => Some(s),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MalformedReason {
    NoAction,
    BothToolCallAndAnswer,
    BadToolPayload,
    UnknownTool,
    BadAnswer,
}

impl MalformedReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            MalformedReason::NoAction => "no action",
            MalformedReason::BothToolCallAndAnswer => "both tool call and answer",
            MalformedReason::BadToolPayload => "bad tool payload",
            MalformedReason::UnknownTool => "unknown tool",
            MalformedReason::BadAnswer => "bad answer",
        }
    }
}

impl fmt::Display for MalformedReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Action {
    ToolCall(ToolCall),
    Answer(FinalAnswer),
    Malformed(MalformedReason),
}

/// One assistant response broken into its tags.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParsedResponse {
    pub think: Option<String>,
    pub useful: UsefulTag,
    pub action: Action,
    /// A tag occurred more than once; only the first instance was used.
    pub duplicate_tags: bool,
}

impl ParsedResponse {
    pub fn tool_call(&self) -> Option<&ToolCall> {
        match &self.action {
            Action::ToolCall(c) => Some(c),
            _ => None,
        }
    }

    pub fn answer(&self) -> Option<&FinalAnswer> {
        match &self.action {
            Action::Answer(a) => Some(a),
            _ => None,
        }
    }

    pub fn is_malformed(&self) -> bool {
        matches!(self.action, Action::Malformed(_))
    }

    pub fn has_think(&self) -> bool {
        self.think.as_deref().is_some_and(|t| !t.trim().is_empty())
    }
}

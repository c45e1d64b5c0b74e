//! Line-delimited trajectory log: one JSON object per trajectory.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{parse_response, Action, BoundingBox, FinalAnswer, ParsedResponse, ToolName};
use crate::cache::SearchResult;
use crate::geo::GeoCoordinate;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher_error_km: Option<f64>,
    /// Episode outcome for environment-produced logs (`done` or `aborted`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_accessible: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TurnRecord {
    raw_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    observation_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    results: Option<Vec<SearchResult>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bbox_gt: Option<BoundingBox>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    api_failure: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    protocol_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrajectoryRecord {
    image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    truth: Option<GeoCoordinate>,
    turns: Vec<TurnRecord>,
    #[serde(rename = "final", default, skip_serializing_if = "Option::is_none")]
    final_answer: Option<FinalAnswer>,
    meta: TrajectoryMeta,
}

/// One response and what the environment returned for it.
#[derive(Debug, Clone, PartialEq)]
pub struct Turn {
    pub raw_text: String,
    pub response: ParsedResponse,
    pub observation: Option<String>,
    /// Structured results behind the observation, with labels when known.
    pub results: Option<Vec<SearchResult>>,
    /// Re-annotated target box for an image-search call.
    pub bbox_gt: Option<BoundingBox>,
    pub api_failure: bool,
    /// The call was refused by the environment (e.g. a disabled tool).
    pub protocol_error: Option<String>,
}

impl Turn {
    pub fn new(raw_text: impl Into<String>, observation: Option<String>) -> Self {
        let raw_text = raw_text.into();
        Self {
            response: parse_response(&raw_text),
            raw_text,
            observation,
            results: None,
            bbox_gt: None,
            api_failure: false,
            protocol_error: None,
        }
    }

    /// The executed tool, if this turn issued an accepted tool call.
    pub fn executed_tool(&self) -> Option<ToolName> {
        match (&self.response.action, &self.protocol_error) {
            (Action::ToolCall(c), None) => Some(c.name),
            _ => None,
        }
    }
}

/// A full multi-turn record for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TrajectoryRecord", into = "TrajectoryRecord")]
pub struct Trajectory {
    pub image_id: String,
    pub truth: Option<GeoCoordinate>,
    pub turns: Vec<Turn>,
    pub final_answer: Option<FinalAnswer>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn new(image_id: impl Into<String>, source: impl Into<String>) -> Self {
        Self {
            image_id: image_id.into(),
            truth: None,
            turns: Vec::new(),
            final_answer: None,
            meta: TrajectoryMeta {
                source: source.into(),
                ..TrajectoryMeta::default()
            },
        }
    }

    pub fn tool_call_count(&self) -> usize {
        self.turns
            .iter()
            .filter(|t| t.executed_tool().is_some())
            .count()
    }

    pub fn tool_calls_of(&self, tool: ToolName) -> usize {
        self.turns
            .iter()
            .filter(|t| t.executed_tool() == Some(tool))
            .count()
    }

    /// Canonical single-line encoding.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("trajectory serializes")
    }

    pub fn from_line(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }

    fn check(&self) -> Result<(), String> {
        let answers: Vec<usize> = self
            .turns
            .iter()
            .enumerate()
            .filter(|(_, t)| t.response.answer().is_some())
            .map(|(i, _)| i)
            .collect();
        match answers.as_slice() {
            [] => Ok(()),
            [i] if *i + 1 == self.turns.len() => Ok(()),
            _ => Err("a final answer must be the last turn".into()),
        }
    }
}

impl TryFrom<TrajectoryRecord> for Trajectory {
    type Error = String;

    fn try_from(r: TrajectoryRecord) -> Result<Self, Self::Error> {
        let turns = r
            .turns
            .into_iter()
            .map(|t| Turn {
                response: parse_response(&t.raw_text),
                raw_text: t.raw_text,
                observation: t.observation_text,
                results: t.results,
                bbox_gt: t.bbox_gt,
                api_failure: t.api_failure,
                protocol_error: t.protocol_error,
            })
            .collect();
        let traj = Trajectory {
            image_id: r.image_id,
            truth: r.truth,
            turns,
            final_answer: r.final_answer,
            meta: r.meta,
        };
        traj.check()?;
        Ok(traj)
    }
}

impl From<Trajectory> for TrajectoryRecord {
    fn from(t: Trajectory) -> Self {
        TrajectoryRecord {
            image_id: t.image_id,
            truth: t.truth,
            turns: t
                .turns
                .into_iter()
                .map(|t| TurnRecord {
                    raw_text: t.raw_text,
                    observation_text: t.observation,
                    results: t.results,
                    bbox_gt: t.bbox_gt,
                    api_failure: t.api_failure,
                    protocol_error: t.protocol_error,
                })
                .collect(),
            final_answer: t.final_answer,
            meta: t.meta,
        }
    }
}

/// Read a trajectory log. Blank lines are skipped; line numbers in errors
/// are 1-based.
pub fn load_trajectory_log<R: BufRead>(reader: R) -> Result<Vec<Trajectory>, LogError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TrajectoryRecord =
            serde_json::from_str(&line).map_err(|source| LogError::Parse {
                line: i + 1,
                source,
            })?;
        let traj = Trajectory::try_from(record).map_err(|message| LogError::Invalid {
            line: i + 1,
            message,
        })?;
        out.push(traj);
    }
    Ok(out)
}

pub fn write_trajectory_log<W: Write>(
    trajectories: &[Trajectory],
    mut writer: W,
) -> Result<(), LogError> {
    for t in trajectories {
        writer.write_all(t.to_line().as_bytes())?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

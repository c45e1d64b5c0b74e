//! Outcome and process rewards for one trajectory, plus group advantages.
//!
//! `total = alpha * r_geo + beta * r_fmt + gamma * r_tool` where `r_tool` is
//! the clipped sum of per-turn tool terms.

mod advantage;
mod mcc;

pub use advantage::{group_advantages, DEFAULT_ADVANTAGE_EPSILON};
pub use mcc::{mcc, useful_confusion, ConfusionCounts};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{haversine_km, GeoCoordinate, ThresholdLadder};
use crate::toolbox::{iou, ExecutionFacts};
use crate::trajectory::{Action, FinalAnswer, ToolName, Trajectory, Turn};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("advantage group needs at least 2 rewards, got {0}")]
    GroupTooSmall(usize),
    #[error("reward is not finite")]
    NonFiniteReward,
    #[error("invalid reward weights: {0}")]
    InvalidWeights(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawWeights", into = "RawWeights")]
pub struct RewardWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda_iou: f64,
    pub lambda_base: f64,
    pub lambda_mcc: f64,
    pub delta: f64,
    pub tau_iou: f64,
    pub clip_lo: f64,
    pub clip_hi: f64,
    pub ladder: ThresholdLadder,
    /// Format score when structure is valid but a `<useful>` tag is missing.
    pub partial_format: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            alpha: 0.6,
            beta: 0.1,
            gamma: 0.3,
            lambda_iou: 0.2,
            lambda_base: 0.1,
            lambda_mcc: 0.3,
            delta: 0.05,
            tau_iou: 0.7,
            clip_lo: -0.5,
            clip_hi: 1.0,
            ladder: ThresholdLadder::default(),
            partial_format: 0.5,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawWeights {
    alpha: f64,
    beta: f64,
    gamma: f64,
    lambda_iou: f64,
    lambda_base: f64,
    lambda_mcc: f64,
    delta: f64,
    tau_iou: f64,
    clip_lo: f64,
    clip_hi: f64,
    ladder: ThresholdLadder,
    partial_format: f64,
}

impl Default for RawWeights {
    fn default() -> Self {
        RewardWeights::default().into()
    }
}

impl From<RewardWeights> for RawWeights {
    fn from(w: RewardWeights) -> Self {
        RawWeights {
            alpha: w.alpha,
            beta: w.beta,
            gamma: w.gamma,
            lambda_iou: w.lambda_iou,
            lambda_base: w.lambda_base,
            lambda_mcc: w.lambda_mcc,
            delta: w.delta,
            tau_iou: w.tau_iou,
            clip_lo: w.clip_lo,
            clip_hi: w.clip_hi,
            ladder: w.ladder,
            partial_format: w.partial_format,
        }
    }
}

impl TryFrom<RawWeights> for RewardWeights {
    type Error = RewardError;

    fn try_from(r: RawWeights) -> Result<Self, Self::Error> {
        let w = RewardWeights {
            alpha: r.alpha,
            beta: r.beta,
            gamma: r.gamma,
            lambda_iou: r.lambda_iou,
            lambda_base: r.lambda_base,
            lambda_mcc: r.lambda_mcc,
            delta: r.delta,
            tau_iou: r.tau_iou,
            clip_lo: r.clip_lo,
            clip_hi: r.clip_hi,
            ladder: r.ladder,
            partial_format: r.partial_format,
        };
        w.validate()?;
        Ok(w)
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<(), RewardError> {
        let bad = |m: &str| Err(RewardError::InvalidWeights(m.to_string()));
        let all = [
            self.alpha,
            self.beta,
            self.gamma,
            self.lambda_iou,
            self.lambda_base,
            self.lambda_mcc,
            self.delta,
            self.tau_iou,
            self.clip_lo,
            self.clip_hi,
            self.partial_format,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("weights must be finite");
        }
        if self.alpha < 0.0 || self.beta < 0.0 || self.gamma < 0.0 {
            return bad("alpha, beta and gamma must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.tau_iou) {
            return bad("tau_iou must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.partial_format) {
            return bad("partial_format must lie in [0, 1]");
        }
        if self.clip_lo > self.clip_hi {
            return bad("clip_lo exceeds clip_hi");
        }
        Ok(())
    }

    /// Range every composite total falls in.
    pub fn total_bounds(&self) -> (f64, f64) {
        let top = self.ladder.scores().iter().cloned().fold(0.0, f64::max);
        (
            self.gamma * self.clip_lo,
            self.alpha * top + self.beta + self.gamma * self.clip_hi,
        )
    }
}

/// Reward-relevant facts about one turn.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TurnFacts {
    /// Tool that was executed on this turn, if any.
    pub tool: Option<ToolName>,
    pub matched_iou: Option<f64>,
    pub valid_queries: usize,
    pub invalid_box: bool,
    /// Labels for the results shown on this turn, when every result has one.
    pub labels: Option<Vec<bool>>,
    /// Indices the following response marked useful. `None` when no response
    /// followed; a missing or invalid tag counts as the empty set.
    pub reply_useful: Option<BTreeSet<usize>>,
}

impl From<&ExecutionFacts> for TurnFacts {
    fn from(e: &ExecutionFacts) -> Self {
        TurnFacts {
            tool: Some(e.tool),
            matched_iou: e.matched_iou,
            valid_queries: e.valid_queries,
            invalid_box: e.invalid_box,
            labels: e.labels(),
            reply_useful: None,
        }
    }
}

impl TurnFacts {
    /// Reconstruct facts from what a logged turn recorded.
    pub fn from_logged(turn: &Turn) -> Self {
        let Some(tool) = turn.executed_tool() else {
            return TurnFacts::default();
        };
        let call = turn
            .response
            .tool_call()
            .expect("executed tool implies a call");
        let mut f = TurnFacts {
            tool: Some(tool),
            ..TurnFacts::default()
        };
        match tool {
            ToolName::ImageSearch => {
                f.matched_iou = match (call.bbox, turn.bbox_gt) {
                    (Some(b), Some(gt)) => Some(iou(&b, &gt)),
                    _ => None,
                };
            }
            ToolName::TextSearch => {
                f.valid_queries = call.queries.iter().filter(|q| !q.trim().is_empty()).count();
            }
            ToolName::Zoom => {
                f.invalid_box = match call.bbox {
                    Some(b) => b.is_degenerate() || call.bbox_out_of_range,
                    None => true,
                };
            }
        }
        if let Some(results) = &turn.results {
            if !results.is_empty() {
                f.labels = results.iter().map(|r| r.is_geo_useful).collect();
            }
        }
        f
    }
}

/// Selected-set of a response for MCC scoring.
pub fn reply_selection(turn: &Turn) -> BTreeSet<usize> {
    turn.response.useful.indices().cloned().unwrap_or_default()
}

/// Facts for every turn of a logged trajectory, with each search turn's
/// `reply_useful` taken from the next response.
pub fn facts_from_log(traj: &Trajectory) -> Vec<TurnFacts> {
    let mut out: Vec<TurnFacts> = traj.turns.iter().map(TurnFacts::from_logged).collect();
    for (facts, next) in out.iter_mut().zip(traj.turns.iter().skip(1)) {
        facts.reply_useful = Some(reply_selection(next));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardTerm {
    ImageSearch,
    TextSearch,
    ZoomPenalty,
    Mcc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurnTerm {
    pub turn: usize,
    pub term: RewardTerm,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct TurnReward {
    pub terms: Vec<(RewardTerm, f64)>,
    pub confusion: Option<ConfusionCounts>,
    pub mcc: Option<f64>,
    /// Selected indices that point past the result list.
    pub out_of_range: usize,
}

impl TurnReward {
    pub fn sum(&self) -> f64 {
        self.terms.iter().map(|(_, v)| v).sum()
    }
}

pub fn turn_reward(f: &TurnFacts, w: &RewardWeights) -> TurnReward {
    let mut out = TurnReward::default();
    match f.tool {
        Some(ToolName::ImageSearch) => {
            let s = f.matched_iou.unwrap_or(0.0);
            if s >= w.tau_iou {
                out.terms.push((RewardTerm::ImageSearch, w.lambda_iou * s));
            }
        }
        Some(ToolName::TextSearch) if f.valid_queries > 0 => {
            out.terms.push((RewardTerm::TextSearch, w.lambda_base));
        }
        Some(ToolName::Zoom) if f.invalid_box => {
            out.terms.push((RewardTerm::ZoomPenalty, -w.delta));
        }
        _ => {}
    }
    if let (Some(labels), Some(pred)) = (&f.labels, &f.reply_useful) {
        let (c, oor) = useful_confusion(pred, labels);
        let m = mcc(&c);
        out.terms.push((RewardTerm::Mcc, w.lambda_mcc * m));
        out.confusion = Some(c);
        out.mcc = Some(m);
        out.out_of_range = oor;
    }
    out
}

/// Clip the summed per-turn terms into `[clip_lo, clip_hi]`.
pub fn tool_reward(turns: &[TurnReward], w: &RewardWeights) -> f64 {
    turns
        .iter()
        .map(TurnReward::sum)
        .sum::<f64>()
        .clamp(w.clip_lo, w.clip_hi)
}

pub fn geo_reward(
    answer: Option<&FinalAnswer>,
    truth: Option<GeoCoordinate>,
    ladder: &ThresholdLadder,
) -> (f64, Option<f64>) {
    match (answer, truth) {
        (Some(a), Some(t)) => {
            let d = haversine_km(a.coord, t);
            (ladder.score(d), Some(d))
        }
        _ => (0.0, None),
    }
}

fn observation_has_results(obs: Option<&str>) -> bool {
    obs.is_some_and(|o| o.starts_with("[1] "))
}

/// 1 for a fully valid response sequence, `partial` when the structure is
/// valid but a response after search results lacks a parseable `<useful>`
/// tag, 0 otherwise.
pub fn format_reward(traj: &Trajectory, partial: f64) -> f64 {
    let Some((last, body)) = traj.turns.split_last() else {
        return 0.0;
    };
    if !traj.turns.iter().all(|t| t.response.has_think()) {
        return 0.0;
    }
    if !body
        .iter()
        .all(|t| matches!(t.response.action, Action::ToolCall(_)))
    {
        return 0.0;
    }
    if !matches!(last.response.action, Action::Answer(_)) {
        return 0.0;
    }
    let tags_ok = traj.turns.windows(2).all(|pair| {
        !observation_has_results(pair[0].observation.as_deref())
            || pair[1].response.useful.indices().is_some()
    });
    if tags_ok {
        1.0
    } else {
        partial
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RewardBreakdown {
    pub r_geo: f64,
    pub r_fmt: f64,
    pub r_tool: f64,
    pub total: f64,
    pub distance_km: Option<f64>,
    pub per_turn: Vec<TurnTerm>,
    /// Turns on which the agent selected indices past the result list.
    pub out_of_range_turns: Vec<usize>,
}

/// Score a trajectory. `facts[i]` describes `traj.turns[i]`; missing entries
/// contribute nothing.
pub fn composite_reward(
    traj: &Trajectory,
    facts: &[TurnFacts],
    truth: Option<GeoCoordinate>,
    w: &RewardWeights,
) -> RewardBreakdown {
    let (r_geo, distance_km) = geo_reward(traj.final_answer.as_ref(), truth, &w.ladder);
    let r_fmt = format_reward(traj, w.partial_format);
    let turns: Vec<TurnReward> = facts.iter().map(|f| turn_reward(f, w)).collect();
    let r_tool = tool_reward(&turns, w);
    let per_turn = turns
        .iter()
        .enumerate()
        .flat_map(|(i, t)| {
            t.terms.iter().map(move |&(term, value)| TurnTerm {
                turn: i,
                term,
                value,
            })
        })
        .collect();
    let out_of_range_turns = turns
        .iter()
        .enumerate()
        .filter(|(_, t)| t.out_of_range > 0)
        .map(|(i, _)| i)
        .collect();
    RewardBreakdown {
        r_geo,
        r_fmt,
        r_tool,
        total: w.alpha * r_geo + w.beta * r_fmt + w.gamma * r_tool,
        distance_km,
        per_turn,
        out_of_range_turns,
    }
}

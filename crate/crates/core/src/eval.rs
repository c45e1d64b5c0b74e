//! Benchmark evaluation: score logged trajectories against a manifest, or
//! drive live episodes with a scripted policy and score what comes back.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::dataset::{DatasetManifest, ManifestEntry};
use crate::env::protocol::{ClientError, EnvClient, Transport};
use crate::env::StepResult;
use crate::geo::{
    aggregate_accuracy, haversine_km, AccuracyReport, EvalRecord, GeoError, ThresholdLadder,
};
use crate::trajectory::{ToolName, Trajectory};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("log references image ids missing from the manifest: {}", .0.join(", "))]
    UnknownImages(Vec<String>),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error("unknown report format `{0}` (expected table, csv or json)")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolUsageReport {
    /// Mean calls per sample, keyed by tool name.
    pub per_tool: BTreeMap<String, f64>,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: AccuracyReport,
    pub tools: ToolUsageReport,
}

/// Join log records to manifest truths. The first record per image counts;
/// manifest entries with no record count as unparsed with zero calls.
pub fn run_replay_eval(
    manifest: &DatasetManifest,
    log: &[Trajectory],
    ladder: &ThresholdLadder,
) -> Result<EvalReport, EvalError> {
    let mut unknown: Vec<String> = log
        .iter()
        .filter(|t| manifest.get(&t.image_id).is_none())
        .map(|t| t.image_id.clone())
        .collect();
    if !unknown.is_empty() {
        unknown.sort();
        unknown.dedup();
        return Err(EvalError::UnknownImages(unknown));
    }
    let mut by_id: HashMap<&str, &Trajectory> = HashMap::new();
    for t in log {
        by_id.entry(t.image_id.as_str()).or_insert(t);
    }

    let mut per_tool: BTreeMap<ToolName, usize> = ToolName::ALL.iter().map(|t| (*t, 0)).collect();
    let records: Vec<EvalRecord> = manifest
        .entries()
        .iter()
        .map(|e| {
            let t = by_id.get(e.image_id.as_str());
            if let Some(t) = t {
                for tool in ToolName::ALL {
                    *per_tool.get_mut(&tool).unwrap() += t.tool_calls_of(tool);
                }
            }
            EvalRecord {
                prediction: t.and_then(|t| t.final_answer.as_ref()).map(|a| a.coord),
                truth: e.truth,
                tool_calls: t.map_or(0, |t| t.tool_call_count()),
            }
        })
        .collect();
    let accuracy = aggregate_accuracy(&records, ladder)?;
    let n = records.len() as f64;
    let per_tool: BTreeMap<String, f64> = per_tool
        .into_iter()
        .map(|(tool, c)| (tool.as_str().to_string(), c as f64 / n))
        .collect();
    let total = per_tool.values().sum();
    Ok(EvalReport {
        accuracy,
        tools: ToolUsageReport { per_tool, total },
    })
}

/// Produces the next response of an episode.
pub trait Policy: Send + Sync {
    /// `observations` holds every observation returned so far, oldest first.
    fn respond(&self, image_id: &str, prompt: &str, observations: &[String]) -> String;
}

/// Replays the logged responses of each image in order. Once the script
/// runs out it sends an empty response.
pub struct ReplayPolicy {
    scripts: HashMap<String, Vec<String>>,
}

impl ReplayPolicy {
    pub fn from_log(log: &[Trajectory]) -> Self {
        let mut scripts = HashMap::new();
        for t in log {
            scripts
                .entry(t.image_id.clone())
                .or_insert_with(|| t.turns.iter().map(|turn| turn.raw_text.clone()).collect());
        }
        Self { scripts }
    }
}

impl Policy for ReplayPolicy {
    fn respond(&self, image_id: &str, _prompt: &str, observations: &[String]) -> String {
        self.scripts
            .get(image_id)
            .and_then(|s| s.get(observations.len()))
            .cloned()
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiveOptions {
    /// `None` keeps the server's default tool set.
    pub enabled_tools: Option<Vec<ToolName>>,
    pub parallelism: usize,
    /// Hard cap on steps per episode, in case a server never terminates.
    pub max_steps: usize,
}

impl Default for LiveOptions {
    fn default() -> Self {
        Self {
            enabled_tools: None,
            parallelism: 1,
            max_steps: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub trajectory: Trajectory,
    /// Distance reported by the server on the terminal step.
    pub distance_km: Option<f64>,
    pub error: Option<String>,
}

pub struct LiveRun {
    pub report: EvalReport,
    /// One outcome per manifest entry, in manifest order.
    pub episodes: Vec<EpisodeOutcome>,
}

impl LiveRun {
    pub fn log(&self) -> Vec<Trajectory> {
        self.episodes.iter().map(|e| e.trajectory.clone()).collect()
    }
}

fn aborted(entry: &ManifestEntry, err: &ClientError) -> EpisodeOutcome {
    let mut t = Trajectory::new(entry.image_id.clone(), "live");
    t.meta.status = Some("aborted".into());
    EpisodeOutcome {
        trajectory: t,
        distance_km: None,
        error: Some(err.to_string()),
    }
}

fn run_episode<T: Transport>(
    client: &EnvClient<T>,
    entry: &ManifestEntry,
    policy: &dyn Policy,
    opts: &LiveOptions,
) -> Result<EpisodeOutcome, ClientError> {
    let mut overrides = json!({ "truth_visible_to_client": true });
    if let Some(tools) = &opts.enabled_tools {
        overrides["enabled_tools"] = json!(tools.iter().map(|t| t.as_str()).collect::<Vec<_>>());
    }
    let created = client.create(&entry.image_id, Some(overrides))?;
    let mut observations = Vec::new();
    let mut distance_km = None;
    for _ in 0..opts.max_steps {
        let response = policy.respond(&entry.image_id, &created.prompt, &observations);
        match client.step(&created.episode_id, &response)? {
            StepResult::Observation { text, .. } => observations.push(text),
            StepResult::Terminal { distance_km: d, .. } => {
                distance_km = d;
                break;
            }
        }
    }
    let line = client.close(&created.episode_id)?;
    let trajectory =
        Trajectory::from_line(&line).map_err(|e| ClientError::Decode(e.to_string()))?;
    Ok(EpisodeOutcome {
        trajectory,
        distance_km,
        error: None,
    })
}

/// One episode per manifest entry, dispatched over up to
/// `opts.parallelism` workers, each with its own transport from `connect`.
/// A failed episode yields an aborted record and the run continues.
pub fn run_live_eval<T, F>(
    manifest: &DatasetManifest,
    connect: F,
    policy: &dyn Policy,
    opts: &LiveOptions,
    ladder: &ThresholdLadder,
) -> Result<LiveRun, EvalError>
where
    T: Transport,
    F: Fn() -> Result<T, ClientError> + Sync,
{
    let entries = manifest.entries();
    let slots: Vec<Mutex<Option<EpisodeOutcome>>> =
        entries.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = opts.parallelism.clamp(1, entries.len().max(1));

    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| {
                let mut client = None;
                loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(entry) = entries.get(i) else { break };
                    if client.is_none() {
                        client = match connect() {
                            Ok(t) => Some(EnvClient::new(t)),
                            Err(e) => {
                                *slots[i].lock().unwrap() = Some(aborted(entry, &e));
                                continue;
                            }
                        };
                    }
                    let c = client.as_ref().unwrap();
                    let outcome = run_episode(c, entry, policy, opts).unwrap_or_else(|e| {
                        // the connection may be unusable after a transport error
                        if matches!(e, ClientError::Io(_)) {
                            client = None;
                        }
                        aborted(entry, &e)
                    });
                    *slots[i].lock().unwrap() = Some(outcome);
                }
            });
        }
    });

    let episodes: Vec<EpisodeOutcome> = slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every slot filled"))
        .collect();
    let log: Vec<Trajectory> = episodes.iter().map(|e| e.trajectory.clone()).collect();
    let report = run_replay_eval(manifest, &log, ladder)?;
    Ok(LiveRun { report, episodes })
}

/// Per-record distance of a logged answer, for inspection.
pub fn record_distance(manifest: &DatasetManifest, t: &Trajectory) -> Option<f64> {
    let truth = manifest.get(&t.image_id)?.truth;
    t.final_answer
        .as_ref()
        .map(|a| haversine_km(a.coord, truth))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(EvalError::Format(other.to_string())),
        }
    }
}

fn radius_label(r: f64) -> String {
    format!("@{r}km")
}

/// Render named reports with columns in radius order, then coverage and
/// AvgTool. Table cells are percentages; CSV keeps fractions.
pub fn render_report(reports: &[(String, EvalReport)], format: ReportFormat) -> String {
    if format == ReportFormat::Json {
        let map: BTreeMap<&str, &EvalReport> =
            reports.iter().map(|(n, r)| (n.as_str(), r)).collect();
        return serde_json::to_string_pretty(&map).expect("reports serialize") + "\n";
    }
    let radii: Vec<f64> = reports
        .first()
        .map(|(_, r)| r.accuracy.acc_at.iter().map(|a| a.radius_km).collect())
        .unwrap_or_default();
    let mut header = vec!["name".to_string()];
    header.extend(radii.iter().map(|r| radius_label(*r)));
    header.push("coverage".into());
    header.push("AvgTool".into());

    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|(name, r)| {
            let mut row = vec![name.clone()];
            let pct = |v: f64| match format {
                ReportFormat::Table => format!("{:.1}", v * 100.0),
                _ => format!("{v}"),
            };
            row.extend(
                radii
                    .iter()
                    .map(|rad| pct(r.accuracy.accuracy_at(*rad).unwrap_or(0.0))),
            );
            row.push(pct(r.accuracy.coverage));
            row.push(match format {
                ReportFormat::Table => format!("{:.2}", r.tools.total),
                _ => format!("{}", r.tools.total),
            });
            row
        })
        .collect();

    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            out.push_str(&header.join(","));
            out.push('\n');
            for row in rows {
                out.push_str(&row.join(","));
                out.push('\n');
            }
        }
        _ => {
            let widths: Vec<usize> = (0..header.len())
                .map(|i| {
                    rows.iter()
                        .map(|r| r[i].len())
                        .chain([header[i].len()])
                        .max()
                        .unwrap()
                })
                .collect();
            let line = |cells: &[String]| {
                cells
                    .iter()
                    .zip(&widths)
                    .enumerate()
                    .map(|(i, (c, w))| {
                        if i == 0 {
                            format!("{c:<w$}")
                        } else {
                            format!("{c:>w$}")
                        }
                    })
                    .collect::<Vec<_>>()
                    .join("  ")
            };
            let _ = writeln!(out, "{}", line(&header));
            let _ = writeln!(
                out,
                "{}",
                widths
                    .iter()
                    .map(|w| "-".repeat(*w))
                    .collect::<Vec<_>>()
                    .join("  ")
            );
            for row in rows {
                let _ = writeln!(out, "{}", line(&row));
            }
        }
    }
    out
}

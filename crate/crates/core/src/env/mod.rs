//! Episode lifecycle: create, step until terminal, close.
//!
//! Each episode sits behind its own mutex inside a shared map, so steps for
//! different episodes run in parallel while steps for one episode serialize.

mod prompt;
pub mod protocol;
pub mod server;

pub use prompt::render_prompt;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use crate::config::{load_config_file, ConfigError};

use crate::cache::{CacheStore, FallbackProvider, MissLog, NoFallback};
use crate::dataset::DatasetManifest;
use crate::geo::GeoCoordinate;
use crate::reward::{composite_reward, reply_selection, RewardBreakdown, RewardWeights, TurnFacts};
use crate::toolbox::{execute_tool, ImageContext, ResizePolicy, ToolEnv};
use crate::trajectory::{Action, ToolName, Trajectory, Turn};

pub const PROTOCOL_ERROR_PREFIX: &str = "PROTOCOL ERROR";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("unknown image_id `{0}`")]
    UnknownImage(String),
    #[error("unknown episode `{0}`")]
    UnknownEpisode(String),
    #[error("episode `{0}` has already terminated")]
    EpisodeDone(String),
    #[error("episode `{0}` is still active")]
    EpisodeActive(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("response is {size} bytes, limit is {limit}")]
    TooLarge { size: usize, limit: usize },
}

impl EnvError {
    pub fn code(&self) -> &'static str {
        match self {
            EnvError::UnknownImage(_) => "UNKNOWN_IMAGE",
            EnvError::UnknownEpisode(_) => "UNKNOWN_EPISODE",
            EnvError::EpisodeDone(_) => "EPISODE_DONE",
            EnvError::EpisodeActive(_) | EnvError::BadRequest(_) => "BAD_REQUEST",
            EnvError::TooLarge { .. } => "TOO_LARGE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    pub max_turns: usize,
    /// Empty means tool-free mode.
    pub enabled_tools: Vec<ToolName>,
    pub weights: RewardWeights,
    pub truth_visible_to_client: bool,
    pub max_response_bytes: usize,
    pub idle_timeout_secs: u64,
    pub text_theta: f64,
    pub resize: ResizePolicy,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            max_turns: 10,
            enabled_tools: ToolName::ALL.to_vec(),
            weights: RewardWeights::default(),
            truth_visible_to_client: false,
            max_response_bytes: 65536,
            idle_timeout_secs: 600,
            text_theta: 0.5,
            resize: ResizePolicy::default(),
        }
    }
}

fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p.clone(),
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::BadRequest(format!("invalid episode config: {m}")));
        if self.max_turns == 0 {
            return bad("max_turns must be at least 1");
        }
        for (i, t) in self.enabled_tools.iter().enumerate() {
            if self.enabled_tools[..i].contains(t) {
                return bad("enabled_tools has duplicates");
            }
        }
        if self.max_response_bytes == 0 {
            return bad("max_response_bytes must be positive");
        }
        if !(0.0..=1.0).contains(&self.text_theta) {
            return bad("text_theta must lie in [0, 1]");
        }
        self.weights
            .validate()
            .map_err(|e| EnvError::BadRequest(format!("invalid episode config: {e}")))
    }

    /// Apply a partial JSON object on top of this config. Nested objects
    /// merge key by key.
    pub fn with_overrides(&self, overrides: &Value) -> Result<Self, EnvError> {
        if !overrides.is_object() {
            return Err(EnvError::BadRequest(
                "config_overrides must be an object".into(),
            ));
        }
        let mut base = serde_json::to_value(self).expect("config serializes");
        merge(&mut base, overrides);
        let cfg: EpisodeConfig = serde_json::from_value(base)
            .map_err(|e| EnvError::BadRequest(format!("invalid config_overrides: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// File configuration for a served environment. Relative paths resolve
/// against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    pub manifest: PathBuf,
    /// Cache files merged into one store.
    #[serde(default)]
    pub caches: Vec<PathBuf>,
    #[serde(default)]
    pub miss_log: Option<PathBuf>,
    #[serde(default)]
    pub listen: Option<String>,
    #[serde(default)]
    pub episode: EpisodeConfig,
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let mut cfg: ServiceConfig = load_config_file(path)?;
        cfg.episode.validate().map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        fix(&mut cfg.manifest);
        cfg.caches.iter_mut().for_each(fix);
        cfg.miss_log.as_mut().map(fix);
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardSummary {
    pub r_geo: f64,
    pub r_fmt: f64,
    pub r_tool: f64,
    pub total: f64,
}

impl From<&RewardBreakdown> for RewardSummary {
    fn from(b: &RewardBreakdown) -> Self {
        Self {
            r_geo: b.r_geo,
            r_fmt: b.r_fmt,
            r_tool: b.r_tool,
            total: b.total,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepResult {
    Observation {
        text: String,
        turn: usize,
    },
    Terminal {
        reward: RewardSummary,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        distance_km: Option<f64>,
        turn: usize,
    },
}

impl StepResult {
    pub fn is_terminal(&self) -> bool {
        matches!(self, StepResult::Terminal { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EpisodeStatus {
    Active,
    Done(RewardBreakdown),
    Aborted(String),
}

struct Episode {
    id: String,
    image: ImageContext,
    truth: Option<GeoCoordinate>,
    config: EpisodeConfig,
    history: Trajectory,
    facts: Vec<TurnFacts>,
    status: EpisodeStatus,
    protocol_errors: usize,
    last_active: Instant,
}

fn protocol_error_text(reason: &str) -> String {
    format!(
        "{PROTOCOL_ERROR_PREFIX}: {reason}. Reply with <think>...</think> followed by exactly one \
         <tool_call>{{...}}</tool_call> or <answer>...</answer>. Another invalid response ends the episode."
    )
}

/// A running environment: dataset, offline cache and live episodes.
pub struct EnvService {
    manifest: Arc<DatasetManifest>,
    cache: Arc<CacheStore>,
    fallback: Arc<dyn FallbackProvider>,
    miss_log: Option<Arc<MissLog>>,
    defaults: EpisodeConfig,
    episodes: RwLock<HashMap<String, Arc<Mutex<Episode>>>>,
}

impl EnvService {
    pub fn new(manifest: DatasetManifest, cache: CacheStore, defaults: EpisodeConfig) -> Self {
        Self {
            manifest: Arc::new(manifest),
            cache: Arc::new(cache),
            fallback: Arc::new(NoFallback),
            miss_log: None,
            defaults,
            episodes: RwLock::new(HashMap::new()),
        }
    }

    /// Load manifest, caches and miss log named by a service config.
    pub fn from_config(
        cfg: &ServiceConfig,
    ) -> Result<Self, Box<dyn std::error::Error + Send + Sync>> {
        let manifest = DatasetManifest::load(&cfg.manifest)?;
        let mut cache = CacheStore::new();
        for p in &cfg.caches {
            cache.merge(crate::cache::load_cache(p)?)?;
        }
        let mut service = Self::new(manifest, cache, cfg.episode.clone());
        if let Some(p) = &cfg.miss_log {
            let file = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)?;
            service = service.with_miss_log(Arc::new(MissLog::to_writer(file)));
        }
        Ok(service)
    }

    pub fn with_fallback(mut self, fallback: Arc<dyn FallbackProvider>) -> Self {
        self.fallback = fallback;
        self
    }

    pub fn with_miss_log(mut self, log: Arc<MissLog>) -> Self {
        self.miss_log = Some(log);
        self
    }

    pub fn defaults(&self) -> &EpisodeConfig {
        &self.defaults
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn active_episodes(&self) -> usize {
        self.episodes.read().unwrap().len()
    }

    /// Start an episode. Truth comes from the manifest.
    pub fn create_episode(
        &self,
        image_id: &str,
        overrides: Option<&Value>,
    ) -> Result<(String, String), EnvError> {
        let entry = self
            .manifest
            .get(image_id)
            .ok_or_else(|| EnvError::UnknownImage(image_id.to_string()))?;
        let config = match overrides {
            Some(o) if !o.is_null() => self.defaults.with_overrides(o)?,
            _ => self.defaults.clone(),
        };
        let (width, height) = entry.dimensions();
        let prompt = render_prompt(
            image_id,
            width,
            height,
            &config.enabled_tools,
            config.max_turns,
        );
        let id = uuid::Uuid::new_v4().to_string();
        let episode = Episode {
            id: id.clone(),
            image: ImageContext {
                image_id: image_id.to_string(),
                width,
                height,
            },
            truth: Some(entry.truth),
            history: Trajectory::new(image_id, "env"),
            config,
            facts: Vec::new(),
            status: EpisodeStatus::Active,
            protocol_errors: 0,
            last_active: Instant::now(),
        };
        self.episodes
            .write()
            .unwrap()
            .insert(id.clone(), Arc::new(Mutex::new(episode)));
        Ok((id, prompt))
    }

    fn episode(&self, id: &str) -> Result<Arc<Mutex<Episode>>, EnvError> {
        self.episodes
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| EnvError::UnknownEpisode(id.to_string()))
    }

    pub fn step(&self, episode_id: &str, response: &str) -> Result<StepResult, EnvError> {
        let handle = self.episode(episode_id)?;
        let mut ep = handle.lock().unwrap();
        if ep.status != EpisodeStatus::Active {
            return Err(EnvError::EpisodeDone(episode_id.to_string()));
        }
        let limit = ep.config.max_response_bytes;
        if response.len() > limit {
            return Err(EnvError::TooLarge {
                size: response.len(),
                limit,
            });
        }
        ep.last_active = Instant::now();
        let mut turn = Turn::new(response, None);
        // the useful tag in this response scores the previous observation
        if let Some(prev) = ep.facts.last_mut() {
            prev.reply_useful = Some(reply_selection(&turn));
        }
        let number = ep.history.turns.len() + 1;

        let refused = match &turn.response.action {
            Action::Malformed(reason) => Some(reason.as_str().to_string()),
            Action::ToolCall(c) if !ep.config.enabled_tools.contains(&c.name) => {
                Some(format!("tool `{}` is not enabled", c.name.as_str()))
            }
            _ => None,
        };

        if let Some(reason) = refused {
            ep.protocol_errors += 1;
            turn.protocol_error = Some(reason.clone());
            ep.facts.push(TurnFacts::default());
            if ep.protocol_errors >= 2 || number >= ep.config.max_turns {
                ep.history.turns.push(turn);
                return Ok(self.finish(&mut ep));
            }
            let text = protocol_error_text(&reason);
            turn.observation = Some(text.clone());
            ep.history.turns.push(turn);
            return Ok(StepResult::Observation { text, turn: number });
        }

        if let Some(answer) = turn.response.answer().cloned() {
            ep.history.final_answer = Some(answer);
            ep.facts.push(TurnFacts::default());
            ep.history.turns.push(turn);
            return Ok(self.finish(&mut ep));
        }

        let call = turn
            .response
            .tool_call()
            .expect("non-malformed, non-answer is a call")
            .clone();
        let exec = {
            let env = ToolEnv {
                cache: &self.cache,
                fallback: self.fallback.as_ref(),
                miss_log: self.miss_log.as_deref(),
                tau_iou: ep.config.weights.tau_iou,
                text_theta: ep.config.text_theta,
                resize: ep.config.resize,
            };
            execute_tool(&call, &ep.image, &env)
        };
        turn.observation = Some(exec.observation.clone());
        if call.name.is_search() {
            turn.results = Some(exec.facts.results.clone());
        }
        turn.bbox_gt = exec.facts.matched_box;
        turn.api_failure = exec.facts.api_failure;
        ep.facts.push(TurnFacts::from(&exec.facts));
        ep.history.turns.push(turn);
        if number >= ep.config.max_turns {
            return Ok(self.finish(&mut ep));
        }
        Ok(StepResult::Observation {
            text: exec.observation,
            turn: number,
        })
    }

    fn finish(&self, ep: &mut Episode) -> StepResult {
        let breakdown = composite_reward(&ep.history, &ep.facts, ep.truth, &ep.config.weights);
        let result = StepResult::Terminal {
            reward: RewardSummary::from(&breakdown),
            distance_km: breakdown
                .distance_km
                .filter(|_| ep.config.truth_visible_to_client),
            turn: ep.history.turns.len(),
        };
        ep.status = EpisodeStatus::Done(breakdown);
        result
    }

    /// Full reward breakdown of a finished episode.
    pub fn breakdown(&self, episode_id: &str) -> Result<RewardBreakdown, EnvError> {
        let handle = self.episode(episode_id)?;
        let ep = handle.lock().unwrap();
        match &ep.status {
            EpisodeStatus::Done(b) => Ok(b.clone()),
            EpisodeStatus::Active => Err(EnvError::EpisodeActive(episode_id.to_string())),
            EpisodeStatus::Aborted(r) => Err(EnvError::BadRequest(format!("episode aborted: {r}"))),
        }
    }

    pub fn status(&self, episode_id: &str) -> Result<EpisodeStatus, EnvError> {
        Ok(self.episode(episode_id)?.lock().unwrap().status.clone())
    }

    /// Emit the trajectory log line of a terminated episode and evict it.
    pub fn close_episode(&self, episode_id: &str) -> Result<String, EnvError> {
        let handle = self.episode(episode_id)?;
        let ep = handle.lock().unwrap();
        let status = match &ep.status {
            EpisodeStatus::Active => return Err(EnvError::EpisodeActive(episode_id.to_string())),
            EpisodeStatus::Done(_) => "done",
            EpisodeStatus::Aborted(_) => "aborted",
        };
        let mut record = ep.history.clone();
        record.meta.status = Some(status.to_string());
        if ep.config.truth_visible_to_client {
            record.truth = ep.truth;
        }
        let line = record.to_line();
        let id = ep.id.clone();
        drop(ep);
        if self.episodes.write().unwrap().remove(&id).is_none() {
            // a concurrent close won the race
            return Err(EnvError::UnknownEpisode(id));
        }
        Ok(line)
    }

    pub fn reap_idle(&self) -> usize {
        self.reap_idle_at(Instant::now())
    }

    /// Abort active episodes idle past their timeout and evict terminated
    /// episodes nobody closed within the same window. Returns the number of
    /// episodes aborted.
    pub fn reap_idle_at(&self, now: Instant) -> usize {
        let handles: Vec<_> = self.episodes.read().unwrap().values().cloned().collect();
        let mut aborted = 0;
        let mut evict = Vec::new();
        for h in handles {
            let mut ep = h.lock().unwrap();
            let timeout = Duration::from_secs(ep.config.idle_timeout_secs);
            if now.saturating_duration_since(ep.last_active) < timeout {
                continue;
            }
            if ep.status == EpisodeStatus::Active {
                ep.status = EpisodeStatus::Aborted("idle timeout".into());
                ep.last_active = now;
                aborted += 1;
            } else {
                evict.push(ep.id.clone());
            }
        }
        if !evict.is_empty() {
            let mut map = self.episodes.write().unwrap();
            for id in evict {
                map.remove(&id);
            }
        }
        aborted
    }
}

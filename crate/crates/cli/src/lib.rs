//! Shared plumbing for the `pipeline`, `eval` and `envd` binaries.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use geoagent_core::cache::write_cache;
use geoagent_core::dataset::DatasetManifest;
use geoagent_core::env::protocol::{ClientError, TcpTransport};
use geoagent_core::env::{EnvService, ServiceConfig};
use geoagent_core::eval::{
    render_report, run_live_eval, run_replay_eval, EvalReport, LiveOptions, ReplayPolicy,
    ReportFormat,
};
use geoagent_core::geo::ThresholdLadder;
use geoagent_core::pipeline::{
    build_caches, filter_split, BuildReport, FilterCriteria, SplitReport,
};
use geoagent_core::trajectory::{load_trajectory_log, write_trajectory_log, ToolName, Trajectory};

pub const IMAGE_CACHE_FILE: &str = "image_cache.jsonl";
pub const TEXT_CACHE_FILE: &str = "text_cache.jsonl";
pub const BUILD_REPORT_FILE: &str = "build_report.json";

pub fn read_log(path: &Path) -> Result<Vec<Trajectory>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    load_trajectory_log(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

pub fn write_log(path: &Path, records: &[Trajectory]) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(f);
    write_trajectory_log(records, &mut w)?;
    w.flush()?;
    Ok(())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn filter(input: &Path, criteria: &str, out: &Path, report: &Path) -> Result<SplitReport> {
    let criteria = FilterCriteria::resolve(criteria)?;
    let records = read_log(input)?;
    let (kept, split) = filter_split(&records, &criteria);
    write_log(out, &kept)?;
    write_json(report, &split)?;
    Ok(split)
}

pub fn build_cache(input: &Path, out_dir: &Path) -> Result<BuildReport> {
    let records = read_log(input)?;
    let built = build_caches(&records)?;
    std::fs::create_dir_all(out_dir)?;
    write_cache(&built.image, out_dir.join(IMAGE_CACHE_FILE))?;
    write_cache(&built.text, out_dir.join(TEXT_CACHE_FILE))?;
    write_json(&out_dir.join(BUILD_REPORT_FILE), &built.report)?;
    Ok(built.report)
}

fn report_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "log".into())
}

/// Evaluate each log against the manifest; the rendered report goes to `out`
/// and the table to stdout.
pub fn replay(
    manifest: &Path,
    logs: &[PathBuf],
    out: &Path,
    format: ReportFormat,
) -> Result<Vec<(String, EvalReport)>> {
    let manifest = DatasetManifest::load(manifest)?;
    let ladder = ThresholdLadder::default();
    let mut reports = Vec::new();
    for log in logs {
        let records = read_log(log)?;
        let r = run_replay_eval(&manifest, &records, &ladder)
            .with_context(|| format!("evaluating {}", log.display()))?;
        reports.push((report_name(log), r));
    }
    std::fs::write(out, render_report(&reports, format))
        .with_context(|| format!("writing {}", out.display()))?;
    Ok(reports)
}

/// `tcp://host:port` or bare `host:port`.
pub fn parse_endpoint(endpoint: &str) -> Result<String> {
    let addr = endpoint.strip_prefix("tcp://").unwrap_or(endpoint);
    if addr.contains("://") {
        bail!("unsupported endpoint scheme in `{endpoint}`");
    }
    if addr
        .rsplit_once(':')
        .is_none_or(|(_, port)| port.parse::<u16>().is_err())
    {
        bail!("endpoint `{endpoint}` needs a port");
    }
    Ok(addr.to_string())
}

/// Comma-separated tool list, short (`img,txt,zoom`) or full names.
pub fn parse_tools(list: &str) -> Result<Vec<ToolName>> {
    let mut tools = Vec::new();
    for part in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let t: ToolName = part.parse()?;
        if !tools.contains(&t) {
            tools.push(t);
        }
    }
    Ok(tools)
}

pub fn parse_policy(policy: &str) -> Result<ReplayPolicy> {
    match policy.split_once(':') {
        Some(("replay", path)) => Ok(ReplayPolicy::from_log(&read_log(Path::new(path))?)),
        _ => bail!("unknown policy `{policy}` (expected replay:LOG)"),
    }
}

pub struct LiveArgs<'a> {
    pub manifest: &'a Path,
    pub endpoint: &'a str,
    pub policy: &'a str,
    pub tools: Option<&'a str>,
    pub out_dir: &'a Path,
    pub parallelism: usize,
}

/// Writes `trajectories.jsonl` and `report.json` into the output directory.
pub fn live(args: &LiveArgs<'_>) -> Result<EvalReport> {
    let manifest = DatasetManifest::load(args.manifest)?;
    let addr = parse_endpoint(args.endpoint)?;
    let policy = parse_policy(args.policy)?;
    let opts = LiveOptions {
        enabled_tools: args.tools.map(parse_tools).transpose()?,
        parallelism: args.parallelism,
        ..LiveOptions::default()
    };
    let run = run_live_eval(
        &manifest,
        || TcpTransport::connect(addr.as_str()).map_err(ClientError::from),
        &policy,
        &opts,
        &ThresholdLadder::default(),
    )?;
    for (e, entry) in run.episodes.iter().zip(manifest.entries()) {
        if let Some(err) = &e.error {
            eprintln!("episode {} aborted: {err}", entry.image_id);
        }
    }
    std::fs::create_dir_all(args.out_dir)?;
    write_log(&args.out_dir.join("trajectories.jsonl"), &run.log())?;
    let name = report_name(args.manifest);
    std::fs::write(
        args.out_dir.join("report.json"),
        render_report(&[(name, run.report.clone())], ReportFormat::Json),
    )?;
    Ok(run.report)
}

pub const DEFAULT_LISTEN: &str = "127.0.0.1:7878";

pub fn load_service(config: &Path) -> Result<(Arc<EnvService>, Option<String>)> {
    let cfg = ServiceConfig::load(config)?;
    let env = EnvService::from_config(&cfg).map_err(|e| anyhow!(e))?;
    Ok((Arc::new(env), cfg.listen))
}

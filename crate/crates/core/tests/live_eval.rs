mod common;

use std::net::TcpListener;
use std::sync::Arc;
use std::time::Duration;

use common::*;
use geoagent_core::cache::load_cache;
use geoagent_core::dataset::{DatasetManifest, ManifestEntry};
use geoagent_core::env::protocol::{ClientError, TcpTransport};
use geoagent_core::env::server::spawn;
use geoagent_core::env::{EnvService, EpisodeConfig};
use geoagent_core::eval::{run_live_eval, run_replay_eval, LiveOptions, ReplayPolicy};
use geoagent_core::geo::{GeoCoordinate, ThresholdLadder};
use geoagent_core::trajectory::ToolName;

fn three_entry_manifest() -> DatasetManifest {
    let mut entries = DatasetManifest::load(fixture("trace_manifest.jsonl"))
        .unwrap()
        .entries()
        .to_vec();
    for (i, lat) in [(1, 10.0), (2, -20.0)] {
        entries.push(ManifestEntry {
            image_id: format!("extra{i}"),
            truth: GeoCoordinate::new(lat, 5.0).unwrap(),
            source: "synthetic".into(),
            width: Some(640),
            height: Some(480),
        });
    }
    DatasetManifest::from_entries(entries).unwrap()
}

#[test]
fn live_equals_replay_on_trace() {
    let manifest = DatasetManifest::load(fixture("trace_manifest.jsonl")).unwrap();
    let log = trace_log();
    let ladder = ThresholdLadder::default();
    let env = trace_service(EpisodeConfig::default());
    let live = run_live_eval(
        &manifest,
        || Ok::<_, ClientError>(&env),
        &ReplayPolicy::from_log(&log),
        &LiveOptions::default(),
        &ladder,
    )
    .unwrap();
    let replay = run_replay_eval(&manifest, &log, &ladder).unwrap();
    assert_eq!(live.report, replay);
    let d = live.episodes[0].distance_km.unwrap();
    assert!((d - 3.4).abs() < 0.1, "{d}");
    assert_eq!(live.log()[0].turns.len(), 3);
}

#[test]
fn live_over_tcp_writes_one_record_per_entry() {
    let manifest = three_entry_manifest();
    let cache = load_cache(fixture("trace_cache.jsonl")).unwrap();
    let env = Arc::new(EnvService::new(
        manifest.clone(),
        cache,
        EpisodeConfig::default(),
    ));
    let server = spawn(
        TcpListener::bind("127.0.0.1:0").unwrap(),
        env,
        Duration::from_secs(60),
    )
    .unwrap();
    let addr = server.local_addr();
    let opts = LiveOptions {
        parallelism: 3,
        ..LiveOptions::default()
    };
    let run = run_live_eval(
        &manifest,
        || TcpTransport::connect(addr).map_err(ClientError::from),
        &ReplayPolicy::from_log(&trace_log()),
        &opts,
        &ThresholdLadder::default(),
    )
    .unwrap();
    assert_eq!(run.episodes.len(), 3);
    let ids: Vec<_> = run.log().iter().map(|t| t.image_id.clone()).collect();
    assert_eq!(ids, ["311938754", "extra1", "extra2"]);
    assert!(run.episodes.iter().all(|e| e.error.is_none()));
    // the extra images get empty responses, so they end after the grace round
    assert_eq!(run.report.accuracy.coverage, 1.0 / 3.0);
    assert_eq!(run.report.accuracy.accuracy_at(25.0), Some(1.0 / 3.0));
}

#[test]
fn zoom_disabled_live_run() {
    let manifest = DatasetManifest::load(fixture("trace_manifest.jsonl")).unwrap();
    let env = trace_service(EpisodeConfig::default());
    let mut log = trace_log();
    let zoom = r#"<think>z</think><tool_call>{"name": "image_zoom_in_tool", "arguments": {"bbox_2d": [0, 0, 500, 500]}}</tool_call>"#;
    log[0].turns[0].raw_text = zoom.into();
    let opts = LiveOptions {
        enabled_tools: Some(vec![ToolName::ImageSearch, ToolName::TextSearch]),
        ..LiveOptions::default()
    };
    let run = run_live_eval(
        &manifest,
        || Ok::<_, ClientError>(&env),
        &ReplayPolicy::from_log(&log),
        &opts,
        &ThresholdLadder::default(),
    )
    .unwrap();
    let t = &run.log()[0];
    assert!(t.turns[0].protocol_error.is_some());
    assert_eq!(run.report.accuracy.avg_tool_calls, 1.0);
}

#[test]
fn connect_failure_aborts_but_continues() {
    let manifest = three_entry_manifest();
    let ladder = ThresholdLadder::default();
    let run = run_live_eval(
        &manifest,
        || TcpTransport::connect("127.0.0.1:1").map_err(ClientError::from),
        &ReplayPolicy::from_log(&[]),
        &LiveOptions::default(),
        &ladder,
    )
    .unwrap();
    assert_eq!(run.episodes.len(), 3);
    assert!(run
        .episodes
        .iter()
        .all(|e| e.error.is_some() && e.trajectory.meta.status.as_deref() == Some("aborted")));
    assert_eq!(run.report.accuracy.coverage, 0.0);
}

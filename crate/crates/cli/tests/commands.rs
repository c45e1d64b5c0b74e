use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
}

fn run(bin: &str, args: &[&str]) -> String {
    let out = Command::new(bin).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "{bin} {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Server(Child, String);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn start_envd(config: &Path) -> Server {
    let mut child = Command::new(env!("CARGO_BIN_EXE_envd"))
        .args(["--config", s(config), "--listen", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let addr = line
        .trim()
        .strip_prefix("listening on ")
        .expect("address line")
        .to_string();
    Server(child, addr)
}

#[test]
fn filter_presets_and_custom_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("kept.jsonl");
    let report = dir.path().join("report.json");
    let bin = env!("CARGO_BIN_EXE_pipeline");
    let log = fixture("trace_log.jsonl");

    let stdout = run(
        bin,
        &[
            "filter",
            "--in",
            s(&log),
            "--criteria",
            "easy",
            "--out",
            s(&out),
            "--report",
            s(&report),
        ],
    );
    assert!(stdout.contains("kept 1 of 1"), "{stdout}");
    let r: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["kept_count"], 1);
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 1);

    let strict = dir.path().join("strict.cfg");
    std::fs::write(&strict, "max_error_km = 1.0\n").unwrap();
    run(
        bin,
        &[
            "filter",
            "--in",
            s(&log),
            "--criteria",
            s(&strict),
            "--out",
            s(&out),
            "--report",
            s(&report),
        ],
    );
    let r: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["kept_count"], 0);
    assert_eq!(r["rejection_histogram"]["ERROR_TOO_LARGE"], 1);
    assert_eq!(std::fs::read_to_string(&out).unwrap(), "");

    let bad = Command::new(bin)
        .args([
            "filter",
            "--in",
            s(&log),
            "--criteria",
            "nonsense",
            "--out",
            s(&out),
            "--report",
            s(&report),
        ])
        .output()
        .unwrap();
    assert!(!bad.status.success());
}

#[test]
fn replay_formats() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.csv");
    let bin = env!("CARGO_BIN_EXE_eval");
    let args = |fmt: &'static str, out: &Path| {
        let m = fixture("trace_manifest.jsonl");
        let l = fixture("trace_log.jsonl");
        run(
            bin,
            &[
                "replay",
                "--manifest",
                s(&m),
                "--log",
                s(&l),
                "--out",
                s(out),
                "--format",
                fmt,
            ],
        )
    };
    let table = args("csv", &out);
    assert!(table.contains("trace_log"));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert_eq!(
        csv,
        "name,@1km,@25km,@200km,@750km,@2500km,coverage,AvgTool\ntrace_log,0,1,1,1,1,1,2\n"
    );
    let json_out = dir.path().join("report.json");
    args("json", &json_out);
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&json_out).unwrap()).unwrap();
    assert_eq!(v["trace_log"]["accuracy"]["coverage"], 1.0);
}

#[test]
fn build_cache_serve_and_evaluate_live() {
    let dir = tempfile::tempdir().unwrap();
    let caches = dir.path().join("caches");
    let stdout = run(
        env!("CARGO_BIN_EXE_pipeline"),
        &[
            "build-cache",
            "--in",
            s(&fixture("trace_log.jsonl")),
            "--out-dir",
            s(&caches),
        ],
    );
    assert!(stdout.contains("1 image entries"), "{stdout}");
    for f in ["image_cache.jsonl", "text_cache.jsonl", "build_report.json"] {
        assert!(caches.join(f).exists(), "{f} missing");
    }

    let config = dir.path().join("envd.toml");
    std::fs::write(
        &config,
        format!(
            "manifest = {:?}\ncaches = [\"caches/image_cache.jsonl\", \"caches/text_cache.jsonl\"]\n\n[episode]\nmax_turns = 10\n",
            s(&fixture("trace_manifest.jsonl"))
        ),
    )
    .unwrap();
    let server = start_envd(&config);

    let out_dir = dir.path().join("live");
    let policy = format!("replay:{}", s(&fixture("trace_log.jsonl")));
    let endpoint = format!("tcp://{}", server.1);
    run(
        env!("CARGO_BIN_EXE_eval"),
        &[
            "live",
            "--manifest",
            s(&fixture("trace_manifest.jsonl")),
            "--endpoint",
            &endpoint,
            "--policy",
            &policy,
            "--tools",
            "img,txt,zoom",
            "--out-dir",
            s(&out_dir),
        ],
    );
    let log = std::fs::read_to_string(out_dir.join("trajectories.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 1);
    let live: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    let logged: serde_json::Value = serde_json::from_str(
        std::fs::read_to_string(fixture("trace_log.jsonl"))
            .unwrap()
            .lines()
            .next()
            .unwrap(),
    )
    .unwrap();
    assert_eq!(live["turns"], logged["turns"]);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["trace_manifest"]["accuracy"]["coverage"], 1.0);
}

#[test]
fn documented_service_config_loads() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(
        fixture("trace_manifest.jsonl"),
        dir.path().join("im2gps3k.jsonl"),
    )
    .unwrap();
    std::fs::create_dir(dir.path().join("caches")).unwrap();
    std::fs::copy(
        fixture("trace_cache.jsonl"),
        dir.path().join("caches/image_cache.jsonl"),
    )
    .unwrap();
    std::fs::write(
        dir.path().join("caches/text_cache.jsonl"),
        "{\"version\":1,\"kind\":\"reverse-cache\"}\n",
    )
    .unwrap();
    let config = dir.path().join("envd.toml");
    std::fs::write(
        &config,
        r#"manifest = "im2gps3k.jsonl"
caches = ["caches/image_cache.jsonl", "caches/text_cache.jsonl"]
miss_log = "misses.jsonl"
listen = "127.0.0.1:7878"

[episode]
max_turns = 10
enabled_tools = ["image_search_tool", "text_search_tool", "image_zoom_in_tool"]
truth_visible_to_client = false
max_response_bytes = 65536
idle_timeout_secs = 600
text_theta = 0.5

[episode.weights]
alpha = 0.6
beta = 0.1
gamma = 0.3
tau_iou = 0.7
"#,
    )
    .unwrap();
    let (env, listen) = geoagent_cli::load_service(&config).unwrap();
    assert_eq!(listen.as_deref(), Some("127.0.0.1:7878"));
    assert_eq!(env.manifest().len(), 1);
    assert_eq!(env.defaults().max_turns, 10);
}

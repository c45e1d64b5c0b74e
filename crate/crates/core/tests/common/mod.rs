#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use geoagent_core::cache::{load_cache, SearchResult};
use geoagent_core::dataset::{DatasetManifest, ManifestEntry};
use geoagent_core::env::{EnvService, EpisodeConfig};
use geoagent_core::geo::{GeoCoordinate, EARTH_RADIUS_KM};
use geoagent_core::pipeline::RejectReason;
use geoagent_core::trajectory::{load_trajectory_log, BoundingBox, ToolCall, Trajectory, Turn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TRACE_IMAGE: &str = "311938754";

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn trace_log() -> Vec<Trajectory> {
    let f = std::fs::File::open(fixture("trace_log.jsonl")).unwrap();
    load_trajectory_log(std::io::BufReader::new(f)).unwrap()
}

pub fn trace_responses() -> Vec<String> {
    trace_log()[0]
        .turns
        .iter()
        .map(|t| t.raw_text.clone())
        .collect()
}

pub fn trace_service(config: EpisodeConfig) -> EnvService {
    let manifest = DatasetManifest::load(fixture("trace_manifest.jsonl")).unwrap();
    let cache = load_cache(fixture("trace_cache.jsonl")).unwrap();
    EnvService::new(manifest, cache, config)
}

pub fn eval_config() -> EpisodeConfig {
    EpisodeConfig {
        truth_visible_to_client: true,
        ..EpisodeConfig::default()
    }
}

/// Point `km` kilometres due north of `p` along its meridian.
pub fn north_of(p: GeoCoordinate, km: f64) -> GeoCoordinate {
    GeoCoordinate::new(p.lat() + (km / EARTH_RADIUS_KM).to_degrees(), p.lon()).unwrap()
}

pub fn results(labels: &[Option<bool>], tag: &str) -> Vec<SearchResult> {
    labels
        .iter()
        .enumerate()
        .map(|(i, l)| SearchResult {
            index: i + 1,
            title: format!("{tag} result {}", i + 1),
            url: format!("https://{tag}-{i}.example/page"),
            domain: format!("{tag}-{i}.example"),
            is_geo_useful: *l,
        })
        .collect()
}

fn render(results: &[SearchResult]) -> String {
    results
        .iter()
        .map(|r| format!("[{}] {} --- {}", r.index, r.title, r.domain))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn image_turn(labels: &[Option<bool>], tag: &str) -> Turn {
    let call =
        ToolCall::image_search(BoundingBox::new(0, 0, 1000, 800).unwrap(), "identify").to_payload();
    let r = results(labels, tag);
    let mut t = Turn::new(
        format!("<think>search</think><tool_call>{call}</tool_call>"),
        Some(render(&r)),
    );
    t.results = Some(r);
    t.bbox_gt = Some(BoundingBox::new(0, 0, 1000, 750).unwrap());
    t
}

pub fn text_turn(query: &str, labels: &[Option<bool>], tag: &str) -> Turn {
    let call = ToolCall::text_search([query]).to_payload();
    let r = results(labels, tag);
    let mut t = Turn::new(
        format!("<think>look up</think><tool_call>{call}</tool_call>"),
        Some(render(&r)),
    );
    t.results = Some(r);
    t
}

pub fn answer_turn(p: GeoCoordinate) -> Turn {
    Turn::new(
        format!(
            "<think>done</think><useful>[1]</useful><answer>Country, City, {}, {}</answer>",
            p.lat(),
            p.lon()
        ),
        None,
    )
}

pub fn finish(mut t: Trajectory, p: GeoCoordinate) -> Trajectory {
    let a = answer_turn(p);
    t.final_answer = a.response.answer().cloned();
    t.turns.push(a);
    t
}

/// Planted categories of the synthetic pipeline corpus with their counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Planted {
    CleanNear,
    CleanMid,
    UnlabeledNear,
    NoPositiveNear,
    TextOnlyNear,
    ManyCallsNear,
    Far,
    NoCalls,
    ApiFailure,
    MissingMeta,
    Inaccessible,
    OverBudget,
    UnlabeledMid,
}

pub const PLANTED: [(Planted, usize); 13] = [
    (Planted::CleanNear, 40),
    (Planted::CleanMid, 30),
    (Planted::UnlabeledNear, 20),
    (Planted::NoPositiveNear, 15),
    (Planted::TextOnlyNear, 10),
    (Planted::ManyCallsNear, 15),
    (Planted::Far, 20),
    (Planted::NoCalls, 10),
    (Planted::ApiFailure, 10),
    (Planted::MissingMeta, 10),
    (Planted::Inaccessible, 5),
    (Planted::OverBudget, 5),
    (Planted::UnlabeledMid, 10),
];

fn planted_record(kind: Planted, i: usize, rng: &mut ChaCha8Rng) -> Trajectory {
    let id = format!("syn{i:03}");
    let mut t = Trajectory::new(id.clone(), "teacher");
    let truth = GeoCoordinate::new(
        rng.random_range(-60.0..60.0),
        rng.random_range(-170.0..170.0),
    )
    .unwrap();
    let near = rng.random_range(0.5..24.0);
    let mid = rng.random_range(30.0..190.0);
    let mixed = |rng: &mut ChaCha8Rng| -> Vec<Option<bool>> {
        let n = rng.random_range(3..10);
        let mut l: Vec<Option<bool>> = (0..n).map(|_| Some(rng.random_bool(0.4))).collect();
        l[0] = Some(true);
        l[n - 1] = Some(false);
        l
    };
    let text = |k: usize, rng: &mut ChaCha8Rng| {
        let n = rng.random_range(1..6);
        text_turn(
            &format!("landmark {id} clue {k}"),
            &vec![None; n],
            &format!("{id}t{k}"),
        )
    };
    let mut err = Some(near);
    match kind {
        Planted::CleanNear | Planted::CleanMid => {
            t.turns.push(image_turn(&mixed(rng), &id));
            t.turns.push(text(0, rng));
            if kind == Planted::CleanMid {
                err = Some(mid);
            }
        }
        Planted::UnlabeledNear | Planted::UnlabeledMid => {
            let mut l = mixed(rng);
            l[1] = None;
            t.turns.push(image_turn(&l, &id));
            if kind == Planted::UnlabeledMid {
                err = Some(mid);
            }
        }
        Planted::NoPositiveNear => {
            t.turns.push(image_turn(&[Some(false); 4], &id));
        }
        Planted::TextOnlyNear => {
            t.turns.push(text(0, rng));
            t.turns.push(text(1, rng));
        }
        Planted::ManyCallsNear => {
            for k in 0..6 {
                t.turns.push(text(k, rng));
            }
        }
        Planted::Far => {
            t.turns.push(image_turn(&mixed(rng), &id));
            err = Some(rng.random_range(201.0..2000.0));
        }
        Planted::NoCalls => {}
        Planted::ApiFailure => {
            let mut turn = text(0, rng);
            turn.api_failure = true;
            turn.results = Some(Vec::new());
            turn.observation = Some("NO RESULTS FOUND".into());
            t.turns.push(turn);
        }
        Planted::MissingMeta => {
            t.turns.push(image_turn(&mixed(rng), &id));
            err = None;
        }
        Planted::Inaccessible => {
            t.turns.push(image_turn(&mixed(rng), &id));
            t.meta.image_accessible = Some(false);
        }
        Planted::OverBudget => {
            for k in 0..10 {
                t.turns.push(text(k, rng));
            }
        }
    }
    t.meta.teacher_error_km = err;
    t.truth = Some(truth);
    finish(t, north_of(truth, err.unwrap_or(3.0)))
}

/// 200 records in shuffled order, each tagged with its planted category.
pub fn synthetic_corpus(seed: u64) -> Vec<(Planted, Trajectory)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kinds: Vec<Planted> = PLANTED
        .iter()
        .flat_map(|(k, n)| std::iter::repeat_n(*k, *n))
        .collect();
    kinds.shuffle(&mut rng);
    kinds
        .into_iter()
        .enumerate()
        .map(|(i, k)| (k, planted_record(k, i, &mut rng)))
        .collect()
}

/// Hand-counted rejection histograms per preset, and kept counts.
pub fn expected_histograms() -> BTreeMap<&'static str, (usize, BTreeMap<RejectReason, usize>)> {
    use RejectReason::*;
    let common = [
        (MissingMeta, 10),
        (ImageInaccessible, 5),
        (NoToolCalls, 10),
        (ApiFailure, 10),
    ];
    let build = |kept: usize, extra: &[(RejectReason, usize)]| {
        let mut h: BTreeMap<RejectReason, usize> = common.iter().copied().collect();
        for (r, n) in extra {
            *h.entry(*r).or_default() += n;
        }
        (kept, h)
    };
    BTreeMap::from([
        (
            "base",
            build(140, &[(ErrorTooLarge, 20), (TurnBudgetExceeded, 5)]),
        ),
        (
            "coldstart",
            build(125, &[(ErrorTooLarge, 20), (TooManyCalls, 20)]),
        ),
        (
            "fullcov",
            build(
                95,
                &[
                    (ErrorTooLarge, 20),
                    (TurnBudgetExceeded, 5),
                    (UnlabeledSearch, 30),
                    (NoPositiveResult, 15),
                ],
            ),
        ),
        (
            "easy",
            build(
                65,
                &[
                    (ErrorTooLarge, 60),
                    (TurnBudgetExceeded, 5),
                    (UnlabeledSearch, 20),
                    (NoPositiveResult, 15),
                ],
            ),
        ),
    ])
}

/// Twenty manifest entries with a log whose answers sit at chosen
/// distances due north of the truth (`None` = no answer, or no record).
pub const EVAL_DISTANCES: [Option<f64>; 20] = [
    Some(0.3),
    Some(0.9),
    Some(4.0),
    Some(12.5),
    Some(24.0),
    Some(26.0),
    Some(80.0),
    Some(199.0),
    Some(201.0),
    Some(500.0),
    Some(749.0),
    Some(751.0),
    Some(1500.0),
    Some(2499.0),
    Some(2600.0),
    Some(6000.0),
    None,
    None,
    Some(15.0),
    Some(0.05),
];

pub const EVAL_TOOL_CALLS: [usize; 20] =
    [0, 1, 2, 3, 1, 0, 4, 2, 2, 1, 5, 0, 3, 1, 1, 2, 0, 0, 3, 1];

/// Record 16 has a trajectory without an answer; record 17 is absent from
/// the log.
pub fn eval_pair() -> (DatasetManifest, Vec<Trajectory>) {
    let mut entries = Vec::new();
    let mut log = Vec::new();
    for (i, d) in EVAL_DISTANCES.iter().enumerate() {
        let truth = GeoCoordinate::new(-50.0 + 4.5 * i as f64, -170.0 + 17.0 * i as f64).unwrap();
        let id = format!("ev{i:02}");
        entries.push(ManifestEntry {
            image_id: id.clone(),
            truth,
            source: "synthetic".into(),
            width: None,
            height: None,
        });
        if i == 17 {
            continue;
        }
        let mut t = Trajectory::new(id.clone(), "synthetic");
        for k in 0..EVAL_TOOL_CALLS[i] {
            t.turns
                .push(text_turn(&format!("q {id} {k}"), &[None], &id));
        }
        match d {
            Some(km) => t = finish(t, north_of(truth, *km)),
            None => t.turns.push(Turn::new("<think>lost</think>", None)),
        }
        log.push(t);
    }
    (DatasetManifest::from_entries(entries).unwrap(), log)
}

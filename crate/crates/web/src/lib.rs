//! wasm-bindgen exports for `www/index.html`. Every function takes plain
//! strings or numbers and returns a JSON string; errors come back as
//! `{"error": ...}` so the page never has to catch.

use std::collections::BTreeSet;

use geoagent_core::reward::{mcc, useful_confusion, RewardWeights};
use geoagent_core::toolbox::{denormalize, iou, smart_resize, ResizePolicy};
use geoagent_core::trajectory::{parse_response, BoundingBox};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn error(msg: impl ToString) -> String {
    json!({ "error": msg.to_string() }).to_string()
}

fn parse_box(text: &str) -> Result<[i64; 4], String> {
    let v: Vec<i64> = text
        .trim()
        .trim_start_matches('[')
        .trim_end_matches(']')
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<i64>()
                .map_err(|_| format!("bad coordinate `{}`", s.trim()))
        })
        .collect::<Result<_, _>>()?;
    v.try_into()
        .map_err(|v: Vec<i64>| format!("expected 4 coordinates, got {}", v.len()))
}

/// Break a model response into think / useful / action.
#[wasm_bindgen]
pub fn parse(text: &str) -> String {
    serde_json::to_string(&parse_response(text)).unwrap_or_else(error)
}

/// Where a 0-1000 box lands on a `width x height` image, the resized crop
/// the zoom tool would return, and its IoU with `other` (optional).
#[wasm_bindgen]
pub fn zoom_preview(bbox: &str, width: u32, height: u32, other: &str) -> String {
    let b = match parse_box(bbox) {
        Ok(b) => b,
        Err(e) => return error(e),
    };
    let (clamped, out_of_range) = BoundingBox::clamped(b[0], b[1], b[2], b[3]);
    let mut out = json!({
        "clamped": clamped.to_array(),
        "out_of_range": out_of_range,
        "degenerate": clamped.is_degenerate(),
    });
    match denormalize(&clamped, width, height) {
        Ok(rect) => {
            let (w, h) = smart_resize(rect.width(), rect.height(), &ResizePolicy::default());
            out["pixels"] = json!(rect);
            out["resized"] = json!([w, h]);
        }
        Err(e) => out["zoom_error"] = json!(e.to_string()),
    }
    if !other.trim().is_empty() {
        match parse_box(other) {
            Ok(o) => {
                let (o, _) = BoundingBox::clamped(o[0], o[1], o[2], o[3]);
                let v = iou(&clamped, &o);
                out["iou"] = json!(v);
                out["passes_gate"] = json!(v >= RewardWeights::default().tau_iou);
            }
            Err(e) => out["iou_error"] = json!(e),
        }
    }
    out.to_string()
}

fn parse_labels(text: &str) -> Result<Vec<bool>, String> {
    text.chars()
        .filter(|c| !c.is_whitespace() && *c != ',')
        .map(|c| match c {
            '1' | 'y' | 'T' | 't' => Ok(true),
            '0' | 'n' | 'F' | 'f' => Ok(false),
            other => Err(format!("label `{other}` is not 0/1")),
        })
        .collect()
}

/// Score a `<useful>` selection (e.g. "1, 3") against per-result labels
/// (e.g. "1 0 1 0 0").
#[wasm_bindgen]
pub fn score_selection(labels: &str, selection: &str) -> String {
    let labels = match parse_labels(labels) {
        Ok(l) if !l.is_empty() => l,
        Ok(_) => return error("no labels"),
        Err(e) => return error(e),
    };
    let mut picked = BTreeSet::new();
    for part in selection
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
    {
        match part.parse::<usize>() {
            Ok(i) => {
                picked.insert(i);
            }
            Err(_) => return error(format!("bad index `{part}`")),
        }
    }
    let (counts, out_of_range) = useful_confusion(&picked, &labels);
    let m = mcc(&counts);
    let value: Value = json!({
        "confusion": counts,
        "out_of_range": out_of_range,
        "mcc": m,
        "reward_term": RewardWeights::default().lambda_mcc * m,
    });
    value.to_string()
}

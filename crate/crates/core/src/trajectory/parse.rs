use std::collections::BTreeSet;

use serde_json::Value;

use super::{
    Action, AnswerError, BoundingBox, FinalAnswer, MalformedReason, ParsedResponse, ToolCall,
    ToolName, UsefulTag,
};

/// First well-formed `<tag>..</tag>` in `text`.
struct TagMatch<'a> {
    content: &'a str,
    start: usize,
    end: usize,
    /// Another opening tag follows the first closed instance.
    repeated: bool,
}

fn find_tag<'a>(text: &'a str, tag: &str) -> Option<TagMatch<'a>> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let mut from = 0;
    while let Some(rel) = text[from..].find(&open) {
        let start = from + rel;
        let body = start + open.len();
        if let Some(rel_close) = text[body..].find(&close) {
            let end = body + rel_close + close.len();
            return Some(TagMatch {
                content: &text[body..body + rel_close],
                start,
                end,
                repeated: text[end..].contains(&open),
            });
        }
        from = body;
    }
    None
}

/// Split a response into think trace, evidence selection and action.
///
/// Tags are searched outside the first `<think>` block, so reasoning that
/// mentions a tag literally does not count as an action.
pub fn parse_response(text: &str) -> ParsedResponse {
    let mut duplicate_tags = false;
    let (think, rest) = match find_tag(text, "think") {
        Some(m) => {
            duplicate_tags |= m.repeated;
            let rest = format!("{}{}", &text[..m.start], &text[m.end..]);
            (Some(m.content.trim().to_string()), rest)
        }
        None => (None, text.to_string()),
    };

    let useful = match find_tag(&rest, "useful") {
        Some(m) => {
            duplicate_tags |= m.repeated;
            parse_useful_content(m.content)
        }
        None => UsefulTag::Absent,
    };

    let call = find_tag(&rest, "tool_call");
    let answer = find_tag(&rest, "answer");
    duplicate_tags |= call.as_ref().is_some_and(|m| m.repeated);
    duplicate_tags |= answer.as_ref().is_some_and(|m| m.repeated);

    let action = match (call, answer) {
        (Some(_), Some(_)) => Action::Malformed(MalformedReason::BothToolCallAndAnswer),
        (None, None) => Action::Malformed(MalformedReason::NoAction),
        (Some(m), None) => match parse_tool_payload(m.content) {
            Ok(call) => Action::ToolCall(call),
            Err(reason) => Action::Malformed(reason),
        },
        (None, Some(m)) => match parse_answer(m.content) {
            Ok(a) => Action::Answer(a),
            Err(_) => Action::Malformed(MalformedReason::BadAnswer),
        },
    };

    ParsedResponse {
        think,
        useful,
        action,
        duplicate_tags,
    }
}

/// Find and parse the first `<useful>` tag in `text`.
pub fn parse_useful(text: &str) -> UsefulTag {
    find_tag(text, "useful").map_or(UsefulTag::Absent, |m| parse_useful_content(m.content))
}

fn parse_useful_content(content: &str) -> UsefulTag {
    let inner = content.trim();
    let inner = inner
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .unwrap_or(inner)
        .trim();
    if inner.is_empty() {
        return UsefulTag::Indices(BTreeSet::new());
    }
    let mut set = BTreeSet::new();
    for part in inner.split(',') {
        match part.trim().parse::<usize>() {
            Ok(i) if i >= 1 => {
                set.insert(i);
            }
            _ => return UsefulTag::Invalid,
        }
    }
    UsefulTag::Indices(set)
}

pub fn render_useful(indices: &BTreeSet<usize>) -> String {
    let body = indices
        .iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join(", ");
    format!("<useful>[{body}]</useful>")
}

/// Parse `country, city, latitude, longitude`.
///
/// The numeric fields are taken from the right, so a city containing commas
/// still parses; the country is everything before the first comma.
pub fn parse_answer(text: &str) -> Result<FinalAnswer, AnswerError> {
    let mut parts = text.trim().rsplitn(3, ',');
    let lon = parts.next().ok_or(AnswerError::Shape)?.trim();
    let lat = parts.next().ok_or(AnswerError::Shape)?.trim();
    let place = parts.next().ok_or(AnswerError::Shape)?;
    let (country, city) = place.split_once(',').ok_or(AnswerError::Shape)?;

    let number = |s: &str| {
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| AnswerError::NotNumeric(s.to_string()))
    };
    FinalAnswer::new(country.trim(), city.trim(), number(lat)?, number(lon)?)
}

fn parse_tool_payload(content: &str) -> Result<ToolCall, MalformedReason> {
    let value: Value =
        serde_json::from_str(content.trim()).map_err(|_| MalformedReason::BadToolPayload)?;
    let obj = value.as_object().ok_or(MalformedReason::BadToolPayload)?;
    let name = obj
        .get("name")
        .and_then(Value::as_str)
        .ok_or(MalformedReason::BadToolPayload)?;
    let name: ToolName = name.parse().map_err(|_| MalformedReason::UnknownTool)?;

    // some models emit the arguments object as an encoded string
    let owned;
    let args = match obj.get("arguments") {
        Some(Value::Object(m)) => m,
        Some(Value::String(s)) => {
            owned =
                serde_json::from_str::<Value>(s).map_err(|_| MalformedReason::BadToolPayload)?;
            owned.as_object().ok_or(MalformedReason::BadToolPayload)?
        }
        _ => return Err(MalformedReason::BadToolPayload),
    };

    let bbox = match args.get("bbox_2d") {
        None | Some(Value::Null) => None,
        Some(v) => Some(parse_box(v)?),
    };
    let goal = args
        .get("goal")
        .and_then(Value::as_str)
        .map(str::trim)
        .filter(|g| !g.is_empty())
        .map(String::from);
    let queries = match args.get("query") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::String(q)) => vec![q.clone()],
        Some(Value::Array(items)) => items
            .iter()
            .map(|q| {
                q.as_str()
                    .map(String::from)
                    .ok_or(MalformedReason::BadToolPayload)
            })
            .collect::<Result<_, _>>()?,
        Some(_) => return Err(MalformedReason::BadToolPayload),
    };
    let queries: Vec<String> = queries
        .into_iter()
        .map(|q| q.trim().to_string())
        .filter(|q| !q.is_empty())
        .collect();

    let (bbox, bbox_out_of_range) = match bbox {
        Some((b, moved)) => (Some(b), moved),
        None => (None, false),
    };
    let call = ToolCall {
        name,
        bbox,
        bbox_out_of_range,
        goal,
        queries,
    };
    let complete = match name {
        ToolName::ImageSearch => call.bbox.is_some() && call.goal.is_some(),
        ToolName::Zoom => call.bbox.is_some(),
        ToolName::TextSearch => !call.queries.is_empty(),
    };
    if complete {
        Ok(call)
    } else {
        Err(MalformedReason::BadToolPayload)
    }
}

fn parse_box(v: &Value) -> Result<(BoundingBox, bool), MalformedReason> {
    let items = v.as_array().ok_or(MalformedReason::BadToolPayload)?;
    if items.len() != 4 {
        return Err(MalformedReason::BadToolPayload);
    }
    let mut c = [0i64; 4];
    for (slot, item) in c.iter_mut().zip(items) {
        let f = item.as_f64().ok_or(MalformedReason::BadToolPayload)?;
        // far outside the box space; no sensible clamp
        if f.abs() > 1e9 {
            return Err(MalformedReason::BadToolPayload);
        }
        *slot = f.round() as i64;
    }
    Ok(BoundingBox::clamped(c[0], c[1], c[2], c[3]))
}

use std::fmt::Write;

use crate::trajectory::ToolName;

fn tool_section(tool: ToolName) -> &'static str {
    match tool {
        ToolName::ImageSearch => concat!(
            "- image_search_tool: reverse image search over a cropped region; suited to landmarks, ",
            "buildings and other distinctive scenes. Arguments: bbox_2d [x1, y1, x2, y2], goal (what ",
            "you want identified).\n",
            "  <tool_call>{\"name\": \"image_search_tool\", \"arguments\": {\"bbox_2d\": [x1, y1, x2, y2], \"goal\": \"...\"}}</tool_call>\n",
        ),
        ToolName::TextSearch => concat!(
            "- text_search_tool: web search with natural-language queries, e.g. sign text or names ",
            "surfaced by earlier results. Arguments: query (a string or a list of strings).\n",
            "  <tool_call>{\"name\": \"text_search_tool\", \"arguments\": {\"query\": \"...\"}}</tool_call>\n",
        ),
        ToolName::Zoom => concat!(
            "- image_zoom_in_tool: enlarge a region to read small text or inscriptions. ",
            "Arguments: bbox_2d [x1, y1, x2, y2].\n",
            "  <tool_call>{\"name\": \"image_zoom_in_tool\", \"arguments\": {\"bbox_2d\": [x1, y1, x2, y2]}}</tool_call>\n",
        ),
    }
}

/// Initial instruction text for an episode. Tool sections follow the fixed
/// order image search, text search, zoom, restricted to `tools`.
pub fn render_prompt(
    image_id: &str,
    width: u32,
    height: u32,
    tools: &[ToolName],
    max_turns: usize,
) -> String {
    let mut p = String::new();
    p.push_str("Work out where this photo was taken.\n\n");
    let _ = writeln!(
        p,
        "Image: {image_id} ({width}x{height} pixels). Boxes use [x1, y1, x2, y2] normalized to 0-1000.\n"
    );
    if tools.is_empty() {
        p.push_str("No tools are available in this episode; answer directly.\n\n");
    } else {
        p.push_str("Tools:\n");
        for t in ToolName::ALL.iter().filter(|t| tools.contains(t)) {
            p.push_str(tool_section(*t));
        }
        p.push('\n');
    }
    p.push_str("Response rules:\n");
    p.push_str("- Start every response with reasoning in <think>...</think>.\n");
    if tools.is_empty() {
        p.push_str("- Then give <answer>...</answer>.\n");
    } else {
        p.push_str(
            "- Then give exactly one <tool_call>{...}</tool_call> or one <answer>...</answer>.\n",
        );
        p.push_str(
            "- After search results, list the 1-based indices of results that match this image as \
             <useful>[i, j]</useful>, or <useful>[]</useful> if none do.\n",
        );
        p.push_str(
            "- If tools fail or return nothing, stop calling them and answer from the image.\n",
        );
    }
    let _ = writeln!(p, "- You have at most {max_turns} responses.");
    p.push_str(
        "- Answer as <answer>Country, City, latitude, longitude</answer> using decimal degrees, \
         e.g. <answer>France, Lyon, 45.7640, 4.8357</answer>.\n",
    );
    p
}

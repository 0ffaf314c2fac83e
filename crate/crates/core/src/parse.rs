//! Roll-out text parsing.
//!
//! A roll-out is free text containing a `<think>…</think>` reasoning block
//! followed by an `<answer>…</answer>` block holding the layout JSON. Parsing
//! never fails; how far it got is recorded in [`ParseStage`].

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::layout::{Axis, Layout, Placement};

const THINK_OPEN: &str = "<think>";
const THINK_CLOSE: &str = "</think>";
const ANSWER_OPEN: &str = "<answer>";
const ANSWER_CLOSE: &str = "</answer>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStage {
    NoTags,
    TagsOnly,
    JsonParsed,
    LayoutExtracted,
}

/// One record of the answer JSON, kept even when incomplete so the format
/// rubric can tell count, name and coordinate failures apart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub object_id: Option<String>,
    /// `None` when the field is missing, non-numeric or not finite.
    pub coords: [Option<f64>; 3],
    /// Byte ranges of the numeric literals within `raw_text`.
    pub spans: [Option<(usize, usize)>; 3],
}

impl RawRecord {
    pub fn coord(&self, axis: Axis) -> Option<f64> {
        self.coords[axis.index()]
    }

    pub fn span(&self, axis: Axis) -> Option<(usize, usize)> {
        self.spans[axis.index()]
    }

    fn placement(&self) -> Option<Placement> {
        let id = self.object_id.as_ref()?;
        Some(Placement::new(
            id.clone(),
            self.coords[0]?,
            self.coords[1]?,
            self.coords[2]?,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedRollOut {
    pub raw_text: String,
    pub think: Option<String>,
    pub answer_raw: Option<String>,
    /// Byte offset of `answer_raw` within `raw_text`.
    pub answer_offset: Option<usize>,
    pub records: Option<Vec<RawRecord>>,
    pub layout: Option<Layout>,
    pub parse_stage_reached: ParseStage,
}

impl ParsedRollOut {
    pub fn stage(&self) -> ParseStage {
        self.parse_stage_reached
    }
}

/// Finds the first `open…close` pair at or after `from`, returning the
/// content range and the index just past the closing tag.
fn find_pair(text: &str, from: usize, open: &str, close: &str) -> Option<((usize, usize), usize)> {
    let start = text[from..].find(open)? + from + open.len();
    let end = text[start..].find(close)? + start;
    Some(((start, end), end + close.len()))
}

/// Splits a roll-out into reasoning trace, answer and layout.
pub fn parse_rollout(raw_text: &str) -> ParsedRollOut {
    let mut parsed = ParsedRollOut {
        raw_text: raw_text.to_string(),
        think: None,
        answer_raw: None,
        answer_offset: None,
        records: None,
        layout: None,
        parse_stage_reached: ParseStage::NoTags,
    };

    let Some(((ts, te), after_think)) = find_pair(raw_text, 0, THINK_OPEN, THINK_CLOSE) else {
        return parsed;
    };
    let Some(((as_, ae), _)) = find_pair(raw_text, after_think, ANSWER_OPEN, ANSWER_CLOSE) else {
        return parsed;
    };
    parsed.think = Some(raw_text[ts..te].trim().to_string());
    parsed.answer_raw = Some(raw_text[as_..ae].to_string());
    parsed.answer_offset = Some(as_);
    parsed.parse_stage_reached = ParseStage::TagsOnly;

    let Some(mut records) = parse_answer(&raw_text[as_..ae]) else {
        return parsed;
    };
    for rec in &mut records {
        for span in rec.spans.iter_mut().flatten() {
            span.0 += as_;
            span.1 += as_;
        }
    }
    parsed.parse_stage_reached = ParseStage::JsonParsed;

    let placements: Option<Vec<Placement>> = records.iter().map(RawRecord::placement).collect();
    if let Some(placements) = placements.filter(|p| !p.is_empty()) {
        parsed.layout = Some(Layout::new(placements));
        parsed.parse_stage_reached = ParseStage::LayoutExtracted;
    }
    parsed.records = Some(records);
    parsed
}

fn offset_in(base: &str, part: &str) -> usize {
    part.as_ptr() as usize - base.as_ptr() as usize
}

/// Parses the answer body into records with spans relative to `answer`.
/// Returns `None` unless the body is a JSON object or an array of objects.
fn parse_answer(answer: &str) -> Option<Vec<RawRecord>> {
    let body = answer.trim();
    let value: &RawValue = serde_json::from_str(body).ok()?;
    let objects: Vec<&RawValue> = match value.get().as_bytes().first()? {
        b'{' => vec![value],
        b'[' => serde_json::from_str(value.get()).ok()?,
        _ => return None,
    };
    objects
        .into_iter()
        .map(|obj| {
            let fields: HashMap<String, &RawValue> = serde_json::from_str(obj.get()).ok()?;
            let object_id = fields
                .get("new_object_id")
                .and_then(|v| serde_json::from_str::<String>(v.get()).ok());
            let mut rec = RawRecord {
                object_id,
                coords: [None; 3],
                spans: [None; 3],
            };
            for axis in Axis::ALL {
                let Some(raw) = fields.get(axis.key()) else { continue };
                let lit = raw.get();
                if !lit.starts_with(|c: char| c == '-' || c.is_ascii_digit()) {
                    continue;
                }
                if let Some(v) = serde_json::from_str::<f64>(lit).ok().filter(|v| v.is_finite()) {
                    let start = offset_in(answer, lit);
                    rec.coords[axis.index()] = Some(v);
                    rec.spans[axis.index()] = Some((start, start + lit.len()));
                }
            }
            Some(rec)
        })
        .collect()
}

/// Serializes a reasoning trace and layout into the roll-out text convention.
pub fn render_rollout(think: &str, layout: &Layout) -> String {
    let answer = serde_json::to_string(&layout.placements).expect("placements serialize");
    format!("{THINK_OPEN}\n{think}\n{THINK_CLOSE}\n{ANSWER_OPEN}\n{answer}\n{ANSWER_CLOSE}")
}

//! Graded structural reward for a roll-out.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::layout::SceneTask;
use crate::parse::{ParseStage, ParsedRollOut};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormatCheck {
    TagStructure,
    JsonParse,
    ObjectCount,
    NameAlignment,
    CoordinateValidity,
    None,
}

impl FormatCheck {
    /// Reward level attached to failing this check.
    pub fn score(self) -> f64 {
        match self {
            FormatCheck::TagStructure => 0.0,
            FormatCheck::JsonParse => 0.1,
            FormatCheck::ObjectCount | FormatCheck::NameAlignment | FormatCheck::CoordinateValidity => 0.5,
            FormatCheck::None => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FormatScore {
    pub score: f64,
    pub failed_check: FormatCheck,
}

impl FormatScore {
    fn from_check(check: FormatCheck) -> Self {
        Self {
            score: check.score(),
            failed_check: check,
        }
    }

    pub fn is_full_match(&self) -> bool {
        self.failed_check == FormatCheck::None
    }
}

/// Applies the checks in order; the first failure decides the score.
pub fn format_reward(parsed: &ParsedRollOut, task: &SceneTask) -> FormatScore {
    FormatScore::from_check(first_failure(parsed, task))
}

fn first_failure(parsed: &ParsedRollOut, task: &SceneTask) -> FormatCheck {
    match parsed.parse_stage_reached {
        ParseStage::NoTags => return FormatCheck::TagStructure,
        ParseStage::TagsOnly => return FormatCheck::JsonParse,
        ParseStage::JsonParsed | ParseStage::LayoutExtracted => {}
    }
    let records = parsed.records.as_deref().unwrap_or_default();

    if records.len() != task.objects.len() {
        return FormatCheck::ObjectCount;
    }

    let expected: HashSet<&str> = task.objects.iter().map(|o| o.id.as_str()).collect();
    let mut seen = HashSet::new();
    for rec in records {
        let Some(id) = rec.object_id.as_deref() else {
            return FormatCheck::NameAlignment;
        };
        if !expected.contains(id) || !seen.insert(id) {
            return FormatCheck::NameAlignment;
        }
    }

    if records.iter().any(|r| r.coords.iter().any(Option::is_none)) {
        return FormatCheck::CoordinateValidity;
    }
    FormatCheck::None
}

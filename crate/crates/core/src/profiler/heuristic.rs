//! Keyword-based estimator for queries with no hidden truth and no endpoint.

use super::answer::render_answer;
use super::{Estimator, FeedbackLedger, ProfileField, ProfilerError, ProfilerOutput};
use crate::mapping::{IntRange, QueryProfile};
use crate::types::{DatasetMeta, QueryRecord};
use std::collections::BTreeMap;

const JOINT_CUES: &[&str] = &[
    "compare",
    "comparison",
    "same",
    "different",
    "difference",
    "both",
    "highest",
    "lowest",
    "most",
    "least",
    "trend",
    "change",
    "between",
    "versus",
    "vs",
    "total",
    "sum",
    "average",
    "increase",
    "decrease",
    "rank",
    "largest",
    "smallest",
    "combined",
    "overall",
];

const COMPLEX_CUES: &[&str] = &[
    "why",
    "how",
    "reason",
    "reasons",
    "explain",
    "analyze",
    "analyse",
    "summarize",
    "summarise",
    "impact",
    "cause",
    "causes",
    "evaluate",
    "discuss",
    "describe",
    "implications",
];

const NUMBER_WORDS: &[(&str, u32)] = &[
    ("one", 1),
    ("two", 2),
    ("three", 3),
    ("four", 4),
    ("five", 5),
    ("six", 6),
    ("seven", 7),
    ("eight", 8),
    ("nine", 9),
    ("ten", 10),
    ("both", 2),
    ("pair", 2),
];

const CUED: f64 = 0.95;
const UNCUED: f64 = 0.90;

/// Rule-of-thumb profiler over the query wording.
///
/// Counts in the text ("the first three quarters") set the number of pieces,
/// comparison words imply joint reasoning and why/how questions are complex.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HeuristicEstimator;

impl HeuristicEstimator {
    pub fn profile_text(&self, text: &str) -> ProfilerOutput {
        let lower = text.to_lowercase();
        let words: Vec<&str> = lower.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).collect();
        let has = |cues: &[&str]| words.iter().any(|w| cues.contains(w));

        let counted = words
            .iter()
            .filter_map(|w| {
                NUMBER_WORDS
                    .iter()
                    .find(|(n, _)| n == w)
                    .map(|(_, v)| *v)
                    .or_else(|| w.parse::<u32>().ok().filter(|v| (2..=10).contains(v)))
            })
            .max();
        let joint_cue = has(JOINT_CUES);
        // Items listed as "A, B, and C" each need their own lookup.
        let listed = if joint_cue { lower.matches(',').count() as u32 + 1 } else { 1 };
        let pieces = counted.unwrap_or(1).max(listed).clamp(1, 10);

        let needs_joint_reasoning = joint_cue || pieces > 1;
        let complexity_high = has(COMPLEX_CUES);
        let summary = if complexity_high { IntRange::new(80, 160) } else { IntRange::new(30, 80) };

        let per_field_confidence: BTreeMap<ProfileField, f64> = [
            (ProfileField::Complexity, if complexity_high { CUED } else { UNCUED }),
            (ProfileField::JointReasoning, if joint_cue { CUED } else { UNCUED }),
            (ProfileField::Pieces, if counted.is_some() { CUED } else { UNCUED }),
            (ProfileField::SummaryRange, UNCUED),
        ]
        .into();
        let confidence = per_field_confidence.values().copied().fold(1.0, f64::min);
        ProfilerOutput {
            profile: QueryProfile {
                complexity_high,
                needs_joint_reasoning,
                pieces_required: pieces,
                summary_len_range: summary,
                confidence,
            },
            raw_text: render_answer(complexity_high, needs_joint_reasoning, pieces, summary),
            per_field_confidence,
            clamped: Vec::new(),
        }
    }
}

impl Estimator for HeuristicEstimator {
    fn name(&self) -> &'static str {
        "heuristic"
    }

    fn estimate(
        &self,
        query: &QueryRecord,
        _meta: &DatasetMeta,
        _feedback: &FeedbackLedger,
    ) -> Result<ProfilerOutput, ProfilerError> {
        Ok(self.profile_text(&query.text))
    }
}

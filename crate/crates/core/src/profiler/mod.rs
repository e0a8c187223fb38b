//! Query profiling: pluggable estimators, confidence gating and the feedback
//! ledger that is fed back into remote profiler prompts.

mod answer;
mod feedback;
mod gate;
mod heuristic;
mod mock;
mod prompt;
mod remote;

pub use answer::{parse_answer, render_answer, ParsedAnswer};
pub use feedback::{FeedbackEntry, FeedbackLedger, FEEDBACK_CAPACITY, FEEDBACK_PERIOD, GOLDEN_CONFIG};
pub use gate::{gate_profile, GateDecision, RecentSpaceWindow, DEFAULT_GATE_THRESHOLD, RECENT_WINDOW};
pub use heuristic::HeuristicEstimator;
pub use mock::{mock_estimate, profile_from_truth, MockEstimator, NoiseParams, CLEAN_CONFIDENCE};
pub use prompt::{render_prompt, PROFILE_PROMPT_TEMPLATE};
pub use remote::{RemoteEstimator, RemoteSettings, API_KEY_ENV};

use crate::mapping::QueryProfile;
use crate::types::{DatasetMeta, QueryRecord};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::ops::Range;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileField {
    Complexity,
    JointReasoning,
    Pieces,
    SummaryRange,
}

impl ProfileField {
    pub const ALL: [ProfileField; 4] =
        [ProfileField::Complexity, ProfileField::JointReasoning, ProfileField::Pieces, ProfileField::SummaryRange];
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProfilerError {
    #[error("profiler endpoint unavailable: {0}")]
    EstimatorUnavailable(String),
    #[error("unparseable profiler answer: {0}")]
    UnparseableAnswer(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfilerOutput {
    pub profile: QueryProfile,
    pub raw_text: String,
    pub per_field_confidence: BTreeMap<ProfileField, f64>,
    /// Fields clamped into their domain while parsing.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub clamped: Vec<ProfileField>,
}

impl ProfilerOutput {
    /// Builds an output from a raw answer; the profile confidence is the
    /// minimum over the per-field confidences.
    pub fn from_answer(
        raw_text: String,
        per_field_confidence: BTreeMap<ProfileField, f64>,
    ) -> Result<Self, ProfilerError> {
        let parsed = parse_answer(&raw_text)?;
        Ok(Self::from_parsed(raw_text, &parsed, per_field_confidence))
    }

    pub(crate) fn from_parsed(
        raw_text: String,
        parsed: &ParsedAnswer,
        mut per_field_confidence: BTreeMap<ProfileField, f64>,
    ) -> Self {
        for field in ProfileField::ALL {
            let c = per_field_confidence.entry(field).or_insert(1.0);
            *c = c.clamp(0.0, 1.0);
        }
        let confidence = per_field_confidence.values().copied().fold(1.0, f64::min);
        ProfilerOutput {
            profile: QueryProfile {
                complexity_high: parsed.complexity_high,
                needs_joint_reasoning: parsed.needs_joint_reasoning,
                pieces_required: parsed.pieces_required,
                summary_len_range: parsed.summary_len_range,
                confidence,
            },
            raw_text,
            per_field_confidence,
            clamped: parsed.clamped.clone(),
        }
    }
}

/// A token of generated text and its log-probability.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

/// Per-field confidence: `exp(mean log-prob)` over tokens overlapping the
/// field's value. Fields without overlapping tokens get 1.0.
pub fn field_confidences(
    spans: &[(ProfileField, Range<usize>)],
    tokens: &[TokenLogprob],
) -> BTreeMap<ProfileField, f64> {
    let mut offsets = Vec::with_capacity(tokens.len());
    let mut pos = 0usize;
    for t in tokens {
        offsets.push(pos..pos + t.token.len());
        pos += t.token.len();
    }
    ProfileField::ALL
        .iter()
        .map(|&field| {
            let conf = spans
                .iter()
                .find(|(f, _)| *f == field)
                .map(|(_, span)| {
                    let lps: Vec<f64> = tokens
                        .iter()
                        .zip(&offsets)
                        .filter(|(_, r)| r.start < span.end && span.start < r.end)
                        .map(|(t, _)| t.logprob)
                        .collect();
                    if lps.is_empty() {
                        1.0
                    } else {
                        (lps.iter().sum::<f64>() / lps.len() as f64).exp()
                    }
                })
                .unwrap_or(1.0);
            (field, conf.clamp(0.0, 1.0))
        })
        .collect()
}

/// Anything that can estimate a query profile.
pub trait Estimator: Send + Sync {
    fn name(&self) -> &'static str;

    fn estimate(
        &self,
        query: &QueryRecord,
        meta: &DatasetMeta,
        feedback: &FeedbackLedger,
    ) -> Result<ProfilerOutput, ProfilerError>;
}

/// Runs the estimator and checks the profile it returns.
pub fn profile_query(
    estimator: &dyn Estimator,
    query: &QueryRecord,
    meta: &DatasetMeta,
    feedback: &FeedbackLedger,
) -> Result<ProfilerOutput, ProfilerError> {
    let out = estimator.estimate(query, meta, feedback)?;
    if !out.profile.is_valid() {
        return Err(ProfilerError::UnparseableAnswer(format!(
            "{} produced an out-of-domain profile",
            estimator.name()
        )));
    }
    Ok(out)
}

/// Stable 64-bit FNV-1a, used to derive per-query random streams.
pub(crate) fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

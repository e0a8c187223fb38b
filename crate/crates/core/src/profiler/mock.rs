//! Seeded test double for the LLM profiler.
//!
//! Starts from a query's hidden truth, perturbs each field with its own
//! probability and reports low confidence on the fields it perturbed.

use super::answer::render_answer;
use super::heuristic::HeuristicEstimator;
use super::{fnv1a, Estimator, FeedbackLedger, ProfileField, ProfilerError, ProfilerOutput};
use crate::mapping::{IntRange, QueryProfile};
use crate::types::{ConfigError, DatasetMeta, QueryRecord, TrueProfile};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Confidence the mock attaches to fields it left untouched.
pub const CLEAN_CONFIDENCE: f64 = 0.99;

/// Per-field perturbation probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseParams {
    #[serde(default)]
    pub flip_joint: f64,
    #[serde(default)]
    pub flip_complexity: f64,
    /// Probability of moving `pieces` by one.
    #[serde(default)]
    pub pieces_shift: f64,
    /// Probability of moving the summary range endpoints.
    #[serde(default)]
    pub summary_shift: f64,
    #[serde(default = "default_summary_shift_tokens")]
    pub summary_shift_tokens: u32,
    /// Width of the summary range reported for a clean field.
    #[serde(default = "default_summary_span")]
    pub summary_span: u32,
    /// Perturbed fields report a confidence drawn from `[low_confidence_min, 0.9)`.
    #[serde(default = "default_low_confidence_min")]
    pub low_confidence_min: f64,
}

fn default_summary_shift_tokens() -> u32 {
    30
}

fn default_summary_span() -> u32 {
    40
}

fn default_low_confidence_min() -> f64 {
    0.5
}

impl NoiseParams {
    pub fn none() -> Self {
        NoiseParams {
            flip_joint: 0.0,
            flip_complexity: 0.0,
            pieces_shift: 0.0,
            summary_shift: 0.0,
            summary_shift_tokens: default_summary_shift_tokens(),
            summary_span: default_summary_span(),
            low_confidence_min: default_low_confidence_min(),
        }
    }

    /// Same probability on every field.
    pub fn uniform(p: f64) -> Self {
        NoiseParams { flip_joint: p, flip_complexity: p, pieces_shift: p, summary_shift: p, ..Self::none() }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, p) in [
            ("flip_joint", self.flip_joint),
            ("flip_complexity", self.flip_complexity),
            ("pieces_shift", self.pieces_shift),
            ("summary_shift", self.summary_shift),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(ConfigError::Invalid(format!("noise.{name} = {p} outside [0,1]")));
            }
        }
        if !(0.0..0.9).contains(&self.low_confidence_min) {
            return Err(ConfigError::Invalid("noise.low_confidence_min must lie in [0, 0.9)".into()));
        }
        Ok(())
    }
}

impl Default for NoiseParams {
    /// Roughly nine in ten profiles come back untouched.
    fn default() -> Self {
        NoiseParams { flip_joint: 0.02, flip_complexity: 0.02, pieces_shift: 0.03, summary_shift: 0.02, ..Self::none() }
    }
}

/// The profile a perfect estimator reports for `truth`.
pub fn profile_from_truth(truth: &TrueProfile, summary_span: u32) -> QueryProfile {
    let low = truth.required_summary_len.clamp(TrueProfile::SUMMARY_MIN, TrueProfile::SUMMARY_MAX);
    let high = low.saturating_add(summary_span).min(TrueProfile::SUMMARY_MAX);
    QueryProfile {
        complexity_high: truth.complexity_high,
        needs_joint_reasoning: truth.needs_joint_reasoning,
        pieces_required: truth.pieces_required.clamp(TrueProfile::PIECES_MIN, TrueProfile::PIECES_MAX),
        summary_len_range: IntRange::new(low, high),
        confidence: CLEAN_CONFIDENCE,
    }
}

/// One seeded draw of a noisy profile around `truth`.
pub fn mock_estimate(truth: &TrueProfile, noise: &NoiseParams, seed: u64) -> ProfilerOutput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clean = profile_from_truth(truth, noise.summary_span);

    // Draw every variate unconditionally so the stream layout is fixed.
    let mut draw = |p: f64| -> (bool, f64, bool) {
        let hit = rng.random::<f64>() < p;
        let conf = rng.random_range(noise.low_confidence_min..0.9);
        let up = rng.random::<bool>();
        (hit, conf, up)
    };
    let joint = draw(noise.flip_joint);
    let complexity = draw(noise.flip_complexity);
    let pieces = draw(noise.pieces_shift);
    let summary = draw(noise.summary_shift);

    let needs_joint_reasoning = clean.needs_joint_reasoning ^ joint.0;
    let complexity_high = clean.complexity_high ^ complexity.0;

    let mut pieces_required = clean.pieces_required;
    if pieces.0 {
        pieces_required = match (pieces.2, pieces_required) {
            (true, p) if p < TrueProfile::PIECES_MAX => p + 1,
            (_, p) if p > TrueProfile::PIECES_MIN => p - 1,
            (_, p) => p + 1,
        };
    }

    let mut summary_len_range = clean.summary_len_range;
    if summary.0 {
        let s = noise.summary_shift_tokens.max(1);
        let (lo, hi) = (summary_len_range.low, summary_len_range.high);
        // Either widen/narrow at the top or shift the whole range down.
        let (lo, hi) =
            if summary.2 { (lo, hi.saturating_add(s)) } else { (lo.saturating_sub(s), hi.saturating_sub(s)) };
        let lo = lo.clamp(TrueProfile::SUMMARY_MIN, TrueProfile::SUMMARY_MAX);
        let hi = hi.clamp(lo, TrueProfile::SUMMARY_MAX);
        summary_len_range = IntRange::new(lo, hi);
    }

    let field_conf = |hit: (bool, f64, bool)| if hit.0 { hit.1 } else { CLEAN_CONFIDENCE };
    let per_field_confidence: BTreeMap<ProfileField, f64> = [
        (ProfileField::Complexity, field_conf(complexity)),
        (ProfileField::JointReasoning, field_conf(joint)),
        (ProfileField::Pieces, field_conf(pieces)),
        (ProfileField::SummaryRange, field_conf(summary)),
    ]
    .into();
    let confidence = per_field_confidence.values().copied().fold(1.0, f64::min);

    ProfilerOutput {
        profile: QueryProfile {
            complexity_high,
            needs_joint_reasoning,
            pieces_required,
            summary_len_range,
            confidence,
        },
        raw_text: render_answer(complexity_high, needs_joint_reasoning, pieces_required, summary_len_range),
        per_field_confidence,
        clamped: Vec::new(),
    }
}

/// Mock estimator keyed by a run seed; each query gets its own stream.
///
/// Queries without a hidden truth are profiled by [`HeuristicEstimator`].
#[derive(Debug, Clone, PartialEq)]
pub struct MockEstimator {
    pub noise: NoiseParams,
    pub seed: u64,
}

impl MockEstimator {
    pub fn new(noise: NoiseParams, seed: u64) -> Self {
        MockEstimator { noise, seed }
    }

    pub fn query_seed(&self, query: &QueryRecord) -> u64 {
        self.seed ^ fnv1a(&query.id)
    }
}

impl Estimator for MockEstimator {
    fn name(&self) -> &'static str {
        "mock"
    }

    fn estimate(
        &self,
        query: &QueryRecord,
        meta: &DatasetMeta,
        feedback: &FeedbackLedger,
    ) -> Result<ProfilerOutput, ProfilerError> {
        match &query.hidden_truth {
            Some(truth) => Ok(mock_estimate(truth, &self.noise, self.query_seed(query))),
            None => HeuristicEstimator.estimate(query, meta, feedback),
        }
    }
}

//! Periodic feedback examples for the profiler.

use super::answer::render_answer;
use crate::mapping::QueryProfile;
use crate::types::{QueryRecord, RagConfig, SynthesisMethod};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

/// A feedback example is recorded once every this many queries.
pub const FEEDBACK_PERIOD: u64 = 30;

/// Only the most recent examples are kept.
pub const FEEDBACK_CAPACITY: usize = 4;

/// The most resource-hungry configuration, used to produce reference answers.
pub const GOLDEN_CONFIG: RagConfig =
    RagConfig { method: SynthesisMethod::MapReduce, num_chunks: 30, intermediate_length: Some(300) };

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEntry {
    pub query: String,
    pub golden_answer: String,
    /// Profile the estimator should have produced, when known.
    pub target_profile: Option<QueryProfile>,
}

impl FeedbackEntry {
    pub(crate) fn render(&self) -> String {
        let mut s = format!("Query: {}\nMost accurate answer: {}\n", self.query, self.golden_answer);
        if let Some(p) = &self.target_profile {
            s.push_str(&render_answer(
                p.complexity_high,
                p.needs_joint_reasoning,
                p.pieces_required,
                p.summary_len_range,
            ));
        }
        s
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeedbackLedger {
    entries: VecDeque<FeedbackEntry>,
    query_counter: u64,
}

impl FeedbackLedger {
    pub fn entries(&self) -> impl Iterator<Item = &FeedbackEntry> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn query_counter(&self) -> u64 {
        self.query_counter
    }

    pub(crate) fn push(&mut self, entry: FeedbackEntry) {
        if self.entries.len() == FEEDBACK_CAPACITY {
            self.entries.pop_front();
        }
        self.entries.push_back(entry);
    }

    /// Counts `query` and, on every `FEEDBACK_PERIOD`-th query, records an
    /// example. `golden_answer` is only invoked when an entry is recorded.
    /// Returns whether an entry was appended.
    pub fn maybe_record_feedback(
        &mut self,
        query: &QueryRecord,
        golden_answer: impl FnOnce() -> String,
        target_profile: Option<QueryProfile>,
    ) -> bool {
        self.query_counter += 1;
        if !self.query_counter.is_multiple_of(FEEDBACK_PERIOD) {
            return false;
        }
        self.push(FeedbackEntry { query: query.text.clone(), golden_answer: golden_answer(), target_profile });
        true
    }
}

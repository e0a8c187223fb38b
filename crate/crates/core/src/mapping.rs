//! Rule-based mapping from a query profile to a pruned configuration space,
//! and enumeration of the concrete candidates inside it.

use crate::memory::{Admission, MemoryModel};
use crate::types::{RagConfig, SynthesisMethod, DEFAULT_MAX_CHUNKS};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

/// Inclusive integer interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IntRange {
    pub low: u32,
    pub high: u32,
}

impl IntRange {
    pub fn new(low: u32, high: u32) -> Self {
        debug_assert!(low <= high, "empty range [{low}, {high}]");
        IntRange { low, high }
    }

    pub fn contains(&self, v: u32) -> bool {
        self.low <= v && v <= self.high
    }

    pub fn hull(&self, other: &IntRange) -> IntRange {
        IntRange { low: self.low.min(other.low), high: self.high.max(other.high) }
    }

    /// `low, low+step, ...` and always `high` itself.
    pub fn stepped(&self, step: u32) -> Vec<u32> {
        let step = step.max(1);
        let mut out: Vec<u32> = (self.low..=self.high).step_by(step as usize).collect();
        if out.last() != Some(&self.high) {
            out.push(self.high);
        }
        out
    }

    pub fn count(&self, step: u32) -> usize {
        self.stepped(step).len()
    }
}

impl std::fmt::Display for IntRange {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}, {}]", self.low, self.high)
    }
}

/// The profiler's view of a query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryProfile {
    pub complexity_high: bool,
    pub needs_joint_reasoning: bool,
    pub pieces_required: u32,
    pub summary_len_range: IntRange,
    pub confidence: f64,
}

impl QueryProfile {
    pub fn is_valid(&self) -> bool {
        (1..=10).contains(&self.pieces_required)
            && self.summary_len_range.low <= self.summary_len_range.high
            && self.summary_len_range.low >= 30
            && self.summary_len_range.high <= 200
            && (0.0..=1.0).contains(&self.confidence)
    }
}

/// Narrowed knob ranges for one query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrunedConfigSpace {
    pub synthesis_methods: BTreeSet<SynthesisMethod>,
    pub num_chunks_range: IntRange,
    /// Present iff map_reduce is among the methods.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intermediate_length_range: Option<IntRange>,
}

impl PrunedConfigSpace {
    pub fn new(
        methods: impl IntoIterator<Item = SynthesisMethod>,
        num_chunks_range: IntRange,
        intermediate_length_range: Option<IntRange>,
    ) -> Self {
        let synthesis_methods: BTreeSet<_> = methods.into_iter().collect();
        let intermediate_length_range =
            if synthesis_methods.contains(&SynthesisMethod::MapReduce) { intermediate_length_range } else { None };
        PrunedConfigSpace { synthesis_methods, num_chunks_range, intermediate_length_range }
    }

    /// Whether `cfg` lies inside every knob range of this space.
    pub fn contains(&self, cfg: &RagConfig) -> bool {
        if !self.synthesis_methods.contains(&cfg.method) || !self.num_chunks_range.contains(cfg.num_chunks) {
            return false;
        }
        match cfg.method {
            SynthesisMethod::MapReduce => matches!(
                (self.intermediate_length_range, cfg.intermediate_length),
                (Some(r), Some(len)) if r.contains(len)
            ),
            _ => true,
        }
    }

    /// Union of method sets and interval hulls of the knob ranges.
    pub fn hull<'a>(spaces: impl IntoIterator<Item = &'a PrunedConfigSpace>) -> Option<PrunedConfigSpace> {
        let mut iter = spaces.into_iter();
        let mut acc = iter.next()?.clone();
        for s in iter {
            acc.synthesis_methods.extend(s.synthesis_methods.iter().copied());
            acc.num_chunks_range = acc.num_chunks_range.hull(&s.num_chunks_range);
            acc.intermediate_length_range = match (acc.intermediate_length_range, s.intermediate_length_range) {
                (Some(a), Some(b)) => Some(a.hull(&b)),
                (a, b) => a.or(b),
            };
        }
        Some(acc)
    }
}

impl std::fmt::Display for PrunedConfigSpace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let methods: Vec<&str> = self.synthesis_methods.iter().map(|m| m.as_str()).collect();
        write!(f, "{{{}}} chunks {}", methods.join(", "), self.num_chunks_range)?;
        if let Some(r) = self.intermediate_length_range {
            write!(f, " interlen {r}")?;
        }
        Ok(())
    }
}

/// Applies the three-branch synthesis rule and the `[n, 3n]` chunk rule.
pub fn map_profile(profile: &QueryProfile, max_chunks: u32) -> PrunedConfigSpace {
    let methods: &[SynthesisMethod] = if !profile.needs_joint_reasoning {
        &[SynthesisMethod::MapRerank]
    } else if !profile.complexity_high {
        &[SynthesisMethod::Stuff]
    } else {
        &[SynthesisMethod::Stuff, SynthesisMethod::MapReduce]
    };
    let max_chunks = max_chunks.max(1);
    let n = profile.pieces_required.max(1);
    let low = n.min(max_chunks);
    let high = n.saturating_mul(3).clamp(low, max_chunks);
    PrunedConfigSpace::new(methods.iter().copied(), IntRange::new(low, high), Some(profile.summary_len_range))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnumGranularity {
    #[serde(default = "default_chunk_step")]
    pub chunk_step: u32,
    #[serde(default = "default_interlen_step")]
    pub interlen_step: u32,
}

fn default_chunk_step() -> u32 {
    1
}

fn default_interlen_step() -> u32 {
    10
}

impl Default for EnumGranularity {
    fn default() -> Self {
        EnumGranularity { chunk_step: default_chunk_step(), interlen_step: default_interlen_step() }
    }
}

/// Every knob combination of `space`, in method / chunk / length order.
pub fn enumerate_configs(space: &PrunedConfigSpace, granularity: EnumGranularity) -> Vec<RagConfig> {
    let chunks = space.num_chunks_range.stepped(granularity.chunk_step);
    let mut out = Vec::new();
    for &method in &space.synthesis_methods {
        match method {
            SynthesisMethod::MapReduce => {
                let Some(lens) = space.intermediate_length_range else { continue };
                let lens = lens.stepped(granularity.interlen_step);
                for &n in &chunks {
                    for &len in &lens {
                        out.push(RagConfig::map_reduce(n, len));
                    }
                }
            }
            _ => out.extend(chunks.iter().map(|&n| RagConfig::new(method, n, None))),
        }
    }
    out
}

/// A config together with its whole-plan memory requirement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub config: RagConfig,
    pub bytes: u64,
}

/// Candidates of `space` for one query, ascending by memory requirement.
///
/// Configs whose calls would not fit the model context are left out. Ties keep
/// the method / chunk / length enumeration order.
pub fn enumerate_candidates(
    space: &PrunedConfigSpace,
    granularity: EnumGranularity,
    memory: &MemoryModel,
    query_tokens: u32,
) -> Vec<Candidate> {
    let mut out: Vec<Candidate> = enumerate_configs(space, granularity)
        .into_iter()
        .filter_map(|config| {
            memory.requirement(query_tokens, &config, Admission::Whole).ok().map(|bytes| Candidate { config, bytes })
        })
        .collect();
    out.sort_by_key(|c| c.bytes);
    out
}

/// Shape of the unpruned grid: methods x chunk values x length values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FullSpaceBounds {
    pub num_methods: u32,
    pub num_chunks_range: IntRange,
    pub intermediate_length_range: Option<IntRange>,
}

impl Default for FullSpaceBounds {
    fn default() -> Self {
        FullSpaceBounds {
            num_methods: 3,
            num_chunks_range: IntRange::new(1, DEFAULT_MAX_CHUNKS),
            intermediate_length_range: Some(IntRange::new(30, 200)),
        }
    }
}

impl FullSpaceBounds {
    pub fn cardinality(&self, granularity: EnumGranularity) -> usize {
        let lens = self.intermediate_length_range.map_or(1, |r| r.count(granularity.interlen_step));
        self.num_methods as usize * self.num_chunks_range.count(granularity.chunk_step) * lens
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MappingError {
    #[error("pruned space has no candidates")]
    EmptyPrunedSpace,
}

/// How many times smaller the pruned space is than the full grid.
pub fn space_reduction_factor(
    space: &PrunedConfigSpace,
    bounds: &FullSpaceBounds,
    granularity: EnumGranularity,
) -> Result<f64, MappingError> {
    let pruned = enumerate_configs(space, granularity).len();
    if pruned == 0 {
        return Err(MappingError::EmptyPrunedSpace);
    }
    Ok(bounds.cardinality(granularity) as f64 / pruned as f64)
}

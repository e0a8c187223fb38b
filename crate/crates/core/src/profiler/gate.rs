//! Confidence gating with a fallback to recently accepted spaces.

use super::ProfilerOutput;
use crate::mapping::{map_profile, PrunedConfigSpace};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

pub const DEFAULT_GATE_THRESHOLD: f64 = 0.90;

/// Number of accepted spaces remembered for low-confidence fallbacks.
pub const RECENT_WINDOW: usize = 10;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RecentSpaceWindow {
    spaces: VecDeque<PrunedConfigSpace>,
}

impl RecentSpaceWindow {
    pub fn push(&mut self, space: PrunedConfigSpace) {
        if self.spaces.len() == RECENT_WINDOW {
            self.spaces.pop_front();
        }
        self.spaces.push_back(space);
    }

    pub fn len(&self) -> usize {
        self.spaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spaces.is_empty()
    }

    pub fn hull(&self) -> Option<PrunedConfigSpace> {
        PrunedConfigSpace::hull(&self.spaces)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", content = "space", rename_all = "snake_case")]
pub enum GateDecision {
    UseProfile(PrunedConfigSpace),
    /// Hull of the recent window, or the configured default when it is empty.
    UseRecentFallback(PrunedConfigSpace),
}

impl GateDecision {
    pub fn space(&self) -> &PrunedConfigSpace {
        match self {
            GateDecision::UseProfile(s) | GateDecision::UseRecentFallback(s) => s,
        }
    }

    pub fn is_fallback(&self) -> bool {
        matches!(self, GateDecision::UseRecentFallback(_))
    }
}

/// Accepts the profile when its confidence reaches `threshold`, remembering
/// the resulting space; otherwise falls back without touching the window.
pub fn gate_profile(
    out: &ProfilerOutput,
    window: &mut RecentSpaceWindow,
    threshold: f64,
    default_space: &PrunedConfigSpace,
    max_chunks: u32,
) -> GateDecision {
    if out.profile.confidence >= threshold {
        let space = map_profile(&out.profile, max_chunks);
        window.push(space.clone());
        GateDecision::UseProfile(space)
    } else {
        GateDecision::UseRecentFallback(window.hull().unwrap_or_else(|| default_space.clone()))
    }
}

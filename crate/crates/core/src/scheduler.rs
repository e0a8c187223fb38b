//! Joint configuration selection and admission control.
//!
//! Queries wait in a FIFO queue. Each scheduling step first resumes deferred
//! calls of queries already in flight, then walks the queue head: the head
//! gets the largest in-space configuration that fits free KV memory, or a
//! cheaper out-of-space fallback, or it blocks the queue until memory frees.

use crate::mapping::{enumerate_candidates, Candidate, EnumGranularity, PrunedConfigSpace, QueryProfile};
use crate::memory::{CallKind, CallPlan, LlmCall, MemoryModel};
use crate::types::{QueryRecord, RagConfig, SynthesisMethod, ValidationError};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, VecDeque};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SchedulerError {
    #[error("unknown call {0:?}")]
    UnknownCall(CallId),
    #[error("query `{query}` cannot run with {config}: {source}")]
    InvalidFixedConfig { query: String, config: RagConfig, source: ValidationError },
}

/// How the configuration of a query is decided.
#[derive(Debug, Clone, PartialEq)]
pub enum Selection {
    /// Best fit inside the pruned space; the profile drives the fallback.
    Adaptive { space: PrunedConfigSpace, profile: QueryProfile },
    /// A static configuration, no pruning and no fallback.
    Fixed(RagConfig),
}

/// Largest-memory candidate that fits `free_bytes`.
///
/// `candidates` must be sorted ascending by bytes; among equal sizes the last
/// one wins.
pub fn best_fit_select(candidates: &[Candidate], free_bytes: u64) -> Option<Candidate> {
    let fitting = candidates.partition_point(|c| c.bytes <= free_bytes);
    fitting.checked_sub(1).map(|i| candidates[i])
}

/// Cheaper configuration used when nothing in the pruned space fits.
///
/// Single-fact queries get map_rerank, joint-reasoning queries get stuff, each
/// with as many chunks as fit. `None` means the query has to keep waiting.
pub fn fallback_config(
    profile: &QueryProfile,
    query_tokens: u32,
    free_bytes: u64,
    memory: &MemoryModel,
) -> Option<RagConfig> {
    let make = if profile.needs_joint_reasoning { RagConfig::stuff } else { RagConfig::map_rerank };
    let mut best = None;
    for k in 1..=memory.limits.max_chunks {
        let cfg = make(k);
        match memory.plan_calls(query_tokens, &cfg) {
            Ok(plan) if plan.total_bytes <= free_bytes => best = Some(cfg),
            _ => break,
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CallId {
    /// Admission sequence number of the owning query.
    pub slot: u64,
    /// Index into the query's call plan.
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Admission {
    pub query_id: String,
    pub slot: u64,
    pub chosen_config: RagConfig,
    pub admitted_calls: Vec<usize>,
    pub deferred_calls: Vec<usize>,
    pub is_fallback: bool,
    /// Deferred calls of an earlier admission being started.
    pub resumed: bool,
}

impl Admission {
    pub fn call_ids(&self) -> impl Iterator<Item = CallId> + '_ {
        self.admitted_calls.iter().map(|&index| CallId { slot: self.slot, index })
    }
}

/// What a finished call produced. Only the confidence matters for reranking.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CallOutput {
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryDone {
    pub slot: u64,
    pub query: QueryRecord,
    pub config: RagConfig,
    pub is_fallback: bool,
    /// Call whose output answers the query.
    pub selected_output: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CallState {
    Deferred,
    Running,
    Done,
}

#[derive(Debug, Clone)]
struct Inflight {
    query: QueryRecord,
    config: RagConfig,
    plan: CallPlan,
    is_fallback: bool,
    states: Vec<CallState>,
    outputs: Vec<CallOutput>,
}

impl Inflight {
    fn ready(&self, index: usize) -> bool {
        self.states[index] == CallState::Deferred
            && self.plan.calls[index].depends_on.iter().all(|&d| self.states[d] == CallState::Done)
    }

    fn deferred(&self) -> Vec<usize> {
        (0..self.states.len()).filter(|&i| self.states[i] == CallState::Deferred).collect()
    }

    fn selected_output(&self) -> usize {
        match self.config.method {
            SynthesisMethod::MapRerank => {
                let mut best = 0;
                for (i, out) in self.outputs.iter().enumerate() {
                    if out.confidence > self.outputs[best].confidence {
                        best = i;
                    }
                }
                best
            }
            _ => self.plan.calls.iter().position(|c| c.kind == CallKind::Reducer).unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone)]
struct Waiting {
    query: QueryRecord,
    selection: Selection,
    candidates: Option<Vec<Candidate>>,
}

#[derive(Debug, Clone)]
pub struct Scheduler {
    memory: MemoryModel,
    granularity: EnumGranularity,
    capacity: u64,
    used: u64,
    waiting: VecDeque<Waiting>,
    inflight: BTreeMap<u64, Inflight>,
    running: BTreeMap<CallId, u64>,
    next_slot: u64,
}

impl Scheduler {
    pub fn new(memory: MemoryModel, granularity: EnumGranularity, capacity_bytes: u64) -> Self {
        Scheduler {
            memory,
            granularity,
            capacity: capacity_bytes,
            used: 0,
            waiting: VecDeque::new(),
            inflight: BTreeMap::new(),
            running: BTreeMap::new(),
            next_slot: 0,
        }
    }

    pub fn memory(&self) -> &MemoryModel {
        &self.memory
    }

    pub fn capacity_bytes(&self) -> u64 {
        self.capacity
    }

    pub fn used_bytes(&self) -> u64 {
        self.used
    }

    pub fn free_bytes(&self) -> u64 {
        self.capacity - self.used
    }

    pub fn running_len(&self) -> usize {
        self.running.len()
    }

    pub fn waiting_len(&self) -> usize {
        self.waiting.len()
    }

    pub fn inflight_len(&self) -> usize {
        self.inflight.len()
    }

    pub fn is_idle(&self) -> bool {
        self.waiting.is_empty() && self.inflight.is_empty()
    }

    pub fn call_owner(&self, id: CallId) -> Option<&QueryRecord> {
        self.inflight.get(&id.slot).filter(|q| id.index < q.states.len()).map(|q| &q.query)
    }

    /// Query at the head of the waiting queue.
    pub fn head_query(&self) -> Option<&QueryRecord> {
        self.waiting.front().map(|w| &w.query)
    }

    pub fn call(&self, id: CallId) -> Option<&LlmCall> {
        self.inflight.get(&id.slot).and_then(|q| q.plan.calls.get(id.index))
    }

    /// Sum of running reservations, recomputed from scratch.
    pub fn reserved_bytes(&self) -> u64 {
        self.running.values().sum()
    }

    /// Appends a query to the tail of the waiting queue.
    pub fn submit(&mut self, query: QueryRecord, selection: Selection) -> Result<(), SchedulerError> {
        if let Selection::Fixed(cfg) = &selection {
            self.memory.plan_calls(query.query_token_len, cfg).map_err(|source| {
                SchedulerError::InvalidFixedConfig { query: query.id.clone(), config: *cfg, source }
            })?;
        }
        self.waiting.push_back(Waiting { query, selection, candidates: None });
        Ok(())
    }

    /// Admits as much work as currently fits.
    pub fn schedule_step(&mut self) -> Vec<Admission> {
        let mut out = Vec::new();

        // Deferred calls of queries already in flight go first.
        let slots: Vec<u64> = self.inflight.keys().copied().collect();
        for slot in slots {
            let mut admitted = Vec::new();
            let n = self.inflight[&slot].states.len();
            for index in 0..n {
                let q = &self.inflight[&slot];
                let bytes = q.plan.calls[index].kv_bytes;
                if q.ready(index) && bytes <= self.free_bytes() {
                    self.start(CallId { slot, index }, bytes);
                    admitted.push(index);
                }
            }
            if !admitted.is_empty() {
                let q = &self.inflight[&slot];
                out.push(Admission {
                    query_id: q.query.id.clone(),
                    slot,
                    chosen_config: q.config,
                    admitted_calls: admitted,
                    deferred_calls: q.deferred(),
                    is_fallback: q.is_fallback,
                    resumed: true,
                });
            }
        }

        // Then new queries, strictly in arrival order.
        while let Some(head) = self.waiting.front_mut() {
            let free = self.capacity - self.used;
            let decision = match &head.selection {
                Selection::Fixed(cfg) => {
                    let plan = self
                        .memory
                        .plan_calls(head.query.query_token_len, cfg)
                        .expect("fixed configs are validated on submit");
                    let first = plan.calls.iter().find(|c| c.is_independent()).map_or(0, |c| c.kv_bytes);
                    (first <= free).then_some((*cfg, false))
                }
                Selection::Adaptive { space, profile } => {
                    let candidates = head.candidates.get_or_insert_with(|| {
                        enumerate_candidates(space, self.granularity, &self.memory, head.query.query_token_len)
                    });
                    match best_fit_select(candidates, free) {
                        Some(c) => Some((c.config, false)),
                        None => fallback_config(profile, head.query.query_token_len, free, &self.memory)
                            .map(|cfg| (cfg, true)),
                    }
                }
            };
            let Some((config, is_fallback)) = decision else { break };
            let head = self.waiting.pop_front().expect("head exists");
            out.push(self.admit(head.query, config, is_fallback));
        }
        out
    }

    fn start(&mut self, id: CallId, bytes: u64) {
        self.used += bytes;
        self.running.insert(id, bytes);
        self.inflight.get_mut(&id.slot).expect("slot exists").states[id.index] = CallState::Running;
    }

    fn admit(&mut self, query: QueryRecord, config: RagConfig, is_fallback: bool) -> Admission {
        let plan = self.memory.plan_calls(query.query_token_len, &config).expect("selected configs have valid plans");
        let slot = self.next_slot;
        self.next_slot += 1;
        let n = plan.calls.len();
        self.inflight.insert(
            slot,
            Inflight {
                query,
                config,
                plan,
                is_fallback,
                states: vec![CallState::Deferred; n],
                outputs: vec![CallOutput::default(); n],
            },
        );
        let mut admitted = Vec::new();
        for index in 0..n {
            let q = &self.inflight[&slot];
            let call = &q.plan.calls[index];
            if call.is_independent() && call.kv_bytes <= self.free_bytes() {
                let bytes = call.kv_bytes;
                self.start(CallId { slot, index }, bytes);
                admitted.push(index);
            }
        }
        let q = &self.inflight[&slot];
        Admission {
            query_id: q.query.id.clone(),
            slot,
            chosen_config: config,
            admitted_calls: admitted,
            deferred_calls: q.deferred(),
            is_fallback,
            resumed: false,
        }
    }

    /// Releases a finished call. Returns the query once all its calls are done.
    pub fn on_call_complete(&mut self, id: CallId, output: CallOutput) -> Result<Option<QueryDone>, SchedulerError> {
        let bytes = self.running.remove(&id).ok_or(SchedulerError::UnknownCall(id))?;
        self.used -= bytes;
        let q = self.inflight.get_mut(&id.slot).ok_or(SchedulerError::UnknownCall(id))?;
        q.states[id.index] = CallState::Done;
        q.outputs[id.index] = output;
        if q.states.iter().all(|s| *s == CallState::Done) {
            let q = self.inflight.remove(&id.slot).expect("present");
            let selected_output = q.selected_output();
            return Ok(Some(QueryDone {
                slot: id.slot,
                query: q.query,
                config: q.config,
                is_fallback: q.is_fallback,
                selected_output,
            }));
        }
        Ok(None)
    }

    /// Whether the reducer (or any other dependent call) of `slot` may start.
    pub fn has_ready_calls(&self, slot: u64) -> bool {
        self.inflight.get(&slot).is_some_and(|q| (0..q.states.len()).any(|i| q.ready(i)))
    }
}

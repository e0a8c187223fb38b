//! Discrete-event simulation of the serving loop.
//!
//! Time advances over arrivals, profiler completions and LLM call
//! completions. Call latency follows a linear prefill/decode model fixed at
//! admission time, and answers are scored by a synthetic quality oracle.

use crate::mapping::{EnumGranularity, PrunedConfigSpace};
use crate::memory::{LlmCall, MemoryModel};
use crate::profiler::{
    fnv1a, gate_profile, profile_from_truth, profile_query, Estimator, FeedbackLedger, GateDecision, ProfilerError,
    RecentSpaceWindow, DEFAULT_GATE_THRESHOLD,
};
use crate::scheduler::{Admission, CallId, CallOutput, Scheduler, SchedulerError, Selection};
use crate::types::{ConfigError, RagConfig, SynthesisMethod, TrueProfile};
use crate::workload::Workload;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;
use thiserror::Error;

const RERANK_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
const QUALITY_SALT: u64 = 0xd1b5_4a32_d192_ed03;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("profiling `{query}` failed: {source}")]
    Profiler { query: String, source: ProfilerError },
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("query `{query}` can never be admitted with the configured capacity")]
    Stalled { query: String },
}

/// Linear latency model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostModel {
    pub prefill_secs_per_token: f64,
    pub decode_secs_per_token_base: f64,
    /// Relative decode slowdown added by each other running sequence.
    pub batch_slowdown_per_seq: f64,
    pub profiler_latency_secs: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            prefill_secs_per_token: 4e-4,
            decode_secs_per_token_base: 1e-2,
            batch_slowdown_per_seq: 0.002,
            profiler_latency_secs: 0.015,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("prefill_secs_per_token", self.prefill_secs_per_token),
            ("decode_secs_per_token_base", self.decode_secs_per_token_base),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::Invalid(format!("cost.{name} must be positive")));
            }
        }
        for (name, v) in [
            ("batch_slowdown_per_seq", self.batch_slowdown_per_seq),
            ("profiler_latency_secs", self.profiler_latency_secs),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ConfigError::Invalid(format!("cost.{name} must be nonnegative")));
            }
        }
        Ok(())
    }
}

/// Seconds a call takes when `concurrent_seqs` other sequences share the batch.
pub fn call_latency(call: &LlmCall, concurrent_seqs: usize, cost: &CostModel) -> f64 {
    let prefill = cost.prefill_secs_per_token * call.prompt_tokens as f64;
    let dilation = 1.0 + cost.batch_slowdown_per_seq * concurrent_seqs as f64;
    prefill + call.max_output_tokens as f64 * cost.decode_secs_per_token_base * dilation
}

/// Synthetic answer quality as a function of the config and the hidden truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QualityModel {
    pub base: f64,
    /// Joint-reasoning query answered chunk by chunk.
    pub w_joint: f64,
    /// Fewer chunks than pieces of information.
    pub w_under: f64,
    /// Chunks beyond three times the pieces needed.
    pub w_over: f64,
    /// Intermediate summaries shorter than required.
    pub w_len: f64,
    pub noise_sigma: f64,
}

impl Default for QualityModel {
    /// Missing evidence costs the most; a joint-reasoning query answered
    /// by independent rerank calls loses 35 points; padding up to the
    /// global ceiling costs 20 points.
    fn default() -> Self {
        QualityModel { base: 0.8, w_joint: 0.35, w_under: 1.0, w_over: 0.2, w_len: 0.3, noise_sigma: 0.05 }
    }
}

impl QualityModel {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.base) {
            return Err(ConfigError::Invalid("quality.base must lie in [0,1]".into()));
        }
        for (name, v) in [
            ("w_joint", self.w_joint),
            ("w_under", self.w_under),
            ("w_over", self.w_over),
            ("w_len", self.w_len),
            ("noise_sigma", self.noise_sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ConfigError::Invalid(format!("quality.{name} must be nonnegative")));
            }
        }
        Ok(())
    }
}

/// Score of answering a query with `truth` under `cfg`, clamped to [0,1].
///
/// One gaussian variate is drawn from `rng` on every call.
pub fn quality_of(
    cfg: &RagConfig,
    truth: &TrueProfile,
    model: &QualityModel,
    global_max_chunks: u32,
    rng: &mut impl Rng,
) -> f64 {
    let pieces = f64::from(truth.pieces_required.max(1));
    let chunks = f64::from(cfg.num_chunks);
    let mut score = model.base;
    if truth.needs_joint_reasoning && cfg.method == SynthesisMethod::MapRerank {
        score -= model.w_joint;
    }
    score -= model.w_under * (pieces - chunks).max(0.0) / pieces;
    score -= model.w_over * (chunks - 3.0 * pieces).max(0.0) / f64::from(global_max_chunks.max(1));
    if cfg.method == SynthesisMethod::MapReduce {
        let required = f64::from(truth.required_summary_len.max(1));
        let interlen = f64::from(cfg.intermediate_length.unwrap_or(0));
        score -= model.w_len * (required - interlen).max(0.0) / required;
    }
    let noise = Normal::new(0.0, model.noise_sigma).expect("sigma validated").sample(rng);
    (score + noise).clamp(0.0, 1.0)
}

/// How a query's configuration is decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    Adaptive,
    Fixed(RagConfig),
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::Adaptive => f.write_str("adaptive"),
            Policy::Fixed(cfg) => cfg.fmt(f),
        }
    }
}

impl FromStr for Policy {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "adaptive" {
            Ok(Policy::Adaptive)
        } else {
            s.parse().map(Policy::Fixed)
        }
    }
}

/// The nine static configurations compared against adaptation.
pub fn default_sweep_grid() -> Vec<RagConfig> {
    vec![
        RagConfig::map_rerank(3),
        RagConfig::map_rerank(10),
        RagConfig::stuff(2),
        RagConfig::stuff(5),
        RagConfig::stuff(10),
        RagConfig::stuff(20),
        RagConfig::map_reduce(5, 50),
        RagConfig::map_reduce(10, 100),
        RagConfig::map_reduce(20, 150),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateOutcome {
    /// Static policy, no profiling.
    Fixed,
    Profile,
    RecentFallback,
}

impl GateOutcome {
    pub fn is_fallback(self) -> bool {
        self == GateOutcome::RecentFallback
    }
}

/// One line of a report file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryResult {
    pub policy: String,
    pub id: String,
    pub arrival: f64,
    pub completion: f64,
    pub delay: f64,
    pub profiler_secs: f64,
    pub config: RagConfig,
    pub is_fallback: bool,
    pub gate: GateOutcome,
    pub confidence: Option<f64>,
    pub quality: Option<f64>,
    pub selected_output: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimReport {
    pub policy: String,
    /// In workload order.
    pub queries: Vec<QueryResult>,
}

impl SimReport {
    pub fn write_jsonl(&self, mut out: impl Write) -> io::Result<()> {
        for q in &self.queries {
            serde_json::to_writer(&mut out, q)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(input: impl BufRead) -> Result<Self, ConfigError> {
        let mut queries = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line.map_err(|e| ConfigError::Parse(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let q: QueryResult =
                serde_json::from_str(&line).map_err(|e| ConfigError::Parse(format!("report line {}: {e}", i + 1)))?;
            queries.push(q);
        }
        let policy = queries.first().map(|q| q.policy.clone()).unwrap_or_default();
        Ok(SimReport { policy, queries })
    }

    /// Completed queries per second of makespan; zero for an empty report.
    pub fn throughput(&self) -> f64 {
        crate::metrics::summarize(self).map_or(0.0, |s| s.throughput)
    }
}

/// One record of the admission trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Admit { time: f64, used_bytes: u64, admission: Admission },
    Complete { time: f64, used_bytes: u64, query_id: String, call: CallId },
}

pub fn write_trace_events(events: &[TraceEvent], mut out: impl Write) -> io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimStats {
    pub events: usize,
    pub peak_used_bytes: u64,
    pub max_window_len: usize,
    pub max_ledger_len: usize,
    /// Query counter values at which the feedback ledger grew.
    pub ledger_growth_at: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimRun {
    pub report: SimReport,
    pub trace: Vec<TraceEvent>,
    pub stats: SimStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSettings {
    pub capacity_bytes: u64,
    #[serde(default)]
    pub granularity: EnumGranularity,
    #[serde(default)]
    pub cost: CostModel,
    #[serde(default)]
    pub quality: QualityModel,
    #[serde(default = "default_threshold")]
    pub gate_threshold: f64,
    /// Space used by the gate when no profile has been accepted yet.
    pub default_space: PrunedConfigSpace,
    pub seed: u64,
}

fn default_threshold() -> f64 {
    DEFAULT_GATE_THRESHOLD
}

impl SimSettings {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.cost.validate()?;
        self.quality.validate()?;
        if !(0.0..=1.0).contains(&self.gate_threshold) {
            return Err(ConfigError::Invalid("gate_threshold must lie in [0,1]".into()));
        }
        if self.capacity_bytes == 0 {
            return Err(ConfigError::Invalid("capacity_bytes must be positive".into()));
        }
        if self.granularity.chunk_step == 0 || self.granularity.interlen_step == 0 {
            return Err(ConfigError::Invalid("granularity steps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum EventKind {
    Arrival(usize),
    ProfileDone(usize),
    CallDone(CallId),
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time.total_cmp(&other.time).then(self.seq.cmp(&other.seq))
    }
}

#[derive(Debug, Clone, Default)]
struct Progress {
    arrival: f64,
    gate: Option<GateOutcome>,
    confidence: Option<f64>,
    profile: Option<crate::profiler::ProfilerOutput>,
}

struct Engine<'a> {
    workload: &'a Workload,
    settings: &'a SimSettings,
    estimator: &'a dyn Estimator,
    policy: Policy,
    scheduler: Scheduler,
    window: RecentSpaceWindow,
    ledger: FeedbackLedger,
    heap: BinaryHeap<Reverse<Event>>,
    seq: u64,
    now: f64,
    progress: Vec<Progress>,
    index_of: HashMap<String, usize>,
    rngs: HashMap<usize, ChaCha8Rng>,
    results: Vec<Option<QueryResult>>,
    trace: Vec<TraceEvent>,
    stats: SimStats,
}

impl Engine<'_> {
    fn push(&mut self, time: f64, kind: EventKind) {
        self.heap.push(Reverse(Event { time, seq: self.seq, kind }));
        self.seq += 1;
    }

    /// Stream for the rerank confidences of one query.
    fn rerank_rng(&mut self, index: usize) -> &mut ChaCha8Rng {
        let seed = self.settings.seed ^ fnv1a(&self.workload.items[index].query.id) ^ RERANK_SALT;
        self.rngs.entry(index).or_insert_with(|| ChaCha8Rng::seed_from_u64(seed))
    }

    /// Quality noise depends only on the run seed and the query, so every
    /// policy sees the same draw for the same query.
    fn quality_rng(&self, index: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.settings.seed ^ fnv1a(&self.workload.items[index].query.id) ^ QUALITY_SALT)
    }

    fn handle(&mut self, kind: EventKind) -> Result<(), SimError> {
        match kind {
            EventKind::Arrival(i) => self.on_arrival(i)?,
            EventKind::ProfileDone(i) => self.on_profiled(i)?,
            EventKind::CallDone(id) => self.on_call_done(id)?,
        }
        self.schedule()
    }

    fn on_arrival(&mut self, i: usize) -> Result<(), SimError> {
        self.progress[i].arrival = self.now;
        let query = &self.workload.items[i].query;
        match self.policy {
            Policy::Fixed(cfg) => {
                self.progress[i].gate = Some(GateOutcome::Fixed);
                self.scheduler.submit(query.clone(), Selection::Fixed(cfg))?;
            }
            Policy::Adaptive => {
                let meta = &self.scheduler.memory().meta;
                let out = profile_query(self.estimator, query, meta, &self.ledger)
                    .map_err(|source| SimError::Profiler { query: query.id.clone(), source })?;
                let target = query.hidden_truth.map(|t| profile_from_truth(&t, 40));
                let grew =
                    self.ledger.maybe_record_feedback(query, || query.ground_truth.clone().unwrap_or_default(), target);
                if grew {
                    self.stats.ledger_growth_at.push(self.ledger.query_counter());
                }
                self.stats.max_ledger_len = self.stats.max_ledger_len.max(self.ledger.len());
                self.progress[i].profile = Some(out);
                let done = self.now + self.settings.cost.profiler_latency_secs;
                self.push(done, EventKind::ProfileDone(i));
            }
        }
        Ok(())
    }

    fn on_profiled(&mut self, i: usize) -> Result<(), SimError> {
        let out = self.progress[i].profile.take().expect("profiled before gating");
        let max_chunks = self.scheduler.memory().limits.max_chunks;
        let decision = gate_profile(
            &out,
            &mut self.window,
            self.settings.gate_threshold,
            &self.settings.default_space,
            max_chunks,
        );
        self.stats.max_window_len = self.stats.max_window_len.max(self.window.len());
        let p = &mut self.progress[i];
        p.confidence = Some(out.profile.confidence);
        p.gate = Some(if decision.is_fallback() { GateOutcome::RecentFallback } else { GateOutcome::Profile });
        let space = match decision {
            GateDecision::UseProfile(s) | GateDecision::UseRecentFallback(s) => s,
        };
        let query = self.workload.items[i].query.clone();
        self.scheduler.submit(query, Selection::Adaptive { space, profile: out.profile })?;
        Ok(())
    }

    fn on_call_done(&mut self, id: CallId) -> Result<(), SimError> {
        let query_id = self.scheduler_query_id(id)?;
        let index = self.index_of[&query_id];
        let confidence = self.rerank_rng(index).random::<f64>();
        let done = self.scheduler.on_call_complete(id, CallOutput { confidence })?;
        self.trace.push(TraceEvent::Complete {
            time: self.now,
            used_bytes: self.scheduler.used_bytes(),
            query_id,
            call: id,
        });
        let Some(done) = done else { return Ok(()) };

        let truth = done.query.hidden_truth;
        let global_max = self.scheduler.memory().limits.max_chunks;
        let quality_model = self.settings.quality;
        let quality =
            truth.map(|t| quality_of(&done.config, &t, &quality_model, global_max, &mut self.quality_rng(index)));
        self.rngs.remove(&index);
        let p = &self.progress[index];
        let profiler_secs = match p.gate {
            Some(GateOutcome::Fixed) | None => 0.0,
            Some(_) => self.settings.cost.profiler_latency_secs,
        };
        self.results[index] = Some(QueryResult {
            policy: self.policy.to_string(),
            id: done.query.id,
            arrival: p.arrival,
            completion: self.now,
            delay: self.now - p.arrival,
            profiler_secs,
            config: done.config,
            is_fallback: done.is_fallback,
            gate: p.gate.unwrap_or(GateOutcome::Fixed),
            confidence: p.confidence,
            quality,
            selected_output: done.selected_output,
        });
        if self.workload.sequential && index + 1 < self.workload.len() {
            self.push(self.now, EventKind::Arrival(index + 1));
        }
        Ok(())
    }

    fn scheduler_query_id(&self, id: CallId) -> Result<String, SimError> {
        self.scheduler.call_owner(id).map(|q| q.id.clone()).ok_or(SimError::Scheduler(SchedulerError::UnknownCall(id)))
    }

    fn schedule(&mut self) -> Result<(), SimError> {
        let admissions = self.scheduler.schedule_step();
        let others = self.scheduler.running_len().saturating_sub(1);
        for adm in admissions {
            for id in adm.call_ids() {
                let call = self.scheduler.call(id).expect("admitted call exists");
                let latency = call_latency(call, others, &self.settings.cost);
                self.push(self.now + latency, EventKind::CallDone(id));
            }
            self.trace.push(TraceEvent::Admit {
                time: self.now,
                used_bytes: self.scheduler.used_bytes(),
                admission: adm,
            });
        }
        if self.scheduler.running_len() == 0 && !self.scheduler.is_idle() {
            let query = self.scheduler.head_query().map(|q| q.id.clone()).unwrap_or_default();
            return Err(SimError::Stalled { query });
        }
        Ok(())
    }

    fn check_invariants(&mut self) -> Result<(), SimError> {
        let reserved = self.scheduler.reserved_bytes();
        let capacity = self.scheduler.capacity_bytes();
        if reserved > capacity || reserved != self.scheduler.used_bytes() {
            return Err(SimError::InvariantViolation(format!(
                "at t={} reserved {reserved} bytes against capacity {capacity}",
                self.now
            )));
        }
        self.stats.peak_used_bytes = self.stats.peak_used_bytes.max(reserved);
        Ok(())
    }
}

/// Runs `workload` to completion under `policy`.
pub fn run(
    workload: &Workload,
    memory: &MemoryModel,
    settings: &SimSettings,
    estimator: &dyn Estimator,
    policy: Policy,
) -> Result<SimRun, SimError> {
    settings.validate()?;
    let mut index_of = HashMap::new();
    let mut seen = HashSet::new();
    for (i, item) in workload.items.iter().enumerate() {
        item.query.validate()?;
        if !seen.insert(item.query.id.as_str()) {
            return Err(ConfigError::Invalid(format!("duplicate query id `{}`", item.query.id)).into());
        }
        index_of.insert(item.query.id.clone(), i);
    }
    if let Policy::Fixed(cfg) = policy {
        for item in &workload.items {
            memory
                .plan_calls(item.query.query_token_len, &cfg)
                .map_err(|e| ConfigError::Invalid(format!("{cfg} is invalid for query `{}`: {e}", item.query.id)))?;
        }
    }

    let n = workload.len();
    let mut engine = Engine {
        workload,
        settings,
        estimator,
        policy,
        scheduler: Scheduler::new(memory.clone(), settings.granularity, settings.capacity_bytes),
        window: RecentSpaceWindow::default(),
        ledger: FeedbackLedger::default(),
        heap: BinaryHeap::new(),
        seq: 0,
        now: 0.0,
        progress: vec![Progress::default(); n],
        index_of,
        rngs: HashMap::new(),
        results: vec![None; n],
        trace: Vec::new(),
        stats: SimStats::default(),
    };
    if workload.sequential {
        if n > 0 {
            engine.push(0.0, EventKind::Arrival(0));
        }
    } else {
        for (i, item) in workload.items.iter().enumerate() {
            engine.push(item.arrival, EventKind::Arrival(i));
        }
    }

    while let Some(Reverse(event)) = engine.heap.pop() {
        if event.time < engine.now {
            return Err(SimError::InvariantViolation(format!("event at {} after {}", event.time, engine.now)));
        }
        engine.now = event.time;
        engine.stats.events += 1;
        engine.handle(event.kind)?;
        engine.check_invariants()?;
    }

    let mut queries = Vec::with_capacity(n);
    for (i, r) in engine.results.into_iter().enumerate() {
        match r {
            Some(r) => queries.push(r),
            None => return Err(SimError::Stalled { query: workload.items[i].query.id.clone() }),
        }
    }
    Ok(SimRun { report: SimReport { policy: policy.to_string(), queries }, trace: engine.trace, stats: engine.stats })
}

/// Runs every fixed config in `grid`, then the adaptive policy.
pub fn sweep(
    workload: &Workload,
    memory: &MemoryModel,
    settings: &SimSettings,
    estimator: &dyn Estimator,
    grid: &[RagConfig],
) -> Result<Vec<SimRun>, SimError> {
    grid.iter()
        .map(|cfg| Policy::Fixed(*cfg))
        .chain([Policy::Adaptive])
        .map(|policy| run(workload, memory, settings, estimator, policy))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::IntRange;
    use crate::memory::CallKind;
    use crate::profiler::{MockEstimator, NoiseParams};
    use crate::types::{ConfigLimits, DatasetMeta, ModelSpec, QueryRecord};
    use crate::workload::WorkloadItem;

    fn call(prompt: u64, out: u64) -> LlmCall {
        LlmCall {
            kind: CallKind::Single,
            prompt_tokens: prompt,
            max_output_tokens: out,
            kv_bytes: 0,
            depends_on: vec![],
        }
    }

    fn cost(slowdown: f64) -> CostModel {
        CostModel {
            prefill_secs_per_token: 1e-4,
            decode_secs_per_token_base: 1e-2,
            batch_slowdown_per_seq: slowdown,
            profiler_latency_secs: 0.02,
        }
    }

    #[test]
    fn latency_examples() {
        assert!((call_latency(&call(1000, 10), 7, &cost(0.0)) - 0.2).abs() < 1e-12);
        assert!((call_latency(&call(1000, 0), 3, &cost(0.5)) - 0.1).abs() < 1e-12);
        let one = call_latency(&call(1000, 0), 0, &cost(0.0));
        assert!((call_latency(&call(2000, 0), 0, &cost(0.0)) - 2.0 * one).abs() < 1e-12);
        assert!((call_latency(&call(0, 10), 2, &cost(0.5)) - 0.2).abs() < 1e-12);
    }

    fn truth(joint: bool, pieces: u32, summary: u32) -> TrueProfile {
        TrueProfile {
            needs_joint_reasoning: joint,
            complexity_high: false,
            pieces_required: pieces,
            required_summary_len: summary,
        }
    }

    fn noiseless() -> QualityModel {
        QualityModel { noise_sigma: 0.0, ..QualityModel::default() }
    }

    #[test]
    fn quality_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let q = noiseless();
        let exact = quality_of(&RagConfig::map_reduce(4, 80), &truth(true, 4, 80), &q, 35, &mut rng);
        assert_eq!(exact, q.base);
        let rerank = quality_of(&RagConfig::map_rerank(4), &truth(true, 4, 80), &q, 35, &mut rng);
        assert!((rerank - (q.base - 0.35)).abs() < 1e-12);
        let at_edge = quality_of(&RagConfig::stuff(6), &truth(true, 2, 80), &q, 35, &mut rng);
        let over = quality_of(&RagConfig::stuff(7), &truth(true, 2, 80), &q, 35, &mut rng);
        assert_eq!(at_edge, q.base);
        assert!((over - (q.base - q.w_over / 35.0)).abs() < 1e-12);
        let short = quality_of(&RagConfig::map_reduce(2, 40), &truth(true, 2, 80), &q, 35, &mut rng);
        assert!((short - (q.base - q.w_len * 0.5)).abs() < 1e-12);
    }

    #[test]
    fn quality_is_clamped() {
        let q = QualityModel { base: 0.1, noise_sigma: 0.0, ..QualityModel::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(quality_of(&RagConfig::map_rerank(1), &truth(true, 10, 80), &q, 35, &mut rng), 0.0);
        let loud = QualityModel { base: 1.0, noise_sigma: 5.0, ..QualityModel::default() };
        for _ in 0..100 {
            let s = quality_of(&RagConfig::stuff(1), &truth(false, 1, 30), &loud, 35, &mut rng);
            assert!((0.0..=1.0).contains(&s));
        }
    }

    #[test]
    fn quality_monotone_around_band() {
        let q = noiseless();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for pieces in 1..=10u32 {
            let t = truth(true, pieces, 50);
            // Scores never increase as the distance to the band grows, on each side.
            for side in [true, false] {
                let mut last = f64::INFINITY;
                for k in if side { (1..=pieces).rev().collect::<Vec<_>>() } else { (3 * pieces..=35).collect() } {
                    let s = quality_of(&RagConfig::stuff(k), &t, &q, 35, &mut rng);
                    assert!(s <= last + 1e-12);
                    last = s;
                }
            }
        }
    }

    fn memory() -> MemoryModel {
        MemoryModel::new(
            ModelSpec::mistral_7b(),
            DatasetMeta { description: "d".into(), chunk_size: 500 },
            ConfigLimits::default(),
            10,
        )
    }

    fn settings(capacity: u64) -> SimSettings {
        SimSettings {
            capacity_bytes: capacity,
            granularity: EnumGranularity::default(),
            cost: cost(0.0),
            quality: noiseless(),
            gate_threshold: 0.9,
            default_space: PrunedConfigSpace::new([SynthesisMethod::Stuff], IntRange::new(1, 5), None),
            seed: 3,
        }
    }

    fn single(joint: bool, pieces: u32) -> Workload {
        Workload {
            items: vec![WorkloadItem {
                query: QueryRecord {
                    id: "only".into(),
                    text: "t".into(),
                    query_token_len: 36,
                    ground_truth: None,
                    hidden_truth: Some(TrueProfile { complexity_high: false, ..truth(joint, pieces, 50) }),
                },
                arrival: 1.0,
            }],
            sequential: false,
        }
    }

    #[test]
    fn one_query_closed_form() {
        let est = MockEstimator::new(NoiseParams::none(), 1);
        let run = run(&single(true, 2), &memory(), &settings(1 << 40), &est, Policy::Adaptive).unwrap();
        let r = &run.report.queries[0];
        // Joint, low complexity, two pieces: stuff with six chunks.
        assert_eq!(r.config, RagConfig::stuff(6));
        let prompt = 36.0 + 6.0 * 500.0 + 64.0;
        let expected = 0.02 + prompt * 1e-4 + 10.0 * 1e-2;
        assert!((r.delay - expected).abs() < 1e-9, "{} vs {expected}", r.delay);
        assert_eq!(r.quality, Some(noiseless().base));
        assert_eq!(r.profiler_secs, 0.02);
        assert_eq!(r.arrival, 1.0);
    }

    #[test]
    fn map_rerank_calls_run_in_parallel() {
        let est = MockEstimator::new(NoiseParams::none(), 1);
        let run = run(&single(false, 1), &memory(), &settings(1 << 40), &est, Policy::Adaptive).unwrap();
        let r = &run.report.queries[0];
        assert_eq!(r.config, RagConfig::map_rerank(3));
        let expected = 0.02 + (36.0 + 500.0 + 64.0) * 1e-4 + 0.1;
        assert!((r.delay - expected).abs() < 1e-9);
    }

    #[test]
    fn empty_workload() {
        let est = MockEstimator::new(NoiseParams::none(), 1);
        let run = run(&Workload::default(), &memory(), &settings(1 << 30), &est, Policy::Adaptive).unwrap();
        assert!(run.report.queries.is_empty());
        assert_eq!(run.report.throughput(), 0.0);
    }

    #[test]
    fn tiny_capacity_stalls() {
        let est = MockEstimator::new(NoiseParams::none(), 1);
        let err = run(&single(true, 2), &memory(), &settings(1000), &est, Policy::Adaptive).unwrap_err();
        assert!(matches!(err, SimError::Stalled { .. }));
    }

    #[test]
    fn policy_round_trip() {
        for p in [Policy::Adaptive, Policy::Fixed(RagConfig::map_reduce(4, 50)), Policy::Fixed(RagConfig::stuff(3))] {
            assert_eq!(p.to_string().parse::<Policy>().unwrap(), p);
        }
    }
}

//! KV-cache sizing for the LLM calls a configuration issues.
//!
//! Every call reserves `prompt + max_output` tokens of KV cache up front, with
//! a 2% safety margin rounded up to the next byte. The scheduler packs these
//! byte counts against free GPU memory.

use crate::types::{
    validate_config, ConfigLimits, DatasetMeta, ModelSpec, RagConfig, SynthesisMethod, ValidationError,
};
use serde::{Deserialize, Serialize};

/// Safety margin on top of the raw KV estimate, as a percentage.
pub const BUFFER_PERCENT: u64 = 2;

/// Key and value bytes one token occupies across all layers.
pub fn bytes_per_kv_token(model: &ModelSpec) -> u64 {
    // 2 planes * bytes_per_element, with bytes stored as half-bytes.
    u64::from(model.num_layers)
        * u64::from(model.num_kv_heads)
        * u64::from(model.head_dim)
        * model.bytes_per_element.half_bytes()
}

/// `ceil(1.02 * tokens * bytes_per_token)` in exact integer arithmetic.
pub fn buffered_kv_bytes(tokens: u64, bytes_per_token: u64) -> u64 {
    let raw = u128::from(tokens) * u128::from(bytes_per_token);
    let scaled = raw * u128::from(100 + BUFFER_PERCENT);
    scaled.div_ceil(100) as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum CallKind {
    Single,
    Mapper(u32),
    Reducer,
    Rerank(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmCall {
    pub kind: CallKind,
    pub prompt_tokens: u64,
    pub max_output_tokens: u64,
    pub kv_bytes: u64,
    /// Indices into the owning plan's call list.
    pub depends_on: Vec<usize>,
}

impl LlmCall {
    /// Calls the scheduler may admit one at a time.
    pub fn is_independent(&self) -> bool {
        self.depends_on.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallPlan {
    pub calls: Vec<LlmCall>,
    pub total_bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    /// Every call of the plan at once.
    Whole,
    /// The largest single call.
    PerCall,
}

/// Bytes the scheduler must find free to admit `plan` under `admission`.
pub fn memory_requirement(plan: &CallPlan, admission: Admission) -> u64 {
    match admission {
        Admission::Whole => plan.total_bytes,
        Admission::PerCall => plan.calls.iter().map(|c| c.kv_bytes).max().unwrap_or(0),
    }
}

/// Everything needed to turn a (query, config) pair into a call plan.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryModel {
    pub model: ModelSpec,
    pub meta: DatasetMeta,
    pub limits: ConfigLimits,
    /// Generation cap for final answers.
    pub out_budget: u32,
    bytes_per_token: u64,
}

impl MemoryModel {
    pub fn new(model: ModelSpec, meta: DatasetMeta, limits: ConfigLimits, out_budget: u32) -> Self {
        let bytes_per_token = bytes_per_kv_token(&model);
        MemoryModel { model, meta, limits, out_budget, bytes_per_token }
    }

    pub fn bytes_per_token(&self) -> u64 {
        self.bytes_per_token
    }

    fn call(&self, kind: CallKind, prompt_tokens: u64, max_output_tokens: u64, depends_on: Vec<usize>) -> LlmCall {
        LlmCall {
            kind,
            prompt_tokens,
            max_output_tokens,
            kv_bytes: buffered_kv_bytes(prompt_tokens + max_output_tokens, self.bytes_per_token),
            depends_on,
        }
    }

    /// Lays out the LLM calls `cfg` issues for a query of `query_tokens`.
    pub fn plan_calls(&self, query_tokens: u32, cfg: &RagConfig) -> Result<CallPlan, ValidationError> {
        validate_config(cfg, &self.model, &self.meta, query_tokens, &self.limits)?;
        let q = u64::from(query_tokens);
        let t = u64::from(self.limits.template_overhead);
        let chunk = u64::from(self.meta.chunk_size);
        let n = cfg.num_chunks;
        let out = u64::from(self.out_budget);

        let calls = match cfg.method {
            SynthesisMethod::Stuff => {
                vec![self.call(CallKind::Single, q + u64::from(n) * chunk + t, out, Vec::new())]
            }
            SynthesisMethod::MapRerank => {
                (0..n).map(|i| self.call(CallKind::Rerank(i), q + chunk + t, out, Vec::new())).collect()
            }
            SynthesisMethod::MapReduce => {
                let interlen = u64::from(cfg.intermediate_length.unwrap_or(0));
                let mut calls: Vec<LlmCall> =
                    (0..n).map(|i| self.call(CallKind::Mapper(i), q + chunk + t, interlen, Vec::new())).collect();
                let reducer_prompt = q + u64::from(n) * interlen + t;
                calls.push(self.call(CallKind::Reducer, reducer_prompt, out, (0..n as usize).collect()));
                calls
            }
        };
        let total_bytes = calls.iter().map(|c| c.kv_bytes).sum();
        Ok(CallPlan { calls, total_bytes })
    }

    pub fn requirement(
        &self,
        query_tokens: u32,
        cfg: &RagConfig,
        admission: Admission,
    ) -> Result<u64, ValidationError> {
        self.plan_calls(query_tokens, cfg).map(|p| memory_requirement(&p, admission))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::BytesPerElement;
    use proptest::prelude::*;

    fn mm(chunk: u32, out: u32) -> MemoryModel {
        MemoryModel::new(
            ModelSpec::mistral_7b(),
            DatasetMeta { description: "d".into(), chunk_size: chunk },
            ConfigLimits::default(),
            out,
        )
    }

    #[test]
    fn kv_bytes_per_token() {
        assert_eq!(bytes_per_kv_token(&ModelSpec::mistral_7b()), 131_072);
        let unit = ModelSpec {
            num_layers: 1,
            num_kv_heads: 1,
            head_dim: 1,
            bytes_per_element: BytesPerElement::INT8,
            max_context_tokens: 8,
        };
        assert_eq!(bytes_per_kv_token(&unit), 2);
        let fp16 = ModelSpec { bytes_per_element: BytesPerElement::FP16, ..unit.clone() };
        assert_eq!(bytes_per_kv_token(&fp16), 2 * bytes_per_kv_token(&unit));
        let int4 = ModelSpec { bytes_per_element: BytesPerElement::INT4, ..unit };
        assert_eq!(bytes_per_kv_token(&int4), 1);
    }

    #[test]
    fn buffer_rounds_up() {
        assert_eq!(buffered_kv_bytes(100, 131_072), 13_369_344);
        assert_eq!(buffered_kv_bytes(1, 1), 2); // 1.02 -> 2
        assert_eq!(buffered_kv_bytes(50, 1), 51);
        assert_eq!(buffered_kv_bytes(0, 131_072), 0);
    }

    #[test]
    fn stuff_single_call() {
        let plan = mm(1000, 40).plan_calls(100, &RagConfig::stuff(3)).unwrap();
        assert_eq!(plan.calls.len(), 1);
        assert_eq!(plan.calls[0].prompt_tokens, 3164);
        assert_eq!(plan.calls[0].kind, CallKind::Single);
        assert_eq!(plan.calls[0].kv_bytes, buffered_kv_bytes(3204, 131_072));
        assert_eq!(memory_requirement(&plan, Admission::Whole), memory_requirement(&plan, Admission::PerCall));
    }

    #[test]
    fn map_reduce_layout() {
        let plan = mm(1000, 40).plan_calls(100, &RagConfig::map_reduce(2, 100)).unwrap();
        assert_eq!(plan.calls.len(), 3);
        assert_eq!(plan.calls[0].kind, CallKind::Mapper(0));
        assert_eq!(plan.calls[0].prompt_tokens, 1164);
        assert_eq!(plan.calls[0].max_output_tokens, 100);
        let reducer = &plan.calls[2];
        assert_eq!(reducer.kind, CallKind::Reducer);
        assert_eq!(reducer.prompt_tokens, 100 + 200 + 64);
        assert_eq!(reducer.depends_on, vec![0, 1]);
        assert!(plan.calls[..2].iter().all(LlmCall::is_independent));
    }

    #[test]
    fn map_reduce_requirements() {
        let plan = mm(1000, 40).plan_calls(100, &RagConfig::map_reduce(4, 100)).unwrap();
        let mapper = plan.calls[0].kv_bytes;
        let reducer = plan.calls[4].kv_bytes;
        assert_eq!(memory_requirement(&plan, Admission::PerCall), mapper.max(reducer));
        assert!(memory_requirement(&plan, Admission::Whole) >= 4 * mapper);
    }

    #[test]
    fn rerank_layout() {
        let plan = mm(800, 10).plan_calls(50, &RagConfig::map_rerank(3)).unwrap();
        assert_eq!(plan.calls.len(), 3);
        assert!(plan.calls.iter().all(|c| c.prompt_tokens == 50 + 800 + 64 && c.depends_on.is_empty()));
        assert_eq!(plan.calls[2].kind, CallKind::Rerank(2));
    }

    #[test]
    fn single_chunk_methods_agree_on_prompt() {
        let m = mm(700, 20);
        let stuff = m.plan_calls(90, &RagConfig::stuff(1)).unwrap();
        let rerank = m.plan_calls(90, &RagConfig::map_rerank(1)).unwrap();
        assert_eq!(stuff.calls[0].prompt_tokens, rerank.calls[0].prompt_tokens);
        assert_eq!(stuff.total_bytes, rerank.total_bytes);
    }

    #[test]
    fn overflow_is_reported() {
        let err = mm(1000, 40).plan_calls(1000, &RagConfig::stuff(33)).unwrap_err();
        assert!(matches!(err, ValidationError::ContextOverflow { .. }));
    }

    proptest! {
        #[test]
        fn bytes_grow_with_chunks(q in 1u32..500, n in 1u32..20, len in 30u32..200) {
            let m = mm(512, 40);
            for make in [RagConfig::stuff, RagConfig::map_rerank] {
                let a = m.plan_calls(q, &make(n)).unwrap().total_bytes;
                let b = m.plan_calls(q, &make(n + 1)).unwrap().total_bytes;
                prop_assert!(b > a);
            }
            let a = m.plan_calls(q, &RagConfig::map_reduce(n, len)).unwrap().total_bytes;
            let b = m.plan_calls(q, &RagConfig::map_reduce(n + 1, len)).unwrap().total_bytes;
            let c = m.plan_calls(q, &RagConfig::map_reduce(n, len + 1)).unwrap().total_bytes;
            prop_assert!(b > a);
            prop_assert!(c > a);
        }

        #[test]
        fn buffer_is_exact(tokens in 0u64..200_000, bpt in 1u64..2_000_000) {
            let raw = tokens * bpt;
            let got = buffered_kv_bytes(tokens, bpt);
            // got is the least integer >= 1.02 * raw
            prop_assert!(u128::from(got) * 100 >= u128::from(raw) * 102);
            prop_assert!(got == 0 || u128::from(got - 1) * 100 < u128::from(raw) * 102);
        }
    }
}

//! Configuration space, query records and serving-model parameters.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Upper bound on retrieved chunks per query unless a run overrides it.
pub const DEFAULT_MAX_CHUNKS: u32 = 35;

/// Prompt boilerplate tokens added to every LLM call.
pub const DEFAULT_TEMPLATE_OVERHEAD: u32 = 64;

/// How retrieved chunks are combined with the query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthesisMethod {
    /// One call per chunk, keep the most confident answer.
    MapRerank,
    /// All chunks concatenated into one prompt.
    Stuff,
    /// Summarize each chunk, then answer from the summaries.
    MapReduce,
}

impl SynthesisMethod {
    pub const ALL: [SynthesisMethod; 3] =
        [SynthesisMethod::MapRerank, SynthesisMethod::Stuff, SynthesisMethod::MapReduce];

    pub fn as_str(self) -> &'static str {
        match self {
            SynthesisMethod::MapRerank => "map_rerank",
            SynthesisMethod::Stuff => "stuff",
            SynthesisMethod::MapReduce => "map_reduce",
        }
    }
}

impl fmt::Display for SynthesisMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SynthesisMethod {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "map_rerank" | "maprerank" => Ok(SynthesisMethod::MapRerank),
            "stuff" => Ok(SynthesisMethod::Stuff),
            "map_reduce" | "mapreduce" => Ok(SynthesisMethod::MapReduce),
            other => Err(ConfigError::Parse(format!("unknown synthesis method `{other}`"))),
        }
    }
}

/// One concrete knob assignment.
///
/// `intermediate_length` is carried only for [`SynthesisMethod::MapReduce`];
/// the constructors normalize it away for the other methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RagConfig {
    pub method: SynthesisMethod,
    pub num_chunks: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intermediate_length: Option<u32>,
}

impl RagConfig {
    pub fn stuff(num_chunks: u32) -> Self {
        RagConfig { method: SynthesisMethod::Stuff, num_chunks, intermediate_length: None }
    }

    pub fn map_rerank(num_chunks: u32) -> Self {
        RagConfig { method: SynthesisMethod::MapRerank, num_chunks, intermediate_length: None }
    }

    pub fn map_reduce(num_chunks: u32, intermediate_length: u32) -> Self {
        RagConfig { method: SynthesisMethod::MapReduce, num_chunks, intermediate_length: Some(intermediate_length) }
    }

    /// Builds a config, dropping the intermediate length unless the method uses it.
    pub fn new(method: SynthesisMethod, num_chunks: u32, intermediate_length: Option<u32>) -> Self {
        let intermediate_length = match method {
            SynthesisMethod::MapReduce => intermediate_length,
            _ => None,
        };
        RagConfig { method, num_chunks, intermediate_length }
    }
}

impl fmt::Display for RagConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.intermediate_length {
            Some(len) if self.method == SynthesisMethod::MapReduce => {
                write!(f, "{}/{}/{}", self.method, self.num_chunks, len)
            }
            _ => write!(f, "{}/{}", self.method, self.num_chunks),
        }
    }
}

/// Parses `stuff/10`, `map_rerank/3` or `map_reduce/10/120`.
impl FromStr for RagConfig {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.trim().split('/').collect();
        let bad = || ConfigError::Parse(format!("malformed config `{s}`"));
        let method: SynthesisMethod = parts.first().ok_or_else(bad)?.parse()?;
        let chunks: u32 = parts.get(1).ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
        match (method, parts.len()) {
            (SynthesisMethod::MapReduce, 3) => {
                let len: u32 = parts[2].trim().parse().map_err(|_| bad())?;
                Ok(RagConfig::map_reduce(chunks, len))
            }
            (SynthesisMethod::MapReduce, _) => Err(ConfigError::Parse(format!(
                "`{s}`: map_reduce needs an intermediate length (map_reduce/<chunks>/<len>)"
            ))),
            (_, 2) => Ok(RagConfig::new(method, chunks, None)),
            _ => Err(bad()),
        }
    }
}

/// The profile a query really has. Only the simulator sees it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrueProfile {
    pub needs_joint_reasoning: bool,
    pub complexity_high: bool,
    pub pieces_required: u32,
    pub required_summary_len: u32,
}

impl TrueProfile {
    pub const PIECES_MIN: u32 = 1;
    pub const PIECES_MAX: u32 = 10;
    pub const SUMMARY_MIN: u32 = 30;
    pub const SUMMARY_MAX: u32 = 200;

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(Self::PIECES_MIN..=Self::PIECES_MAX).contains(&self.pieces_required) {
            return Err(ConfigError::Invalid(format!("pieces_required {} outside [1,10]", self.pieces_required)));
        }
        if !(Self::SUMMARY_MIN..=Self::SUMMARY_MAX).contains(&self.required_summary_len) {
            return Err(ConfigError::Invalid(format!(
                "required_summary_len {} outside [30,200]",
                self.required_summary_len
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub id: String,
    pub text: String,
    pub query_token_len: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_truth: Option<TrueProfile>,
}

impl QueryRecord {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.query_token_len == 0 {
            return Err(ConfigError::Invalid(format!("query `{}` has zero tokens", self.id)));
        }
        if let Some(truth) = &self.hidden_truth {
            truth.validate()?;
        }
        Ok(())
    }
}

/// KV-cache element width. Stored in half-bytes so 4-bit packing stays integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct BytesPerElement(u8);

impl BytesPerElement {
    pub const INT4: BytesPerElement = BytesPerElement(1);
    pub const INT8: BytesPerElement = BytesPerElement(2);
    pub const FP16: BytesPerElement = BytesPerElement(4);
    pub const FP32: BytesPerElement = BytesPerElement(8);

    pub fn half_bytes(self) -> u64 {
        u64::from(self.0)
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.0) / 2.0
    }
}

impl TryFrom<f64> for BytesPerElement {
    type Error = String;

    fn try_from(v: f64) -> Result<Self, Self::Error> {
        match v {
            0.5 => Ok(Self::INT4),
            1.0 => Ok(Self::INT8),
            2.0 => Ok(Self::FP16),
            4.0 => Ok(Self::FP32),
            _ => Err(format!("bytes_per_element must be one of 0.5, 1, 2, 4 (got {v})")),
        }
    }
}

impl From<BytesPerElement> for f64 {
    fn from(b: BytesPerElement) -> f64 {
        b.as_f64()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub num_layers: u32,
    pub num_kv_heads: u32,
    pub head_dim: u32,
    pub bytes_per_element: BytesPerElement,
    pub max_context_tokens: u32,
}

impl ModelSpec {
    /// A 7B-class model with grouped-query attention, fp16 KV and a 32K window.
    pub fn mistral_7b() -> Self {
        ModelSpec {
            num_layers: 32,
            num_kv_heads: 8,
            head_dim: 128,
            bytes_per_element: BytesPerElement::FP16,
            max_context_tokens: 32_768,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.num_layers == 0 || self.num_kv_heads == 0 || self.head_dim == 0 {
            return Err(ConfigError::Invalid("model dimensions must be positive".into()));
        }
        if self.max_context_tokens == 0 {
            return Err(ConfigError::Invalid("max_context_tokens must be positive".into()));
        }
        Ok(())
    }
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self::mistral_7b()
    }
}

/// Database metadata handed to the profiler alongside the query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub description: String,
    pub chunk_size: u32,
}

impl DatasetMeta {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.description.trim().is_empty() {
            return Err(ConfigError::Invalid("dataset description is empty".into()));
        }
        if self.chunk_size == 0 {
            return Err(ConfigError::Invalid("chunk_size must be positive".into()));
        }
        Ok(())
    }
}

impl Default for DatasetMeta {
    fn default() -> Self {
        DatasetMeta {
            description: "Multi-hop question answering over Wikipedia paragraphs; \
                          answers combine facts from several passages."
                .into(),
            chunk_size: 512,
        }
    }
}

/// Bounds that every config must respect regardless of the query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigLimits {
    pub max_chunks: u32,
    pub template_overhead: u32,
}

impl Default for ConfigLimits {
    fn default() -> Self {
        ConfigLimits { max_chunks: DEFAULT_MAX_CHUNKS, template_overhead: DEFAULT_TEMPLATE_OVERHEAD }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ValidationError {
    #[error("num_chunks {got} outside [1, {max}]")]
    InvalidChunkCount { got: u32, max: u32 },
    #[error("map_reduce requires a positive intermediate length")]
    InvalidIntermediateLength,
    #[error("prompt of {prompt_tokens} tokens exceeds the {max_context} token context")]
    ContextOverflow { prompt_tokens: u64, max_context: u32 },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("parse error: {0}")]
    Parse(String),
}

/// Prompt tokens of the widest call `cfg` issues for a query of `query_tokens`.
pub fn widest_prompt_tokens(cfg: &RagConfig, meta: &DatasetMeta, query_tokens: u32, template_overhead: u32) -> u64 {
    let q = u64::from(query_tokens);
    let t = u64::from(template_overhead);
    let chunk = u64::from(meta.chunk_size);
    let n = u64::from(cfg.num_chunks);
    let per_chunk_call = q + chunk + t;
    match cfg.method {
        SynthesisMethod::Stuff => q + n * chunk + t,
        SynthesisMethod::MapRerank => per_chunk_call,
        SynthesisMethod::MapReduce => {
            let reducer = q + n * u64::from(cfg.intermediate_length.unwrap_or(0)) + t;
            per_chunk_call.max(reducer)
        }
    }
}

/// Checks a config against the knob invariants and the model context window.
pub fn validate_config(
    cfg: &RagConfig,
    model: &ModelSpec,
    meta: &DatasetMeta,
    query_tokens: u32,
    limits: &ConfigLimits,
) -> Result<(), ValidationError> {
    if cfg.num_chunks == 0 || cfg.num_chunks > limits.max_chunks {
        return Err(ValidationError::InvalidChunkCount { got: cfg.num_chunks, max: limits.max_chunks });
    }
    if cfg.method == SynthesisMethod::MapReduce && !matches!(cfg.intermediate_length, Some(l) if l > 0) {
        return Err(ValidationError::InvalidIntermediateLength);
    }
    let prompt_tokens = widest_prompt_tokens(cfg, meta, query_tokens, limits.template_overhead);
    if prompt_tokens > u64::from(model.max_context_tokens) {
        return Err(ValidationError::ContextOverflow { prompt_tokens, max_context: model.max_context_tokens });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn meta(chunk: u32) -> DatasetMeta {
        DatasetMeta { description: "test".into(), chunk_size: chunk }
    }

    #[test]
    fn stuff_five_chunks_fits() {
        let cfg = RagConfig::stuff(5);
        assert_eq!(validate_config(&cfg, &ModelSpec::mistral_7b(), &meta(1000), 100, &ConfigLimits::default()), Ok(()));
    }

    #[test]
    fn forty_chunks_rejected() {
        let cfg = RagConfig::stuff(40);
        assert_eq!(
            validate_config(&cfg, &ModelSpec::mistral_7b(), &meta(1000), 100, &ConfigLimits::default()),
            Err(ValidationError::InvalidChunkCount { got: 40, max: 35 })
        );
        let zero = RagConfig::stuff(0);
        assert!(matches!(
            validate_config(&zero, &ModelSpec::mistral_7b(), &meta(1000), 100, &ConfigLimits::default()),
            Err(ValidationError::InvalidChunkCount { .. })
        ));
    }

    #[test]
    fn thirty_three_chunks_overflow_32k() {
        // 33*1000 + 1000 + 64 = 34064 > 32768
        let cfg = RagConfig::stuff(33);
        assert_eq!(
            validate_config(&cfg, &ModelSpec::mistral_7b(), &meta(1000), 1000, &ConfigLimits::default()),
            Err(ValidationError::ContextOverflow { prompt_tokens: 34_064, max_context: 32_768 })
        );
        // The same chunk count split across rerank calls fits.
        assert_eq!(
            validate_config(
                &RagConfig::map_rerank(33),
                &ModelSpec::mistral_7b(),
                &meta(1000),
                1000,
                &ConfigLimits::default()
            ),
            Ok(())
        );
    }

    #[test]
    fn map_reduce_needs_length() {
        let cfg = RagConfig { method: SynthesisMethod::MapReduce, num_chunks: 3, intermediate_length: None };
        assert_eq!(
            validate_config(&cfg, &ModelSpec::mistral_7b(), &meta(500), 10, &ConfigLimits::default()),
            Err(ValidationError::InvalidIntermediateLength)
        );
    }

    #[test]
    fn config_text_round_trip() {
        for s in ["stuff/10", "map_rerank/3", "map_reduce/12/120"] {
            let cfg: RagConfig = s.parse().unwrap();
            assert_eq!(cfg.to_string(), s);
        }
        assert!("map_reduce/4".parse::<RagConfig>().is_err());
        assert!("stuff/4/9".parse::<RagConfig>().is_err());
        assert!("bogus/4".parse::<RagConfig>().is_err());
    }

    #[test]
    fn bytes_per_element_domain() {
        assert!(BytesPerElement::try_from(3.0).is_err());
        assert_eq!(BytesPerElement::try_from(0.5).unwrap(), BytesPerElement::INT4);
    }

    fn any_config() -> impl Strategy<Value = RagConfig> {
        (0usize..3, 0u32..50, prop::option::of(0u32..400)).prop_map(|(m, n, len)| RagConfig {
            method: SynthesisMethod::ALL[m],
            num_chunks: n,
            intermediate_length: len,
        })
    }

    proptest! {
        #[test]
        fn accepted_configs_satisfy_invariants(cfg in any_config(), q in 1u32..4000, chunk in 1u32..3000) {
            let m = meta(chunk);
            let model = ModelSpec::mistral_7b();
            let limits = ConfigLimits::default();
            let first = validate_config(&cfg, &model, &m, q, &limits);
            prop_assert_eq!(&first, &validate_config(&cfg, &model, &m, q, &limits));
            if first.is_ok() {
                prop_assert!(cfg.num_chunks >= 1 && cfg.num_chunks <= limits.max_chunks);
                if cfg.method == SynthesisMethod::MapReduce {
                    prop_assert!(cfg.intermediate_length.unwrap() > 0);
                }
                prop_assert!(widest_prompt_tokens(&cfg, &m, q, limits.template_overhead)
                    <= u64::from(model.max_context_tokens));
            }
        }
    }
}

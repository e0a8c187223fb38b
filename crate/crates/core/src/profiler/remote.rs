//! Profiler backed by an OpenAI-compatible chat-completion endpoint.

use super::prompt::{render_prompt, ANSWER_FORMAT_INSTRUCTIONS};
use super::{field_confidences, parse_answer, Estimator, FeedbackLedger, ProfilerError, ProfilerOutput, TokenLogprob};
use crate::types::{DatasetMeta, QueryRecord};
use serde::{Deserialize, Serialize};
use std::time::Duration;

/// Environment variable holding the bearer token for the endpoint.
pub const API_KEY_ENV: &str = "RAGTUNE_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteSettings {
    /// Base URL, e.g. `http://localhost:8000/v1`.
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
}

fn default_timeout_secs() -> f64 {
    30.0
}

fn default_max_tokens() -> u32 {
    64
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f32,
    max_tokens: u32,
    logprobs: bool,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    #[serde(default)]
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
    #[serde(default)]
    logprobs: Option<ChoiceLogprobs>,
}

#[derive(Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChoiceLogprobs {
    #[serde(default)]
    content: Option<Vec<LogprobEntry>>,
}

#[derive(Deserialize)]
struct LogprobEntry {
    token: String,
    logprob: f64,
}

pub struct RemoteEstimator {
    settings: RemoteSettings,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl std::fmt::Debug for RemoteEstimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteEstimator").field("settings", &self.settings).finish_non_exhaustive()
    }
}

impl RemoteEstimator {
    /// Reads the credential from [`API_KEY_ENV`] when set.
    pub fn new(settings: RemoteSettings) -> Result<Self, ProfilerError> {
        let api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::with_api_key(settings, api_key)
    }

    pub fn with_api_key(settings: RemoteSettings, api_key: Option<String>) -> Result<Self, ProfilerError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(settings.timeout_secs.max(0.001)))
            .build()
            .map_err(|e| ProfilerError::EstimatorUnavailable(e.to_string()))?;
        Ok(RemoteEstimator { settings, api_key, client })
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.settings.endpoint.trim_end_matches('/'))
    }
}

impl Estimator for RemoteEstimator {
    fn name(&self) -> &'static str {
        "remote"
    }

    fn estimate(
        &self,
        query: &QueryRecord,
        meta: &DatasetMeta,
        feedback: &FeedbackLedger,
    ) -> Result<ProfilerOutput, ProfilerError> {
        let prompt = render_prompt(query, meta, feedback);
        let body = ChatRequest {
            model: &self.settings.model,
            messages: vec![
                ChatMessage { role: "system", content: ANSWER_FORMAT_INSTRUCTIONS },
                ChatMessage { role: "user", content: &prompt },
            ],
            temperature: 0.0,
            max_tokens: self.settings.max_tokens,
            logprobs: true,
        };
        let mut req = self.client.post(self.url()).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| ProfilerError::EstimatorUnavailable(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(ProfilerError::EstimatorUnavailable(format!("endpoint returned {status}")));
        }
        let parsed: ChatResponse =
            resp.json().map_err(|e| ProfilerError::UnparseableAnswer(format!("bad response body: {e}")))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| ProfilerError::UnparseableAnswer("response has no choices".into()))?;
        let raw =
            choice.message.content.ok_or_else(|| ProfilerError::UnparseableAnswer("response has no content".into()))?;
        let answer = parse_answer(&raw)?;
        let tokens: Vec<TokenLogprob> = choice
            .logprobs
            .and_then(|l| l.content)
            .unwrap_or_default()
            .into_iter()
            .map(|e| TokenLogprob { token: e.token, logprob: e.logprob })
            .collect();
        let conf = field_confidences(&answer.spans, &tokens);
        Ok(ProfilerOutput::from_parsed(raw, &answer, conf))
    }
}

//! Answer sources: a remote chat-completions endpoint, a scripted replayer,
//! and a parametric stochastic agent with known closed-form behavior.
//!
//! A respondent handle is shareable across workers; internal state (the
//! in-flight limiter, script queues) is synchronized. Per-conversation call
//! ordering is the caller's responsibility. Determinism guarantees apply
//! only to scripted and stochastic respondents; remote runs are labeled
//! non-deterministic in reports because sampling seeds cannot be forwarded
//! to arbitrary endpoints.

use std::collections::{BTreeMap, VecDeque};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Condition;
use crate::dialogue::Message;
use crate::seed::{rng_from, turn_seed};

use rand::Rng;

/// Environment variable holding the bearer token for remote endpoints.
pub const API_KEY_ENV: &str = "CONVICTION_API_KEY";

/// Sampling parameters forwarded on every completion call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub model_name: String,
    /// Non-standard fields merged verbatim into the request body.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            max_output_tokens: 512,
            model_name: "unspecified".to_string(),
            extra: BTreeMap::new(),
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), RespondentError> {
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(RespondentError::InvalidParams(format!(
                "temperature must be finite and non-negative, got {}",
                self.temperature
            )));
        }
        if self.max_output_tokens == 0 {
            return Err(RespondentError::InvalidParams(
                "max_output_tokens must be at least 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// What kind of decision the current turn asks for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnKind {
    /// Turn 1: pick from the opening decision-space.
    Initial,
    /// Conviction follow-up: stick with the held answer or switch.
    StickOrSwitch,
    /// Flexibility follow-up: the introduced option may be the truth.
    Flexibility,
}

/// Engine-provided turn context. Remote respondents ignore it; scripted and
/// stochastic respondents use it to behave deterministically per
/// conversation, independent of global call order.
#[derive(Debug, Clone, Copy)]
pub struct TurnCue<'a> {
    pub record_id: &'a str,
    pub condition: Condition,
    pub instance_seed: u64,
    pub turn: u32,
    pub kind: TurnKind,
    pub target_token: &'a str,
    pub alternative_token: Option<&'a str>,
}

#[derive(Debug, Error)]
pub enum RespondentError {
    #[error("rate limited (HTTP 429)")]
    RateLimited,
    #[error("server error (HTTP {status})")]
    ServerError { status: u16 },
    #[error("client error (HTTP {status})")]
    ClientError { status: u16 },
    #[error("request timed out")]
    Timeout,
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("malformed response body: {0}")]
    MalformedBody(String),
    #[error("scripted respondent exhausted its replies")]
    ScriptExhausted,
    #[error("invalid generation parameters: {0}")]
    InvalidParams(String),
    #[error("invalid agent specification: {0}")]
    InvalidSpec(String),
}

impl RespondentError {
    /// Retry only on timeout, transport failure, 429, and 5xx.
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            RespondentError::RateLimited
                | RespondentError::ServerError { .. }
                | RespondentError::Timeout
                | RespondentError::Transport(_)
        )
    }
}

/// A source of completions.
pub trait Respondent: Send + Sync {
    fn complete(
        &self,
        messages: &[Message],
        params: &GenerationParams,
        cue: &TurnCue<'_>,
    ) -> Result<String, RespondentError>;

    /// Whether identical inputs always produce identical outputs.
    fn is_deterministic(&self) -> bool {
        false
    }

    /// Label used for this answer source in transcripts and reports.
    fn label(&self, params: &GenerationParams) -> String {
        params.model_name.clone()
    }
}

/// Exponential backoff schedule for retryable transport failures.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub backoff_factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        // 1 s / 4 s / 16 s before each of up to three retries.
        Self {
            max_retries: 3,
            initial_backoff: Duration::from_secs(1),
            backoff_factor: 4.0,
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, retry_index: u32) -> Duration {
        let factor = self.backoff_factor.powi(retry_index as i32);
        self.initial_backoff.mul_f64(factor)
    }
}

/// Counting semaphore bounding in-flight requests per respondent.
#[derive(Debug)]
struct Permits {
    max: usize,
    in_flight: Mutex<usize>,
    released: Condvar,
}

impl Permits {
    fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            in_flight: Mutex::new(0),
            released: Condvar::new(),
        }
    }

    fn acquire(&self) -> PermitGuard<'_> {
        let mut count = self.in_flight.lock().unwrap();
        while *count >= self.max {
            count = self.released.wait(count).unwrap();
        }
        *count += 1;
        PermitGuard { permits: self }
    }
}

struct PermitGuard<'a> {
    permits: &'a Permits,
}

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        let mut count = self.permits.in_flight.lock().unwrap();
        *count -= 1;
        self.permits.released.notify_one();
    }
}

/// Chat-completions client: POST {base_url}/chat/completions with the
/// de-facto JSON protocol, reading the reply from
/// `choices[0].message.content`.
pub struct RemoteRespondent {
    base_url: String,
    agent: ureq::Agent,
    api_key: Option<String>,
    retry: RetryPolicy,
    permits: Permits,
}

impl RemoteRespondent {
    /// Default configuration: 120 s timeout, bearer token from
    /// `CONVICTION_API_KEY` when set, at most 8 requests in flight.
    pub fn new(base_url: impl Into<String>) -> Self {
        Self::with_settings(
            base_url,
            Duration::from_secs(120),
            RetryPolicy::default(),
            8,
            std::env::var(API_KEY_ENV).ok(),
        )
    }

    pub fn with_settings(
        base_url: impl Into<String>,
        timeout: Duration,
        retry: RetryPolicy,
        max_in_flight: usize,
        api_key: Option<String>,
    ) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout_connect(timeout.min(Duration::from_secs(30)))
            .timeout(timeout)
            .build();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            agent,
            api_key,
            retry,
            permits: Permits::new(max_in_flight),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn build_body(messages: &[Message], params: &GenerationParams) -> serde_json::Value {
        let mut body = serde_json::json!({
            "model": params.model_name,
            "messages": messages,
            "temperature": params.temperature,
            "max_tokens": params.max_output_tokens,
        });
        for (key, value) in &params.extra {
            body[key] = value.clone();
        }
        body
    }

    fn post_once(&self, body: &serde_json::Value) -> Result<String, RespondentError> {
        let url = format!("{}/chat/completions", self.base_url);
        let mut request = self
            .agent
            .post(&url)
            .set("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            request = request.set("Authorization", &format!("Bearer {key}"));
        }
        let response = match request.send_json(body) {
            Ok(response) => response,
            Err(ureq::Error::Status(429, _)) => return Err(RespondentError::RateLimited),
            Err(ureq::Error::Status(status, _)) if status >= 500 => {
                return Err(RespondentError::ServerError { status })
            }
            Err(ureq::Error::Status(status, _)) => {
                return Err(RespondentError::ClientError { status })
            }
            Err(ureq::Error::Transport(transport)) => {
                let message = transport.to_string();
                return if message.contains("timed out") || message.contains("timeout") {
                    Err(RespondentError::Timeout)
                } else {
                    Err(RespondentError::Transport(message))
                };
            }
        };
        let value: serde_json::Value = response
            .into_json()
            .map_err(|e| RespondentError::MalformedBody(e.to_string()))?;
        value
            .pointer("/choices/0/message/content")
            .and_then(serde_json::Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| {
                RespondentError::MalformedBody("missing choices[0].message.content".to_string())
            })
    }

    /// Health probe used by configuration validation.
    pub fn ping(&self, params: &GenerationParams) -> Result<(), RespondentError> {
        let messages = [Message::user("ping")];
        let mut probe = params.clone();
        probe.max_output_tokens = 16;
        let body = Self::build_body(&messages, &probe);
        self.post_once(&body).map(|_| ())
    }
}

impl Respondent for RemoteRespondent {
    fn complete(
        &self,
        messages: &[Message],
        params: &GenerationParams,
        _cue: &TurnCue<'_>,
    ) -> Result<String, RespondentError> {
        params.validate()?;
        let _permit = self.permits.acquire();
        let body = Self::build_body(messages, params);
        let mut retry_index = 0u32;
        loop {
            match self.post_once(&body) {
                Ok(text) => return Ok(text),
                Err(err) if err.is_retryable() && retry_index < self.retry.max_retries => {
                    std::thread::sleep(self.retry.delay(retry_index));
                    retry_index += 1;
                }
                Err(err) => return Err(err),
            }
        }
    }
}

/// Deterministic replayer: pops one canned reply per call.
pub struct ScriptedRespondent {
    replies: Mutex<VecDeque<String>>,
}

impl ScriptedRespondent {
    pub fn new(replies: impl IntoIterator<Item = String>) -> Self {
        Self {
            replies: Mutex::new(replies.into_iter().collect()),
        }
    }

    pub fn remaining(&self) -> usize {
        self.replies.lock().unwrap().len()
    }
}

impl Respondent for ScriptedRespondent {
    fn complete(
        &self,
        _messages: &[Message],
        _params: &GenerationParams,
        _cue: &TurnCue<'_>,
    ) -> Result<String, RespondentError> {
        self.replies
            .lock()
            .unwrap()
            .pop_front()
            .ok_or(RespondentError::ScriptExhausted)
    }

    fn is_deterministic(&self) -> bool {
        true
    }

    fn label(&self, _params: &GenerationParams) -> String {
        "scripted".to_string()
    }
}

/// Parametric stochastic agent with closed-form cumulative survival
/// q_init * p_stick^(T-1), used as the oracle for the survival metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BernoulliAgentSpec {
    /// Probability of selecting the target at turn 1.
    pub q_init: f64,
    /// Probability of holding the target at each conviction turn t > 1.
    pub p_stick: f64,
    /// Probability of switching at the flexibility turn when the introduced
    /// option is the truth.
    pub q_flex_correct: f64,
    /// Probability of switching at the flexibility turn when the introduced
    /// option is another distractor.
    pub q_flex_incorrect: f64,
    pub seed: u64,
}

impl BernoulliAgentSpec {
    pub fn validate(&self) -> Result<(), RespondentError> {
        for (name, p) in [
            ("q_init", self.q_init),
            ("p_stick", self.p_stick),
            ("q_flex_correct", self.q_flex_correct),
            ("q_flex_incorrect", self.q_flex_incorrect),
        ] {
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(RespondentError::InvalidSpec(format!(
                    "{name} must be a probability, got {p}"
                )));
            }
        }
        Ok(())
    }
}

impl Default for BernoulliAgentSpec {
    fn default() -> Self {
        Self {
            q_init: 1.0,
            p_stick: 1.0,
            q_flex_correct: 1.0,
            q_flex_incorrect: 0.0,
            seed: 0,
        }
    }
}

/// Emit the agent's formatted selection for one turn.
///
/// The draw is seeded by (agent seed, instance seed, turn), so behavior is
/// fully determined by the spec and the conversation, never by scheduling.
pub fn bernoulli_reply(spec: &BernoulliAgentSpec, cue: &TurnCue<'_>) -> String {
    let mut rng = rng_from(turn_seed(spec.seed, cue.instance_seed, cue.turn));
    let draw: f64 = rng.random();
    let hold_probability = match cue.kind {
        TurnKind::Initial => spec.q_init,
        TurnKind::StickOrSwitch => spec.p_stick,
        TurnKind::Flexibility => match cue.condition {
            Condition::FlexSensitivity => 1.0 - spec.q_flex_incorrect,
            _ => 1.0 - spec.q_flex_correct,
        },
    };
    let token = if draw < hold_probability {
        cue.target_token
    } else {
        cue.alternative_token.unwrap_or(cue.target_token)
    };
    format!("Final answer: {token}")
}

pub struct BernoulliAgent {
    spec: BernoulliAgentSpec,
}

impl BernoulliAgent {
    pub fn new(spec: BernoulliAgentSpec) -> Result<Self, RespondentError> {
        spec.validate()?;
        Ok(Self { spec })
    }

    pub fn spec(&self) -> &BernoulliAgentSpec {
        &self.spec
    }
}

impl Respondent for BernoulliAgent {
    fn complete(
        &self,
        _messages: &[Message],
        _params: &GenerationParams,
        cue: &TurnCue<'_>,
    ) -> Result<String, RespondentError> {
        Ok(bernoulli_reply(&self.spec, cue))
    }

    fn is_deterministic(&self) -> bool {
        true
    }

    fn label(&self, _params: &GenerationParams) -> String {
        "bernoulli-agent".to_string()
    }
}

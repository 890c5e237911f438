//! Chat completion backends, sessions and token/cost accounting.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::embedding::EmbeddingUsage;
use crate::http::Endpoint;
use crate::runtime::ToolCall;

pub const DEFAULT_MAX_INTERACTIONS: usize = 100;
pub const DEFAULT_TEMPERATURE: f64 = 1e-9;
pub const DEFAULT_CHAT_MODEL: &str = "gpt-3.5-turbo-0125";
const DEFAULT_COSTS: &str = include_str!("../assets/costs.json");

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("interaction limit of {limit} reached")]
    InteractionLimitExceeded { limit: usize },
    #[error("scripted step {step}: {reason}")]
    MatchFailure { step: usize, reason: String },
    #[error("backend error{}: {message}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Backend { status: Option<u16>, message: String },
    #[error("no prices for model `{0}`")]
    UnknownModel(String),
    #[error("invalid transcript: {0}")]
    Transcript(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    #[serde(default)]
    pub content: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<ToolCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
}

impl ChatMessage {
    fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
            tool_calls: Vec::new(),
            tool_call_id: None,
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::new(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::new(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::new(Role::Assistant, content)
    }

    pub fn assistant_calls(content: impl Into<String>, calls: Vec<ToolCall>) -> Self {
        Self {
            tool_calls: calls,
            ..Self::new(Role::Assistant, content)
        }
    }

    pub fn tool(call_id: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            tool_call_id: Some(call_id.into()),
            ..Self::new(Role::Tool, content)
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub model: String,
    #[serde(default)]
    pub prompt_tokens: u64,
    #[serde(default)]
    pub completion_tokens: u64,
    #[serde(default)]
    pub embedding_tokens: u64,
}

impl UsageRecord {
    pub fn chat(model: impl Into<String>, prompt_tokens: u64, completion_tokens: u64) -> Self {
        Self {
            model: model.into(),
            prompt_tokens,
            completion_tokens,
            embedding_tokens: 0,
        }
    }

    pub fn embedding(model: impl Into<String>, tokens: u64) -> Self {
        Self {
            model: model.into(),
            embedding_tokens: tokens,
            ..Self::default()
        }
    }

    /// Adds the counts of `other`, which must be for the same model.
    pub fn accumulate(&mut self, other: &UsageRecord) {
        debug_assert_eq!(self.model, other.model);
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
        self.embedding_tokens += other.embedding_tokens;
    }
}

/// Per-model totals of a list of records.
pub fn summarize(records: &[UsageRecord]) -> BTreeMap<String, UsageRecord> {
    let mut out: BTreeMap<String, UsageRecord> = BTreeMap::new();
    for r in records {
        out.entry(r.model.clone())
            .or_insert_with(|| UsageRecord {
                model: r.model.clone(),
                ..UsageRecord::default()
            })
            .accumulate(r);
    }
    out
}

/// USD per one million tokens.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prices {
    #[serde(default)]
    pub input: f64,
    #[serde(default)]
    pub output: f64,
    #[serde(default)]
    pub embedding: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CostTable {
    pub models: BTreeMap<String, Prices>,
}

impl Default for CostTable {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_COSTS).expect("bundled cost table is valid")
    }
}

impl CostTable {
    pub fn from_file(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path).map_err(|e| LlmError::Transcript(format!("{}: {e}", path.display())))?;
        let table: CostTable =
            serde_json::from_str(&text).map_err(|e| LlmError::Transcript(format!("{}: {e}", path.display())))?;
        if let Some((m, _)) = table
            .models
            .iter()
            .find(|(_, p)| [p.input, p.output, p.embedding].iter().any(|x| !(x.is_finite() && *x >= 0.0)))
        {
            return Err(LlmError::Transcript(format!("negative or non-finite price for `{m}`")));
        }
        Ok(table)
    }

    pub fn with_model(mut self, model: impl Into<String>, prices: Prices) -> Self {
        self.models.insert(model.into(), prices);
        self
    }

    pub fn cost(&self, usage: &UsageRecord) -> Result<f64, LlmError> {
        let p = self
            .models
            .get(&usage.model)
            .ok_or_else(|| LlmError::UnknownModel(usage.model.clone()))?;
        Ok(usage.prompt_tokens as f64 * p.input / 1e6
            + usage.completion_tokens as f64 * p.output / 1e6
            + usage.embedding_tokens as f64 * p.embedding / 1e6)
    }

    pub fn total(&self, records: &[UsageRecord]) -> Result<f64, LlmError> {
        summarize(records).values().map(|r| self.cost(r)).sum()
    }
}

/// One completion request as seen by a backend.
#[derive(Debug, Clone, Copy)]
pub struct ChatRequest<'a> {
    pub messages: &'a [ChatMessage],
    pub tools: &'a [Value],
    pub temperature: f64,
}

pub trait ChatBackend: Send + Sync {
    fn model(&self) -> &str;
    fn complete(&self, request: ChatRequest<'_>) -> Result<(ChatMessage, UsageRecord), LlmError>;
    /// Whether this backend talks to a real model (code generation needs one).
    fn is_live(&self) -> bool {
        false
    }
}

/// Rough token estimate for requests whose usage is not reported.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

fn estimate_usage(model: &str, request: ChatRequest<'_>, response: &ChatMessage) -> UsageRecord {
    let prompt_text = serde_json::to_string(request.messages).unwrap_or_default()
        + &serde_json::to_string(request.tools).unwrap_or_default();
    let completion_text = response.content.clone() + &serde_json::to_string(&response.tool_calls).unwrap_or_default();
    UsageRecord::chat(model, estimate_tokens(&prompt_text), estimate_tokens(&completion_text))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptStep {
    /// Substring required in the last user or tool message.
    #[serde(default, rename = "match", skip_serializing_if = "Option::is_none")]
    pub matcher: Option<String>,
    pub response: ChatMessage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<StepUsage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    #[serde(default = "default_model")]
    pub model: String,
    pub steps: Vec<ScriptStep>,
}

fn default_model() -> String {
    DEFAULT_CHAT_MODEL.to_string()
}

impl Transcript {
    pub fn from_json(text: &str) -> Result<Self, LlmError> {
        let t: Transcript = serde_json::from_str(text).map_err(|e| LlmError::Transcript(e.to_string()))?;
        for (i, step) in t.steps.iter().enumerate() {
            if step.response.role != Role::Assistant {
                return Err(LlmError::Transcript(format!("step {i}: response role must be assistant")));
            }
        }
        Ok(t)
    }

    pub fn from_file(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path).map_err(|e| LlmError::Transcript(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| LlmError::Transcript(format!("{}: {e}", path.display())))
    }
}

/// Replays a transcript strictly in order.
#[derive(Debug)]
pub struct ScriptedBackend {
    transcript: Transcript,
    cursor: Mutex<usize>,
}

impl ScriptedBackend {
    pub fn new(transcript: Transcript) -> Self {
        Self {
            transcript,
            cursor: Mutex::new(0),
        }
    }

    /// A new backend replaying the same transcript from the start.
    pub fn fresh(&self) -> Self {
        Self::new(self.transcript.clone())
    }

    pub fn consumed(&self) -> usize {
        *self.cursor.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn remaining(&self) -> usize {
        self.transcript.steps.len() - self.consumed()
    }
}

impl ChatBackend for ScriptedBackend {
    fn model(&self) -> &str {
        &self.transcript.model
    }

    fn complete(&self, request: ChatRequest<'_>) -> Result<(ChatMessage, UsageRecord), LlmError> {
        let mut cursor = self.cursor.lock().unwrap_or_else(|e| e.into_inner());
        let index = *cursor;
        let step = self.transcript.steps.get(index).ok_or_else(|| LlmError::MatchFailure {
            step: index,
            reason: format!("script exhausted after {} steps", self.transcript.steps.len()),
        })?;
        if let Some(needle) = &step.matcher {
            let last = request
                .messages
                .iter()
                .rev()
                .find(|m| matches!(m.role, Role::User | Role::Tool))
                .map(|m| m.content.as_str())
                .unwrap_or("");
            if !last.contains(needle.as_str()) {
                return Err(LlmError::MatchFailure {
                    step: index,
                    reason: format!("expected {needle:?} in {last:?}"),
                });
            }
        }
        *cursor += 1;
        let usage = match step.usage {
            Some(u) => UsageRecord::chat(&self.transcript.model, u.prompt_tokens, u.completion_tokens),
            None => estimate_usage(&self.transcript.model, request, &step.response),
        };
        Ok((step.response.clone(), usage))
    }
}

/// Chat-completions client for OpenAI-compatible services.
pub struct HttpChatBackend {
    endpoint: Endpoint,
    model: String,
    agent: ureq::Agent,
}

impl std::fmt::Debug for HttpChatBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpChatBackend")
            .field("base_url", &self.endpoint.base_url)
            .field("model", &self.model)
            .finish()
    }
}

impl HttpChatBackend {
    pub fn new(endpoint: Endpoint, model: impl Into<String>) -> Self {
        let agent = endpoint.agent();
        Self {
            endpoint,
            model: model.into(),
            agent,
        }
    }
}

/// Chat-completions wire form of a message.
pub fn wire_message(m: &ChatMessage) -> Value {
    let mut out = Map::new();
    out.insert("role".into(), serde_json::to_value(m.role).expect("role serialises"));
    out.insert("content".into(), json!(m.content));
    if !m.tool_calls.is_empty() {
        let calls: Vec<Value> = m
            .tool_calls
            .iter()
            .map(|c| {
                json!({
                    "id": c.call_id,
                    "type": "function",
                    "function": {
                        "name": c.tool_id,
                        "arguments": Value::Object(c.arguments.clone()).to_string(),
                    }
                })
            })
            .collect();
        out.insert("tool_calls".into(), Value::Array(calls));
    }
    if let Some(id) = &m.tool_call_id {
        out.insert("tool_call_id".into(), json!(id));
    }
    Value::Object(out)
}

/// Parses `choices[0].message` of a chat-completions response.
pub fn parse_wire_response(body: &Value) -> Result<ChatMessage, LlmError> {
    let malformed = |m: String| LlmError::Backend {
        status: Some(200),
        message: m,
    };
    let message = body
        .pointer("/choices/0/message")
        .ok_or_else(|| malformed("response has no choices[0].message".into()))?;
    let content = message["content"].as_str().unwrap_or("").to_string();
    let mut calls = Vec::new();
    if let Some(raw) = message["tool_calls"].as_array() {
        for (i, c) in raw.iter().enumerate() {
            let id = c["id"].as_str().ok_or_else(|| malformed(format!("tool call {i} has no id")))?;
            let name = c
                .pointer("/function/name")
                .and_then(Value::as_str)
                .ok_or_else(|| malformed(format!("tool call {i} has no function name")))?;
            let arguments = match c.pointer("/function/arguments") {
                Some(Value::String(s)) => parse_arguments(s).map_err(|e| malformed(format!("tool call {i} ({name}): {e}")))?,
                Some(Value::Object(m)) => m.clone(),
                _ => Map::new(),
            };
            calls.push(ToolCall {
                call_id: id.to_string(),
                tool_id: name.to_string(),
                arguments,
            });
        }
    }
    Ok(ChatMessage::assistant_calls(content, calls))
}

/// Strict JSON object; only surrounding whitespace is tolerated.
pub fn parse_arguments(text: &str) -> Result<Map<String, Value>, String> {
    if text.trim().is_empty() {
        return Ok(Map::new());
    }
    serde_json::from_str::<Map<String, Value>>(text).map_err(|e| format!("malformed arguments: {e}"))
}

impl ChatBackend for HttpChatBackend {
    fn model(&self) -> &str {
        &self.model
    }

    fn is_live(&self) -> bool {
        true
    }

    fn complete(&self, request: ChatRequest<'_>) -> Result<(ChatMessage, UsageRecord), LlmError> {
        let mut body = json!({
            "model": self.model,
            "messages": request.messages.iter().map(wire_message).collect::<Vec<_>>(),
            "temperature": request.temperature,
        });
        if !request.tools.is_empty() {
            body["tools"] = Value::Array(request.tools.to_vec());
        }
        let response = self
            .endpoint
            .post_json(&self.agent, "chat/completions", &body)
            .map_err(|f| LlmError::Backend {
                status: f.status,
                message: f.message,
            })?;
        let message = parse_wire_response(&response)?;
        let usage = UsageRecord::chat(
            &self.model,
            response.pointer("/usage/prompt_tokens").and_then(Value::as_u64).unwrap_or(0),
            response.pointer("/usage/completion_tokens").and_then(Value::as_u64).unwrap_or(0),
        );
        Ok((message, usage))
    }
}

/// What one completion request carried, for payload accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub tool_names: Vec<String>,
    pub schema_bytes: usize,
    pub message_count: usize,
    pub usage: UsageRecord,
}

/// Interaction counter and usage ledger for one query.
pub struct Session {
    backend: Arc<dyn ChatBackend>,
    max_interactions: usize,
    pub ledger: Vec<UsageRecord>,
    pub requests: Vec<RequestRecord>,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("model", &self.backend.model())
            .field("interactions", &self.requests.len())
            .field("max_interactions", &self.max_interactions)
            .finish()
    }
}

impl Session {
    pub fn new(backend: Arc<dyn ChatBackend>, max_interactions: usize) -> Self {
        Self {
            backend,
            max_interactions,
            ledger: Vec::new(),
            requests: Vec::new(),
        }
    }

    pub fn backend(&self) -> &Arc<dyn ChatBackend> {
        &self.backend
    }

    pub fn interactions(&self) -> usize {
        self.requests.len()
    }

    pub fn complete(&mut self, messages: &[ChatMessage], tools: &[Value], temperature: f64) -> Result<ChatMessage, LlmError> {
        if self.requests.len() >= self.max_interactions {
            return Err(LlmError::InteractionLimitExceeded {
                limit: self.max_interactions,
            });
        }
        let (message, usage) = self.backend.complete(ChatRequest {
            messages,
            tools,
            temperature,
        })?;
        self.requests.push(RequestRecord {
            tool_names: tools
                .iter()
                .filter_map(|t| t.pointer("/function/name").and_then(Value::as_str).map(String::from))
                .collect(),
            schema_bytes: tools.iter().map(|t| t.to_string().len()).sum(),
            message_count: messages.len(),
            usage: usage.clone(),
        });
        self.ledger.push(usage);
        Ok(message)
    }

    pub fn record_embedding(&mut self, usage: &EmbeddingUsage) {
        if usage.token_count > 0 {
            self.ledger.push(UsageRecord::embedding(&usage.model, usage.token_count));
        }
    }

    pub fn cost(&self, table: &CostTable) -> Result<f64, LlmError> {
        table.total(&self.ledger)
    }
}

//! Agent variants and their query loops.
//!
//! The tool-library variants share one pipeline: decompose the query into
//! subtasks, turn the subtasks into search strings, look the strings up in
//! the library (re-decomposing subtasks that find nothing, up to a depth
//! limit), then let the model call the retrieved tools one at a time.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::llm::{ChatBackend, ChatMessage, LlmError, RequestRecord, Session, UsageRecord};
use crate::prompts::{self, fill, numbered, Prompts};
use crate::runtime::{Outcome, Runtime, ToolCall, ToolResult};
use crate::tooldef::ToolDescriptor;
use crate::toollib::{LibraryError, ToolLibrary};

pub const SEARCH_TOOLS: &str = "search_tools";
pub const DECOMPOSE_TASK: &str = "decompose_task";
pub const SEARCH_TOOL_LIBRARY: &str = "search_tool_library";
pub const CREATE_TOOL: &str = "create_tool";
pub const UPDATE_TOOL: &str = "update_tool";
pub const DELETE_TOOL: &str = "delete_tool";

/// Framework tools that are not part of the tool library.
pub const GENERIC_TOOLS: [&str; 6] = [SEARCH_TOOLS, DECOMPOSE_TASK, SEARCH_TOOL_LIBRARY, CREATE_TOOL, UPDATE_TOOL, DELETE_TOOL];

pub fn is_generic_tool(name: &str) -> bool {
    GENERIC_TOOLS.contains(&name)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgentVariant {
    Base,
    NaiveTool,
    CotTool,
    MinimalTulip,
    NaiveTulip,
    CotTulip,
    InformedCotTulip,
    PrimedCotTulip,
    OneShotCotTulip,
    AutoTulip,
}

impl AgentVariant {
    pub const ALL: [AgentVariant; 10] = [
        AgentVariant::Base,
        AgentVariant::NaiveTool,
        AgentVariant::CotTool,
        AgentVariant::MinimalTulip,
        AgentVariant::NaiveTulip,
        AgentVariant::CotTulip,
        AgentVariant::InformedCotTulip,
        AgentVariant::PrimedCotTulip,
        AgentVariant::OneShotCotTulip,
        AgentVariant::AutoTulip,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AgentVariant::Base => "Base",
            AgentVariant::NaiveTool => "NaiveTool",
            AgentVariant::CotTool => "CotTool",
            AgentVariant::MinimalTulip => "MinimalTulip",
            AgentVariant::NaiveTulip => "NaiveTulip",
            AgentVariant::CotTulip => "CotTulip",
            AgentVariant::InformedCotTulip => "InformedCotTulip",
            AgentVariant::PrimedCotTulip => "PrimedCotTulip",
            AgentVariant::OneShotCotTulip => "OneShotCotTulip",
            AgentVariant::AutoTulip => "AutoTulip",
        }
    }

    /// Whether the variant retrieves tools from the embedding index.
    pub fn uses_library_search(self) -> bool {
        !matches!(self, AgentVariant::Base | AgentVariant::NaiveTool | AgentVariant::CotTool)
    }

    fn is_cot_tulip(self) -> bool {
        matches!(
            self,
            AgentVariant::CotTulip | AgentVariant::InformedCotTulip | AgentVariant::PrimedCotTulip | AgentVariant::OneShotCotTulip
        )
    }
}

impl fmt::Display for AgentVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AgentVariant {
    type Err = String;

    /// Accepts `CotTulip`, `CotTulipAgent`, `cot-tulip` and `cot_tulip`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .trim()
            .trim_end_matches("Agent")
            .trim_end_matches("agent")
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        let key = key.trim_end_matches("agent");
        AgentVariant::ALL
            .into_iter()
            .find(|v| v.name().to_ascii_lowercase() == key)
            .ok_or_else(|| {
                let names: Vec<&str> = AgentVariant::ALL.iter().map(|v| v.name()).collect();
                format!("unknown agent variant `{s}` (expected one of {})", names.join(", "))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub variant: AgentVariant,
    pub top_k: usize,
    /// Squared-L2 distance above which a search hit is discarded.
    pub recursion_distance_ceiling: f64,
    pub max_recursion_depth: usize,
    pub max_interactions: usize,
    pub temperature: f64,
    /// PrimedCotTulip only: how many nearby tool names to mention.
    pub priming_pool_size: usize,
    /// InformedCotTulip only; generated from the library when absent.
    pub library_description: Option<String>,
    /// Code generation attempts per create/update request (AutoTulip).
    pub codegen_attempts: usize,
    pub prompts: Prompts,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            variant: AgentVariant::CotTulip,
            top_k: 5,
            recursion_distance_ceiling: 1.2,
            max_recursion_depth: 2,
            max_interactions: crate::llm::DEFAULT_MAX_INTERACTIONS,
            temperature: crate::llm::DEFAULT_TEMPERATURE,
            priming_pool_size: 30,
            library_description: None,
            codegen_attempts: 3,
            prompts: Prompts::default(),
        }
    }
}

impl AgentConfig {
    pub fn for_variant(variant: AgentVariant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.top_k == 0 {
            return Err("top_k must be positive".into());
        }
        if !(self.recursion_distance_ceiling.is_finite() && self.recursion_distance_ceiling > 0.0) {
            return Err("recursion_distance_ceiling must be a positive number".into());
        }
        if self.max_interactions == 0 {
            return Err("max_interactions must be positive".into());
        }
        if self.priming_pool_size == 0 {
            return Err("priming_pool_size must be positive".into());
        }
        if self.codegen_attempts == 0 {
            return Err("codegen_attempts must be positive".into());
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err("temperature must be a non-negative number".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("could not parse a task decomposition from: {response:?}")]
    DecompositionFormat { response: String },
    #[error(transparent)]
    Library(#[from] LibraryError),
    #[error("invalid agent configuration: {0}")]
    Config(String),
    #[error("empty query")]
    EmptyQuery,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub subtasks: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub descriptor: ToolDescriptor,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub subtask: String,
    pub tools: Vec<SearchHit>,
}

/// One library lookup as it happened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchEvent {
    pub query: String,
    pub depth: usize,
    pub hits: Vec<(String, f64)>,
}

/// A tool call issued by the model and what came of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceCall {
    pub call_id: String,
    pub tool_id: String,
    /// Unqualified function name.
    pub name: String,
    pub arguments: Map<String, Value>,
    pub outcome: Outcome,
    pub generic: bool,
}

/// A completion made outside the main conversation (decomposition, search
/// strings, code generation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub purpose: String,
    pub request: Vec<ChatMessage>,
    pub response: ChatMessage,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionTrace {
    pub variant: Option<AgentVariant>,
    pub query: String,
    /// Main-conversation messages added during this query.
    pub messages: Vec<ChatMessage>,
    pub exchanges: Vec<Exchange>,
    pub tool_calls: Vec<TraceCall>,
    pub searches: Vec<SearchEvent>,
    pub usage: Vec<UsageRecord>,
    pub requests: Vec<RequestRecord>,
    pub final_response: String,
    pub failure: Option<String>,
}

impl SessionTrace {
    pub fn interactions(&self) -> usize {
        self.requests.len()
    }

    /// Library tool calls only, in order, by unqualified name.
    pub fn library_calls(&self) -> Vec<&TraceCall> {
        self.tool_calls.iter().filter(|c| !c.generic).collect()
    }
}

/// A failed query together with everything recorded before the failure.
#[derive(Debug)]
pub struct AgentFailure {
    pub error: AgentError,
    pub trace: SessionTrace,
}

impl fmt::Display for AgentFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for AgentFailure {}

pub fn unqualified(tool_id: &str) -> &str {
    tool_id.rsplit_once("__").map(|(_, n)| n).unwrap_or(tool_id)
}

/// Parses a decomposition reply: a JSON object with a `subtasks` list
/// (optionally inside a code fence), or a numbered/bulleted list.
/// `Ok(None)` means the reply was not understood.
pub fn parse_plan(text: &str) -> Result<Option<Plan>, AgentError> {
    let body = strip_code_fence(text);
    if let (Some(start), Some(end)) = (body.find('{'), body.rfind('}')) {
        if start < end {
            if let Ok(v) = serde_json::from_str::<Value>(&body[start..=end]) {
                if let Some(items) = v.get("subtasks").and_then(Value::as_array) {
                    let subtasks: Vec<String> = items
                        .iter()
                        .filter_map(|s| match s {
                            Value::String(s) => Some(s.trim().to_string()),
                            Value::Object(o) => o.values().find_map(Value::as_str).map(|s| s.trim().to_string()),
                            _ => None,
                        })
                        .filter(|s| !s.is_empty())
                        .collect();
                    if subtasks.is_empty() {
                        return Err(AgentError::DecompositionFormat { response: text.to_string() });
                    }
                    return Ok(Some(Plan { subtasks }));
                }
            }
        }
    }
    let item = regex::Regex::new(r"^\s*(?:\d+[.)]|[-*])\s+(.+?)\s*$").expect("static regex");
    let subtasks: Vec<String> = body
        .lines()
        .filter_map(|l| item.captures(l).map(|c| c[1].to_string()))
        .collect();
    Ok((!subtasks.is_empty()).then_some(Plan { subtasks }))
}

/// Returns the contents of the first fenced code block, or the text itself.
pub fn strip_code_fence(text: &str) -> &str {
    let Some(open) = text.find("```") else { return text.trim() };
    let after = &text[open + 3..];
    let body_start = after.find('\n').map(|i| i + 1).unwrap_or(after.len());
    let body = &after[body_start..];
    match body.find("```") {
        Some(close) => body[..close].trim_matches('\n'),
        None => body.trim_matches('\n'),
    }
}

fn search_tools_schema() -> Value {
    json!({
        "type": "function",
        "function": {
            "name": SEARCH_TOOLS,
            "description": "Search the tool library for tools that can perform the described actions.",
            "parameters": {
                "type": "object",
                "properties": {
                    "action_descriptions": {
                        "type": "array",
                        "items": {"type": "string"},
                        "description": "Generic descriptions of the actions to find tools for."
                    }
                },
                "required": ["action_descriptions"]
            }
        }
    })
}

fn string_schema(name: &str, description: &str, params: &[(&str, &str)]) -> Value {
    let properties: Map<String, Value> = params
        .iter()
        .map(|(p, d)| (p.to_string(), json!({"type": "string", "description": d})))
        .collect();
    let required: Vec<&str> = params.iter().map(|(p, _)| *p).collect();
    json!({
        "type": "function",
        "function": {
            "name": name,
            "description": description,
            "parameters": {"type": "object", "properties": properties, "required": required}
        }
    })
}

/// Schemas of the five tools exposed to the autonomous variant.
pub fn auto_tool_schemas() -> Vec<Value> {
    let mut search = search_tools_schema();
    search["function"]["name"] = json!(SEARCH_TOOL_LIBRARY);
    vec![
        string_schema(
            DECOMPOSE_TASK,
            "Split a task into an ordered list of smaller subtasks.",
            &[("task_description", "The task to split up.")],
        ),
        search,
        string_schema(
            CREATE_TOOL,
            "Generate a new tool for a task and add it to the tool library.",
            &[("task_description", "A generic description of what the new tool should do.")],
        ),
        string_schema(
            UPDATE_TOOL,
            "Change an existing tool according to an instruction.",
            &[
                ("tool_name", "The id of the tool to change."),
                ("instruction", "How the tool should be changed."),
            ],
        ),
        string_schema(DELETE_TOOL, "Remove a tool from the tool library.", &[("tool_name", "The id of the tool to remove.")]),
    ]
}

/// Tools offered in one completion: schemas plus a name → id map.
#[derive(Default)]
struct Offer {
    schemas: Vec<Value>,
    ids: BTreeSet<String>,
}

impl Offer {
    fn add(&mut self, id: &str, schema: Value) {
        if self.ids.insert(id.to_string()) {
            self.schemas.push(schema);
        }
    }

    /// Maps a called name to an offered id; bare names resolve when unique.
    fn resolve(&self, name: &str) -> Option<String> {
        if self.ids.contains(name) {
            return Some(name.to_string());
        }
        let mut matches = self.ids.iter().filter(|id| unqualified(id) == name);
        match (matches.next(), matches.next()) {
            (Some(id), None) => Some(id.clone()),
            _ => None,
        }
    }
}

pub struct Agent {
    config: AgentConfig,
    backend: Arc<dyn ChatBackend>,
    runtime: Arc<Runtime>,
    history: Vec<ChatMessage>,
    /// Library tools made available in earlier turns (NaiveTulip, AutoTulip).
    known_tools: BTreeSet<String>,
}

impl fmt::Debug for Agent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Agent")
            .field("variant", &self.config.variant)
            .field("model", &self.backend.model())
            .field("history", &self.history.len())
            .finish()
    }
}

/// Per-query state.
struct Turn {
    session: Session,
    trace: SessionTrace,
    next_call: usize,
}

impl Turn {
    fn complete(&mut self, messages: &[ChatMessage], tools: &[Value], temperature: f64) -> Result<ChatMessage, AgentError> {
        Ok(self.session.complete(messages, tools, temperature)?)
    }

    fn call_id(&mut self) -> String {
        self.next_call += 1;
        format!("call_local_{}", self.next_call)
    }
}

impl Agent {
    pub fn new(config: AgentConfig, backend: Arc<dyn ChatBackend>, runtime: Arc<Runtime>) -> Result<Self, AgentError> {
        config.validate().map_err(AgentError::Config)?;
        Ok(Self {
            config,
            backend,
            runtime,
            history: Vec::new(),
            known_tools: BTreeSet::new(),
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn library(&self) -> &Arc<ToolLibrary> {
        self.runtime.library()
    }

    pub fn history(&self) -> &[ChatMessage] {
        &self.history
    }

    /// Forgets the conversation and any tools made available so far.
    pub fn reset(&mut self) {
        self.history.clear();
        self.known_tools.clear();
    }

    fn system_prompt(&self) -> String {
        let p = &self.config.prompts;
        match self.config.variant {
            AgentVariant::Base => p.base_system.clone(),
            AgentVariant::NaiveTool | AgentVariant::CotTool | AgentVariant::MinimalTulip => p.naive_tool_system.clone(),
            AgentVariant::OneShotCotTulip => format!("{}\n\n{}", p.tulip_system, p.one_shot_example),
            AgentVariant::AutoTulip => p.auto_system.clone(),
            _ => p.tulip_system.clone(),
        }
    }

    /// Answers one query. The conversation carries over to later queries.
    pub fn run_query(&mut self, query: &str) -> Result<SessionTrace, Box<AgentFailure>> {
        let mut turn = Turn {
            session: Session::new(self.backend.clone(), self.config.max_interactions),
            trace: SessionTrace {
                variant: Some(self.config.variant),
                query: query.to_string(),
                ..SessionTrace::default()
            },
            next_call: 0,
        };
        let history_start = self.history.len();
        let result = if query.trim().is_empty() {
            Err(AgentError::EmptyQuery)
        } else {
            if self.history.is_empty() {
                self.history.push(ChatMessage::system(self.system_prompt()));
            }
            self.dispatch(&mut turn, query)
        };
        let Turn { session, mut trace, .. } = turn;
        trace.messages = self.history[history_start..].to_vec();
        trace.usage = session.ledger;
        trace.requests = session.requests;
        match result {
            Ok(response) => {
                trace.final_response = response;
                Ok(trace)
            }
            Err(error) => {
                trace.failure = Some(error.to_string());
                Err(Box::new(AgentFailure { error, trace }))
            }
        }
    }

    fn dispatch(&mut self, turn: &mut Turn, query: &str) -> Result<String, AgentError> {
        match self.config.variant {
            AgentVariant::Base => {
                self.history.push(ChatMessage::user(query));
                let reply = turn.complete(&self.history, &[], self.config.temperature)?;
                let content = reply.content.clone();
                self.history.push(ChatMessage::assistant(content.clone()));
                Ok(content)
            }
            AgentVariant::NaiveTool => {
                let offer = self.full_library_offer();
                self.history.push(ChatMessage::user(query));
                self.execution_loop(turn, offer, false)
            }
            AgentVariant::CotTool => {
                let plan = self.decompose(turn, query, "")?;
                let offer = self.full_library_offer();
                self.history.push(ChatMessage::user(query));
                self.history.push(ChatMessage::user(fill(
                    &self.config.prompts.execution,
                    &[("steps", &numbered(&plan.subtasks))],
                )));
                self.execution_loop(turn, offer, false)
            }
            AgentVariant::MinimalTulip => {
                let hits = self.search(turn, query, self.config.top_k, None, 0)?;
                let mut offer = Offer::default();
                for hit in hits {
                    offer.add(&hit.descriptor.qualified_id, crate::tooldef::descriptor_schema(&hit.descriptor));
                }
                self.history.push(ChatMessage::user(query));
                self.execution_loop(turn, offer, false)
            }
            AgentVariant::NaiveTulip => {
                self.history.push(ChatMessage::user(query));
                let offer = self.known_offer();
                self.execution_loop(turn, offer, true)
            }
            AgentVariant::AutoTulip => {
                self.history.push(ChatMessage::user(query));
                let offer = self.known_offer();
                self.execution_loop(turn, offer, true)
            }
            v if v.is_cot_tulip() => self.cot_tulip(turn, query),
            _ => unreachable!("all variants handled"),
        }
    }

    fn full_library_offer(&self) -> Offer {
        let mut offer = Offer::default();
        for entry in self.library().entries() {
            offer.add(entry.id(), entry.schema());
        }
        offer
    }

    fn known_offer(&self) -> Offer {
        let mut offer = Offer::default();
        for id in &self.known_tools {
            if let Ok(entry) = self.library().lookup(id) {
                offer.add(id, entry.schema());
            }
        }
        offer
    }

    fn cot_tulip(&mut self, turn: &mut Turn, query: &str) -> Result<String, AgentError> {
        let suffix = match self.config.variant {
            AgentVariant::InformedCotTulip => {
                let description = self
                    .config
                    .library_description
                    .clone()
                    .unwrap_or_else(|| self.library().describe());
                format!("\n{}", fill(prompts::LIBRARY_DESCRIPTION_SUFFIX, &[("description", &description)]))
            }
            AgentVariant::PrimedCotTulip => {
                let hits = self.search(turn, query, self.config.priming_pool_size, None, 0)?;
                let names: Vec<&str> = hits.iter().map(|h| h.descriptor.name.as_str()).collect();
                format!("\n{}", fill(prompts::PRIMING_SUFFIX, &[("names", &names.join(", "))]))
            }
            _ => String::new(),
        };
        let plan = self.decompose(turn, query, &suffix)?;
        let descriptions = self.search_strings(turn, &plan)?;
        let results = self.search_tools_recursive(turn, &descriptions, 0)?;

        let mut offer = Offer::default();
        let mut gaps = Vec::new();
        for r in &results {
            if r.tools.is_empty() {
                gaps.push(r.subtask.clone());
            }
            for hit in &r.tools {
                offer.add(&hit.descriptor.qualified_id, crate::tooldef::descriptor_schema(&hit.descriptor));
            }
        }
        self.history.push(ChatMessage::user(query));
        self.history.push(ChatMessage::user(fill(
            &self.config.prompts.execution,
            &[("steps", &numbered(&plan.subtasks))],
        )));
        let response = self.execution_loop(turn, offer, false)?;
        if gaps.is_empty() {
            Ok(response)
        } else {
            Ok(format!("{response}\n\nNo suitable tool was found for: {}.", gaps.join("; ")))
        }
    }

    /// One completion without tools using the decomposition prompt.
    /// Retries once with a format reminder when the reply is not understood.
    pub fn decompose_with(&self, session: &mut Session, query: &str, suffix: &str) -> Result<(Plan, Vec<Exchange>), AgentError> {
        if query.trim().is_empty() {
            return Err(AgentError::EmptyQuery);
        }
        let prompt = fill(&self.config.prompts.decomposition, &[("prompt", query)]) + suffix;
        let mut messages = vec![ChatMessage::system(self.system_prompt()), ChatMessage::user(prompt)];
        let mut exchanges = Vec::new();
        for attempt in 0..2 {
            let reply = session.complete(&messages, &[], self.config.temperature)?;
            exchanges.push(Exchange {
                purpose: "decomposition".into(),
                request: messages.clone(),
                response: reply.clone(),
            });
            if let Some(plan) = parse_plan(&reply.content)? {
                return Ok((plan, exchanges));
            }
            if attempt == 0 {
                messages.push(ChatMessage::assistant(reply.content.clone()));
                messages.push(ChatMessage::user(prompts::DECOMPOSITION_FORMAT_REMINDER));
            } else {
                return Err(AgentError::DecompositionFormat { response: reply.content });
            }
        }
        unreachable!("loop returns on the second attempt")
    }

    fn decompose(&self, turn: &mut Turn, query: &str, suffix: &str) -> Result<Plan, AgentError> {
        let (plan, exchanges) = self.decompose_with(&mut turn.session, query, suffix)?;
        turn.trace.exchanges.extend(exchanges);
        tracing::info!(subtasks = ?plan.subtasks, "decomposition");
        Ok(plan)
    }

    /// Asks the model for search strings via a `search_tools` call. Falls
    /// back to the subtasks themselves when the model does not call it.
    fn search_strings(&self, turn: &mut Turn, plan: &Plan) -> Result<Vec<String>, AgentError> {
        let messages = vec![
            ChatMessage::system(self.system_prompt()),
            ChatMessage::user(fill(&self.config.prompts.tool_search, &[("tasks", &numbered(&plan.subtasks))])),
        ];
        let reply = turn.complete(&messages, &[search_tools_schema()], self.config.temperature)?;
        turn.trace.exchanges.push(Exchange {
            purpose: "search strings".into(),
            request: messages,
            response: reply.clone(),
        });
        let mut descriptions = Vec::new();
        for call in reply.tool_calls.iter().filter(|c| c.tool_id == SEARCH_TOOLS) {
            let found = string_list(&call.arguments, "action_descriptions");
            turn.trace.tool_calls.push(TraceCall {
                call_id: call.call_id.clone(),
                tool_id: SEARCH_TOOLS.into(),
                name: SEARCH_TOOLS.into(),
                arguments: call.arguments.clone(),
                outcome: Outcome::Value(json!(found)),
                generic: true,
            });
            descriptions.extend(found);
        }
        if descriptions.is_empty() {
            descriptions = plan.subtasks.clone();
        }
        tracing::info!(?descriptions, "tool search");
        Ok(descriptions)
    }

    fn search(
        &self,
        turn: &mut Turn,
        text: &str,
        top_k: usize,
        ceiling: Option<f64>,
        depth: usize,
    ) -> Result<Vec<SearchHit>, AgentError> {
        let (hits, usage) = self.library().search(text, top_k, ceiling)?;
        turn.session.record_embedding(&usage);
        turn.trace.searches.push(SearchEvent {
            query: text.to_string(),
            depth,
            hits: hits.iter().map(|(e, d)| (e.id().to_string(), *d)).collect(),
        });
        Ok(hits
            .into_iter()
            .map(|(e, distance)| SearchHit {
                descriptor: e.descriptor,
                distance,
            })
            .collect())
    }

    /// Searches each description; a description with no hit under the
    /// ceiling is decomposed and searched again until the depth limit.
    fn search_tools_recursive(&self, turn: &mut Turn, descriptions: &[String], depth: usize) -> Result<Vec<SearchResult>, AgentError> {
        let mut out = Vec::new();
        for description in descriptions {
            let hits = self.search(turn, description, self.config.top_k, Some(self.config.recursion_distance_ceiling), depth)?;
            if !hits.is_empty() || depth >= self.config.max_recursion_depth {
                out.push(SearchResult {
                    subtask: description.clone(),
                    tools: hits,
                });
                continue;
            }
            tracing::info!(%description, depth, "no tool under the ceiling; decomposing further");
            let plan = self.decompose(turn, description, "")?;
            let strings = self.search_strings(turn, &plan)?;
            out.extend(self.search_tools_recursive(turn, &strings, depth + 1)?);
        }
        Ok(out)
    }

    /// Completes until a reply carries no tool calls; calls are executed in
    /// order and their results fed back before the next completion.
    fn execution_loop(&mut self, turn: &mut Turn, mut offer: Offer, generic: bool) -> Result<String, AgentError> {
        loop {
            let mut schemas = Vec::new();
            if generic {
                schemas = match self.config.variant {
                    AgentVariant::AutoTulip => auto_tool_schemas(),
                    _ => vec![search_tools_schema()],
                };
            }
            schemas.extend(offer.schemas.iter().cloned());
            let reply = turn.complete(&self.history, &schemas, self.config.temperature)?;
            if reply.tool_calls.is_empty() {
                self.history.push(ChatMessage::assistant(reply.content.clone()));
                return Ok(reply.content);
            }
            let mut calls = reply.tool_calls.clone();
            for call in &mut calls {
                if call.call_id.is_empty() {
                    call.call_id = turn.call_id();
                }
            }
            self.history.push(ChatMessage::assistant_calls(reply.content.clone(), calls.clone()));
            for call in calls {
                let (result, trace_call) = if generic && is_generic_tool(&call.tool_id) {
                    self.generic_call(turn, &call, &mut offer)?
                } else {
                    self.library_call(&call, &offer)
                };
                tracing::info!(tool = %trace_call.tool_id, result = %result.content(), "tool call");
                self.history.push(ChatMessage::tool(result.call_id.clone(), result.content()));
                turn.trace.tool_calls.push(trace_call);
            }
        }
    }

    fn library_call(&self, call: &ToolCall, offer: &Offer) -> (ToolResult, TraceCall) {
        let result = match offer.resolve(&call.tool_id) {
            Some(id) => self.runtime.execute(&ToolCall {
                tool_id: id,
                ..call.clone()
            }),
            None => ToolResult {
                call_id: call.call_id.clone(),
                outcome: Outcome::Error(format!("tool `{}` is not available", call.tool_id)),
            },
        };
        let tool_id = offer.resolve(&call.tool_id).unwrap_or_else(|| call.tool_id.clone());
        let trace = TraceCall {
            call_id: call.call_id.clone(),
            name: unqualified(&tool_id).to_string(),
            tool_id,
            arguments: call.arguments.clone(),
            outcome: result.outcome.clone(),
            generic: false,
        };
        (result, trace)
    }

    fn generic_call(&mut self, turn: &mut Turn, call: &ToolCall, offer: &mut Offer) -> Result<(ToolResult, TraceCall), AgentError> {
        let outcome = match call.tool_id.as_str() {
            SEARCH_TOOLS | SEARCH_TOOL_LIBRARY => {
                let descriptions = string_list(&call.arguments, "action_descriptions");
                if descriptions.is_empty() {
                    Outcome::Error("`action_descriptions` must be a non-empty list of strings".into())
                } else {
                    let ceiling = (self.config.variant == AgentVariant::AutoTulip).then_some(self.config.recursion_distance_ceiling);
                    let mut found = Map::new();
                    for d in &descriptions {
                        let hits = self.search(turn, d, self.config.top_k, ceiling, 0)?;
                        let ids: Vec<Value> = hits.iter().map(|h| json!(h.descriptor.qualified_id)).collect();
                        for h in hits {
                            self.known_tools.insert(h.descriptor.qualified_id.clone());
                            offer.add(&h.descriptor.qualified_id, crate::tooldef::descriptor_schema(&h.descriptor));
                        }
                        found.insert(d.clone(), Value::Array(ids));
                    }
                    Outcome::Value(Value::Object(found))
                }
            }
            DECOMPOSE_TASK => match string_arg(&call.arguments, "task_description") {
                None => Outcome::Error("missing `task_description`".into()),
                Some(task) => match self.decompose_with(&mut turn.session, &task, "") {
                    Ok((plan, exchanges)) => {
                        turn.trace.exchanges.extend(exchanges);
                        Outcome::Value(json!({ "subtasks": plan.subtasks }))
                    }
                    Err(AgentError::Llm(e)) => return Err(AgentError::Llm(e)),
                    Err(e) => Outcome::Error(e.to_string()),
                },
            },
            CREATE_TOOL => match string_arg(&call.arguments, "task_description") {
                None => Outcome::Error("missing `task_description`".into()),
                Some(task) => {
                    let prompt = fill(&self.config.prompts.codegen_create, &[("task", &task)]);
                    match self.generate_code(turn, prompt, "create tool")? {
                        Err(diagnostics) => Outcome::Error(diagnostics),
                        Ok(code) => match self.library().create_tool(&code) {
                            Ok(entry) => {
                                self.known_tools.insert(entry.id().to_string());
                                offer.add(entry.id(), entry.schema());
                                Outcome::Value(json!(format!("Made tool `{}` available via the tool library.", entry.id())))
                            }
                            Err(e) => Outcome::Error(e.to_string()),
                        },
                    }
                }
            },
            UPDATE_TOOL => match (string_arg(&call.arguments, "tool_name"), string_arg(&call.arguments, "instruction")) {
                (Some(name), Some(instruction)) => match self.resolve_library_id(&name) {
                    None => Outcome::Error(format!("unknown tool `{name}`")),
                    Some(id) => match self.library().source_of(&id) {
                        Err(e) => Outcome::Error(e.to_string()),
                        Ok(code) => {
                            let prompt = fill(
                                &self.config.prompts.codegen_update,
                                &[("instruction", &instruction), ("code", &code)],
                            );
                            match self.generate_code(turn, prompt, "update tool")? {
                                Err(diagnostics) => Outcome::Error(diagnostics),
                                Ok(new_code) => match self.library().update_tool(&id, &new_code) {
                                    Ok(entry) => {
                                        self.runtime.unregister_native(&id);
                                        offer.ids.remove(&id);
                                        offer.schemas.retain(|s| s.pointer("/function/name").and_then(Value::as_str) != Some(id.as_str()));
                                        offer.add(&id, entry.schema());
                                        Outcome::Value(json!(format!("Successfully updated `{id}`.")))
                                    }
                                    Err(e) => Outcome::Error(e.to_string()),
                                },
                            }
                        }
                    },
                },
                _ => Outcome::Error("`tool_name` and `instruction` are required".into()),
            },
            DELETE_TOOL => match string_arg(&call.arguments, "tool_name") {
                None => Outcome::Error("missing `tool_name`".into()),
                Some(name) => match self.resolve_library_id(&name) {
                    None => Outcome::Error(format!("unknown tool `{name}`")),
                    Some(id) => match self.library().delete_tool(&id) {
                        Ok(_) => {
                            self.runtime.unregister_native(&id);
                            self.known_tools.remove(&id);
                            offer.ids.remove(&id);
                            offer.schemas.retain(|s| s.pointer("/function/name").and_then(Value::as_str) != Some(id.as_str()));
                            Outcome::Value(json!(format!("Deleted `{id}` from the tool library.")))
                        }
                        Err(e) => Outcome::Error(e.to_string()),
                    },
                },
            },
            other => Outcome::Error(format!("tool `{other}` is not available")),
        };
        let result = ToolResult {
            call_id: call.call_id.clone(),
            outcome: outcome.clone(),
        };
        let trace = TraceCall {
            call_id: call.call_id.clone(),
            tool_id: call.tool_id.clone(),
            name: call.tool_id.clone(),
            arguments: call.arguments.clone(),
            outcome,
            generic: true,
        };
        Ok((result, trace))
    }

    fn resolve_library_id(&self, name: &str) -> Option<String> {
        if self.library().lookup(name).is_ok() {
            return Some(name.to_string());
        }
        let matches: Vec<String> = self
            .library()
            .entries()
            .into_iter()
            .filter(|e| e.descriptor.name == name)
            .map(|e| e.id().to_string())
            .collect();
        (matches.len() == 1).then(|| matches[0].clone())
    }

    /// Runs code generation with validation feedback. The outer error is
    /// for backend failures; the inner one carries the final diagnostics.
    fn generate_code(&self, turn: &mut Turn, prompt: String, purpose: &str) -> Result<Result<String, String>, AgentError> {
        let mut messages = vec![ChatMessage::system(self.config.prompts.codegen_system.clone()), ChatMessage::user(prompt)];
        let mut last = String::new();
        for _ in 0..self.config.codegen_attempts {
            let reply = turn.complete(&messages, &[], self.config.temperature)?;
            turn.trace.exchanges.push(Exchange {
                purpose: purpose.to_string(),
                request: messages.clone(),
                response: reply.clone(),
            });
            let code = format!("{}\n", strip_code_fence(&reply.content));
            let diagnostics = self.runtime.validate_source(&code);
            if diagnostics.is_empty() {
                return Ok(Ok(code));
            }
            last = diagnostics.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n");
            tracing::warn!(%last, "generated code rejected");
            messages.push(ChatMessage::assistant(reply.content));
            messages.push(ChatMessage::user(fill(prompts::CODEGEN_RETRY, &[("diagnostics", &last)])));
        }
        Ok(Err(format!(
            "code generation failed after {} attempts: {last}",
            self.config.codegen_attempts
        )))
    }
}

fn string_arg(arguments: &Map<String, Value>, key: &str) -> Option<String> {
    arguments
        .get(key)
        .and_then(Value::as_str)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
}

fn string_list(arguments: &Map<String, Value>, key: &str) -> Vec<String> {
    match arguments.get(key) {
        Some(Value::Array(items)) => items
            .iter()
            .filter_map(Value::as_str)
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect(),
        Some(Value::String(s)) if !s.trim().is_empty() => vec![s.trim().to_string()],
        _ => Vec::new(),
    }
}

/// Counts of library tools per name over the calls of a trace.
pub fn called_names(trace: &SessionTrace) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for call in trace.library_calls() {
        *out.entry(call.name.clone()).or_insert(0) += 1;
    }
    out
}

/// Number of tool schemas sent with each completion request.
pub fn schema_counts(trace: &SessionTrace) -> Vec<usize> {
    trace.requests.iter().map(|r| r.tool_names.len()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashingEmbedder;
    use crate::llm::{ScriptStep, ScriptedBackend, StepUsage, Transcript};
    use crate::runtime::InterpreterConfig;
    use crate::toollib::LibraryConfig;

    fn corpus_runtime() -> Arc<Runtime> {
        let config = LibraryConfig::in_memory(Arc::new(HashingEmbedder::default()));
        let (lib, _) = ToolLibrary::initialize(config, &crate::corpus::sources()).unwrap();
        let rt = Runtime::new(Arc::new(lib), InterpreterConfig::disabled());
        rt.register_corpus_natives();
        Arc::new(rt)
    }

    fn step(response: ChatMessage) -> ScriptStep {
        ScriptStep {
            matcher: None,
            response,
            usage: Some(StepUsage {
                prompt_tokens: 10,
                completion_tokens: 1,
            }),
        }
    }

    fn call(id: &str, tool: &str, args: Value) -> ToolCall {
        ToolCall {
            call_id: id.into(),
            tool_id: tool.into(),
            arguments: args.as_object().unwrap().clone(),
        }
    }

    fn backend(steps: Vec<ScriptStep>) -> Arc<ScriptedBackend> {
        Arc::new(ScriptedBackend::new(Transcript {
            model: "gpt-3.5-turbo-0125".into(),
            steps,
        }))
    }

    fn agent(variant: AgentVariant, steps: Vec<ScriptStep>) -> (Agent, Arc<ScriptedBackend>) {
        let b = backend(steps);
        let config = AgentConfig {
            recursion_distance_ceiling: 1.3,
            ..AgentConfig::for_variant(variant)
        };
        (Agent::new(config, b.clone(), corpus_runtime()).unwrap(), b)
    }

    #[test]
    fn variant_names_parse() {
        for v in AgentVariant::ALL {
            assert_eq!(v.name().parse::<AgentVariant>().unwrap(), v);
            assert_eq!(format!("{}Agent", v.name()).parse::<AgentVariant>().unwrap(), v);
        }
        assert_eq!("cot-tulip".parse::<AgentVariant>().unwrap(), AgentVariant::CotTulip);
        assert!("tulip".parse::<AgentVariant>().is_err());
    }

    #[test]
    fn plans_from_json_and_lists() {
        let p = parse_plan(r#"{"subtasks": ["Multiply 45342 by 23487.", "Add the result to 32478."]}"#).unwrap().unwrap();
        assert_eq!(p.subtasks.len(), 2);
        assert_eq!(parse_plan(r#"{"subtasks": ["x"]}"#).unwrap().unwrap().subtasks, ["x"]);
        assert!(matches!(parse_plan(r#"{"subtasks": []}"#), Err(AgentError::DecompositionFormat { .. })));
        let fenced = "```json\n{\"subtasks\": [\"a\", \"b\"]}\n```";
        assert_eq!(parse_plan(fenced).unwrap().unwrap().subtasks, ["a", "b"]);
        let listed = "1. Multiply 45342 by 23487.\n2. Add the result of step 1 to 32478.";
        assert_eq!(
            parse_plan(listed).unwrap().unwrap().subtasks,
            ["Multiply 45342 by 23487.", "Add the result of step 1 to 32478."]
        );
        assert_eq!(parse_plan("I am not sure.").unwrap(), None);
    }

    #[test]
    fn decomposition_retries_once() {
        let (mut a, b) = agent(
            AgentVariant::CotTool,
            vec![
                step(ChatMessage::assistant("no idea")),
                step(ChatMessage::assistant("still no idea")),
            ],
        );
        let failure = a.run_query("q").unwrap_err();
        assert!(matches!(failure.error, AgentError::DecompositionFormat { .. }));
        assert_eq!(b.consumed(), 2);
        assert_eq!(failure.trace.interactions(), 2);
    }

    #[test]
    fn base_agent_never_calls_tools() {
        let (mut a, _) = agent(AgentVariant::Base, vec![step(ChatMessage::assistant("It is 42."))]);
        let trace = a.run_query("What is 6 * 7?").unwrap();
        assert_eq!(trace.final_response, "It is 42.");
        assert!(trace.tool_calls.is_empty());
        assert_eq!(schema_counts(&trace), [0]);
    }

    #[test]
    fn naive_tool_offers_every_tool() {
        let (mut a, _) = agent(
            AgentVariant::NaiveTool,
            vec![
                step(ChatMessage::assistant_calls("", vec![call("c1", "arithmetic__add", json!({"a": 2, "b": 3}))])),
                step(ChatMessage::assistant("5")),
            ],
        );
        let trace = a.run_query("What is 2 + 3?").unwrap();
        assert_eq!(schema_counts(&trace), [100, 100]);
        assert_eq!(trace.tool_calls[0].outcome, Outcome::Value(json!(5)));
    }

    #[test]
    fn calls_outside_the_offer_are_refused() {
        let rt = corpus_runtime();
        let (near, _) = rt.library().search("add two numbers", 5, None).unwrap();
        let outside = rt
            .library()
            .ids()
            .into_iter()
            .find(|id| near.iter().all(|(e, _)| e.id() != id))
            .unwrap();
        let b = backend(vec![
            step(ChatMessage::assistant_calls("", vec![call("c1", &outside, json!({}))])),
            step(ChatMessage::assistant("done")),
        ]);
        let mut a = Agent::new(AgentConfig::for_variant(AgentVariant::MinimalTulip), b, rt).unwrap();
        let trace = a.run_query("add two numbers").unwrap();
        assert_eq!(trace.requests[0].tool_names.len(), 5);
        assert!(!trace.requests[0].tool_names.contains(&outside));
        match &trace.tool_calls[0].outcome {
            Outcome::Error(e) => assert!(e.contains("not available")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn recursion_costs_two_calls_per_level_and_stops() {
        let decomposition = || step(ChatMessage::assistant(r#"{"subtasks": ["translate a poem into french"]}"#));
        let strings = || {
            step(ChatMessage::assistant_calls(
                "",
                vec![call("s", SEARCH_TOOLS, json!({"action_descriptions": ["translate a poem into french"]}))],
            ))
        };
        // top-level decomposition + search strings, then two recursion levels
        let steps = vec![
            decomposition(),
            strings(),
            decomposition(),
            strings(),
            decomposition(),
            strings(),
            step(ChatMessage::assistant("I cannot do that.")),
        ];
        let (mut a, b) = agent(AgentVariant::CotTulip, steps);
        let trace = a.run_query("Translate a poem into French.").unwrap();
        assert_eq!(b.remaining(), 0);
        assert_eq!(trace.interactions(), 2 + 2 * 2 + 1);
        assert_eq!(trace.searches.iter().map(|s| s.depth).max(), Some(2));
        assert!(trace.final_response.contains("No suitable tool was found"));
        assert_eq!(schema_counts(&trace).last(), Some(&0));
    }

    #[test]
    fn interaction_limit_returns_partial_trace() {
        let looping = (0..10)
            .map(|i| step(ChatMessage::assistant_calls("", vec![call(&format!("c{i}"), "arithmetic__add", json!({"a": 1, "b": 1}))])))
            .collect();
        let b = backend(looping);
        let config = AgentConfig {
            max_interactions: 4,
            ..AgentConfig::for_variant(AgentVariant::NaiveTool)
        };
        let mut a = Agent::new(config, b, corpus_runtime()).unwrap();
        let failure = a.run_query("loop").unwrap_err();
        assert!(matches!(failure.error, AgentError::Llm(LlmError::InteractionLimitExceeded { limit: 4 })));
        assert_eq!(failure.trace.tool_calls.len(), 4);
        assert!(failure.trace.failure.is_some());
    }

    #[test]
    fn naive_tulip_grows_its_offer() {
        let (mut a, _) = agent(
            AgentVariant::NaiveTulip,
            vec![
                step(ChatMessage::assistant_calls(
                    "",
                    vec![call("s1", SEARCH_TOOLS, json!({"action_descriptions": ["add two numbers"]}))],
                )),
                step(ChatMessage::assistant_calls("", vec![call("c1", "add", json!({"a": 1, "b": 2}))])),
                step(ChatMessage::assistant("3")),
            ],
        );
        let trace = a.run_query("What is 1 + 2?").unwrap();
        assert_eq!(trace.requests[0].tool_names, [SEARCH_TOOLS]);
        assert!(trace.requests[1].tool_names.contains(&"arithmetic__add".to_string()));
        assert_eq!(trace.library_calls()[0].outcome, Outcome::Value(json!(3)));
        assert_eq!(trace.library_calls()[0].tool_id, "arithmetic__add");
    }

    #[test]
    fn config_validation() {
        let bad = AgentConfig {
            top_k: 0,
            ..AgentConfig::default()
        };
        assert!(Agent::new(bad, backend(vec![]), corpus_runtime()).is_err());
        let toml_like: AgentConfig = serde_json::from_value(json!({"variant": "AutoTulip", "top_k": 3})).unwrap();
        assert_eq!(toml_like.top_k, 3);
        assert_eq!(toml_like.max_recursion_depth, 2);
        assert!(serde_json::from_value::<AgentConfig>(json!({"topk": 3})).is_err());
    }

    #[test]
    fn code_fences() {
        assert_eq!(strip_code_fence("```python\ndef f():\n    pass\n```"), "def f():\n    pass");
        assert_eq!(strip_code_fence("def f(): pass"), "def f(): pass");
    }
}

//! Tool execution: in-process registrations and file-bound tools run by an
//! external interpreter over a one-line JSON protocol.
//!
//! ```text
//!   spawn  <command...> <tdf_path> <function_name>
//!   stdin  {"arguments": {...}}\n
//!   stdout {"result": <value>}\n   or   {"error": "<text>"}\n
//! ```

use std::collections::HashMap;
use std::io::{Read, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::pyrepr::python_str;
use crate::tooldef::{self, ParamKind, ToolDescriptor};
use crate::toollib::{ToolBinding, ToolLibrary};

pub const ENV_INTERPRETER: &str = "TULIP_INTERPRETER";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);
const RUNNER_SOURCE: &str = include_str!("../assets/tdf_runner.py");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RuntimeError {
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
    #[error("tool `{0}` has no executable binding")]
    NotExecutable(String),
    #[error("invalid argument `{parameter}` for `{tool}`: {message}")]
    ArgumentError { tool: String, parameter: String, message: String },
    #[error("tool `{tool}` timed out after {after:?}")]
    Timeout { tool: String, after: Duration },
    #[error("`{0}` is already registered")]
    DuplicateRegistration(String),
    #[error("registration for `{tool}` does not match its descriptor: {message}")]
    SignatureMismatch { tool: String, message: String },
    #[error("interpreter failure: {0}")]
    Interpreter(String),
    #[error("{0}")]
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub call_id: String,
    pub tool_id: String,
    #[serde(default)]
    pub arguments: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Value(Value),
    Error(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub call_id: String,
    pub outcome: Outcome,
}

impl ToolResult {
    pub fn value(&self) -> Option<&Value> {
        match &self.outcome {
            Outcome::Value(v) => Some(v),
            Outcome::Error(_) => None,
        }
    }

    pub fn error(&self) -> Option<&str> {
        match &self.outcome {
            Outcome::Error(e) => Some(e),
            Outcome::Value(_) => None,
        }
    }

    /// Text handed back to the model as the tool message.
    pub fn content(&self) -> String {
        match &self.outcome {
            Outcome::Value(v) => python_str(v),
            Outcome::Error(e) => format!("Error: {e}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpreterConfig {
    /// Executable and leading arguments; the tdf path and function name are appended.
    pub command: Vec<String>,
    pub timeout: Duration,
    pub enabled: bool,
}

impl Default for InterpreterConfig {
    /// `python3` with the bundled runner, or `TULIP_INTERPRETER` when set.
    fn default() -> Self {
        let command = match std::env::var(ENV_INTERPRETER) {
            Ok(c) if !c.trim().is_empty() => c.split_whitespace().map(String::from).collect(),
            _ => vec!["python3".to_string(), bundled_runner().display().to_string()],
        };
        Self {
            command,
            timeout: DEFAULT_TIMEOUT,
            enabled: true,
        }
    }
}

impl InterpreterConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn check(&self) -> Result<(), String> {
        if self.timeout.is_zero() {
            return Err("interpreter timeout must be positive".into());
        }
        if self.enabled && self.command.is_empty() {
            return Err("interpreter command is empty".into());
        }
        Ok(())
    }
}

/// Writes the bundled runner script to the temp directory once per content
/// version and returns its path.
pub fn bundled_runner() -> PathBuf {
    let crc = crc32fast::hash(RUNNER_SOURCE.as_bytes());
    let path = std::env::temp_dir().join(format!("tulip-tdf-runner-{crc:08x}.py"));
    let current = std::fs::read_to_string(&path).map(|t| t == RUNNER_SOURCE).unwrap_or(false);
    if !current {
        let tmp = path.with_extension(format!("{}.tmp", std::process::id()));
        if std::fs::write(&tmp, RUNNER_SOURCE).is_ok() {
            let _ = std::fs::rename(&tmp, &path);
        }
    }
    path
}

/// A finding from [`Runtime::validate_source`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub kind: String,
    pub line: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.line {
            Some(l) => write!(f, "{} (line {l}): {}", self.kind, self.message),
            None => write!(f, "{}: {}", self.kind, self.message),
        }
    }
}

pub type NativeCallable = Arc<dyn Fn(&[Value]) -> Result<Value, String> + Send + Sync>;

struct NativeTool {
    callable: NativeCallable,
}

pub struct Runtime {
    library: Arc<ToolLibrary>,
    natives: RwLock<HashMap<String, NativeTool>>,
    interpreter: InterpreterConfig,
}

impl std::fmt::Debug for Runtime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Runtime")
            .field("natives", &self.natives.read().map(|n| n.len()).unwrap_or(0))
            .field("interpreter", &self.interpreter)
            .finish()
    }
}

impl Runtime {
    pub fn new(library: Arc<ToolLibrary>, interpreter: InterpreterConfig) -> Self {
        Self {
            library,
            natives: RwLock::new(HashMap::new()),
            interpreter,
        }
    }

    pub fn library(&self) -> &Arc<ToolLibrary> {
        &self.library
    }

    pub fn interpreter(&self) -> &InterpreterConfig {
        &self.interpreter
    }

    /// Registers an in-process implementation. Arguments are passed in
    /// descriptor order.
    pub fn register_native(&self, qualified_id: &str, kinds: &[ParamKind], callable: NativeCallable) -> Result<(), RuntimeError> {
        let entry = self
            .library
            .lookup(qualified_id)
            .map_err(|_| RuntimeError::UnknownTool(qualified_id.to_string()))?;
        let declared: Vec<ParamKind> = entry.descriptor.parameters.iter().map(|p| p.kind).collect();
        if declared.len() != kinds.len() {
            return Err(RuntimeError::SignatureMismatch {
                tool: qualified_id.to_string(),
                message: format!("descriptor has {} parameters, registration has {}", declared.len(), kinds.len()),
            });
        }
        if let Some(i) = declared.iter().zip(kinds).position(|(a, b)| a != b) {
            return Err(RuntimeError::SignatureMismatch {
                tool: qualified_id.to_string(),
                message: format!(
                    "parameter `{}` is {} in the descriptor but {} in the registration",
                    entry.descriptor.parameters[i].name,
                    declared[i].as_str(),
                    kinds[i].as_str()
                ),
            });
        }
        let mut natives = self.natives.write().unwrap_or_else(|e| e.into_inner());
        if natives.contains_key(qualified_id) {
            return Err(RuntimeError::DuplicateRegistration(qualified_id.to_string()));
        }
        natives.insert(qualified_id.to_string(), NativeTool { callable });
        Ok(())
    }

    /// Registers the built-in implementations for every library entry that
    /// is an unmodified copy of a bundled corpus tool.
    pub fn register_corpus_natives(&self) -> usize {
        let bundled: HashMap<String, String> = crate::corpus::MODULES
            .iter()
            .filter_map(|(m, text)| tooldef::parse_tool_file(m, text).ok())
            .flat_map(|f| f.descriptors)
            .map(|d| (d.qualified_id.clone(), tooldef::embedding_document(&d)))
            .collect();
        let mut count = 0;
        for entry in self.library.entries() {
            if bundled.get(entry.id()) != Some(&entry.document) {
                continue;
            }
            let Some(f) = crate::corpus::native(&entry.descriptor.name) else { continue };
            let kinds: Vec<ParamKind> = entry.descriptor.parameters.iter().map(|p| p.kind).collect();
            if self.register_native(entry.id(), &kinds, Arc::new(f)).is_ok() {
                count += 1;
            }
        }
        count
    }

    /// Drops an in-process registration, e.g. after the tool's source was
    /// rewritten. Returns whether one existed.
    pub fn unregister_native(&self, qualified_id: &str) -> bool {
        self.natives
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .remove(qualified_id)
            .is_some()
    }

    pub fn is_native(&self, qualified_id: &str) -> bool {
        self.natives.read().map(|n| n.contains_key(qualified_id)).unwrap_or(false)
    }

    /// Runs a call. Never fails: every problem becomes an error outcome.
    pub fn execute(&self, call: &ToolCall) -> ToolResult {
        let outcome = match self.try_execute(call) {
            Ok(v) => Outcome::Value(v),
            Err(e) => Outcome::Error(e.to_string()),
        };
        ToolResult {
            call_id: call.call_id.clone(),
            outcome,
        }
    }

    pub fn try_execute(&self, call: &ToolCall) -> Result<Value, RuntimeError> {
        let entry = self
            .library
            .lookup(&call.tool_id)
            .map_err(|_| RuntimeError::UnknownTool(call.tool_id.clone()))?;
        let arguments = validate_arguments(&entry.descriptor, &call.arguments)?;

        let native = self
            .natives
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(&call.tool_id)
            .map(|n| n.callable.clone());
        if let Some(f) = native {
            let positional: Vec<Value> = arguments.values().cloned().collect();
            return match catch_unwind(AssertUnwindSafe(|| f(&positional))) {
                Ok(r) => r.map_err(RuntimeError::Failed),
                Err(_) => Err(RuntimeError::Failed(format!("native tool `{}` panicked", call.tool_id))),
            };
        }
        match &entry.binding {
            ToolBinding::File(path) if self.interpreter.enabled => {
                run_interpreter(&self.interpreter, path, &entry.descriptor.name, &arguments)
            }
            _ => Err(RuntimeError::NotExecutable(call.tool_id.clone())),
        }
    }

    /// Parses `source_text` as a tool file and, with an interpreter
    /// enabled, loads it with the interpreter's check mode.
    pub fn validate_source(&self, source_text: &str) -> Vec<Diagnostic> {
        validate_source(&self.interpreter, source_text)
    }
}

pub fn validate_source(interpreter: &InterpreterConfig, source_text: &str) -> Vec<Diagnostic> {
    match tooldef::parse_tool_file("candidate", source_text) {
        Err(e) => {
            return vec![Diagnostic {
                kind: e.kind().to_string(),
                line: e.line(),
                message: e.to_string(),
            }]
        }
        Ok(f) if f.descriptors.is_empty() => {
            return vec![Diagnostic {
                kind: "NoFunction".into(),
                line: None,
                message: "source defines no public function".into(),
            }]
        }
        Ok(_) => {}
    }
    if !interpreter.enabled {
        return Vec::new();
    }
    let file = match tempfile::Builder::new().suffix(".tdf").tempfile() {
        Ok(f) => f,
        Err(e) => return vec![interpreter_diagnostic(format!("cannot create temp file: {e}"))],
    };
    if let Err(e) = std::fs::write(file.path(), source_text) {
        return vec![interpreter_diagnostic(format!("cannot write temp file: {e}"))];
    }
    let args = vec!["--check".to_string(), file.path().display().to_string()];
    match run_protocol(interpreter, &args, None) {
        Ok(_) => Vec::new(),
        Err(RuntimeError::Failed(msg)) => {
            let line = regex::Regex::new(r"line (\d+)")
                .ok()
                .and_then(|re| re.captures(&msg))
                .and_then(|c| c[1].parse().ok());
            let kind = msg.split(':').next().unwrap_or("Error").trim().to_string();
            vec![Diagnostic { kind, line, message: msg }]
        }
        Err(e) => vec![interpreter_diagnostic(e.to_string())],
    }
}

fn interpreter_diagnostic(message: String) -> Diagnostic {
    Diagnostic {
        kind: "Interpreter".into(),
        line: None,
        message,
    }
}

/// Checks names and kinds and returns the arguments in descriptor order.
/// Integral floats are accepted for integer parameters and converted.
pub fn validate_arguments(descriptor: &ToolDescriptor, arguments: &Map<String, Value>) -> Result<Map<String, Value>, RuntimeError> {
    let err = |parameter: &str, message: String| RuntimeError::ArgumentError {
        tool: descriptor.qualified_id.clone(),
        parameter: parameter.to_string(),
        message,
    };
    if let Some(extra) = arguments.keys().find(|k| descriptor.parameter(k).is_none()) {
        return Err(err(extra, "unexpected argument".into()));
    }
    let mut out = Map::new();
    for p in &descriptor.parameters {
        let value = arguments.get(&p.name).ok_or_else(|| err(&p.name, "missing required argument".into()))?;
        let coerced = coerce(p.kind, p.items, value).map_err(|m| err(&p.name, m))?;
        out.insert(p.name.clone(), coerced);
    }
    Ok(out)
}

fn coerce(kind: ParamKind, items: Option<ParamKind>, value: &Value) -> Result<Value, String> {
    let mismatch = || format!("expected {}, got {value}", kind.as_str());
    match kind {
        ParamKind::Number if value.is_number() => Ok(value.clone()),
        ParamKind::Integer => {
            if value.is_i64() || value.is_u64() {
                return Ok(value.clone());
            }
            match value.as_f64() {
                Some(x) if x.fract() == 0.0 && x.abs() < 9.007_199_254_740_992e15 => Ok(Value::from(x as i64)),
                _ => Err(mismatch()),
            }
        }
        ParamKind::String if value.is_string() => Ok(value.clone()),
        ParamKind::Boolean if value.is_boolean() => Ok(value.clone()),
        ParamKind::Object if value.is_object() => Ok(value.clone()),
        ParamKind::Array => {
            let array = value.as_array().ok_or_else(mismatch)?;
            match items {
                None => Ok(value.clone()),
                Some(item) => array
                    .iter()
                    .enumerate()
                    .map(|(i, v)| coerce(item, None, v).map_err(|m| format!("element {i}: {m}")))
                    .collect::<Result<Vec<_>, _>>()
                    .map(Value::Array),
            }
        }
        _ => Err(mismatch()),
    }
}

/// Runs one function of a tool file through the interpreter protocol.
pub fn run_interpreter(
    config: &InterpreterConfig,
    path: &Path,
    function: &str,
    arguments: &Map<String, Value>,
) -> Result<Value, RuntimeError> {
    let request = serde_json::json!({ "arguments": arguments });
    let args = vec![path.display().to_string(), function.to_string()];
    run_protocol(config, &args, Some(&request)).map_err(|e| match e {
        RuntimeError::Timeout { after, .. } => RuntimeError::Timeout {
            tool: function.to_string(),
            after,
        },
        other => other,
    })
}

fn run_protocol(config: &InterpreterConfig, args: &[String], request: Option<&Value>) -> Result<Value, RuntimeError> {
    let (program, leading) = config
        .command
        .split_first()
        .ok_or_else(|| RuntimeError::Interpreter("empty interpreter command".into()))?;
    let mut child = Command::new(program)
        .args(leading)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| RuntimeError::Interpreter(format!("cannot start `{program}`: {e}")))?;

    let mut stdin = child.stdin.take().expect("piped stdin");
    if let Some(request) = request {
        // a child that exits early closes the pipe; its output explains why
        let _ = writeln!(stdin, "{request}");
    }
    drop(stdin);

    let mut stdout = child.stdout.take().expect("piped stdout");
    let mut stderr = child.stderr.take().expect("piped stderr");
    let out_reader = std::thread::spawn(move || {
        let mut s = String::new();
        let _ = stdout.read_to_string(&mut s);
        s
    });
    let err_reader = std::thread::spawn(move || {
        let mut s = String::new();
        let _ = stderr.read_to_string(&mut s);
        s
    });

    let started = Instant::now();
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) if started.elapsed() >= config.timeout => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(RuntimeError::Timeout {
                    tool: args.last().cloned().unwrap_or_default(),
                    after: config.timeout,
                });
            }
            Ok(None) => std::thread::sleep(Duration::from_millis(2)),
            Err(e) => return Err(RuntimeError::Interpreter(e.to_string())),
        }
    };
    let stdout = out_reader.join().unwrap_or_default();
    let stderr = err_reader.join().unwrap_or_default();

    let line = stdout.lines().find(|l| !l.trim().is_empty());
    let parsed = line.and_then(|l| serde_json::from_str::<Map<String, Value>>(l).ok());
    match parsed {
        Some(mut msg) if msg.len() == 1 && msg.contains_key("result") => {
            if status.success() {
                Ok(msg.remove("result").expect("checked"))
            } else {
                Err(RuntimeError::Interpreter(format!("interpreter exited with {status}")))
            }
        }
        Some(msg) if msg.len() == 1 && msg.contains_key("error") => {
            Err(RuntimeError::Failed(python_str(&msg["error"])))
        }
        _ => {
            let tail: String = stderr.trim().chars().rev().take(300).collect::<Vec<_>>().into_iter().rev().collect();
            Err(RuntimeError::Interpreter(format!(
                "malformed protocol reply (exit {status}): {:?}; stderr: {tail}",
                line.unwrap_or("")
            )))
        }
    }
}

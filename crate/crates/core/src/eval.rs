//! Benchmark harness: task files, scoring, repeated runs, reports, and the
//! generator for benchmark tool libraries.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::{Arc, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::agents::{is_generic_tool, strip_code_fence, Agent, AgentConfig, AgentVariant, SessionTrace};
use crate::llm::{ChatBackend, ChatMessage, CostTable, LlmError, Session, UsageRecord};
use crate::par::{self, Execution};
use crate::prompts;
use crate::runtime::Runtime;
use crate::tooldef::{self, remove_function};
use crate::toollib::{snake_case, ModuleSource};

/// Relative tolerance for numeric answers.
pub const NUMERIC_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_RUNS: usize = 5;
pub const PRECISION_CONVENTION: &str =
    "precision is 1.0 for runs without library tool calls; repeated calls count in the denominator";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("interquartile mean of an empty list")]
    EmptyInput,
    #[error("{path}: {message}")]
    TaskFile { path: String, message: String },
    #[error("task {task}: {message}")]
    InvalidTask { task: String, message: String },
    #[error("codegen requires a live backend")]
    NotLive,
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Easy,
    Medium,
    Hard,
}

impl Category {
    /// Easy uses one tool, medium two or three, hard four or more.
    pub fn from_function_count(n: usize) -> Option<Self> {
        match n {
            0 => None,
            1 => Some(Category::Easy),
            2 | 3 => Some(Category::Medium),
            _ => Some(Category::Hard),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Easy => "easy",
            Category::Medium => "medium",
            Category::Hard => "hard",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTask {
    pub task: String,
    pub functions: Vec<String>,
    pub name: String,
    pub valid_solutions: Vec<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<Category>,
}

impl EvalTask {
    pub fn category(&self) -> Category {
        self.category
            .or_else(|| Category::from_function_count(self.functions.len()))
            .unwrap_or(Category::Easy)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let invalid = |message: String| EvalError::InvalidTask {
            task: self.name.clone(),
            message,
        };
        if self.task.trim().is_empty() {
            return Err(invalid("empty task text".into()));
        }
        if self.valid_solutions.is_empty() {
            return Err(invalid("no valid solutions".into()));
        }
        let inferred = Category::from_function_count(self.functions.len()).ok_or_else(|| invalid("no expected functions".into()))?;
        if let Some(c) = self.category {
            if c != inferred {
                return Err(invalid(format!(
                    "category {} does not fit {} expected functions",
                    c.as_str(),
                    self.functions.len()
                )));
            }
        }
        Ok(())
    }
}

pub fn load_tasks(path: &Path) -> Result<Vec<EvalTask>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let tasks: Vec<EvalTask> = serde_json::from_str(&text).map_err(|e| EvalError::TaskFile {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut names = BTreeSet::new();
    for t in &tasks {
        t.validate()?;
        if !names.insert(t.name.as_str()) {
            return Err(EvalError::InvalidTask {
                task: t.name.clone(),
                message: "duplicate task name".into(),
            });
        }
    }
    Ok(tasks)
}

/// Expected function names that no library tool carries.
pub fn missing_functions(tasks: &[EvalTask], runtime: &Runtime) -> Vec<(String, String)> {
    let names: BTreeSet<String> = runtime.library().entries().into_iter().map(|e| e.descriptor.name).collect();
    tasks
        .iter()
        .flat_map(|t| t.functions.iter().map(move |f| (t.name.clone(), f.clone())))
        .filter(|(_, f)| !names.contains(f))
        .collect()
}

fn number_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"-?(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?(?:[eE][-+]?\d+)?").expect("static regex"))
}

fn numbers_in(text: &str) -> Vec<f64> {
    number_regex()
        .find_iter(text)
        .filter_map(|m| m.as_str().replace(',', "").parse().ok())
        .collect()
}

fn close(x: f64, target: f64) -> bool {
    x == target || (x - target).abs() <= NUMERIC_TOLERANCE * target.abs()
}

/// True iff a number in the response matches a numeric solution, or a
/// string solution occurs in the response.
pub fn score_correctness(final_response: &str, valid_solutions: &[Value]) -> bool {
    let found = numbers_in(final_response);
    valid_solutions.iter().any(|s| match s {
        Value::Number(n) => n.as_f64().is_some_and(|t| found.iter().any(|&x| close(x, t))),
        Value::String(text) => !text.is_empty() && final_response.contains(text.as_str()),
        _ => false,
    })
}

/// Precision and recall of library tool names called in a trace.
pub fn tool_precision_recall(trace: &SessionTrace, expected: &[String]) -> (f64, f64) {
    let called: Vec<&str> = trace
        .tool_calls
        .iter()
        .filter(|c| !c.generic && !is_generic_tool(&c.name))
        .map(|c| c.name.as_str())
        .collect();
    precision_recall(&called, expected)
}

pub fn precision_recall(called: &[&str], expected: &[String]) -> (f64, f64) {
    let expected: BTreeSet<&str> = expected.iter().map(String::as_str).collect();
    let precision = if called.is_empty() {
        1.0
    } else {
        called.iter().filter(|c| expected.contains(*c)).count() as f64 / called.len() as f64
    };
    let recall = if expected.is_empty() {
        1.0
    } else {
        expected.iter().filter(|e| called.contains(e)).count() as f64 / expected.len() as f64
    };
    (precision, recall)
}

/// Mean after dropping `floor(n/4)` values from each end of the sorted list.
pub fn interquartile_mean(values: &[f64]) -> Result<f64, EvalError> {
    if values.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cut = sorted.len() / 4;
    let kept = &sorted[cut..sorted.len() - cut];
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRunResult {
    pub task: String,
    pub category: Category,
    pub run: usize,
    pub correct: bool,
    pub precision: f64,
    pub recall: f64,
    pub cost_usd: f64,
    pub interaction_count: usize,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub embedding_tokens: u64,
    pub tools_called: Vec<String>,
    pub final_response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryAggregate {
    pub category: Category,
    pub tasks: usize,
    pub runs: usize,
    pub correctness: f64,
    pub precision: f64,
    pub recall: f64,
    pub iqm_cost_usd: f64,
    pub mean_interactions: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub variant: AgentVariant,
    pub chat_model: String,
    pub embedding_model: String,
    pub top_k: usize,
    pub runs: usize,
    pub setup_embedding_tokens_per_run: u64,
    pub conventions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: ReportConfig,
    pub runs: Vec<EvalRunResult>,
    pub aggregates: Vec<CategoryAggregate>,
}

impl Report {
    pub fn new(config: ReportConfig, runs: Vec<EvalRunResult>) -> Self {
        let aggregates = aggregate(&runs);
        Self { config, runs, aggregates }
    }

    pub fn write_json(&self, path: &Path) -> Result<(), EvalError> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, text + "\n").map_err(|source| EvalError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,category,tasks,runs,correctness,precision,recall,iqm_cost_usd\n");
        for a in &self.aggregates {
            out += &format!(
                "{},{},{},{},{:.4},{:.4},{:.4},{:.6}\n",
                self.config.variant,
                a.category.as_str(),
                a.tasks,
                a.runs,
                a.correctness,
                a.precision,
                a.recall,
                a.iqm_cost_usd
            );
        }
        out
    }

    /// Human-readable per-category table.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<8} {:>5} {:>5} {:>8} {:>9} {:>7} {:>10}\n",
            "category", "tasks", "runs", "correct", "precision", "recall", "IQM cost $"
        );
        for a in &self.aggregates {
            out += &format!(
                "{:<8} {:>5} {:>5} {:>8.2} {:>9.2} {:>7.2} {:>10.6}\n",
                a.category.as_str(),
                a.tasks,
                a.runs,
                a.correctness,
                a.precision,
                a.recall,
                a.iqm_cost_usd
            );
        }
        out
    }
}

/// Per-category aggregates; recomputable from the run results alone.
pub fn aggregate(runs: &[EvalRunResult]) -> Vec<CategoryAggregate> {
    let mut by_category: BTreeMap<Category, Vec<&EvalRunResult>> = BTreeMap::new();
    for r in runs {
        by_category.entry(r.category).or_default().push(r);
    }
    by_category
        .into_iter()
        .map(|(category, rs)| {
            let n = rs.len() as f64;
            let mean = |f: &dyn Fn(&EvalRunResult) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / n;
            let costs: Vec<f64> = rs.iter().map(|r| r.cost_usd).collect();
            CategoryAggregate {
                category,
                tasks: rs.iter().map(|r| r.task.as_str()).collect::<BTreeSet<_>>().len(),
                runs: rs.len(),
                correctness: mean(&|r| if r.correct { 1.0 } else { 0.0 }),
                precision: mean(&|r| r.precision),
                recall: mean(&|r| r.recall),
                iqm_cost_usd: interquartile_mean(&costs).expect("category has runs"),
                mean_interactions: mean(&|r| r.interaction_count as f64),
            }
        })
        .collect()
}

/// Produces the chat backend for one (task, run) pair.
pub type BackendFactory<'a> = dyn Fn(&EvalTask, usize) -> Result<Arc<dyn ChatBackend>, String> + Sync + 'a;

#[derive(Debug, Clone)]
pub struct BenchmarkOptions {
    pub runs: usize,
    pub execution: Execution,
    /// Worker threads for the fan-out; 0 keeps the global pool.
    pub jobs: usize,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        Self {
            runs: DEFAULT_RUNS,
            execution: Execution::Parallel,
            jobs: 0,
        }
    }
}

/// Runs every task `runs` times with a fresh agent per run. Failures are
/// recorded in the results; the suite is never aborted.
pub fn run_benchmark(
    config: &AgentConfig,
    tasks: &[EvalTask],
    runtime: Arc<Runtime>,
    backends: &BackendFactory<'_>,
    costs: &CostTable,
    options: &BenchmarkOptions,
) -> Report {
    let library = runtime.library().clone();
    let setup_tokens = if config.variant.uses_library_search() {
        library.setup_embedding_tokens()
    } else {
        0
    };
    let embedding_model = library.embedder().model().to_string();
    let jobs: Vec<(usize, usize)> = (0..tasks.len()).flat_map(|t| (0..options.runs).map(move |r| (t, r))).collect();
    // generated tools would leak between concurrent runs
    let execution = if config.variant == AgentVariant::AutoTulip {
        Execution::Sequential
    } else {
        options.execution
    };
    let run_one = |&(t, run): &(usize, usize)| -> (EvalRunResult, String) {
        let task = &tasks[t];
        let mut usage = Vec::new();
        if setup_tokens > 0 {
            usage.push(UsageRecord::embedding(&embedding_model, setup_tokens));
        }
        let started = backends(task, run).and_then(|backend| {
            let model = backend.model().to_string();
            Agent::new(config.clone(), backend, runtime.clone())
                .map(|agent| (agent, model))
                .map_err(|e| e.to_string())
        });
        let (trace, failure, model) = match started {
            Err(e) => (SessionTrace::default(), Some(e), String::new()),
            Ok((mut agent, model)) => match agent.run_query(&task.task) {
                Ok(trace) => (trace, None, model),
                Err(f) => {
                    let reason = f.error.to_string();
                    (f.trace, Some(reason), model)
                }
            },
        };
        usage.extend(trace.usage.iter().cloned());
        let (cost_usd, failure) = match costs.total(&usage) {
            Ok(c) => (c, failure),
            Err(e) => (f64::NAN, failure.or(Some(e.to_string()))),
        };
        let (precision, recall) = tool_precision_recall(&trace, &task.functions);
        let result = EvalRunResult {
            task: task.name.clone(),
            category: task.category(),
            run,
            correct: failure.is_none() && score_correctness(&trace.final_response, &task.valid_solutions),
            precision,
            recall,
            cost_usd,
            interaction_count: trace.interactions(),
            prompt_tokens: usage.iter().map(|u| u.prompt_tokens).sum(),
            completion_tokens: usage.iter().map(|u| u.completion_tokens).sum(),
            embedding_tokens: usage.iter().map(|u| u.embedding_tokens).sum(),
            tools_called: trace.library_calls().iter().map(|c| c.name.clone()).collect(),
            final_response: trace.final_response.clone(),
            failure,
        };
        tracing::info!(task = %result.task, run, correct = result.correct, "benchmark run");
        (result, model)
    };
    let results = par::with_jobs(options.jobs, || par::map(execution, &jobs, run_one));
    let chat_model = results
        .iter()
        .map(|(_, m)| m.as_str())
        .find(|m| !m.is_empty())
        .unwrap_or_default()
        .to_string();
    let config = ReportConfig {
        variant: config.variant,
        chat_model,
        embedding_model,
        top_k: config.top_k,
        runs: options.runs,
        setup_embedding_tokens_per_run: setup_tokens,
        conventions: vec![
            PRECISION_CONVENTION.to_string(),
            "library setup embedding tokens are charged to every run of a tool-library variant".to_string(),
            format!("numeric answers match within a relative tolerance of {NUMERIC_TOLERANCE:e}"),
        ],
    };
    Report::new(config, results.into_iter().map(|(r, _)| r).collect())
}

/// Why a generated candidate was dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discard {
    pub subfield: String,
    pub iteration: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct GeneratedTools {
    /// One module per subfield with at least one accepted function.
    pub modules: Vec<ModuleSource>,
    pub discarded: Vec<Discard>,
    pub candidates: usize,
}

impl GeneratedTools {
    pub fn function_count(&self) -> usize {
        self.modules
            .iter()
            .map(|m| tooldef::parse_tool_file(&m.name, &m.text).map(|f| f.descriptors.len()).unwrap_or(0))
            .sum()
    }
}

/// Prompts a live backend for math tools per subfield, keeping only
/// sources that parse and functions whose names are new.
pub fn generate_benchmark_tools(
    backend: Arc<dyn ChatBackend>,
    subfields: &[String],
    iterations: usize,
    per_iteration: usize,
) -> Result<GeneratedTools, EvalError> {
    if !backend.is_live() {
        return Err(EvalError::NotLive);
    }
    let mut session = Session::new(backend, usize::MAX);
    let mut known: Vec<String> = Vec::new();
    let mut out = GeneratedTools::default();
    for subfield in subfields {
        let module = snake_case(subfield);
        let mut text = String::new();
        for iteration in 0..iterations {
            let mut prompt = prompts::GENFUNCS
                .replace("NUMBER_FUNCTIONS", &per_iteration.to_string())
                .replace("SUBFIELD", subfield);
            if !known.is_empty() {
                prompt += "\n";
                prompt += &prompts::GENFUNCS_KNOWN.replace("KNOWN_FUNCTIONS", &known.join(", "));
            }
            let messages = [ChatMessage::system(prompts::GENFUNCS_SYSTEM), ChatMessage::user(prompt)];
            let reply = session.complete(&messages, &[], crate::llm::DEFAULT_TEMPERATURE)?;
            let discard = |reason: String| {
                tracing::warn!(%subfield, iteration, %reason, "discarding generated tools");
                Discard {
                    subfield: subfield.clone(),
                    iteration,
                    reason,
                }
            };
            let mut candidate = format!("{}\n", strip_code_fence(&reply.content));
            let parsed = match tooldef::parse_tool_file(&module, &candidate) {
                Ok(f) => f,
                Err(e) => {
                    out.discarded.push(discard(format!("{}: {e}", e.kind())));
                    continue;
                }
            };
            out.candidates += parsed.descriptors.len();
            for d in &parsed.descriptors {
                if known.contains(&d.name) {
                    if let Some(rest) = remove_function(&candidate, &d.name) {
                        candidate = rest;
                    }
                    out.discarded.push(discard(format!("duplicate function `{}`", d.name)));
                } else {
                    known.push(d.name.clone());
                }
            }
            let merged = if text.is_empty() {
                candidate
            } else {
                format!("{text}\n\n{candidate}")
            };
            match tooldef::parse_tool_file(&module, &merged) {
                Ok(_) => text = merged,
                Err(e) => out.discarded.push(discard(format!("merged module does not parse: {e}"))),
            }
        }
        let has_tools = tooldef::parse_tool_file(&module, &text).is_ok_and(|f| !f.descriptors.is_empty());
        if has_tools {
            out.modules.push(ModuleSource::new(module, text));
        }
    }
    Ok(out)
}

use std::io::{BufRead, IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use tulip_core::agents::{Agent, AgentFailure, AgentVariant, SessionTrace};
use tulip_core::embedding::{Embedder, HashingEmbedder, HttpEmbedder};
use tulip_core::eval::{self, BenchmarkOptions, EvalTask};
use tulip_core::llm::{ChatBackend, CostTable, HttpChatBackend, ScriptedBackend, Transcript};
use tulip_core::par::Execution;
use tulip_core::runtime::{InterpreterConfig, Outcome, Runtime};
use tulip_core::toollib::{read_tool_dir, InitReport, LibraryConfig, LibraryError, ModuleSource, ToolLibrary, TOOL_FILE_EXTENSION};
use tulip_core::{corpus, Endpoint};

use crate::config::{EmbeddingKind, Settings, DEFAULT_HTTP_EMBEDDING_MODEL};

pub const DEFAULT_PER_ITERATION: usize = 5;

/// Maps onto the process exit code: input problems exit 1, agent
/// failures exit 2.
#[derive(Debug)]
pub enum Failure {
    Input(anyhow::Error),
    Agent(String),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Input(e.into())
    }
}

type CmdResult = Result<(), Failure>;

fn embedder(s: &Settings) -> Arc<dyn Embedder> {
    match s.embedding {
        EmbeddingKind::Hash => {
            let e = HashingEmbedder::new(s.dim);
            Arc::new(match &s.embedding_model {
                Some(m) => e.with_model(m),
                None => e,
            })
        }
        EmbeddingKind::Http => {
            let model = s.embedding_model.clone().unwrap_or_else(|| DEFAULT_HTTP_EMBEDDING_MODEL.to_string());
            Arc::new(HttpEmbedder::new(Endpoint::from_env(), model, s.dim))
        }
    }
}

fn sources(s: &Settings) -> anyhow::Result<Vec<ModuleSource>> {
    match &s.tools {
        Some(dir) if dir.is_dir() => Ok(read_tool_dir(dir)?),
        Some(dir) if s.agent.variant == AgentVariant::AutoTulip => {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            Ok(Vec::new())
        }
        Some(dir) => bail!("tool directory {} does not exist", dir.display()),
        None => Ok(corpus::sources()),
    }
}

fn open_library(s: &Settings) -> anyhow::Result<(Arc<ToolLibrary>, InitReport)> {
    let embedder = embedder(s);
    let config = LibraryConfig {
        store_path: s.db.clone(),
        tool_dir: s.tools.clone(),
        dimension: s.dim,
        execution: Execution::Parallel,
        embedder,
    };
    let (library, report) = ToolLibrary::initialize(config, &sources(s)?).map_err(|e| match (e, &s.tools) {
        (LibraryError::Parse { module, source }, Some(dir)) => {
            anyhow!("{}: {source}", dir.join(format!("{module}.{TOOL_FILE_EXTENSION}")).display())
        }
        (e, _) => e.into(),
    })?;
    Ok((Arc::new(library), report))
}

fn open_runtime(s: &Settings) -> anyhow::Result<Arc<Runtime>> {
    if s.agent.variant == AgentVariant::AutoTulip && s.tools.is_none() {
        bail!("AutoTulip writes generated tools to disk; pass --tools DIR");
    }
    let (library, _) = open_library(s)?;
    let runtime = Runtime::new(library, InterpreterConfig::default());
    runtime.register_corpus_natives();
    Ok(Arc::new(runtime))
}

fn backend(s: &Settings) -> anyhow::Result<Arc<dyn ChatBackend>> {
    match &s.transcript {
        Some(path) if path.is_dir() => bail!("{} is a directory; expected a transcript file", path.display()),
        Some(path) => Ok(Arc::new(ScriptedBackend::new(Transcript::from_file(path)?))),
        None => Ok(Arc::new(HttpChatBackend::new(Endpoint::from_env(), s.chat_model.clone()))),
    }
}

fn costs(s: &Settings) -> anyhow::Result<CostTable> {
    Ok(match &s.costs {
        Some(p) => CostTable::from_file(p)?,
        None => CostTable::default(),
    })
}

fn usage_line(trace: &SessionTrace, costs: &CostTable) -> String {
    let sum = |f: fn(&tulip_core::UsageRecord) -> u64| trace.usage.iter().map(f).sum::<u64>();
    let cost = match costs.total(&trace.usage) {
        Ok(c) => format!("${c:.7}"),
        Err(e) => format!("unavailable ({e})"),
    };
    format!(
        "usage: {} LLM calls, {} prompt + {} completion tokens, {} embedding tokens, cost {cost}",
        trace.interactions(),
        sum(|u| u.prompt_tokens),
        sum(|u| u.completion_tokens),
        sum(|u| u.embedding_tokens),
    )
}

/// Saves the partial trace of a failed query and returns its path.
fn write_failure_trace(dir: &Path, failure: &AgentFailure) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let stamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or_default();
    let path = dir.join(format!("tulip-trace-{stamp}.json"));
    let text = serde_json::to_string_pretty(&failure.trace)?;
    std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn agent_failure(s: &Settings, failure: &AgentFailure) -> Failure {
    match write_failure_trace(&s.trace_dir, failure) {
        Ok(path) => Failure::Agent(format!("{}; partial trace written to {}", failure.error, path.display())),
        Err(e) => Failure::Agent(format!("{} (trace not saved: {e:#})", failure.error)),
    }
}

pub fn init(s: &Settings) -> CmdResult {
    if s.tools.as_ref().is_some_and(|d| !d.is_dir()) {
        bail_input(format!("tool directory {} does not exist", s.tools.as_ref().unwrap().display()))?;
    }
    if s.db.is_none() {
        bail_input("init needs a store path: pass --db PATH or set `db` in the config file")?;
    }
    let (library, report) = open_library(s)?;
    println!(
        "{} tools indexed ({} embedding tokens consumed, {} embeddings reused)",
        report.tools, report.embedding_tokens_consumed, report.reused
    );
    println!("store: {} ({})", s.db.as_ref().unwrap().display(), library.embedder().model());
    Ok(())
}

fn bail_input(message: impl Into<String>) -> CmdResult {
    Err(Failure::Input(anyhow!(message.into())))
}

pub fn corpus(out: &Path) -> CmdResult {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for (name, text) in corpus::MODULES {
        let path = out.join(format!("{name}.{TOOL_FILE_EXTENSION}"));
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("{} modules written to {}", corpus::MODULES.len(), out.display());
    Ok(())
}

pub fn search(s: &Settings, query: &str) -> CmdResult {
    let (library, _) = open_library(s)?;
    if library.count() == 0 {
        return Ok(());
    }
    let (hits, _) = library.search(query, s.agent.top_k, None)?;
    for (rank, (entry, distance)) in hits.iter().enumerate() {
        println!("{}. {}  {distance:.6}", rank + 1, entry.id());
    }
    Ok(())
}

pub fn query(s: &Settings, prompt: &str) -> CmdResult {
    let runtime = open_runtime(s)?;
    let costs = costs(s)?;
    let mut agent = Agent::new(s.agent.clone(), backend(s)?, runtime)?;
    match agent.run_query(prompt) {
        Ok(trace) => {
            println!("{}", trace.final_response);
            println!("{}", usage_line(&trace, &costs));
            Ok(())
        }
        Err(f) => Err(agent_failure(s, &f)),
    }
}

fn describe_trace(trace: &SessionTrace, costs: &CostTable) -> String {
    let mut out = format!("query: {}\n", trace.query);
    for search in &trace.searches {
        let hits: Vec<String> = search.hits.iter().map(|(id, d)| format!("{id} ({d:.3})")).collect();
        out += &format!("search [depth {}] {:?} -> {}\n", search.depth, search.query, hits.join(", "));
    }
    for call in &trace.tool_calls {
        let args = serde_json::Value::Object(call.arguments.clone());
        let outcome = match &call.outcome {
            Outcome::Value(v) => v.to_string(),
            Outcome::Error(e) => format!("error: {e}"),
        };
        out += &format!("call {}({args}) -> {outcome}\n", call.tool_id);
    }
    if let Some(f) = &trace.failure {
        out += &format!("failure: {f}\n");
    }
    out + &usage_line(trace, costs)
}

pub fn chat(s: &Settings) -> CmdResult {
    let runtime = open_runtime(s)?;
    let costs = costs(s)?;
    let mut agent = Agent::new(s.agent.clone(), backend(s)?, runtime)?;
    let interactive = std::io::stdin().is_terminal();
    let mut last: Option<SessionTrace> = None;
    let stdin = std::io::stdin();
    let mut lines = stdin.lock().lines();
    loop {
        if interactive {
            print!("> ");
            std::io::stdout().flush()?;
        }
        let Some(line) = lines.next() else { break };
        let line = line?;
        let line = line.trim();
        match line {
            "" => continue,
            "/quit" | "/exit" => break,
            "/trace" => match &last {
                Some(t) => println!("{}", describe_trace(t, &costs)),
                None => println!("no query yet"),
            },
            "/reset" => {
                agent.reset();
                println!("history cleared");
            }
            _ => match agent.run_query(line) {
                Ok(trace) => {
                    println!("{}", trace.final_response);
                    last = Some(trace);
                }
                Err(f) => {
                    let Failure::Agent(message) = agent_failure(s, &f) else { unreachable!() };
                    println!("agent failure: {message}");
                    last = Some(f.trace);
                }
            },
        }
    }
    Ok(())
}

pub struct EvalArgs {
    pub tasks: Option<PathBuf>,
    pub runs: Option<usize>,
    pub report: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub sequential: bool,
}

pub fn eval(s: &Settings, args: EvalArgs) -> CmdResult {
    let f = &s.file;
    let Some(tasks_path) = args.tasks.or_else(|| f.tasks.clone()) else {
        return bail_input("eval needs a task file: pass --tasks FILE or set `tasks`");
    };
    let runs = args.runs.or(f.runs).unwrap_or(eval::DEFAULT_RUNS);
    if runs == 0 {
        return bail_input("--runs must be positive");
    }
    let options = BenchmarkOptions {
        runs,
        jobs: args.jobs.or(f.jobs).unwrap_or(0),
        execution: if args.sequential || f.sequential == Some(true) {
            Execution::Sequential
        } else {
            Execution::Parallel
        },
    };
    let tasks = eval::load_tasks(&tasks_path)?;
    let runtime = open_runtime(s)?;
    let missing = eval::missing_functions(&tasks, &runtime);
    if !missing.is_empty() {
        let list: Vec<String> = missing.iter().map(|(t, fun)| format!("{t}: {fun}")).collect();
        return bail_input(format!("tasks reference tools missing from the library: {}", list.join(", ")));
    }
    let costs = costs(s)?;

    let transcript_dir = s.transcript.clone().filter(|p| p.is_dir());
    let shared = match &s.transcript {
        Some(p) if !p.is_dir() => Some(Transcript::from_file(p)?),
        _ => None,
    };
    let endpoint = Endpoint::from_env();
    let chat_model = s.chat_model.clone();
    let factory = move |task: &EvalTask, _run: usize| -> Result<Arc<dyn ChatBackend>, String> {
        if let Some(dir) = &transcript_dir {
            let t = Transcript::from_file(&dir.join(format!("{}.json", task.name))).map_err(|e| e.to_string())?;
            return Ok(Arc::new(ScriptedBackend::new(t)));
        }
        if let Some(t) = &shared {
            return Ok(Arc::new(ScriptedBackend::new(t.clone())));
        }
        Ok(Arc::new(HttpChatBackend::new(endpoint.clone(), chat_model.clone())))
    };
    let report = eval::run_benchmark(&s.agent, &tasks, runtime, &factory, &costs, &options);
    print!("{}", report.table());
    let failures = report.runs.iter().filter(|r| r.failure.is_some()).count();
    if failures > 0 {
        println!("{failures} of {} runs failed; see the report for reasons", report.runs.len());
    }
    if let Some(path) = args.report.or_else(|| f.report.clone()) {
        if path.extension().is_some_and(|e| e == "csv") {
            std::fs::write(&path, report.to_csv()).with_context(|| format!("writing {}", path.display()))?;
        } else {
            report.write_json(&path)?;
        }
        println!("report written to {}", path.display());
    }
    Ok(())
}

pub struct GenArgs {
    pub subfields: Vec<String>,
    pub iterations: Option<usize>,
    pub per_iteration: Option<usize>,
    pub out: Option<PathBuf>,
}

pub fn genfuncs(s: &Settings, args: GenArgs) -> CmdResult {
    let f = &s.file;
    let subfields = if args.subfields.is_empty() {
        f.subfields.clone().unwrap_or_default()
    } else {
        args.subfields
    };
    let backend = backend(s)?;
    if !backend.is_live() {
        return Err(eval::EvalError::NotLive.into());
    }
    if subfields.is_empty() {
        return bail_input("genfuncs needs --subfields");
    }
    let Some(out) = args.out.or_else(|| f.out.clone()) else {
        return bail_input("genfuncs needs an output directory: pass --out DIR");
    };
    let iterations = args.iterations.or(f.iterations).unwrap_or(1);
    let per_iteration = args.per_iteration.or(f.per_iteration).unwrap_or(DEFAULT_PER_ITERATION);
    let generated = eval::generate_benchmark_tools(backend, &subfields, iterations, per_iteration)?;
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    for module in &generated.modules {
        let path = out.join(format!("{}.{TOOL_FILE_EXTENSION}", module.name));
        std::fs::write(&path, &module.text).with_context(|| format!("writing {}", path.display()))?;
    }
    for d in &generated.discarded {
        eprintln!("discarded ({}, iteration {}): {}", d.subfield, d.iteration, d.reason);
    }
    println!(
        "{} functions in {} modules written to {} ({} of {} candidates discarded)",
        generated.function_count(),
        generated.modules.len(),
        out.display(),
        generated.discarded.len(),
        generated.candidates
    );
    Ok(())
}

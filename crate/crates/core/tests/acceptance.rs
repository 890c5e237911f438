//! Acceptance criteria 1-9. Prints one PASS/FAIL line per criterion and
//! exits nonzero when any criterion fails.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tulip_core::agents::{schema_counts, Agent, AgentConfig, AgentVariant, SessionTrace, SEARCH_TOOLS};
use tulip_core::embedding::EmbeddingVector;
use tulip_core::eval::{self, interquartile_mean, precision_recall, score_correctness, EvalTask};
use tulip_core::llm::{ChatBackend, ChatMessage, CostTable, ScriptStep, ScriptedBackend, StepUsage, Transcript, UsageRecord};
use tulip_core::par::Execution;
use tulip_core::runtime::{InterpreterConfig, Outcome, Runtime, ToolCall};
use tulip_core::tooldef::{parse_tool_file, ParamKind};
use tulip_core::toollib::{LibraryConfig, ToolLibrary};
use tulip_core::vecstore::{StoreEntry, VectorStore};
use tulip_core::{corpus, HashingEmbedder};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

const GOLDEN_QUERY: &str = "What is 45342 * 23487 + 32478?";
/// Hashing embeddings sit farther apart than learned ones.
const HASHING_CEILING: f64 = 1.3;
/// Cost agreement with hand arithmetic, USD.
const GOLDEN_COST_TOLERANCE: f64 = 1e-9;
const SINGLE_COST_TOLERANCE: f64 = 1e-12;
const SQRT_REL_TOLERANCE: f64 = 1e-9;
const PARSER_BUDGET: Duration = Duration::from_secs(1);
const KNN_BUDGET: Duration = Duration::from_secs(30);

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn transcript(name: &str) -> Result<Arc<ScriptedBackend>, String> {
    let t = Transcript::from_file(&fixtures().join("transcripts").join(name)).map_err(|e| e.to_string())?;
    Ok(Arc::new(ScriptedBackend::new(t)))
}

fn corpus_runtime(embedder: HashingEmbedder) -> Result<Arc<Runtime>, String> {
    let (lib, _) = ToolLibrary::initialize(LibraryConfig::in_memory(Arc::new(embedder)), &corpus::sources()).map_err(|e| e.to_string())?;
    let rt = Runtime::new(Arc::new(lib), InterpreterConfig::disabled());
    ensure(rt.register_corpus_natives() == 100, "not every corpus tool has a native")?;
    Ok(Arc::new(rt))
}

fn hashing_config(variant: AgentVariant) -> AgentConfig {
    AgentConfig {
        recursion_distance_ceiling: HASHING_CEILING,
        ..AgentConfig::for_variant(variant)
    }
}

fn run(agent: &mut Agent, query: &str) -> Result<SessionTrace, String> {
    agent.run_query(query).map_err(|f| format!("{} (after {} interactions)", f.error, f.trace.interactions()))
}

// 1. parser fidelity
fn parser_fidelity() -> Check {
    let started = Instant::now();
    type Expect = (&'static str, &'static str, Vec<(&'static str, ParamKind, &'static str)>, &'static str);
    let cases: Vec<Expect> = vec![
        (
            "add",
            "Add two numbers.",
            vec![("a", ParamKind::Number, "The first number."), ("b", ParamKind::Number, "The second number.")],
            "The sum of a and b.",
        ),
        (
            "multiply",
            "Multiply two numbers.",
            vec![
                ("a", ParamKind::Number, "The first multiplicand."),
                ("b", ParamKind::Number, "The second multiplicand."),
            ],
            "The product of a and b.",
        ),
        (
            "coefficient_of_variation",
            "Calculate the coefficient of variation of a list of numbers.",
            vec![("numbers", ParamKind::Array, "A list of numbers.")],
            "The coefficient of variation.",
        ),
        (
            "pour_into",
            "You get a source container, pour it into a target container, and put it back on the table.",
            vec![
                ("source_container_name", ParamKind::String, "The name of the container to pour from."),
                ("target_container_name", ParamKind::String, "The name of the container to pour into."),
            ],
            "Result message.",
        ),
    ];
    for (name, summary, params, ret) in &cases {
        let path = fixtures().join("tools").join(format!("{name}.tdf"));
        let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        let file = parse_tool_file(name, &text).map_err(|e| format!("{name}: {e}"))?;
        ensure(file.descriptors.len() == 1, format!("{name}: expected one descriptor"))?;
        let d = &file.descriptors[0];
        ensure(d.name == *name, format!("name {}", d.name))?;
        ensure(d.summary == *summary, format!("{name}: summary {:?}", d.summary))?;
        ensure(d.return_description == *ret, format!("{name}: return {:?}", d.return_description))?;
        let got: Vec<(&str, ParamKind, &str)> = d.parameters.iter().map(|p| (p.name.as_str(), p.kind, p.description.as_str())).collect();
        ensure(got == *params, format!("{name}: parameters {got:?}"))?;
    }
    let items = parse_tool_file("x", &std::fs::read_to_string(fixtures().join("tools/coefficient_of_variation.tdf")).unwrap())
        .unwrap()
        .descriptors[0]
        .parameters[0]
        .items;
    ensure(items == Some(ParamKind::Number), "list[float] element kind")?;
    let elapsed = started.elapsed();
    ensure(elapsed < PARSER_BUDGET, format!("took {elapsed:?}"))?;
    Ok(format!("4 tools, {elapsed:.2?}"))
}

// 2. kNN oracle
fn knn_oracle() -> Check {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut queries = 0;
    for store_no in 0..200 {
        let dim = rng.random_range(1..=256);
        let n = rng.random_range(0..=1000);
        // coarse values produce exact ties that the id order must break
        let coarse = store_no % 4 == 0;
        let draw = |rng: &mut ChaCha8Rng| -> f64 {
            if coarse {
                rng.random_range(-2..=2) as f64 * 0.5
            } else {
                rng.random_range(-1.0..1.0)
            }
        };
        let store = VectorStore::new(dim);
        let mut raw: Vec<(String, Vec<f64>)> = Vec::with_capacity(n);
        for i in 0..n {
            let v: Vec<f64> = (0..dim).map(|_| draw(&mut rng)).collect();
            let id = format!("e{:04}", (i * 7919) % 10007);
            store
                .add(StoreEntry {
                    id: id.clone(),
                    document: String::new(),
                    embedding: EmbeddingVector::new(v.clone()).unwrap(),
                    metadata: BTreeMap::new(),
                })
                .map_err(|e| e.to_string())?;
            raw.push((id, v));
        }
        for _ in 0..2 {
            let q: Vec<f64> = (0..dim).map(|_| draw(&mut rng)).collect();
            let k = rng.random_range(1..=50);
            let mut oracle: Vec<(String, f64)> = raw
                .iter()
                .map(|(id, v)| {
                    let mut d = 0.0;
                    for (a, b) in v.iter().zip(&q) {
                        d += (a - b) * (a - b);
                    }
                    (id.clone(), d)
                })
                .collect();
            oracle.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then_with(|| a.0.cmp(&b.0)));
            oracle.truncate(k);
            let query = EmbeddingVector::new(q).unwrap();
            for mode in [Execution::Sequential, Execution::Parallel] {
                let got = store.query_with(mode, &query, k, None).map_err(|e| e.to_string())?;
                ensure(got.len() == oracle.len(), format!("store {store_no}: {} vs {} results", got.len(), oracle.len()))?;
                for (g, o) in got.iter().zip(&oracle) {
                    ensure(
                        g.id == o.0 && g.distance.to_bits() == o.1.to_bits(),
                        format!("store {store_no}: got {} {} expected {} {}", g.id, g.distance, o.0, o.1),
                    )?;
                }
            }
            queries += 1;
        }
    }
    let elapsed = started.elapsed();
    ensure(elapsed < KNN_BUDGET, format!("took {elapsed:?}"))?;
    Ok(format!("200 stores, {queries} queries x 2 modes, {elapsed:.2?}"))
}

// 3. golden CotTulip transcript
fn golden_cot_tulip() -> Check {
    let backend = transcript("cot_tulip_multiply_add.json")?;
    let rt = corpus_runtime(HashingEmbedder::default().with_model("text-embedding-3-large"))?;
    let mut agent = Agent::new(hashing_config(AgentVariant::CotTulip), backend.clone(), rt).map_err(|e| e.to_string())?;
    let trace = run(&mut agent, GOLDEN_QUERY)?;
    ensure(trace.final_response.contains("1064980032"), format!("response {:?}", trace.final_response))?;
    let calls: Vec<(String, Value, Outcome)> = trace
        .library_calls()
        .iter()
        .map(|c| (c.name.clone(), Value::Object(c.arguments.clone()), c.outcome.clone()))
        .collect();
    let expected = vec![
        ("multiply".to_string(), json!({"a": 45342, "b": 23487}), Outcome::Value(json!(1064947554))),
        ("add".to_string(), json!({"a": 1064947554, "b": 32478}), Outcome::Value(json!(1064980032))),
    ];
    ensure(calls == expected, format!("trace {calls:?}"))?;
    ensure(backend.remaining() == 0, "transcript not fully consumed")?;
    // 1747 prompt and 103 completion tokens at 0.50 / 1.50 USD per 1M, 6 query
    // tokens at 0.13 USD per 1M
    let hand = 1747.0 * 0.5e-6 + 103.0 * 1.5e-6 + 6.0 * 0.13e-6;
    let cost = CostTable::default().total(&trace.usage).map_err(|e| e.to_string())?;
    ensure((cost - hand).abs() <= GOLDEN_COST_TOLERANCE, format!("cost {cost} vs {hand}"))?;
    Ok(format!("multiply -> add, ${cost:.7}"))
}

// 4. AutoTulip lifecycle
fn golden_lifecycle() -> Check {
    let python = std::process::Command::new("python3").arg("--version").output();
    ensure(python.is_ok_and(|o| o.status.success()), "python3 is required to execute generated tools")?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = LibraryConfig {
        tool_dir: Some(dir.path().to_path_buf()),
        ..LibraryConfig::in_memory(Arc::new(HashingEmbedder::default()))
    };
    let lib = Arc::new(ToolLibrary::empty(config).map_err(|e| e.to_string())?);
    let rt = Arc::new(Runtime::new(lib.clone(), InterpreterConfig::default()));
    let backend = transcript("auto_tulip_square_root.json")?;
    let mut agent = Agent::new(hashing_config(AgentVariant::AutoTulip), backend.clone(), rt).map_err(|e| e.to_string())?;
    ensure(lib.count() == 0, "library not empty at start")?;

    let t = run(&mut agent, "What is the square root of 23456789?")?;
    let names: Vec<&str> = t.tool_calls.iter().map(|c| c.name.as_str()).collect();
    ensure(names == ["search_tool_library", "create_tool", "calculate_square_root"], format!("calls {names:?}"))?;
    let root = t.library_calls()[0].outcome.clone();
    let root = match root {
        Outcome::Value(v) => v.as_f64().ok_or("non-numeric root")?,
        Outcome::Error(e) => return Err(e),
    };
    ensure(
        ((root - 4843.220932396126) / 4843.220932396126).abs() <= SQRT_REL_TOLERANCE,
        format!("sqrt returned {root}"),
    )?;
    ensure(lib.count() == 1, "create did not add a tool")?;

    let t = run(&mut agent, "Change the square root tool to correctly work for negative numbers.")?;
    ensure(t.tool_calls.first().map(|c| c.name.as_str()) == Some("update_tool"), "no update call")?;
    ensure(matches!(t.tool_calls[0].outcome, Outcome::Value(_)), format!("update failed: {:?}", t.tool_calls[0].outcome))?;

    let t = run(&mut agent, "Calculate the square root of -200.")?;
    let neg = t.library_calls().first().map(|c| c.outcome.clone());
    ensure(neg == Some(Outcome::Value(json!("14.142135623730951j"))), format!("sqrt(-200) gave {neg:?}"))?;

    let t = run(&mut agent, "Delete the square root tool.")?;
    ensure(matches!(t.tool_calls.first().map(|c| &c.outcome), Some(Outcome::Value(_))), "delete failed")?;
    ensure(lib.count() == 0, format!("library holds {} tools after delete", lib.count()))?;
    Ok("create -> 4843.220932396126 -> update -> 14.142135623730951j -> delete, 0 tools left".into())
}

// 5. M.T.M.003
fn benchmark_ground_truth() -> Check {
    let rt = corpus_runtime(HashingEmbedder::default())?;
    let exec = |id: &str, args: Value| -> Result<Value, String> {
        rt.try_execute(&ToolCall {
            call_id: "c".into(),
            tool_id: id.into(),
            arguments: args.as_object().unwrap().clone(),
        })
        .map_err(|e| e.to_string())
    };
    let fib = exec("number_theory__fibonacci_recursive", json!({"n": 10}))?;
    let fact = exec("number_theory__factorial", json!({"n": 10}))?;
    ensure(fib == json!(55) && fact == json!(3628800), format!("fib {fib}, factorial {fact}"))?;
    let total = exec("arithmetic__add", json!({"a": fib, "b": fact}))?;
    let tasks = eval::load_tasks(&fixtures().join("mini/tasks.json")).map_err(|e| e.to_string())?;
    let task: Vec<EvalTask> = tasks.into_iter().filter(|t| t.name == "M.T.M.003").collect();
    ensure(task.len() == 1, "M.T.M.003 missing from the task file")?;
    ensure(task[0].valid_solutions.contains(&total), format!("direct evaluation {total} not a valid solution"))?;

    let dir = fixtures().join("mini/cot_tulip");
    let factory = |t: &EvalTask, _: usize| -> Result<Arc<dyn ChatBackend>, String> {
        let tr = Transcript::from_file(&dir.join(format!("{}.json", t.name))).map_err(|e| e.to_string())?;
        Ok(Arc::new(ScriptedBackend::new(tr)))
    };
    let options = eval::BenchmarkOptions {
        runs: 1,
        ..Default::default()
    };
    let report = eval::run_benchmark(&hashing_config(AgentVariant::CotTulip), &task, rt, &factory, &CostTable::default(), &options);
    let r = &report.runs[0];
    ensure(r.correct && r.precision == 1.0 && r.recall == 1.0, format!("{r:?}"))?;
    Ok(format!("55 + 3628800 = {total}; correct, precision 1.0, recall 1.0"))
}

// 6. schema payload reduction
fn token_reduction() -> Check {
    let rt = corpus_runtime(HashingEmbedder::default())?;
    let mut naive = Agent::new(AgentConfig::for_variant(AgentVariant::NaiveTool), transcript("naive_tool_multiply_add.json")?, rt.clone())
        .map_err(|e| e.to_string())?;
    let config = hashing_config(AgentVariant::CotTulip);
    let top_k = config.top_k;
    let mut tulip = Agent::new(config, transcript("cot_tulip_multiply_add.json")?, rt).map_err(|e| e.to_string())?;
    let naive = run(&mut naive, GOLDEN_QUERY)?;
    let tulip = run(&mut tulip, GOLDEN_QUERY)?;
    let subtasks = 2;
    let tulip_counts = schema_counts(&tulip);
    for (i, (count, req)) in tulip_counts.iter().zip(&tulip.requests).enumerate() {
        let library_schemas = req.tool_names.iter().filter(|n| *n != SEARCH_TOOLS).count();
        ensure(library_schemas <= top_k * subtasks, format!("request {i} carried {count} schemas"))?;
    }
    ensure(schema_counts(&naive).iter().all(|&n| n == 100), "NaiveTool did not send the full library")?;
    let payload = |t: &SessionTrace| t.requests.iter().map(|r| r.schema_bytes).sum::<usize>();
    let schemas = |t: &SessionTrace| schema_counts(t).iter().sum::<usize>();
    let (pn, pt) = (payload(&naive), payload(&tulip));
    ensure(pn >= 2 * pt, format!("schema bytes {pn} vs {pt}"))?;
    ensure(schemas(&naive) >= 2 * schemas(&tulip), "schema count ratio below 2")?;
    Ok(format!(
        "schemas sent {} vs {}, schema bytes {pn} vs {pt} ({:.1}x)",
        schemas(&naive),
        schemas(&tulip),
        pn as f64 / pt as f64
    ))
}

// 7. metric oracles
fn metric_oracles() -> Check {
    let iqm = interquartile_mean(&[1.0, 2.0, 3.0, 4.0, 100.0]).map_err(|e| e.to_string())?;
    ensure(iqm == 3.0, format!("IQM {iqm}"))?;
    let expected = vec!["multiply".to_string(), "add".to_string()];
    ensure(precision_recall(&["multiply", "add"], &expected) == (1.0, 1.0), "exact match case")?;
    ensure(precision_recall(&["multiply", "subtract", "add"], &expected) == (2.0 / 3.0, 1.0), "extra call case")?;
    ensure(precision_recall(&[], &["add".to_string()]) == (1.0, 0.0), "no call case")?;
    let cost = CostTable::default()
        .cost(&UsageRecord::chat("gpt-3.5-turbo-0125", 3960, 19))
        .map_err(|e| e.to_string())?;
    ensure((cost - 0.0020085).abs() <= SINGLE_COST_TOLERANCE, format!("cost {cost}"))?;
    ensure(score_correctness("It is 3,628,855.", &[json!(3628855), json!("3,628,855")]), "thousands separator")?;
    Ok(format!("IQM 3.0, P/R cases exact, cost {cost}"))
}

fn scripted(steps: Vec<ChatMessage>) -> Arc<ScriptedBackend> {
    Arc::new(ScriptedBackend::new(Transcript {
        model: "gpt-3.5-turbo-0125".into(),
        steps: steps
            .into_iter()
            .map(|response| ScriptStep {
                matcher: None,
                response,
                usage: Some(StepUsage {
                    prompt_tokens: 100,
                    completion_tokens: 10,
                }),
            })
            .collect(),
    }))
}

// 8. recursion bound
fn recursion_bound() -> Check {
    let rt = corpus_runtime(HashingEmbedder::default())?;
    let unmatched = "translate a poem into french";
    let (near, _) = rt.library().search(unmatched, 1, None).map_err(|e| e.to_string())?;
    ensure(near[0].1 > HASHING_CEILING, "probe text matches a tool")?;
    let mut summary = Vec::new();
    for depth in 0..=3usize {
        let decompose = ChatMessage::assistant(format!("{{\"subtasks\": [\"{unmatched}\"]}}"));
        let strings = ChatMessage::assistant_calls(
            "",
            vec![ToolCall {
                call_id: "s".into(),
                tool_id: SEARCH_TOOLS.into(),
                arguments: json!({"action_descriptions": [unmatched]}).as_object().unwrap().clone(),
            }],
        );
        // more scripted steps than the bound allows; surplus must stay unused
        let mut steps = Vec::new();
        for _ in 0..=depth + 3 {
            steps.push(decompose.clone());
            steps.push(strings.clone());
        }
        let backend = scripted(steps);
        let config = AgentConfig {
            max_recursion_depth: depth,
            ..hashing_config(AgentVariant::CotTulip)
        };
        let mut agent = Agent::new(config, backend.clone(), rt.clone()).map_err(|e| e.to_string())?;
        // the execution step consumes the next scripted reply, whatever it is
        let outcome = agent.run_query("Translate a poem into French.");
        let trace = match outcome {
            Ok(t) => t,
            Err(f) => f.trace,
        };
        let decompositions = trace.exchanges.iter().filter(|e| e.purpose == "decomposition").count();
        ensure(decompositions == depth + 1, format!("depth {depth}: {decompositions} decompositions"))?;
        let searches_max_depth = trace.searches.iter().map(|s| s.depth).max().unwrap_or(0);
        ensure(searches_max_depth == depth, format!("depth {depth}: searched at depth {searches_max_depth}"))?;
        // top level: decomposition + search strings; each level: 2; then execution
        let calls = 2 + 2 * depth + 1;
        ensure(backend.consumed() == calls, format!("depth {depth}: {} LLM calls, bound {calls}", backend.consumed()))?;
        summary.push(format!("{depth}:{calls}"));
    }
    Ok(format!("max depth:LLM calls {}", summary.join(" ")))
}

// 9. persistence
fn persistence() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let store_path = dir.path().join("store.json");
    let config = || LibraryConfig {
        store_path: Some(store_path.clone()),
        ..LibraryConfig::in_memory(Arc::new(HashingEmbedder::default()))
    };
    let (first, report) = ToolLibrary::initialize(config(), &corpus::sources()).map_err(|e| e.to_string())?;
    ensure(report.tools == 100 && report.embedding_tokens_consumed > 0, format!("{report:?}"))?;
    first.persist().map_err(|e| e.to_string())?;
    let (second, report2) = ToolLibrary::initialize(config(), &corpus::sources()).map_err(|e| e.to_string())?;
    ensure(report2.embedding_tokens_consumed == 0, format!("reload embedded {} tokens", report2.embedding_tokens_consumed))?;
    ensure(report2.reused == 100, format!("reused {}", report2.reused))?;
    let loaded = VectorStore::load(&store_path).map_err(|e| e.to_string())?;
    ensure(loaded.count() == 100, "store file does not hold 100 entries")?;

    let vocabulary: Vec<String> = first
        .entries()
        .iter()
        .flat_map(|e| e.document.split(|c: char| !c.is_alphanumeric()).map(str::to_lowercase).collect::<Vec<_>>())
        .filter(|w| w.len() > 2)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..50 {
        let n = rng.random_range(1..=6);
        let query: Vec<&str> = (0..n).map(|_| vocabulary.choose(&mut rng).unwrap().as_str()).collect();
        let query = query.join(" ");
        let rank = |lib: &ToolLibrary| -> Result<Vec<(String, u64)>, String> {
            let (hits, _) = lib.search(&query, 10, None).map_err(|e| e.to_string())?;
            Ok(hits.into_iter().map(|(e, d)| (e.id().to_string(), d.to_bits())).collect())
        };
        ensure(rank(&first)? == rank(&second)?, format!("query {i} {query:?} ranks differently"))?;
    }
    Ok(format!("50 queries identical, {} setup tokens, 0 on reload", report.embedding_tokens_consumed))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("parser fidelity", parser_fidelity),
        ("kNN oracle", knn_oracle),
        ("golden CotTulip transcript", golden_cot_tulip),
        ("golden AutoTulip lifecycle", golden_lifecycle),
        ("benchmark ground truth M.T.M.003", benchmark_ground_truth),
        ("schema payload reduction", token_reduction),
        ("metric oracles", metric_oracles),
        ("recursion bound", recursion_bound),
        ("persistence", persistence),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match std::panic::catch_unwind(check) {
            Ok(Ok(detail)) => println!("criterion {}: PASS  {name}: {detail}", i + 1),
            Ok(Err(reason)) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {reason}", i + 1);
            }
            Err(_) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: panicked", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

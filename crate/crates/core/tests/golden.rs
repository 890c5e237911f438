//! Scripted replays of the logged example runs.

use std::path::PathBuf;
use std::sync::Arc;

use serde_json::json;
use tulip_core::agents::{schema_counts, Agent, AgentConfig, AgentVariant};
use tulip_core::llm::{CostTable, ScriptedBackend, Transcript, UsageRecord};
use tulip_core::runtime::{InterpreterConfig, Outcome, Runtime};
use tulip_core::toollib::{LibraryConfig, ToolLibrary};
use tulip_core::{corpus, HashingEmbedder};

const QUERY: &str = "What is 45342 * 23487 + 32478?";

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn transcript(name: &str) -> Arc<ScriptedBackend> {
    Arc::new(ScriptedBackend::new(Transcript::from_file(&fixture(&format!("transcripts/{name}"))).unwrap()))
}

fn corpus_runtime(embedder: HashingEmbedder) -> Arc<Runtime> {
    let (lib, _) = ToolLibrary::initialize(LibraryConfig::in_memory(Arc::new(embedder)), &corpus::sources()).unwrap();
    let rt = Runtime::new(Arc::new(lib), InterpreterConfig::disabled());
    assert_eq!(rt.register_corpus_natives(), 100);
    Arc::new(rt)
}

fn hashing_config(variant: AgentVariant) -> AgentConfig {
    AgentConfig {
        recursion_distance_ceiling: 1.3,
        ..AgentConfig::for_variant(variant)
    }
}

fn chat_tokens(usage: &[UsageRecord]) -> (u64, u64) {
    usage.iter().fold((0, 0), |(p, c), u| (p + u.prompt_tokens, c + u.completion_tokens))
}

#[test]
fn cot_tulip_reproduces_the_logged_run() {
    let backend = transcript("cot_tulip_multiply_add.json");
    let rt = corpus_runtime(HashingEmbedder::default().with_model("text-embedding-3-large"));
    let mut agent = Agent::new(hashing_config(AgentVariant::CotTulip), backend.clone(), rt).unwrap();
    let trace = agent.run_query(QUERY).unwrap();

    assert_eq!(backend.remaining(), 0);
    assert!(trace.final_response.contains("1064980032"));
    let calls: Vec<_> = trace
        .library_calls()
        .iter()
        .map(|c| (c.name.clone(), serde_json::Value::Object(c.arguments.clone()), c.outcome.clone()))
        .collect();
    assert_eq!(
        calls,
        vec![
            ("multiply".to_string(), json!({"a": 45342, "b": 23487}), Outcome::Value(json!(1064947554))),
            ("add".to_string(), json!({"a": 1064947554, "b": 32478}), Outcome::Value(json!(1064980032))),
        ]
    );

    // hand arithmetic: prompt 182+234+413+443+475 = 1747, completion 25+13+19+21+25 = 103
    assert_eq!(chat_tokens(&trace.usage), (1747, 103));
    // two search strings of three words each
    let embedded: u64 = trace.usage.iter().map(|u| u.embedding_tokens).sum();
    assert_eq!(embedded, 6);
    let expected = 1747.0 * 0.50 / 1e6 + 103.0 * 1.50 / 1e6 + 6.0 * 0.13 / 1e6;
    let cost = CostTable::default().total(&trace.usage).unwrap();
    assert!((cost - expected).abs() < 1e-9, "{cost} vs {expected}");

    // decomposition and search strings carry no library schemas
    let counts = schema_counts(&trace);
    assert_eq!(counts[0], 0);
    assert_eq!(counts[1], 1);
    assert!(counts[2..].iter().all(|&n| n <= 2 * 5));
}

#[test]
fn naive_tool_reproduces_the_logged_run() {
    let backend = transcript("naive_tool_multiply_add.json");
    let rt = corpus_runtime(HashingEmbedder::default());
    let mut agent = Agent::new(AgentConfig::for_variant(AgentVariant::NaiveTool), backend, rt).unwrap();
    let trace = agent.run_query(QUERY).unwrap();
    assert!(trace.final_response.contains("1064980032"));
    let names: Vec<_> = trace.library_calls().iter().map(|c| c.name.clone()).collect();
    assert_eq!(names, ["multiply", "add"]);
    assert_eq!(chat_tokens(&trace.usage), (3960 + 3990 + 4022, 19 + 21 + 25));
    assert_eq!(schema_counts(&trace), [100, 100, 100]);
    let cost = CostTable::default().total(&trace.usage).unwrap();
    let expected = 11972.0 * 0.5 / 1e6 + 65.0 * 1.5 / 1e6;
    assert!((cost - expected).abs() < 1e-12);
}

#[test]
fn naive_tool_payload_is_larger_than_cot_tulip() {
    let rt = corpus_runtime(HashingEmbedder::default());
    let mut naive = Agent::new(AgentConfig::for_variant(AgentVariant::NaiveTool), transcript("naive_tool_multiply_add.json"), rt.clone()).unwrap();
    let mut tulip = Agent::new(hashing_config(AgentVariant::CotTulip), transcript("cot_tulip_multiply_add.json"), rt).unwrap();
    let naive = naive.run_query(QUERY).unwrap();
    let tulip = tulip.run_query(QUERY).unwrap();
    let payload = |t: &tulip_core::SessionTrace| t.requests.iter().map(|r| r.schema_bytes).sum::<usize>();
    assert!(payload(&naive) >= 2 * payload(&tulip));
    assert!(chat_tokens(&naive.usage).0 >= 2 * chat_tokens(&tulip.usage).0);
}

fn python_available() -> bool {
    std::process::Command::new("python3").arg("--version").output().is_ok_and(|o| o.status.success())
}

#[test]
fn auto_tulip_tool_lifecycle() {
    if !python_available() {
        eprintln!("python3 not found; skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let config = LibraryConfig {
        tool_dir: Some(dir.path().to_path_buf()),
        ..LibraryConfig::in_memory(Arc::new(HashingEmbedder::default()))
    };
    let lib = Arc::new(ToolLibrary::empty(config).unwrap());
    let rt = Arc::new(Runtime::new(lib.clone(), InterpreterConfig::default()));
    let backend = transcript("auto_tulip_square_root.json");
    let mut agent = Agent::new(hashing_config(AgentVariant::AutoTulip), backend.clone(), rt).unwrap();
    let id = "calculate_square_root_module__calculate_square_root";

    let first = agent.run_query("What is the square root of 23456789?").unwrap();
    assert_eq!(first.tool_calls[0].outcome, Outcome::Value(json!({"calculate square root": []})));
    let made = &first.tool_calls[1];
    assert_eq!(made.outcome, Outcome::Value(json!(format!("Made tool `{id}` available via the tool library."))));
    assert!(dir.path().join("calculate_square_root_module.tdf").exists());
    let root = first.library_calls()[0].outcome.clone();
    let Outcome::Value(v) = root else { panic!("{root:?}") };
    let root = v.as_f64().unwrap();
    assert!((root - 4843.220932396126).abs() / 4843.220932396126 < 1e-9);
    assert_eq!(lib.count(), 1);

    let second = agent.run_query("Change the square root tool to correctly work for negative numbers.").unwrap();
    assert_eq!(second.tool_calls[0].outcome, Outcome::Value(json!(format!("Successfully updated `{id}`."))));

    let third = agent.run_query("Calculate the square root of -200.").unwrap();
    assert_eq!(third.library_calls()[0].outcome, Outcome::Value(json!("14.142135623730951j")));

    let fourth = agent.run_query("Delete the square root tool.").unwrap();
    assert!(matches!(fourth.tool_calls[0].outcome, Outcome::Value(_)));
    assert_eq!(lib.count(), 0);
    assert!(!dir.path().join("calculate_square_root_module.tdf").exists());
    assert_eq!(backend.remaining(), 0);
}

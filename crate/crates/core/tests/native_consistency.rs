//! Every built-in native must answer like the interpreter running the same
//! tool definition file.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};
use tulip_core::runtime::{InterpreterConfig, Runtime, ToolCall};
use tulip_core::tooldef::{ParamKind, ToolDescriptor};
use tulip_core::toollib::{read_tool_dir, LibraryConfig, ToolBinding, ToolLibrary};
use tulip_core::{corpus, HashingEmbedder};

/// Zeros and negatives first, then random draws.
const SAMPLES_PER_TOOL: usize = 4;

fn python_available() -> bool {
    std::process::Command::new("python3").arg("--version").output().is_ok_and(|o| o.status.success())
}

fn scalar(kind: ParamKind, rng: &mut ChaCha8Rng) -> Value {
    match kind {
        ParamKind::Integer => json!(rng.random_range(-2..=12)),
        ParamKind::Boolean => json!(rng.random_bool(0.5)),
        ParamKind::String => json!("abc"),
        // quarter steps keep results exactly representable where possible
        _ => json!(rng.random_range(-12..=40) as f64 / 4.0),
    }
}

fn edge(kind: ParamKind, sample: usize) -> Value {
    match (kind, sample) {
        (ParamKind::Integer, 0) => json!(0),
        (ParamKind::Integer, _) => json!(-1),
        (ParamKind::Boolean, _) => json!(sample == 0),
        (ParamKind::String, _) => json!(""),
        (_, 0) => json!(0.0),
        _ => json!(-1.5),
    }
}

fn arguments(d: &ToolDescriptor, sample: usize, rng: &mut ChaCha8Rng) -> Map<String, Value> {
    let len = rng.random_range(1..=6);
    d.parameters
        .iter()
        .map(|p| {
            let item = p.items.unwrap_or(ParamKind::Number);
            let v = match (p.kind, sample) {
                (ParamKind::Object, _) => json!({}),
                (ParamKind::Array, 0) => json!([]),
                (ParamKind::Array, 1) => json!([edge(item, 1), scalar(item, rng)]),
                (ParamKind::Array, _) => Value::Array((0..len).map(|_| scalar(item, rng)).collect()),
                (k, 0 | 1) => edge(k, sample),
                (k, _) => scalar(k, rng),
            };
            (p.name.clone(), v)
        })
        .collect()
}

#[test]
fn natives_match_the_interpreter() {
    if !python_available() {
        eprintln!("python3 not found; skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    for (name, text) in corpus::MODULES {
        std::fs::write(dir.path().join(format!("{name}.tdf")), text).unwrap();
    }
    let embedder = Arc::new(HashingEmbedder::default());
    let (file_lib, _) = ToolLibrary::initialize(LibraryConfig::in_memory(embedder.clone()), &read_tool_dir(dir.path()).unwrap()).unwrap();
    assert!(file_lib.entries().iter().all(|e| matches!(e.binding, ToolBinding::File(_))));
    let interpreted = Runtime::new(Arc::new(file_lib), InterpreterConfig::default());

    let (native_lib, _) = ToolLibrary::initialize(LibraryConfig::in_memory(embedder), &corpus::sources()).unwrap();
    let native = Runtime::new(Arc::new(native_lib), InterpreterConfig::disabled());
    assert_eq!(native.register_corpus_natives(), 100);

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut calls = Vec::new();
    for entry in native.library().entries() {
        for i in 0..SAMPLES_PER_TOOL {
            calls.push(ToolCall {
                call_id: format!("{}#{i}", entry.id()),
                tool_id: entry.id().to_string(),
                arguments: arguments(&entry.descriptor, i, &mut rng),
            });
        }
    }
    assert_eq!(calls.len(), 100 * SAMPLES_PER_TOOL);

    let chunks: Vec<&[ToolCall]> = calls.chunks(calls.len().div_ceil(8)).collect();
    let mismatches: Vec<String> = std::thread::scope(|s| {
        let handles: Vec<_> = chunks
            .iter()
            .map(|chunk| {
                let (native, interpreted) = (&native, &interpreted);
                s.spawn(move || {
                    chunk
                        .iter()
                        .filter_map(|call| {
                            let a = native.execute(call).content();
                            let b = interpreted.execute(call).content();
                            (a != b).then(|| format!("{} {:?}: native `{a}` vs interpreter `{b}`", call.tool_id, call.arguments))
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
    });
    assert!(mismatches.is_empty(), "{} mismatches:\n{}", mismatches.len(), mismatches.join("\n"));
}

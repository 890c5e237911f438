//! The tool library: parsed descriptors, their embeddings in a
//! [`VectorStore`], and the id → entry lookup used at call time.
//!
//! Store ids, lookup keys and (for file-bound tools) the functions defined
//! in `tool_dir` always describe the same set of qualified ids.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock, RwLockReadGuard, RwLockWriteGuard};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::embedding::{EmbedError, Embedder, EmbeddingUsage};
use crate::par::Execution;
use crate::tooldef::{self, descriptor_schema, embedding_document, ParseError, ToolDescriptor};
use crate::vecstore::{StoreEntry, StoreError, VectorStore};

pub const TOOL_FILE_EXTENSION: &str = "tdf";
const META_MODULE: &str = "module";
const META_SOURCE: &str = "source_path";
const META_TOKENS: &str = "embedding_tokens";

#[derive(Debug, Error)]
pub enum LibraryError {
    #[error("module `{module}`: {source}")]
    Parse {
        module: String,
        #[source]
        source: ParseError,
    },
    #[error("tool `{0}` already exists")]
    DuplicateId(String),
    #[error("unknown tool `{0}`")]
    UnknownId(String),
    #[error("invalid tool source: {}", diagnostics.join("; "))]
    InvalidSource { diagnostics: Vec<String> },
    #[error("function name changed from `{expected}` to `{found}`")]
    NameChanged { expected: String, found: String },
    #[error("library has no tool directory for generated tools")]
    NoToolDir,
    #[error("library dimension {library} does not match embedder dimension {embedder}")]
    DimensionMismatch { library: usize, embedder: usize },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> LibraryError + '_ {
    move |source| LibraryError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "path", rename_all = "lowercase")]
pub enum ToolBinding {
    /// Executed in-process through a host registration.
    Native,
    /// Executed by the interpreter from this file.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolEntry {
    pub descriptor: ToolDescriptor,
    pub document: String,
    pub source_path: Option<PathBuf>,
    pub binding: ToolBinding,
}

impl ToolEntry {
    pub fn id(&self) -> &str {
        &self.descriptor.qualified_id
    }

    pub fn schema(&self) -> Value {
        descriptor_schema(&self.descriptor)
    }
}

/// One module of tool definitions handed to [`ToolLibrary::initialize`].
#[derive(Debug, Clone)]
pub struct ModuleSource {
    pub name: String,
    pub text: String,
    /// File the module was read from; tools from it are file-bound.
    pub path: Option<PathBuf>,
}

impl ModuleSource {
    pub fn new(name: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            text: text.into(),
            path: None,
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, LibraryError> {
        let text = fs::read_to_string(path).map_err(io_error(path))?;
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        Ok(Self {
            name,
            text,
            path: Some(path.to_path_buf()),
        })
    }
}

/// Reads every `.tdf` file in `dir`, sorted by file name.
pub fn read_tool_dir(dir: &Path) -> Result<Vec<ModuleSource>, LibraryError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_error(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == TOOL_FILE_EXTENSION))
        .collect();
    paths.sort();
    paths.iter().map(|p| ModuleSource::from_file(p)).collect()
}

#[derive(Clone)]
pub struct LibraryConfig {
    /// Persisted store; reused embeddings are read from here on startup.
    pub store_path: Option<PathBuf>,
    /// Where generated tools are written.
    pub tool_dir: Option<PathBuf>,
    pub embedder: Arc<dyn Embedder>,
    pub dimension: usize,
    pub execution: Execution,
}

impl LibraryConfig {
    pub fn in_memory(embedder: Arc<dyn Embedder>) -> Self {
        let dimension = embedder.dimension();
        Self {
            store_path: None,
            tool_dir: None,
            embedder,
            dimension,
            execution: Execution::default(),
        }
    }
}

impl std::fmt::Debug for LibraryConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LibraryConfig")
            .field("store_path", &self.store_path)
            .field("tool_dir", &self.tool_dir)
            .field("embedder", &self.embedder.model())
            .field("dimension", &self.dimension)
            .finish()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitReport {
    pub tools: usize,
    /// Tokens embedded during this initialisation.
    pub embedding_tokens_consumed: u64,
    /// Tokens it takes to embed the whole library from scratch.
    pub setup_embedding_tokens: u64,
    /// Entries whose embeddings were reused from the persisted store.
    pub reused: usize,
}

struct State {
    store: VectorStore,
    lookup: BTreeMap<String, ToolEntry>,
}

pub struct ToolLibrary {
    embedder: Arc<dyn Embedder>,
    store_path: Option<PathBuf>,
    tool_dir: Option<PathBuf>,
    state: RwLock<State>,
    embedding_tokens: AtomicU64,
}

impl std::fmt::Debug for ToolLibrary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ToolLibrary")
            .field("tools", &self.count())
            .field("embedder", &self.embedder.model())
            .field("store_path", &self.store_path)
            .field("tool_dir", &self.tool_dir)
            .finish()
    }
}

impl ToolLibrary {
    pub fn empty(config: LibraryConfig) -> Result<ToolLibrary, LibraryError> {
        Ok(Self::initialize(config, &[])?.0)
    }

    /// Parses every module, embeds each tool's canonical document and
    /// fills the store and lookup. Embeddings are reused from the
    /// persisted store when an entry's document is unchanged.
    pub fn initialize(config: LibraryConfig, sources: &[ModuleSource]) -> Result<(ToolLibrary, InitReport), LibraryError> {
        if config.dimension != config.embedder.dimension() {
            return Err(LibraryError::DimensionMismatch {
                library: config.dimension,
                embedder: config.embedder.dimension(),
            });
        }

        let mut parsed: Vec<ToolEntry> = Vec::new();
        let mut seen = BTreeSet::new();
        for source in sources {
            let file = tooldef::parse_tool_file(&source.name, &source.text).map_err(|e| LibraryError::Parse {
                module: source.name.clone(),
                source: e,
            })?;
            for descriptor in file.descriptors {
                if !seen.insert(descriptor.qualified_id.clone()) {
                    return Err(LibraryError::DuplicateId(descriptor.qualified_id));
                }
                let binding = match &source.path {
                    Some(p) => ToolBinding::File(p.clone()),
                    None => ToolBinding::Native,
                };
                parsed.push(ToolEntry {
                    document: embedding_document(&descriptor),
                    descriptor,
                    source_path: source.path.clone(),
                    binding,
                });
            }
        }

        let previous = match &config.store_path {
            Some(p) if p.exists() => {
                let store = VectorStore::load(p)?;
                (store.dimension() == config.dimension).then_some(store)
            }
            _ => None,
        };

        let store = VectorStore::new(config.dimension).with_execution(config.execution);
        let mut report = InitReport::default();
        let mut pending: Vec<usize> = Vec::new();
        for (i, entry) in parsed.iter().enumerate() {
            let reusable = previous
                .as_ref()
                .and_then(|prev| prev.get(entry.id()))
                .filter(|old| old.document == entry.document);
            match reusable {
                Some(old) => {
                    let tokens = old.metadata.get(META_TOKENS).and_then(|t| t.parse().ok()).unwrap_or(0);
                    store.add(store_entry(entry, old.embedding.clone(), tokens))?;
                    report.reused += 1;
                }
                None => pending.push(i),
            }
        }
        let texts: Vec<String> = pending.iter().map(|&i| parsed[i].document.clone()).collect();
        let embedded = config.embedder.embed_batch(&texts)?;
        for (&i, (vector, usage)) in pending.iter().zip(embedded) {
            report.embedding_tokens_consumed += usage.token_count;
            store.add(store_entry(&parsed[i], vector, usage.token_count))?;
        }

        let lookup: BTreeMap<String, ToolEntry> = parsed.into_iter().map(|e| (e.id().to_string(), e)).collect();
        report.tools = lookup.len();
        let library = ToolLibrary {
            embedder: config.embedder,
            store_path: config.store_path,
            tool_dir: config.tool_dir,
            state: RwLock::new(State { store, lookup }),
            embedding_tokens: AtomicU64::new(report.embedding_tokens_consumed),
        };
        report.setup_embedding_tokens = library.setup_embedding_tokens();
        library.persist()?;
        Ok((library, report))
    }

    /// Initialises from every `.tdf` file in `config.tool_dir`.
    pub fn from_tool_dir(config: LibraryConfig) -> Result<(ToolLibrary, InitReport), LibraryError> {
        let dir = config.tool_dir.clone().ok_or(LibraryError::NoToolDir)?;
        let sources = read_tool_dir(&dir)?;
        Self::initialize(config, &sources)
    }

    fn read(&self) -> RwLockReadGuard<'_, State> {
        self.state.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write(&self) -> RwLockWriteGuard<'_, State> {
        self.state.write().unwrap_or_else(|e| e.into_inner())
    }

    pub fn embedder(&self) -> &Arc<dyn Embedder> {
        &self.embedder
    }

    pub fn tool_dir(&self) -> Option<&Path> {
        self.tool_dir.as_deref()
    }

    pub fn count(&self) -> usize {
        self.read().lookup.len()
    }

    pub fn ids(&self) -> Vec<String> {
        self.read().lookup.keys().cloned().collect()
    }

    pub fn store_ids(&self) -> Vec<String> {
        self.read().store.ids()
    }

    pub fn entries(&self) -> Vec<ToolEntry> {
        self.read().lookup.values().cloned().collect()
    }

    pub fn lookup(&self, qualified_id: &str) -> Result<ToolEntry, LibraryError> {
        self.read()
            .lookup
            .get(qualified_id)
            .cloned()
            .ok_or_else(|| LibraryError::UnknownId(qualified_id.to_string()))
    }

    /// All tool schemas, sorted by id.
    pub fn schemas(&self) -> Vec<Value> {
        self.read().lookup.values().map(ToolEntry::schema).collect()
    }

    /// Total embedding tokens consumed by this library instance.
    pub fn embedding_tokens_consumed(&self) -> u64 {
        self.embedding_tokens.load(Ordering::Relaxed)
    }

    /// Tokens needed to embed every current entry from scratch.
    pub fn setup_embedding_tokens(&self) -> u64 {
        self.read()
            .store
            .entries()
            .iter()
            .filter_map(|e| e.metadata.get(META_TOKENS).and_then(|t| t.parse::<u64>().ok()))
            .sum()
    }

    /// "library of N tools across modules a, b, c"
    pub fn describe(&self) -> String {
        let state = self.read();
        let modules: BTreeSet<&str> = state.lookup.values().map(|e| e.descriptor.module.as_str()).collect();
        let modules: Vec<&str> = modules.into_iter().collect();
        format!(
            "library of {} tools across modules {}",
            state.lookup.len(),
            modules.join(", ")
        )
    }

    pub fn persist(&self) -> Result<(), LibraryError> {
        if let Some(path) = &self.store_path {
            self.read().store.persist(path)?;
        }
        Ok(())
    }

    fn embed(&self, text: &str) -> Result<(crate::embedding::EmbeddingVector, EmbeddingUsage), LibraryError> {
        let out = self.embedder.embed_text(text)?;
        self.embedding_tokens.fetch_add(out.1.token_count, Ordering::Relaxed);
        Ok(out)
    }

    /// Embeds `query_text` and returns the nearest tools.
    pub fn search(
        &self,
        query_text: &str,
        top_k: usize,
        max_distance: Option<f64>,
    ) -> Result<(Vec<(ToolEntry, f64)>, EmbeddingUsage), LibraryError> {
        if query_text.trim().is_empty() {
            return Err(EmbedError::EmptyInput { index: None }.into());
        }
        if self.count() == 0 {
            return Ok((
                Vec::new(),
                EmbeddingUsage {
                    model: self.embedder.model().to_string(),
                    token_count: 0,
                },
            ));
        }
        let (vector, usage) = self.embed(query_text)?;
        let state = self.read();
        let hits = state.store.query(&vector, top_k, max_distance)?;
        let resolved = hits
            .into_iter()
            .filter_map(|hit| state.lookup.get(&hit.id).map(|e| (e.clone(), hit.distance)))
            .collect();
        Ok((resolved, usage))
    }

    /// Parses a single-tool source and derives its module name.
    fn parse_single(source_text: &str) -> Result<ToolDescriptor, LibraryError> {
        let invalid = |d: String| LibraryError::InvalidSource { diagnostics: vec![d] };
        let file = tooldef::parse_tool_file("candidate", source_text).map_err(|e| invalid(format!("{}: {e}", e.kind())))?;
        let mut descriptors = file.descriptors;
        if descriptors.len() != 1 {
            return Err(invalid(format!(
                "expected exactly one public function, found {}",
                descriptors.len()
            )));
        }
        let name = descriptors.remove(0).name;
        let module = generated_module_name(&name);
        let file = tooldef::parse_tool_file(&module, source_text).map_err(|e| invalid(format!("{}: {e}", e.kind())))?;
        Ok(file.descriptors.into_iter().next().expect("parsed above"))
    }

    /// Writes a generated tool to `tool_dir` and makes it searchable.
    pub fn create_tool(&self, source_text: &str) -> Result<ToolEntry, LibraryError> {
        let descriptor = Self::parse_single(source_text)?;
        let dir = self.tool_dir.clone().ok_or(LibraryError::NoToolDir)?;
        let id = descriptor.qualified_id.clone();
        if self.read().lookup.contains_key(&id) {
            return Err(LibraryError::DuplicateId(id));
        }
        let document = embedding_document(&descriptor);
        let (vector, usage) = self.embed(&document)?;

        let mut state = self.write();
        if state.lookup.contains_key(&id) {
            return Err(LibraryError::DuplicateId(id));
        }
        fs::create_dir_all(&dir).map_err(io_error(&dir))?;
        let path = dir.join(format!("{}.{TOOL_FILE_EXTENSION}", descriptor.module));
        if path.exists() {
            return Err(LibraryError::DuplicateId(id));
        }
        fs::write(&path, source_text).map_err(io_error(&path))?;
        let entry = ToolEntry {
            descriptor,
            document,
            source_path: Some(path.clone()),
            binding: ToolBinding::File(path.clone()),
        };
        if let Err(e) = state.store.add(store_entry(&entry, vector, usage.token_count)) {
            let _ = fs::remove_file(&path);
            return Err(e.into());
        }
        state.lookup.insert(id, entry.clone());
        drop(state);
        self.persist()?;
        Ok(entry)
    }

    /// Source text of a file-bound tool.
    pub fn source_of(&self, qualified_id: &str) -> Result<String, LibraryError> {
        let entry = self.lookup(qualified_id)?;
        match entry.source_path {
            Some(p) => fs::read_to_string(&p).map_err(io_error(&p)),
            None => Err(LibraryError::InvalidSource {
                diagnostics: vec![format!("`{qualified_id}` has no source file")],
            }),
        }
    }

    /// Replaces a tool's source, keeping its function name and id.
    pub fn update_tool(&self, qualified_id: &str, new_source_text: &str) -> Result<ToolEntry, LibraryError> {
        let old = self.lookup(qualified_id)?;
        let invalid = |d: String| LibraryError::InvalidSource { diagnostics: vec![d] };
        let file = tooldef::parse_tool_file(&old.descriptor.module, new_source_text)
            .map_err(|e| invalid(format!("{}: {e}", e.kind())))?;
        let descriptor = match file.descriptors.as_slice() {
            [d] => d.clone(),
            ds => {
                if let Some(d) = ds.iter().find(|d| d.name == old.descriptor.name) {
                    if ds.len() == 1 {
                        d.clone()
                    } else {
                        return Err(invalid(format!(
                            "expected exactly one public function, found {}",
                            ds.len()
                        )));
                    }
                } else if ds.is_empty() {
                    return Err(invalid("no public function found".into()));
                } else {
                    return Err(invalid(format!("expected exactly one public function, found {}", ds.len())));
                }
            }
        };
        if descriptor.name != old.descriptor.name {
            return Err(LibraryError::NameChanged {
                expected: old.descriptor.name,
                found: descriptor.name,
            });
        }
        let document = embedding_document(&descriptor);
        let (vector, usage) = if document == old.document {
            let state = self.read();
            let existing = state.store.get(qualified_id).ok_or_else(|| LibraryError::UnknownId(qualified_id.into()))?;
            let tokens = existing.metadata.get(META_TOKENS).and_then(|t| t.parse().ok()).unwrap_or(0);
            (
                existing.embedding,
                EmbeddingUsage {
                    model: self.embedder.model().into(),
                    token_count: tokens,
                },
            )
        } else {
            self.embed(&document)?
        };

        let path = match (&old.source_path, &self.tool_dir) {
            (Some(p), _) => p.clone(),
            (None, Some(dir)) => dir.join(format!("{}.{TOOL_FILE_EXTENSION}", old.descriptor.module)),
            (None, None) => return Err(LibraryError::NoToolDir),
        };

        let mut state = self.write();
        if !state.lookup.contains_key(qualified_id) {
            return Err(LibraryError::UnknownId(qualified_id.into()));
        }
        let existing_text = fs::read_to_string(&path).ok();
        let text = match existing_text {
            // the module holds other tools too: swap out only this function
            Some(t) if is_shared_module(&t, &old.descriptor.module) => {
                let mut rest = tooldef::remove_function(&t, &old.descriptor.name).unwrap_or(t);
                if !rest.is_empty() {
                    rest.push_str("\n\n");
                }
                rest.push_str(new_source_text);
                rest
            }
            _ => new_source_text.to_string(),
        };
        fs::write(&path, &text).map_err(io_error(&path))?;
        let entry = ToolEntry {
            descriptor,
            document,
            source_path: Some(path.clone()),
            binding: ToolBinding::File(path),
        };
        state.store.update(store_entry(&entry, vector, usage.token_count))?;
        state.lookup.insert(qualified_id.to_string(), entry.clone());
        drop(state);
        self.persist()?;
        Ok(entry)
    }

    /// Removes a tool from the store and lookup and, for file-bound
    /// tools, from its file (deleting the file once it holds no tools).
    pub fn delete_tool(&self, qualified_id: &str) -> Result<ToolEntry, LibraryError> {
        let mut state = self.write();
        let entry = state
            .lookup
            .remove(qualified_id)
            .ok_or_else(|| LibraryError::UnknownId(qualified_id.to_string()))?;
        state.store.delete(qualified_id)?;
        if let ToolBinding::File(path) = &entry.binding {
            if let Ok(text) = fs::read_to_string(path) {
                let rest = tooldef::remove_function(&text, &entry.descriptor.name).unwrap_or(text);
                let still_defines_tools = tooldef::parse_tool_file(&entry.descriptor.module, &rest)
                    .map(|f| !f.descriptors.is_empty())
                    .unwrap_or(true);
                if still_defines_tools {
                    fs::write(path, rest).map_err(io_error(path))?;
                } else {
                    fs::remove_file(path).map_err(io_error(path))?;
                }
            }
        }
        drop(state);
        self.persist()?;
        Ok(entry)
    }

    /// Adds an in-process tool described by `descriptor`.
    pub fn add_native(&self, descriptor: ToolDescriptor) -> Result<ToolEntry, LibraryError> {
        let id = descriptor.qualified_id.clone();
        if self.read().lookup.contains_key(&id) {
            return Err(LibraryError::DuplicateId(id));
        }
        let document = embedding_document(&descriptor);
        let (vector, usage) = self.embed(&document)?;
        let entry = ToolEntry {
            descriptor,
            document,
            source_path: None,
            binding: ToolBinding::Native,
        };
        let mut state = self.write();
        if state.lookup.contains_key(&id) {
            return Err(LibraryError::DuplicateId(id));
        }
        state.store.add(store_entry(&entry, vector, usage.token_count))?;
        state.lookup.insert(id, entry.clone());
        drop(state);
        self.persist()?;
        Ok(entry)
    }
}

fn is_shared_module(text: &str, module: &str) -> bool {
    tooldef::parse_tool_file(module, text)
        .map(|f| f.descriptors.len() > 1)
        .unwrap_or(false)
}

fn store_entry(entry: &ToolEntry, embedding: crate::embedding::EmbeddingVector, tokens: u64) -> StoreEntry {
    let mut metadata = BTreeMap::new();
    metadata.insert(META_MODULE.to_string(), entry.descriptor.module.clone());
    if let Some(p) = &entry.source_path {
        metadata.insert(META_SOURCE.to_string(), p.display().to_string());
    }
    metadata.insert(META_TOKENS.to_string(), tokens.to_string());
    StoreEntry {
        id: entry.id().to_string(),
        document: entry.document.clone(),
        embedding,
        metadata,
    }
}

/// Module name for a generated tool: `{function_name}_module`.
pub fn generated_module_name(function_name: &str) -> String {
    format!("{}_module", snake_case(function_name))
}

/// Lowercase words joined by underscores; non-alphanumerics separate words.
pub fn snake_case(text: &str) -> String {
    let mut out = String::new();
    let mut prev_lower = false;
    for c in text.chars() {
        if c.is_ascii_alphanumeric() {
            if c.is_ascii_uppercase() && prev_lower && !out.ends_with('_') {
                out.push('_');
            }
            out.push(c.to_ascii_lowercase());
            prev_lower = c.is_ascii_lowercase() || c.is_ascii_digit();
        } else {
            if !out.is_empty() && !out.ends_with('_') {
                out.push('_');
            }
            prev_lower = false;
        }
    }
    out.trim_end_matches('_').to_string()
}

//! `tulip.toml` loading and flag/file resolution.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use serde::Deserialize;
use tulip_core::agents::{AgentConfig, AgentVariant};
use tulip_core::prompts::Prompts;

pub const DEFAULT_CONFIG_FILE: &str = "tulip.toml";
pub const DEFAULT_HTTP_EMBEDDING_MODEL: &str = "text-embedding-3-small";
/// Hashing embeddings of related texts sit farther apart than learned ones,
/// so the default search ceiling is loosened for them.
pub const HASHING_DISTANCE_CEILING: f64 = 1.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    Hash,
    Http,
}

/// Contents of a config file. Every key mirrors a command-line flag except
/// `prompts`, which only exists here.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub tools: Option<PathBuf>,
    pub db: Option<PathBuf>,
    pub embedding: Option<EmbeddingKind>,
    pub dim: Option<usize>,
    pub embedding_model: Option<String>,
    pub chat_model: Option<String>,
    pub transcript: Option<PathBuf>,
    pub costs: Option<PathBuf>,
    pub trace_dir: Option<PathBuf>,

    pub agent: Option<String>,
    pub top_k: Option<usize>,
    pub distance_ceiling: Option<f64>,
    pub max_depth: Option<usize>,
    pub max_interactions: Option<usize>,
    pub temperature: Option<f64>,
    pub priming_pool_size: Option<usize>,
    pub codegen_attempts: Option<usize>,
    pub library_description: Option<String>,
    pub prompts: Option<Prompts>,

    pub tasks: Option<PathBuf>,
    pub runs: Option<usize>,
    pub report: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub sequential: Option<bool>,

    pub subfields: Option<Vec<String>>,
    pub iterations: Option<usize>,
    pub per_iteration: Option<usize>,
    pub out: Option<PathBuf>,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Reads `path`, or `tulip.toml` in the working directory when no path
    /// is given and that file exists. Relative paths inside the file are
    /// resolved against the file's directory.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let path = match path {
            Some(p) => p.to_path_buf(),
            None => {
                let default = PathBuf::from(DEFAULT_CONFIG_FILE);
                if !default.exists() {
                    return Ok(Self::default());
                }
                default
            }
        };
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let mut config = Self::parse(&text).with_context(|| format!("{}", path.display()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        for p in [
            &mut config.tools,
            &mut config.db,
            &mut config.transcript,
            &mut config.costs,
            &mut config.trace_dir,
            &mut config.tasks,
            &mut config.report,
            &mut config.out,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }
}

/// Flags shared by every subcommand; each overrides its file key.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct CommonArgs {
    /// Config file (default: ./tulip.toml when present)
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory of tool definition files (default: the bundled corpus)
    #[arg(long, global = true)]
    pub tools: Option<PathBuf>,
    /// Persisted vector store
    #[arg(long, global = true)]
    pub db: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub embedding: Option<EmbeddingKind>,
    /// Embedding dimension
    #[arg(long, global = true)]
    pub dim: Option<usize>,
    #[arg(long, global = true)]
    pub embedding_model: Option<String>,
    #[arg(long, global = true)]
    pub chat_model: Option<String>,
    /// Replay a scripted transcript instead of calling a live model. For
    /// `eval` this may be a directory holding one `<task name>.json` per task.
    #[arg(long, global = true)]
    pub transcript: Option<PathBuf>,
    /// Price table (JSON, USD per 1M tokens)
    #[arg(long, global = true)]
    pub costs: Option<PathBuf>,
    /// Where traces of failed queries are written
    #[arg(long, global = true)]
    pub trace_dir: Option<PathBuf>,

    /// Agent variant, e.g. CotTulip or naive-tool
    #[arg(long, global = true)]
    pub agent: Option<String>,
    #[arg(long, global = true)]
    pub top_k: Option<usize>,
    /// Squared-L2 distance above which search hits are discarded
    #[arg(long, global = true)]
    pub distance_ceiling: Option<f64>,
    /// Maximum recursive re-decompositions per subtask
    #[arg(long, global = true)]
    pub max_depth: Option<usize>,
    #[arg(long, global = true)]
    pub max_interactions: Option<usize>,
    #[arg(long, global = true)]
    pub temperature: Option<f64>,
    #[arg(long, global = true)]
    pub priming_pool_size: Option<usize>,
    #[arg(long, global = true)]
    pub codegen_attempts: Option<usize>,
    #[arg(long, global = true)]
    pub library_description: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub tools: Option<PathBuf>,
    pub db: Option<PathBuf>,
    pub embedding: EmbeddingKind,
    pub dim: usize,
    pub embedding_model: Option<String>,
    pub chat_model: String,
    pub transcript: Option<PathBuf>,
    pub costs: Option<PathBuf>,
    pub trace_dir: PathBuf,
    pub agent: AgentConfig,
    pub file: FileConfig,
}

fn pick<T>(flag: Option<T>, file: &Option<T>) -> Option<T>
where
    T: Clone,
{
    flag.or_else(|| file.clone())
}

impl Settings {
    pub fn resolve(args: CommonArgs) -> Result<Self> {
        let file = FileConfig::load(args.config.as_deref())?;
        let embedding = pick(args.embedding, &file.embedding).unwrap_or(EmbeddingKind::Hash);
        let embedding_model = pick(args.embedding_model, &file.embedding_model);
        let default_dim = match (embedding, embedding_model.as_deref()) {
            (EmbeddingKind::Hash, _) => tulip_core::embedding::DEFAULT_DIMENSION,
            (EmbeddingKind::Http, Some("text-embedding-3-large")) => 3072,
            (EmbeddingKind::Http, _) => 1536,
        };
        let dim = pick(args.dim, &file.dim).unwrap_or(default_dim);
        if dim == 0 {
            bail!("embedding dimension must be positive");
        }

        let mut agent = AgentConfig::default();
        if let Some(name) = pick(args.agent, &file.agent) {
            agent.variant = name.parse::<AgentVariant>().map_err(anyhow::Error::msg)?;
        }
        if embedding == EmbeddingKind::Hash {
            agent.recursion_distance_ceiling = HASHING_DISTANCE_CEILING;
        }
        if let Some(v) = pick(args.top_k, &file.top_k) {
            agent.top_k = v;
        }
        if let Some(v) = pick(args.distance_ceiling, &file.distance_ceiling) {
            agent.recursion_distance_ceiling = v;
        }
        if let Some(v) = pick(args.max_depth, &file.max_depth) {
            agent.max_recursion_depth = v;
        }
        if let Some(v) = pick(args.max_interactions, &file.max_interactions) {
            agent.max_interactions = v;
        }
        if let Some(v) = pick(args.temperature, &file.temperature) {
            agent.temperature = v;
        }
        if let Some(v) = pick(args.priming_pool_size, &file.priming_pool_size) {
            agent.priming_pool_size = v;
        }
        if let Some(v) = pick(args.codegen_attempts, &file.codegen_attempts) {
            agent.codegen_attempts = v;
        }
        agent.library_description = pick(args.library_description, &file.library_description);
        if let Some(p) = &file.prompts {
            agent.prompts = p.clone();
        }
        agent.validate().map_err(anyhow::Error::msg)?;

        Ok(Self {
            tools: pick(args.tools, &file.tools),
            db: pick(args.db, &file.db),
            embedding,
            dim,
            embedding_model,
            chat_model: pick(args.chat_model, &file.chat_model).unwrap_or_else(|| tulip_core::llm::DEFAULT_CHAT_MODEL.to_string()),
            transcript: pick(args.transcript, &file.transcript),
            costs: pick(args.costs, &file.costs),
            trace_dir: pick(args.trace_dir, &file.trace_dir).unwrap_or_else(|| PathBuf::from(".")),
            agent,
            file,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let err = FileConfig::parse("top_k = 3\ncolour = \"red\"\n").unwrap_err();
        assert!(err.to_string().contains("colour"), "{err}");
    }

    #[test]
    fn prompts_table_is_checked_too() {
        assert!(FileConfig::parse("[prompts]\nnot_a_prompt = \"x\"\n").is_err());
        let c = FileConfig::parse("[prompts]\nexecution = \"Go.\"\n").unwrap();
        assert_eq!(c.prompts.unwrap().execution, "Go.");
    }

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tulip.toml");
        std::fs::write(&path, "agent = \"NaiveTool\"\ntop_k = 3\nmax_depth = 1\ndb = \"store.json\"\n").unwrap();
        let args = CommonArgs {
            config: Some(path),
            top_k: Some(7),
            ..Default::default()
        };
        let s = Settings::resolve(args).unwrap();
        assert_eq!(s.agent.variant, AgentVariant::NaiveTool);
        assert_eq!(s.agent.top_k, 7);
        assert_eq!(s.agent.max_recursion_depth, 1);
        assert_eq!(s.db.unwrap(), dir.path().join("store.json"));
    }

    #[test]
    fn hashing_loosens_the_ceiling_unless_set() {
        let s = Settings::resolve(CommonArgs {
            config: Some(write_empty()),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(s.agent.recursion_distance_ceiling, HASHING_DISTANCE_CEILING);
        let s = Settings::resolve(CommonArgs {
            config: Some(write_empty()),
            distance_ceiling: Some(0.9),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(s.agent.recursion_distance_ceiling, 0.9);
        let s = Settings::resolve(CommonArgs {
            config: Some(write_empty()),
            embedding: Some(EmbeddingKind::Http),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(s.agent.recursion_distance_ceiling, AgentConfig::default().recursion_distance_ceiling);
        assert_eq!(s.dim, 1536);
    }

    #[test]
    fn shipped_example_parses() {
        let c = FileConfig::parse(include_str!("../examples/tulip.toml")).unwrap();
        assert_eq!(c.agent.as_deref(), Some("CotTulip"));
        assert_eq!(c.subfields.unwrap().len(), 2);
    }

    fn write_empty() -> PathBuf {
        let f = tempfile::NamedTempFile::new().unwrap();
        let (_, path) = f.keep().unwrap();
        path
    }
}

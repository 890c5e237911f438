mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{CommonArgs, Settings};

/// Tool-library agents: index tools, search them, and let an LLM call them.
#[derive(Debug, Parser)]
#[command(name = "tulip", version)]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse and embed a tool directory into the vector store
    Init,
    /// Write the bundled 100-tool corpus as tool definition files
    Corpus {
        #[arg(long)]
        out: PathBuf,
    },
    /// Show the nearest tools for a description
    Search { query: String },
    /// Answer one prompt with an agent
    Query { prompt: String },
    /// Interactive session; `/quit` exits, `/trace` shows the last trace
    Chat,
    /// Run a task file and report correctness, tool precision/recall and cost
    Eval {
        #[arg(long)]
        tasks: Option<PathBuf>,
        #[arg(long)]
        runs: Option<usize>,
        /// JSON report path; a `.csv` extension writes the aggregate table
        #[arg(long)]
        report: Option<PathBuf>,
        /// Worker threads (0: all cores)
        #[arg(long)]
        jobs: Option<usize>,
        /// Run tasks one after another
        #[arg(long)]
        sequential: bool,
    },
    /// Generate benchmark tools with a live model
    Genfuncs {
        /// Comma-separated subfields, e.g. "algebra,number theory"
        #[arg(long, value_delimiter = ',')]
        subfields: Vec<String>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        per_iteration: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = Settings::resolve(cli.common).map_err(commands::Failure::Input).and_then(|settings| match cli.command {
        Command::Init => commands::init(&settings),
        Command::Corpus { out } => commands::corpus(&out),
        Command::Search { query } => commands::search(&settings, &query),
        Command::Query { prompt } => commands::query(&settings, &prompt),
        Command::Chat => commands::chat(&settings),
        Command::Eval {
            tasks,
            runs,
            report,
            jobs,
            sequential,
        } => commands::eval(
            &settings,
            commands::EvalArgs {
                tasks,
                runs,
                report,
                jobs,
                sequential,
            },
        ),
        Command::Genfuncs {
            subfields,
            iterations,
            per_iteration,
            out,
        } => commands::genfuncs(
            &settings,
            commands::GenArgs {
                subfields,
                iterations,
                per_iteration,
                out,
            },
        ),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(commands::Failure::Agent(message)) => {
            eprintln!("agent failure: {message}");
            ExitCode::from(2)
        }
    }
}

//! Agents that retrieve their tools from an embedding-indexed tool library.
//!
//! The crate is organised bottom-up:
//!
//! ```text
//!   tooldef    parse tool definition files into descriptors and schemas
//!   embedding  hashing / HTTP embedding backends
//!   vecstore   exact squared-L2 kNN store with crash-safe persistence
//!   toollib    descriptors + embeddings + store: init, search, CRUD
//!   runtime    native and subprocess tool execution
//!   llm        chat backends (scripted replay, HTTP), sessions, costs
//!   agents     the agent variants and their query loops
//!   eval       metrics, task corpus, benchmark runner, tool generator
//! ```
//!
//! Data-parallel inner loops (store scans, batch embedding, benchmark
//! fan-out) run on rayon when the `parallel` feature is enabled and fall
//! back to sequential iteration otherwise.

pub mod agents;
pub mod corpus;
pub mod embedding;
pub mod eval;
mod http;
pub mod llm;
pub mod par;
pub mod prompts;
pub mod pyrepr;
pub mod runtime;
pub mod toollib;
pub mod tooldef;
pub mod vecstore;

#[cfg(test)]
mod testutil;

pub use http::Endpoint;

pub use agents::{Agent, AgentConfig, AgentVariant, SessionTrace};
pub use embedding::{Embedder, EmbeddingUsage, EmbeddingVector, HashingEmbedder, HttpEmbedder};
pub use llm::{ChatBackend, ChatMessage, CostTable, HttpChatBackend, ScriptedBackend, UsageRecord};
pub use runtime::{Runtime, ToolCall, ToolResult};
pub use toollib::{LibraryConfig, ToolEntry, ToolLibrary};
pub use tooldef::{ParamKind, ToolDescriptor, ToolParameter};
pub use vecstore::{QueryResult, StoreEntry, VectorStore};

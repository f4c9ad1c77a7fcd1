//! Graph-based retrieval-augmented generation.
//!
//! The crate is organised by pipeline stage:
//!
//! * [`graph`]: the consolidated knowledge graph, its persistence and structural metrics.
//! * [`gateway`]: completion, embedding and judging providers (remote HTTP and a deterministic mock).
//! * [`indexer`]: chunking, entity-type discovery, extraction and fragmented-entity merging.
//! * [`navigator`]: entry finding and the semantic, contextualized (personalized PageRank) and
//!   functional (FastRP) association pathways.
//! * [`refiner`]: interference elimination, chunk ranking, context assembly and answer generation.
//! * [`evaluator`]: retrieval, generation and diagnostic metrics plus a benchmark harness.
//! * [`engine`]: wires navigation and refinement into a single query pipeline.

pub mod config;
pub mod engine;
pub mod evaluator;
pub mod gateway;
pub mod graph;
pub mod indexer;
pub mod navigator;
pub mod refiner;
pub mod text;
pub mod vector;

pub use config::EngineConfig;
pub use engine::{Engine, QueryTrace};
pub use gateway::Gateway;
pub use graph::KnowledgeGraph;

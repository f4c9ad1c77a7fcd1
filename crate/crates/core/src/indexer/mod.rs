//! Corpus to knowledge graph: chunking, type discovery, extraction, embedding and merging.

pub mod chunking;
pub mod extract;
pub mod merge;
pub mod types;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

pub use chunking::{chunk_corpus, ChunkingConfig, Document, Tokenizer};
pub use extract::{extract, ExtractError, Extraction};
pub use merge::{merge_audit, merge_entities, AuditBin, MergeCandidate, MergeReport};
pub use types::{refine_types, suggest_types, CandidateType};

use crate::gateway::{Gateway, GatewayError};
use crate::graph::{
    Chunk, Embedding, EntityId, GraphError, GraphMetadata, KnowledgeGraph, TypeDefinition,
    TypeInventory,
};

/// Texts per embedding request.
pub const EMBED_BATCH: usize = 64;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no extractable content")]
    NoExtractableContent,
    #[error("entity {0} has no embedding")]
    MissingEmbedding(EntityId),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndexConfig {
    pub chunking: ChunkingConfig,
    pub type_cap: usize,
    pub gate_threshold: f64,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            chunking: ChunkingConfig::default(),
            type_cap: types::DEFAULT_TYPE_CAP,
            gate_threshold: merge::DEFAULT_GATE_THRESHOLD,
        }
    }
}

impl IndexConfig {
    /// SHA-256 over the canonical JSON form of the configuration.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        crate::text::sha256_hex(&json)
    }
}

/// Counters from one indexing run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IndexReport {
    pub documents: usize,
    pub chunks: usize,
    pub type_suggestion_failures: usize,
    pub malformed_type_lines: usize,
    pub inventory_size: usize,
    pub extraction_failures: usize,
    pub failed_chunks: Vec<String>,
    pub malformed_extraction_lines: usize,
    pub entities_extracted: usize,
    pub relations_extracted: usize,
    pub merge: MergeReport,
}

#[derive(Debug, Clone)]
pub struct IndexOutcome {
    pub graph: KnowledgeGraph,
    pub report: IndexReport,
}

/// Embeds every entity and relation that has no embedding yet.
pub fn embed_missing(graph: &mut KnowledgeGraph, gateway: &Gateway) -> Result<(), GatewayError> {
    let entities: Vec<(EntityId, String)> = graph
        .entities()
        .filter(|e| e.embedding.is_none())
        .map(|e| (e.id.clone(), e.embedding_text()))
        .collect();
    for batch in entities.chunks(EMBED_BATCH) {
        let texts: Vec<String> = batch.iter().map(|b| b.1.clone()).collect();
        for ((id, _), v) in batch.iter().zip(gateway.embed(&texts)?) {
            graph.set_entity_embedding(id, Embedding::from(v));
        }
    }
    let relations: Vec<_> = graph
        .relations()
        .filter(|r| r.embedding.is_none())
        .map(|r| (r.id.clone(), r.embedding_text()))
        .collect();
    for batch in relations.chunks(EMBED_BATCH) {
        let texts: Vec<String> = batch.iter().map(|b| b.1.clone()).collect();
        for ((id, _), v) in batch.iter().zip(gateway.embed(&texts)?) {
            graph.set_relation_embedding(id, Embedding::from(v));
        }
    }
    Ok(())
}

fn chunk_with(
    documents: &[Document],
    config: &ChunkingConfig,
    gateway: &Gateway,
) -> Result<Vec<Chunk>, IndexError> {
    config.validate()?;
    match config.tokenizer {
        Tokenizer::Whitespace => chunk_corpus(documents, config),
        Tokenizer::Provider => {
            let mut out = Vec::new();
            for d in documents {
                let spans = gateway.token_spans(&d.text)?;
                out.extend(chunking::chunk_document(d, &spans, config));
            }
            Ok(out)
        }
    }
}

/// Builds the consolidated knowledge graph for `documents`.
pub fn index(
    documents: &[Document],
    config: &IndexConfig,
    gateway: &Gateway,
) -> Result<IndexOutcome, IndexError> {
    if !(0.0..=1.0).contains(&config.gate_threshold) {
        return Err(IndexError::InvalidConfig(format!(
            "gate_threshold {} outside [0, 1]",
            config.gate_threshold
        )));
    }
    if config.type_cap == 0 {
        return Err(IndexError::InvalidConfig("type_cap must be positive".into()));
    }
    let chunks = chunk_with(documents, &config.chunking, gateway)?;
    if chunks.is_empty() {
        return Err(IndexError::NoExtractableContent);
    }
    let mut report = IndexReport {
        documents: documents.len(),
        chunks: chunks.len(),
        ..IndexReport::default()
    };
    info!(documents = documents.len(), chunks = chunks.len(), "chunked corpus");

    let suggestions: Vec<_> = chunks
        .par_iter()
        .map(|c| (c, suggest_types(c, gateway)))
        .collect();
    let mut candidates = Vec::new();
    for (chunk, result) in suggestions {
        match result {
            Ok(s) => {
                report.malformed_type_lines += s.malformed;
                candidates.extend(s.candidates.into_iter().map(|(label, definition)| {
                    CandidateType {
                        label,
                        definition,
                        doc_id: chunk.doc_id.clone(),
                    }
                }));
            }
            Err(err) => {
                warn!(chunk = %chunk.id, error = %err, "type suggestion failed");
                report.type_suggestion_failures += 1;
            }
        }
    }
    let inventory = if candidates.is_empty() {
        warn!("no type candidates; falling back to a single catch-all type");
        TypeInventory {
            types: vec![TypeDefinition {
                label: extract::FALLBACK_TYPE.to_string(),
                definition: "any named entity".to_string(),
                suggested_by: documents.iter().map(|d| d.id.clone()).collect(),
            }],
        }
    } else {
        refine_types(&candidates, config.type_cap, gateway)?
    };
    report.inventory_size = inventory.len();
    info!(types = inventory.len(), "type inventory ready");

    let extractions: Vec<_> = chunks
        .par_iter()
        .map(|c| extract(c, &inventory, gateway))
        .collect();

    let mut graph = KnowledgeGraph::new();
    let mut succeeded = 0usize;
    for (chunk, result) in chunks.iter().zip(extractions) {
        graph.insert_chunk(chunk.clone());
        match result {
            Ok(x) => {
                succeeded += 1;
                report.malformed_extraction_lines += x.malformed_lines;
                report.entities_extracted += x.entities.len();
                report.relations_extracted += x.relations.len();
                for e in x.entities {
                    graph.upsert_entity(e)?;
                }
                for r in x.relations {
                    graph.upsert_relation(r)?;
                }
            }
            Err(err) => {
                warn!(chunk = %chunk.id, error = %err, "extraction failed; chunk skipped");
                report.extraction_failures += 1;
                report.failed_chunks.push(chunk.id.to_string());
            }
        }
    }
    if succeeded == 0 {
        return Err(IndexError::NoExtractableContent);
    }
    graph.set_type_inventory(inventory);

    if graph.entity_count() > 0 {
        embed_missing(&mut graph, gateway)?;
    }
    report.merge = merge_entities(&mut graph, config.gate_threshold, gateway)?;
    graph.set_metadata(GraphMetadata {
        config_fingerprint: config.fingerprint(),
        embedding_model: Some(gateway.embedding_model().to_string()),
        embedding_dimension: Some(gateway.embedding_dimension()),
    });
    info!(
        entities = graph.entity_count(),
        relations = graph.relation_count(),
        merged_groups = report.merge.merged_groups,
        "index complete"
    );
    Ok(IndexOutcome { graph, report })
}

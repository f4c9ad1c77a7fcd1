//! The query pipeline: navigate, eliminate interference, rank chunks, assemble context, answer.

use serde::Serialize;

use crate::config::{ConfigError, EngineConfig};
use crate::evaluator::{Pipeline, PipelineOutput};
use crate::gateway::{Gateway, GatewayError};
use crate::graph::KnowledgeGraph;
use crate::navigator::{EvidenceSubgraph, NavigationConfig, NavigationError, Navigator, QueryCues};
use crate::refiner::{
    build_context, eliminate_interference, generate_answer, rank_chunks, Answer,
    AssembledContext, RankedChunk, RefineError, RefinedEvidence, RefinerConfig,
};

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Navigation(#[from] NavigationError),
    #[error(transparent)]
    Refine(#[from] RefineError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Everything one query produced, for auditing.
#[derive(Debug, Clone, Serialize)]
pub struct QueryTrace {
    pub query: String,
    pub cues: QueryCues,
    pub subgraph: EvidenceSubgraph,
    pub refined: RefinedEvidence,
    pub chunks: Vec<RankedChunk>,
    pub context: AssembledContext,
    /// The context built from the unfiltered subgraph; present when auditing.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pre_filter_context: Option<AssembledContext>,
    pub answer: Answer,
}

pub struct Engine<'g> {
    graph: &'g KnowledgeGraph,
    navigator: Navigator<'g>,
    gateway: Gateway,
    navigation: NavigationConfig,
    refiner: RefinerConfig,
}

impl<'g> Engine<'g> {
    /// Fails when the config is invalid or the gateway embeds into a different space than the
    /// one the graph was built with.
    pub fn new(graph: &'g KnowledgeGraph, config: &EngineConfig, gateway: Gateway) -> Result<Self, EngineError> {
        config.validate()?;
        let meta = graph.metadata();
        gateway.check_embedding_space(meta.embedding_model.as_deref(), meta.embedding_dimension)?;
        Ok(Self {
            graph,
            navigator: Navigator::new(graph),
            gateway,
            navigation: config.navigation_config(),
            refiner: config.refiner_config(),
        })
    }

    pub fn graph(&self) -> &KnowledgeGraph {
        self.graph
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn query(&self, query: &str) -> Result<QueryTrace, EngineError> {
        self.run(query, false)
    }

    /// Like [`Engine::query`], also building the context the unfiltered subgraph would give.
    pub fn query_with_audit(&self, query: &str) -> Result<QueryTrace, EngineError> {
        self.run(query, true)
    }

    fn assemble(&self, evidence: &RefinedEvidence) -> (Vec<RankedChunk>, AssembledContext) {
        let chunks = rank_chunks(evidence, self.graph, self.refiner.chunk_top_k);
        let ctx = build_context(evidence, &chunks, self.graph, self.refiner.context_budget);
        (chunks, ctx)
    }

    fn run(&self, query: &str, audit: bool) -> Result<QueryTrace, EngineError> {
        let nav = self.navigator.navigate(query, &self.navigation, &self.gateway)?;
        let unfiltered = RefinedEvidence::keep_all(&nav.subgraph, query);
        let refined = if nav.subgraph.is_empty() || self.refiner.skip_elimination {
            unfiltered.clone()
        } else {
            eliminate_interference(
                &nav.subgraph,
                query,
                self.graph,
                &self.gateway,
                self.refiner.elimination_batch,
            )?
        };
        let (chunks, context) = self.assemble(&refined);
        let pre_filter_context = audit.then(|| self.assemble(&unfiltered).1);
        let answer = generate_answer(query, &context, &self.gateway)?;
        Ok(QueryTrace {
            query: query.to_string(),
            cues: nav.cues,
            subgraph: nav.subgraph,
            refined,
            chunks,
            context,
            pre_filter_context,
            answer,
        })
    }
}

impl Pipeline for Engine<'_> {
    fn run(&self, query: &str) -> Result<PipelineOutput, String> {
        let trace = self.query_with_audit(query).map_err(|e| e.to_string())?;
        Ok(PipelineOutput {
            answer: trace.answer.text,
            context: trace.context.text(),
            pre_filter_context: trace.pre_filter_context.map(|c| c.text()),
        })
    }
}

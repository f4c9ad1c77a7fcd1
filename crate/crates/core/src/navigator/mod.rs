//! Query-time navigation: cue generation, entry finding and three association pathways whose
//! results are unioned into an evidence subgraph.
//!
//! * Semantic: one-hop neighbors of the entries scored by `alpha * sim_rel + beta * sim_ent`.
//! * Contextualized: personalized PageRank seeded on the entries.
//! * Functional: mean structural (FastRP) similarity to the entries.

pub mod cues;
pub mod entries;
pub mod fastrp;
pub mod functional;
pub mod ppr;
pub mod semantic;
pub mod view;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, warn};

pub use cues::{generate_cues, QueryCues};
pub use fastrp::{compute_structural_embeddings, FastRPConfig, StructuralEmbeddings};
pub use view::GraphView;

use crate::gateway::{Gateway, GatewayError};
use crate::graph::{EntityId, KnowledgeGraph, RelationId};
use entries::{affinities, find_entry_indices, Affinities, EntryIndices};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CueAggregation {
    #[default]
    Max,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NavigationConfig {
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
    pub damping: f64,
    pub top_k_entries: usize,
    pub top_neighbors: usize,
    pub top_ppr_nodes: usize,
    pub top_fastrp_nodes: usize,
    pub cue_aggregation: CueAggregation,
    pub fastrp: FastRPConfig,
    /// Mixed into the FastRP projection seed.
    pub seed: u64,
}

impl Default for NavigationConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.4,
            tau: 0.35,
            damping: 0.85,
            top_k_entries: 10,
            top_neighbors: 10,
            top_ppr_nodes: 20,
            top_fastrp_nodes: 10,
            cue_aggregation: CueAggregation::Max,
            fastrp: FastRPConfig::default(),
            seed: 0,
        }
    }
}

impl NavigationConfig {
    /// Top-k values of zero are accepted and disable the corresponding step.
    pub fn validate(&self) -> Result<(), NavigationError> {
        let bad = |m: String| Err(NavigationError::InvalidConfig(m));
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return bad(format!("alpha and beta must be >= 0 (got {}, {})", self.alpha, self.beta));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad(format!("tau must lie in [0, 1] (got {})", self.tau));
        }
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return bad(format!("damping must lie in (0, 1) (got {})", self.damping));
        }
        self.fastrp.validate().map_err(NavigationError::InvalidConfig)
    }

    pub fn effective_fastrp(&self) -> FastRPConfig {
        FastRPConfig {
            seed: self.fastrp.seed ^ self.seed,
            ..self.fastrp.clone()
        }
    }
}

#[derive(Debug, Error)]
pub enum NavigationError {
    #[error("invalid navigation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pathway {
    Entry,
    Semantic,
    Contextualized,
    Functional,
}

impl Pathway {
    pub fn as_str(self) -> &'static str {
        match self {
            Pathway::Entry => "entry",
            Pathway::Semantic => "semantic",
            Pathway::Contextualized => "contextualized",
            Pathway::Functional => "functional",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredEntity {
    pub entity_id: EntityId,
    pub score: f64,
    pub pathway: Pathway,
}

/// Output of one pathway before the union.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PathwayResult {
    pub entities: Vec<ScoredEntity>,
    pub relations: BTreeSet<RelationId>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvidenceSubgraph {
    /// One record per (entity, pathway), ordered by entity id then pathway.
    pub scored_entities: Vec<ScoredEntity>,
    pub relations: BTreeSet<RelationId>,
    pub entry_entities: BTreeSet<EntityId>,
    pub entry_relations: BTreeSet<RelationId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
}

impl EvidenceSubgraph {
    pub fn entity_ids(&self) -> BTreeSet<EntityId> {
        self.scored_entities.iter().map(|s| s.entity_id.clone()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.scored_entities.is_empty()
    }

    pub fn pathways_of(&self, id: &EntityId) -> Vec<Pathway> {
        self.scored_entities
            .iter()
            .filter(|s| &s.entity_id == id)
            .map(|s| s.pathway)
            .collect()
    }

    /// Relation endpoints are scored entities, entries are scored entities, and every id
    /// exists in `graph`.
    pub fn check(&self, graph: &KnowledgeGraph) -> Result<(), String> {
        let ids = self.entity_ids();
        for id in &ids {
            if graph.entity(id).is_none() {
                return Err(format!("unknown entity {id}"));
            }
        }
        for rid in &self.relations {
            let r = graph.relation(rid).ok_or(format!("unknown relation {rid}"))?;
            if !ids.contains(&r.source_id) || !ids.contains(&r.target_id) {
                return Err(format!("relation {rid} has an endpoint outside the subgraph"));
            }
        }
        if !self.entry_entities.is_subset(&ids) {
            return Err("entry entities are not all scored".into());
        }
        if !self.entry_relations.is_subset(&self.relations) {
            return Err("entry relations are not all included".into());
        }
        Ok(())
    }
}

/// Unions entry and pathway results: an entity reached by several pathways keeps one record
/// per pathway, and duplicate (entity, pathway) records keep the highest score.
pub fn assemble(
    entries: Vec<ScoredEntity>,
    entry_relations: BTreeSet<RelationId>,
    pathways: Vec<PathwayResult>,
) -> EvidenceSubgraph {
    let entry_entities: BTreeSet<EntityId> = entries.iter().map(|e| e.entity_id.clone()).collect();
    let mut best: BTreeMap<(EntityId, Pathway), f64> = BTreeMap::new();
    let mut relations = entry_relations.clone();
    let all = entries
        .into_iter()
        .chain(pathways.iter().flat_map(|p| p.entities.iter().cloned()));
    for s in all {
        best.entry((s.entity_id, s.pathway))
            .and_modify(|v| *v = v.max(s.score))
            .or_insert(s.score);
    }
    for p in pathways {
        relations.extend(p.relations);
    }
    EvidenceSubgraph {
        scored_entities: best
            .into_iter()
            .map(|((entity_id, pathway), score)| ScoredEntity {
                entity_id,
                score,
                pathway,
            })
            .collect(),
        relations,
        entry_entities,
        entry_relations,
        diagnostics: Vec::new(),
    }
}

/// Navigation over one immutable graph snapshot. Structural embeddings are computed on first
/// use and cached.
pub struct Navigator<'g> {
    view: GraphView<'g>,
    structural: OnceLock<(FastRPConfig, StructuralEmbeddings)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Navigation {
    pub cues: QueryCues,
    pub subgraph: EvidenceSubgraph,
}

impl<'g> Navigator<'g> {
    pub fn new(graph: &'g KnowledgeGraph) -> Self {
        Self {
            view: GraphView::new(graph),
            structural: OnceLock::new(),
        }
    }

    pub fn view(&self) -> &GraphView<'g> {
        &self.view
    }

    pub fn graph(&self) -> &'g KnowledgeGraph {
        self.view.graph
    }

    /// Cached structural embeddings for `config`; a different config is computed afresh.
    pub fn structural(&self, config: &FastRPConfig) -> std::borrow::Cow<'_, StructuralEmbeddings> {
        let (cached_cfg, cached) = self
            .structural
            .get_or_init(|| (config.clone(), fastrp::compute(&self.view, config)));
        if cached_cfg == config {
            std::borrow::Cow::Borrowed(cached)
        } else {
            std::borrow::Cow::Owned(fastrp::compute(&self.view, config))
        }
    }

    /// Generates cues for `query` and navigates with them.
    pub fn navigate(
        &self,
        query: &str,
        config: &NavigationConfig,
        gateway: &Gateway,
    ) -> Result<Navigation, NavigationError> {
        config.validate()?;
        let cues = generate_cues(query, gateway)?;
        let subgraph = self.navigate_with_cues(&cues, config)?;
        Ok(Navigation { cues, subgraph })
    }

    pub fn entries(&self, cues: &QueryCues, config: &NavigationConfig) -> (Affinities, EntryIndices) {
        let aff = affinities(&self.view, cues, config.cue_aggregation);
        let entries = find_entry_indices(&self.view, &aff, config.top_k_entries);
        (aff, entries)
    }

    pub fn navigate_with_cues(
        &self,
        cues: &QueryCues,
        config: &NavigationConfig,
    ) -> Result<EvidenceSubgraph, NavigationError> {
        config.validate()?;
        let v = &self.view;
        let (aff, entries) = self.entries(cues, config);
        if entries.seeds.is_empty() {
            warn!("no entry entities; returning an empty subgraph");
            let mut empty = EvidenceSubgraph::default();
            empty.diagnostics.push("no entry entities found".into());
            return Ok(empty);
        }
        let seeds = &entries.seeds;
        let entry_scored: Vec<ScoredEntity> = seeds
            .iter()
            .map(|&i| ScoredEntity {
                entity_id: v.entity_ids[i].clone(),
                score: aff.entity(i),
                pathway: Pathway::Entry,
            })
            .collect();
        let entry_relations: BTreeSet<RelationId> = entries
            .relations
            .iter()
            .map(|&r| v.relation_ids[r].clone())
            .collect();

        let ((sem, con), fun) = rayon::join(
            || {
                rayon::join(
                    || self.semantic(&aff, seeds, config),
                    || self.contextualized(&aff, seeds, config),
                )
            },
            || self.functional(seeds, config),
        );
        debug!(
            seeds = seeds.len(),
            semantic = sem.entities.len(),
            contextualized = con.entities.len(),
            functional = fun.entities.len(),
            "pathways done"
        );
        Ok(assemble(entry_scored, entry_relations, vec![sem, con, fun]))
    }

    fn semantic(&self, aff: &Affinities, seeds: &[usize], c: &NavigationConfig) -> PathwayResult {
        let v = &self.view;
        let hits = semantic::semantic_association(
            v, aff, seeds, c.alpha, c.beta, c.tau, c.top_neighbors,
        );
        PathwayResult {
            entities: hits
                .iter()
                .map(|h| ScoredEntity {
                    entity_id: v.entity_ids[h.neighbor].clone(),
                    score: h.score,
                    pathway: Pathway::Semantic,
                })
                .collect(),
            relations: hits.iter().map(|h| v.relation_ids[h.relation].clone()).collect(),
        }
    }

    fn contextualized(&self, aff: &Affinities, seeds: &[usize], c: &NavigationConfig) -> PathwayResult {
        if c.top_ppr_nodes == 0 {
            return PathwayResult::default();
        }
        let v = &self.view;
        let p = ppr::personalization(v, aff, seeds);
        let t = ppr::transitions(v, aff);
        let result = ppr::personalized_pagerank(v, &p, &t, c.damping);
        let top: Vec<usize> = entries::top_k(&result.scores, c.top_ppr_nodes)
            .into_iter()
            .filter(|&i| result.scores[i] > 0.0)
            .collect();
        let members: BTreeSet<usize> = top.iter().copied().collect();
        PathwayResult {
            entities: top
                .iter()
                .map(|&i| ScoredEntity {
                    entity_id: v.entity_ids[i].clone(),
                    score: result.scores[i],
                    pathway: Pathway::Contextualized,
                })
                .collect(),
            relations: v.induced_relations(&members),
        }
    }

    fn functional(&self, seeds: &[usize], c: &NavigationConfig) -> PathwayResult {
        if c.top_fastrp_nodes == 0 {
            return PathwayResult::default();
        }
        let v = &self.view;
        let x = self.structural(&c.effective_fastrp());
        let hits = functional::functional_association(&x, seeds, c.top_fastrp_nodes);
        let members: BTreeSet<usize> = hits.iter().map(|h| h.0).chain(seeds.iter().copied()).collect();
        PathwayResult {
            entities: hits
                .iter()
                .map(|&(i, score)| ScoredEntity {
                    entity_id: v.entity_ids[i].clone(),
                    score,
                    pathway: Pathway::Functional,
                })
                .collect(),
            relations: v.induced_relations(&members),
        }
    }
}

/// One-shot navigation over `graph`.
pub fn navigate(
    query: &str,
    graph: &KnowledgeGraph,
    config: &NavigationConfig,
    gateway: &Gateway,
) -> Result<Navigation, NavigationError> {
    Navigator::new(graph).navigate(query, config, gateway)
}

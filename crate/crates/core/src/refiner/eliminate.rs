use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::RefineError;
use crate::gateway::{Decision, Gateway};
use crate::graph::{EntityId, KnowledgeGraph, RelationId};
use crate::navigator::EvidenceSubgraph;

/// Descriptions longer than this are cut in the judge payload.
const PAYLOAD_DESCRIPTION_CHARS: usize = 400;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "snake_case")]
pub enum EvidenceItem {
    Entity(EntityId),
    Relation(RelationId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EliminatedItem {
    pub item: EvidenceItem,
    pub rationale: String,
    /// Set when a relation was removed only because an endpoint was eliminated.
    #[serde(default)]
    pub orphaned: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedEvidence {
    pub query: String,
    pub kept_entities: BTreeSet<EntityId>,
    pub kept_relations: BTreeSet<RelationId>,
    pub eliminated: Vec<EliminatedItem>,
    /// Batches whose judge call failed; their items were kept.
    #[serde(default)]
    pub failed_batches: usize,
}

impl RefinedEvidence {
    /// Keeps everything; used when elimination is skipped.
    pub fn keep_all(subgraph: &EvidenceSubgraph, query: &str) -> Self {
        Self {
            query: query.to_string(),
            kept_entities: subgraph.entity_ids(),
            kept_relations: subgraph.relations.clone(),
            eliminated: Vec::new(),
            failed_batches: 0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.kept_entities.is_empty() && self.kept_relations.is_empty()
    }

    pub fn eliminated_entities(&self) -> BTreeSet<&EntityId> {
        self.eliminated
            .iter()
            .filter_map(|e| match &e.item {
                EvidenceItem::Entity(id) => Some(id),
                EvidenceItem::Relation(_) => None,
            })
            .collect()
    }
}

fn clip(text: &str) -> String {
    let flat = text.replace("<SEP>", "; ");
    match flat.char_indices().nth(PAYLOAD_DESCRIPTION_CHARS) {
        Some((i, _)) => format!("{}...", &flat[..i]),
        None => flat,
    }
}

fn render_entity(graph: &KnowledgeGraph, subgraph: &EvidenceSubgraph, id: &EntityId) -> String {
    let e = graph.entity(id).expect("subgraph entity exists in graph");
    let tags: Vec<&str> = subgraph.pathways_of(id).iter().map(|p| p.as_str()).collect();
    format!(
        "entity: {} | {} | {} | pathways: {}",
        e.name,
        e.type_label,
        clip(&e.description),
        tags.join(", ")
    )
}

fn render_relation(graph: &KnowledgeGraph, id: &RelationId) -> String {
    let r = graph.relation(id).expect("subgraph relation exists in graph");
    let name = |e: &EntityId| graph.entity(e).map_or(e.as_str(), |x| x.name.as_str()).to_string();
    format!(
        "relation: {} <-> {} | {}",
        name(&r.source_id),
        name(&r.target_id),
        clip(&r.description)
    )
}

/// Batched keep/eliminate judgement over the non-entry part of the subgraph.
pub fn eliminate_interference(
    subgraph: &EvidenceSubgraph,
    query: &str,
    graph: &KnowledgeGraph,
    gateway: &Gateway,
    batch_size: usize,
) -> Result<RefinedEvidence, RefineError> {
    if subgraph.is_empty() {
        return Err(RefineError::Precondition("evidence subgraph is empty".into()));
    }
    if batch_size == 0 {
        return Err(RefineError::Precondition("elimination batch size must be at least 1".into()));
    }
    subgraph.check(graph).map_err(RefineError::Precondition)?;

    let mut items: Vec<(EvidenceItem, String)> = Vec::new();
    for id in subgraph.entity_ids() {
        if !subgraph.entry_entities.contains(&id) {
            let text = render_entity(graph, subgraph, &id);
            items.push((EvidenceItem::Entity(id), text));
        }
    }
    for id in &subgraph.relations {
        items.push((EvidenceItem::Relation(id.clone()), render_relation(graph, id)));
    }

    let batches: Vec<&[(EvidenceItem, String)]> = items.chunks(batch_size).collect();
    let judged: Vec<_> = batches
        .par_iter()
        .map(|batch| {
            let texts: Vec<String> = batch.iter().map(|(_, t)| t.clone()).collect();
            gateway.judge_elimination(query, &texts)
        })
        .collect();

    let mut failed_batches = 0;
    let mut eliminated = Vec::new();
    let mut dropped: BTreeSet<EvidenceItem> = BTreeSet::new();
    for (batch, result) in batches.iter().zip(judged) {
        match result {
            Ok(verdicts) => {
                for ((item, _), verdict) in batch.iter().zip(verdicts) {
                    match verdict {
                        Some(v) if v.decision == Decision::Eliminate => {
                            dropped.insert(item.clone());
                            eliminated.push(EliminatedItem {
                                item: item.clone(),
                                rationale: v.rationale,
                                orphaned: false,
                            });
                        }
                        Some(_) => {}
                        None => tracing::debug!(?item, "no verdict line, keeping item"),
                    }
                }
            }
            Err(err) => {
                failed_batches += 1;
                tracing::warn!(%err, items = batch.len(), "elimination batch failed, keeping its items");
            }
        }
    }

    let kept_entities: BTreeSet<EntityId> = subgraph
        .entity_ids()
        .into_iter()
        .filter(|id| !dropped.contains(&EvidenceItem::Entity(id.clone())))
        .collect();
    let mut kept_relations = BTreeSet::new();
    for id in &subgraph.relations {
        if dropped.contains(&EvidenceItem::Relation(id.clone())) {
            continue;
        }
        let r = graph.relation(id).expect("checked above");
        if kept_entities.contains(&r.source_id) && kept_entities.contains(&r.target_id) {
            kept_relations.insert(id.clone());
        } else {
            eliminated.push(EliminatedItem {
                item: EvidenceItem::Relation(id.clone()),
                rationale: "endpoint eliminated".into(),
                orphaned: true,
            });
        }
    }
    eliminated.sort_by(|a, b| a.item.cmp(&b.item));

    Ok(RefinedEvidence {
        query: query.to_string(),
        kept_entities,
        kept_relations,
        eliminated,
        failed_batches,
    })
}

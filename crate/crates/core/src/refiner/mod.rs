//! Evidence refinement: judge-driven elimination of distracting items, chunk ranking by
//! citation count, budgeted context assembly and answer generation.

mod context;
mod eliminate;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use context::{
    build_context, rank_chunks, AssembledContext, BudgetReport, RankedChunk, CHUNK_HEADER,
    ENTITY_HEADER, RELATION_HEADER,
};
pub use eliminate::{eliminate_interference, EliminatedItem, EvidenceItem, RefinedEvidence};

use crate::gateway::{Gateway, GatewayError, TemplateId};

#[derive(Debug, thiserror::Error)]
pub enum RefineError {
    #[error("refiner precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefinerConfig {
    /// Chunks handed to the generator; 0 gives a graph-only context.
    pub chunk_top_k: usize,
    /// Whitespace-token budget of the assembled context.
    pub context_budget: usize,
    pub elimination_batch: usize,
    /// Skips the elimination judge and keeps the whole subgraph.
    pub skip_elimination: bool,
}

impl Default for RefinerConfig {
    fn default() -> Self {
        Self {
            chunk_top_k: 5,
            context_budget: 8000,
            elimination_batch: 20,
            skip_elimination: false,
        }
    }
}

impl RefinerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.elimination_batch == 0 {
            return Err("elimination_batch must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    pub context_fingerprint: String,
    /// The insufficient-context template was used.
    pub insufficient: bool,
}

/// One completion over the assembled context. An empty context goes through the
/// insufficient-context template instead.
pub fn generate_answer(
    query: &str,
    context: &AssembledContext,
    gateway: &Gateway,
) -> Result<Answer, GatewayError> {
    let insufficient = context.is_empty();
    let mut values = BTreeMap::from([("query", query.to_string())]);
    let template = if insufficient {
        TemplateId::AnswerInsufficient
    } else {
        values.insert("context", context.text());
        TemplateId::Answer
    };
    let text = gateway.run_allow_empty(template, &values)?;
    Ok(Answer {
        text,
        context_fingerprint: context.fingerprint.clone(),
        insufficient,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::gateway::mock::INSUFFICIENT_CONTEXT_REPLY;
    use crate::gateway::{AnswerStyle, MockConfig};
    use crate::graph::{Chunk, ChunkId, Entity, EntityId, KnowledgeGraph, Relation, RelationId};
    use crate::navigator::{EvidenceSubgraph, Pathway, ScoredEntity};
    use crate::text::token_count;

    fn chunk(id: &str, text: &str) -> Chunk {
        Chunk {
            id: ChunkId::from(id),
            doc_id: "doc".into(),
            ordinal: 0,
            text: text.into(),
            token_span: (0, token_count(text)),
        }
    }

    /// Acme (entry) - Bolt - Cog, plus Acme - Dune.
    fn fixture() -> (KnowledgeGraph, EvidenceSubgraph) {
        let mut g = KnowledgeGraph::new();
        g.insert_chunk(chunk("c1", "Acme builds bolts in Dune."));
        g.insert_chunk(chunk("c2", "Bolt feeds the Cog line."));
        for (n, c) in [("Acme", "c1"), ("Bolt", "c2"), ("Cog", "c2"), ("Dune", "c1")] {
            g.upsert_entity(Entity::new(n, "organization", &format!("{n} description")).with_chunk(c.into()))
                .unwrap();
        }
        for (a, b, c) in [("Acme", "Bolt", "c1"), ("Bolt", "Cog", "c2"), ("Acme", "Dune", "c1")] {
            let r = Relation::new(EntityId::from_name(a), EntityId::from_name(b), &format!("{a} with {b}"))
                .with_chunk(c.into());
            g.upsert_relation(r).unwrap();
        }
        let scored = |n: &str, p| ScoredEntity {
            entity_id: EntityId::from_name(n),
            score: 1.0,
            pathway: p,
        };
        let sub = EvidenceSubgraph {
            scored_entities: vec![
                scored("Acme", Pathway::Entry),
                scored("Bolt", Pathway::Semantic),
                scored("Cog", Pathway::Contextualized),
                scored("Dune", Pathway::Functional),
            ],
            relations: g.relations().map(|r| r.id.clone()).collect(),
            entry_entities: BTreeSet::from([EntityId::from_name("Acme")]),
            entry_relations: BTreeSet::new(),
            diagnostics: Vec::new(),
        };
        (g, sub)
    }

    fn mock(eliminate: &[&str]) -> Gateway {
        Gateway::mock(MockConfig {
            eliminate: eliminate.iter().map(|s| s.to_string()).collect(),
            ..MockConfig::default()
        })
    }

    fn all_items(sub: &EvidenceSubgraph) -> BTreeSet<EvidenceItem> {
        sub.entity_ids()
            .into_iter()
            .map(EvidenceItem::Entity)
            .chain(sub.relations.iter().cloned().map(EvidenceItem::Relation))
            .collect()
    }

    fn partition(r: &RefinedEvidence) -> BTreeSet<EvidenceItem> {
        let mut out: BTreeSet<EvidenceItem> = r
            .kept_entities
            .iter()
            .cloned()
            .map(EvidenceItem::Entity)
            .chain(r.kept_relations.iter().cloned().map(EvidenceItem::Relation))
            .collect();
        for e in &r.eliminated {
            assert!(out.insert(e.item.clone()), "item both kept and eliminated");
        }
        out
    }

    #[test]
    fn keep_everything_is_identity() {
        let (g, sub) = fixture();
        let r = eliminate_interference(&sub, "what does acme build", &g, &mock(&[]), 20).unwrap();
        assert_eq!(r.kept_entities, sub.entity_ids());
        assert_eq!(r.kept_relations, sub.relations);
        assert!(r.eliminated.is_empty());
    }

    #[test]
    fn eliminated_entity_orphans_its_relations() {
        let (g, sub) = fixture();
        let r = eliminate_interference(&sub, "q", &g, &mock(&["bolt"]), 20).unwrap();
        assert!(!r.kept_entities.contains(&EntityId::from_name("Bolt")));
        let bolt = EntityId::from_name("Bolt");
        let orphaned: BTreeSet<RelationId> = r
            .eliminated
            .iter()
            .filter(|e| e.orphaned)
            .map(|e| match &e.item {
                EvidenceItem::Relation(id) => id.clone(),
                EvidenceItem::Entity(_) => panic!("entities are never orphaned"),
            })
            .collect();
        let incident: BTreeSet<RelationId> = g
            .relations()
            .filter(|x| x.source_id == bolt || x.target_id == bolt)
            .map(|x| x.id.clone())
            .collect();
        assert_eq!(orphaned, incident);
        for id in &r.kept_relations {
            let rel = g.relation(id).unwrap();
            assert!(r.kept_entities.contains(&rel.source_id));
            assert!(r.kept_entities.contains(&rel.target_id));
        }
        assert_eq!(partition(&r), all_items(&sub));
    }

    #[test]
    fn entry_entities_are_never_submitted() {
        let (g, sub) = fixture();
        let r = eliminate_interference(&sub, "q", &g, &mock(&["acme", "dune"]), 1).unwrap();
        assert!(r.kept_entities.contains(&EntityId::from_name("Acme")));
        assert!(!r.kept_entities.contains(&EntityId::from_name("Dune")));
        assert_eq!(partition(&r), all_items(&sub));
    }

    #[test]
    fn relation_can_be_eliminated_directly() {
        let (g, sub) = fixture();
        let r = eliminate_interference(&sub, "q", &g, &mock(&["bolt <-> cog"]), 2).unwrap();
        assert_eq!(r.kept_entities.len(), 4);
        assert_eq!(r.kept_relations.len(), 2);
        assert_eq!(r.eliminated.len(), 1);
        assert!(!r.eliminated[0].orphaned);
    }

    #[test]
    fn empty_subgraph_is_rejected() {
        let g = KnowledgeGraph::new();
        let sub = EvidenceSubgraph {
            scored_entities: vec![],
            relations: BTreeSet::new(),
            entry_entities: BTreeSet::new(),
            entry_relations: BTreeSet::new(),
            diagnostics: vec![],
        };
        assert!(matches!(
            eliminate_interference(&sub, "q", &g, &mock(&[]), 20),
            Err(RefineError::Precondition(_))
        ));
    }

    fn counting_graph() -> (KnowledgeGraph, RefinedEvidence) {
        let mut g = KnowledgeGraph::new();
        g.insert_chunk(chunk("a", "alpha text"));
        g.insert_chunk(chunk("b", "beta text"));
        g.insert_chunk(chunk("z", "zeta text"));
        for n in ["e1", "e2", "e3"] {
            g.upsert_entity(Entity::new(n, "t", "").with_chunk("a".into())).unwrap();
        }
        g.upsert_entity(Entity::new("e4", "t", "").with_chunk("b".into())).unwrap();
        for (s, t) in [("e1", "e2"), ("e2", "e3")] {
            g.upsert_relation(Relation::new(s.into(), t.into(), "").with_chunk("a".into()))
                .unwrap();
        }
        let ev = RefinedEvidence {
            query: "q".into(),
            kept_entities: g.entities().map(|e| e.id.clone()).collect(),
            kept_relations: g.relations().map(|r| r.id.clone()).collect(),
            eliminated: vec![],
            failed_batches: 0,
        };
        (g, ev)
    }

    #[test]
    fn chunk_scores_count_citations() {
        let (g, ev) = counting_graph();
        let ranked = rank_chunks(&ev, &g, 5);
        assert_eq!(
            ranked,
            vec![
                RankedChunk { chunk_id: "a".into(), score: 5 },
                RankedChunk { chunk_id: "b".into(), score: 1 },
            ]
        );
        assert!(rank_chunks(&ev, &g, 0).is_empty());
        assert_eq!(rank_chunks(&ev, &g, 1).len(), 1);
    }

    #[test]
    fn chunk_ties_break_by_id() {
        let mut g = KnowledgeGraph::new();
        for c in ["c9", "c1", "c5"] {
            g.insert_chunk(chunk(c, "x"));
            g.upsert_entity(Entity::new(&format!("n{c}"), "t", "").with_chunk(c.into())).unwrap();
        }
        let ev = RefinedEvidence {
            query: "q".into(),
            kept_entities: g.entities().map(|e| e.id.clone()).collect(),
            kept_relations: BTreeSet::new(),
            eliminated: vec![],
            failed_batches: 0,
        };
        let ids: Vec<String> = rank_chunks(&ev, &g, 5).into_iter().map(|c| c.chunk_id.to_string()).collect();
        assert_eq!(ids, ["c1", "c5", "c9"]);
    }

    #[test]
    fn empty_evidence_gives_empty_context() {
        let g = KnowledgeGraph::new();
        let ev = RefinedEvidence {
            query: "q".into(),
            kept_entities: BTreeSet::new(),
            kept_relations: BTreeSet::new(),
            eliminated: vec![],
            failed_batches: 0,
        };
        let ctx = build_context(&ev, &[], &g, 8000);
        assert!(ctx.is_empty());
        assert_eq!(ctx.text(), "");
        assert_eq!(ctx.budget_report.total_tokens, 0);
        assert_eq!(ctx.budget_report.entity_tokens, 0);
        assert_eq!(ctx.budget_report.chunk_tokens, 0);
        let answer = generate_answer("who?", &ctx, &mock(&[])).unwrap();
        assert!(answer.insufficient);
        assert_eq!(answer.text, INSUFFICIENT_CONTEXT_REPLY);
    }

    #[test]
    fn fitting_context_is_rendered_in_full() {
        let (g, sub) = fixture();
        let ev = RefinedEvidence::keep_all(&sub, "q");
        let chunks = rank_chunks(&ev, &g, 5);
        let ctx = build_context(&ev, &chunks, &g, 8000);
        let text = ctx.text();
        assert!(text.starts_with(ENTITY_HEADER));
        let e = text.find(ENTITY_HEADER).unwrap();
        let r = text.find(RELATION_HEADER).unwrap();
        let c = text.find(CHUNK_HEADER).unwrap();
        assert!(e < r && r < c);
        assert!(text.contains("- Acme (organization): Acme description"));
        assert!(text.contains("- Acme <-> Bolt: Acme with Bolt"));
        assert!(text.contains("[c1]\nAcme builds bolts in Dune."));
        assert_eq!(ctx.budget_report.total_tokens, token_count(&text));
        assert_eq!(ctx.chunk_ids.len(), 2);
        assert!(!ctx.budget_report.over_budget);
    }

    #[test]
    fn oversized_chunks_are_cut_from_the_tail() {
        let mut g = KnowledgeGraph::new();
        let big = |w: &str| vec![w; 100].join(" ");
        g.insert_chunk(chunk("c1", &big("one")));
        g.insert_chunk(chunk("c2", &big("two")));
        g.insert_chunk(chunk("c3", &big("three")));
        g.upsert_entity(Entity::new("Hub", "t", "hub entity").with_chunk("c1".into()).with_chunk("c2".into()).with_chunk("c3".into()))
            .unwrap();
        let ev = RefinedEvidence {
            query: "q".into(),
            kept_entities: g.entities().map(|e| e.id.clone()).collect(),
            kept_relations: BTreeSet::new(),
            eliminated: vec![],
            failed_batches: 0,
        };
        let chunks = rank_chunks(&ev, &g, 5);
        // entity section: header (1) + "- Hub (t): hub entity" (5) = 6
        // chunk section: header (1) + 3 * (id line 1 + 100) = 304
        let budget = 6 + 1 + 101 + 51;
        let ctx = build_context(&ev, &chunks, &g, budget);
        let rep = &ctx.budget_report;
        assert_eq!(rep.total_tokens, budget);
        assert_eq!(rep.total_tokens, token_count(&ctx.text()));
        assert_eq!(ctx.chunk_ids, vec![ChunkId::from("c1"), ChunkId::from("c2")]);
        assert_eq!(rep.chunks_dropped, 1);
        assert_eq!(rep.chunks_truncated, 1);
        assert_eq!(ctx.chunk_section.matches("two").count(), 50);
        assert_eq!(ctx.chunk_section.matches("one").count(), 100);
        assert!(ctx.entity_section.contains("hub entity"));
        assert!(!rep.over_budget);
    }

    #[test]
    fn descriptions_go_after_chunks_and_names_stay() {
        let (g, sub) = fixture();
        let ev = RefinedEvidence::keep_all(&sub, "q");
        let chunks = rank_chunks(&ev, &g, 5);
        let ctx = build_context(&ev, &chunks, &g, 10);
        assert!(ctx.chunk_section.is_empty());
        for n in ["Acme", "Bolt", "Cog", "Dune"] {
            assert!(ctx.entity_section.contains(&format!("- {n} (organization):")));
        }
        assert!(ctx.budget_report.relation_descriptions_truncated > 0);
        assert!(ctx.budget_report.over_budget);
        assert_eq!(ctx.budget_report.total_tokens, token_count(&ctx.text()));
    }

    #[test]
    fn answers_echo_first_entity_deterministically() {
        let (g, sub) = fixture();
        let gw = Gateway::mock(MockConfig {
            answer_style: AnswerStyle::EchoFirstEntity,
            ..MockConfig::default()
        });
        let ev = RefinedEvidence::keep_all(&sub, "q");
        let ctx = build_context(&ev, &rank_chunks(&ev, &g, 5), &g, 8000);
        let a = generate_answer("who builds bolts?", &ctx, &gw).unwrap();
        assert_eq!(a.text, "Acme");
        assert!(!a.insufficient);
        assert_eq!(a.context_fingerprint, ctx.fingerprint);
        assert_eq!(generate_answer("who builds bolts?", &ctx, &gw).unwrap(), a);
    }
}

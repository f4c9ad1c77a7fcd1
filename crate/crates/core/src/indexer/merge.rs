//! Embedding-gated, judge-confirmed merging of fragmented entities.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use super::{embed_missing, IndexError};
use crate::gateway::{Decision, EntitySummary, Gateway, JudgeQuestion, JudgeVerdict};
use crate::graph::{accumulate_description, Entity, EntityId, KnowledgeGraph, Relation, RelationId};
use crate::vector::cosine;

pub const DEFAULT_GATE_THRESHOLD: f64 = 0.88;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeCandidate {
    pub entity_a: EntityId,
    pub entity_b: EntityId,
    pub similarity: f64,
    /// Present for every pair at or above the gate.
    pub verdict: Option<JudgeVerdict>,
    /// The judge call failed; the recorded verdict is the conservative keep-distinct.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub judge_failed: bool,
}

impl MergeCandidate {
    pub fn merged(&self) -> bool {
        self.verdict
            .as_ref()
            .is_some_and(|v| v.decision == Decision::Merge)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MergeReport {
    pub gate_threshold: f64,
    /// Every judged pair, in entity-id order.
    pub candidates: Vec<MergeCandidate>,
    pub judge_errors: usize,
    /// Clusters of two or more entities collapsed into one.
    pub merged_groups: usize,
    pub entities_before: usize,
    pub entities_after: usize,
    pub relations_before: usize,
    pub relations_after: usize,
    pub dropped_self_loops: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditBin {
    pub bin_low: f64,
    pub bin_high: f64,
    pub merged: usize,
    pub skipped: usize,
}

impl AuditBin {
    pub const CSV_HEADER: &'static str = "bin_low,bin_high,merged,skipped";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.4},{:.4},{},{}",
            self.bin_low, self.bin_high, self.merged, self.skipped
        )
    }
}

/// Pairs `(i, j)`, `i < j`, whose cosine similarity reaches `gate`, in index order.
pub fn gated_pairs(embeddings: &[&[f32]], gate: f64) -> Vec<(usize, usize, f64)> {
    (0..embeddings.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            ((i + 1)..embeddings.len()).filter_map(move |j| {
                let s = cosine(embeddings[i], embeddings[j]);
                (s >= gate).then_some((i, j, s))
            })
        })
        .collect()
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller index becomes the root so clusters are keyed deterministically
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Member with the most chunk mentions; ties go to the lexicographically smallest name.
fn canonical<'a>(members: &[&'a Entity]) -> &'a Entity {
    members
        .iter()
        .copied()
        .min_by(|a, b| {
            b.chunk_ids
                .len()
                .cmp(&a.chunk_ids.len())
                .then_with(|| a.name.cmp(&b.name))
        })
        .expect("cluster is non-empty")
}

/// Judges every gated pair, unions approved pairs transitively and rewrites the graph.
/// Entities and relations whose text changed are re-embedded.
pub fn merge_entities(
    graph: &mut KnowledgeGraph,
    gate_threshold: f64,
    gateway: &Gateway,
) -> Result<MergeReport, IndexError> {
    let entities: Vec<&Entity> = graph.entities().collect();
    let mut embeddings = Vec::with_capacity(entities.len());
    for e in &entities {
        match &e.embedding {
            Some(v) => embeddings.push(v.as_slice()),
            None => return Err(IndexError::MissingEmbedding(e.id.clone())),
        }
    }
    let mut report = MergeReport {
        gate_threshold,
        entities_before: entities.len(),
        relations_before: graph.relation_count(),
        ..MergeReport::default()
    };

    let mut uf = UnionFind::new(entities.len());
    for (i, j, similarity) in gated_pairs(&embeddings, gate_threshold) {
        let (a, b) = (entities[i], entities[j]);
        let question = JudgeQuestion::Merge {
            a: EntitySummary {
                name: &a.name,
                description: &a.description,
            },
            b: EntitySummary {
                name: &b.name,
                description: &b.description,
            },
        };
        let (verdict, failed) = match gateway.judge(&question) {
            Ok(v) => (v, false),
            Err(err) => {
                warn!(a = %a.id, b = %b.id, error = %err, "merge judge failed; keeping distinct");
                report.judge_errors += 1;
                let v = JudgeVerdict {
                    decision: Decision::KeepDistinct,
                    rationale: format!("judge error: {err}"),
                };
                (v, true)
            }
        };
        if verdict.decision == Decision::Merge {
            uf.union(i, j);
        }
        report.candidates.push(MergeCandidate {
            entity_a: a.id.clone(),
            entity_b: b.id.clone(),
            similarity,
            verdict: Some(verdict),
            judge_failed: failed,
        });
    }

    let mut clusters: BTreeMap<usize, Vec<&Entity>> = BTreeMap::new();
    for (i, e) in entities.iter().enumerate() {
        clusters.entry(uf.find(i)).or_default().push(e);
    }

    let mut id_map: BTreeMap<EntityId, EntityId> = BTreeMap::new();
    let mut new_entities: BTreeMap<EntityId, Entity> = BTreeMap::new();
    for members in clusters.values() {
        let canon = canonical(members);
        for m in members {
            id_map.insert(m.id.clone(), canon.id.clone());
        }
        if members.len() == 1 {
            new_entities.insert(canon.id.clone(), canon.clone());
            continue;
        }
        report.merged_groups += 1;
        let mut merged = canon.clone();
        merged.embedding = None;
        for m in members.iter().filter(|m| m.id != canon.id) {
            merged.description = accumulate_description(&merged.description, &m.description);
            merged.aliases.extend(m.aliases.iter().cloned());
            merged.chunk_ids.extend(m.chunk_ids.iter().cloned());
        }
        info!(canonical = %merged.id, members = members.len(), "merged entity cluster");
        new_entities.insert(merged.id.clone(), merged);
    }

    let mut new_relations: BTreeMap<RelationId, Relation> = BTreeMap::new();
    for r in graph.relations() {
        let (s, t) = (id_map[&r.source_id].clone(), id_map[&r.target_id].clone());
        if s == t {
            report.dropped_self_loops += 1;
            continue;
        }
        let id = RelationId::for_pair(&s, &t);
        match new_relations.get_mut(&id) {
            Some(existing) => {
                existing.weight += r.weight;
                existing.description = accumulate_description(&existing.description, &r.description);
                for k in &r.keywords {
                    if !existing.keywords.contains(k) {
                        existing.keywords.push(k.clone());
                    }
                }
                existing.chunk_ids.extend(r.chunk_ids.iter().cloned());
                existing.embedding = None;
            }
            None => {
                let mut moved = r.clone();
                moved.source_id = s;
                moved.target_id = t;
                moved.id = id.clone();
                new_relations.insert(id, moved);
            }
        }
    }

    graph.replace_contents(new_entities, new_relations);
    embed_missing(graph, gateway)?;
    report.entities_after = graph.entity_count();
    report.relations_after = graph.relation_count();
    Ok(report)
}

/// Histogram of judged pairs over `bins` equal-width similarity bins covering `[gate, 1]`.
pub fn merge_audit(candidates: &[MergeCandidate], gate_threshold: f64, bins: usize) -> Vec<AuditBin> {
    let judged: Vec<&MergeCandidate> = candidates.iter().filter(|c| c.verdict.is_some()).collect();
    if judged.is_empty() || bins == 0 {
        return Vec::new();
    }
    let width = (1.0 - gate_threshold) / bins as f64;
    let mut out: Vec<AuditBin> = (0..bins)
        .map(|b| AuditBin {
            bin_low: gate_threshold + width * b as f64,
            bin_high: if b + 1 == bins {
                1.0
            } else {
                gate_threshold + width * (b + 1) as f64
            },
            merged: 0,
            skipped: 0,
        })
        .collect();
    for c in judged {
        let idx = if width > 0.0 {
            (((c.similarity - gate_threshold) / width).floor().max(0.0) as usize).min(bins - 1)
        } else {
            bins - 1
        };
        if c.merged() {
            out[idx].merged += 1;
        } else {
            out[idx].skipped += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;
    use crate::gateway::{MergeRule, MockConfig};
    use crate::graph::{Chunk, ChunkId, Embedding};
    use proptest::prelude::*;

    fn unit(v: &[f32]) -> Embedding {
        let mut v = v.to_vec();
        crate::vector::normalize(&mut v);
        Embedding(v)
    }

    fn add_chunk(g: &mut KnowledgeGraph, id: &str) -> ChunkId {
        let c = Chunk {
            id: id.into(),
            doc_id: "d".into(),
            ordinal: 0,
            text: String::new(),
            token_span: (0, 0),
        };
        let cid = c.id.clone();
        g.insert_chunk(c);
        cid
    }

    fn entity(g: &mut KnowledgeGraph, name: &str, emb: &[f32], chunks: &[&str]) {
        let mut e = Entity::new(name, "organization", &format!("{name} desc"));
        for c in chunks {
            e = e.with_chunk(add_chunk(g, c));
        }
        e.embedding = Some(unit(emb));
        g.upsert_entity(e).unwrap();
    }

    fn gw(rule: MergeRule) -> Gateway {
        Gateway::mock(MockConfig {
            merge_rule: rule,
            ..MockConfig::default()
        })
    }

    #[test]
    fn gated_pair_is_merged() {
        let mut g = KnowledgeGraph::new();
        // cos = 0.95 between the two name embeddings
        let b = [0.95f32, (1.0f32 - 0.95 * 0.95).sqrt()];
        entity(&mut g, "Google", &[1.0, 0.0], &["c1", "c2"]);
        entity(&mut g, "Google Inc.", &b, &["c3"]);
        entity(&mut g, "London", &[0.0, 1.0], &["c1"]);
        let report = merge_entities(&mut g, 0.88, &gw(MergeRule::TokenPrefix)).unwrap();
        assert_eq!(report.candidates.len(), 1);
        assert!((report.candidates[0].similarity - 0.95).abs() < 1e-6);
        assert_eq!(g.entity_count(), 2);
        let google = g.entity(&"google".into()).unwrap();
        assert_eq!(google.aliases.len(), 2);
        assert_eq!(google.chunk_ids.len(), 3);
        assert!(google.embedding.is_some());
        g.validate().unwrap();
    }

    #[test]
    fn below_gate_never_judged() {
        let mut g = KnowledgeGraph::new();
        let b = [0.5f32, (0.75f32).sqrt()];
        entity(&mut g, "Google", &[1.0, 0.0], &["c1"]);
        entity(&mut g, "Google Inc.", &b, &["c2"]);
        let report = merge_entities(&mut g, 0.88, &gw(MergeRule::TokenPrefix)).unwrap();
        assert!(report.candidates.is_empty());
        assert_eq!(g.entity_count(), 2);
    }

    #[test]
    fn chains_close_transitively() {
        let mut g = KnowledgeGraph::new();
        // A~B and B~C pass the gate, A~C does not.
        let angle = |deg: f32| [deg.to_radians().cos(), deg.to_radians().sin()];
        entity(&mut g, "Acme", &angle(0.0), &["c1"]);
        entity(&mut g, "Acme Labs", &angle(25.0), &["c2", "c3"]);
        entity(&mut g, "Acme Labs Europe", &angle(50.0), &["c4"]);
        entity(&mut g, "Zeta", &[0.0, -1.0], &["c5"]);
        g.upsert_relation(Relation::new("acme".into(), "zeta".into(), "r1")).unwrap();
        g.upsert_relation(Relation::new("acme labs europe".into(), "zeta".into(), "r2")).unwrap();
        g.upsert_relation(Relation::new("acme".into(), "acme labs".into(), "self")).unwrap();
        let report = merge_entities(&mut g, 0.88, &gw(MergeRule::TokenPrefix)).unwrap();
        assert_eq!(report.candidates.len(), 2);
        assert_eq!(report.merged_groups, 1);
        assert_eq!(g.entity_count(), 2);
        // most chunk mentions wins the canonical name
        let canon = g.entity(&"acme labs".into()).unwrap();
        assert_eq!(canon.aliases.len(), 3);
        assert_eq!(report.dropped_self_loops, 1);
        assert_eq!(g.relation_count(), 1);
        let r = g.relations().next().unwrap();
        assert_eq!(r.weight, 2.0);
        g.validate().unwrap();
    }

    #[test]
    fn audit_counts_partition_judged_pairs() {
        // ten judged pairs, three approved
        let candidates: Vec<MergeCandidate> = (0..10)
            .map(|i| MergeCandidate {
                entity_a: format!("a{i}").as_str().into(),
                entity_b: format!("b{i}").as_str().into(),
                similarity: 0.88 + 0.012 * i as f64,
                verdict: Some(JudgeVerdict {
                    decision: if i % 3 == 0 && i > 0 {
                        Decision::Merge
                    } else {
                        Decision::KeepDistinct
                    },
                    rationale: String::new(),
                }),
                judge_failed: false,
            })
            .collect();
        let bins = merge_audit(&candidates, 0.88, 4);
        assert_eq!(bins.len(), 4);
        assert_eq!(bins.iter().map(|b| b.merged).sum::<usize>(), 3);
        assert_eq!(bins.iter().map(|b| b.skipped).sum::<usize>(), 7);
        assert_eq!(bins[0].bin_low, 0.88);
        assert_eq!(bins[3].bin_high, 1.0);
        assert!(merge_audit(&[], 0.88, 4).is_empty());
    }

    #[test]
    fn exact_name_rule_on_fixture_pairs() {
        // ten pairs of identical-direction embeddings: three share a normalized name
        let names = [
            ("Apple", "apple"),
            ("Nile", "Nile"),
            ("Mars", "MARS"),
            ("Rome", "Roma"),
            ("Paris", "Paris Texas"),
            ("Ada", "Ava"),
            ("Io", "Eo"),
            ("Kant", "Kent"),
            ("Ulm", "Elm"),
            ("Oslo", "Osaka"),
        ];
        let gate = 0.88;
        let gw = gw(MergeRule::ExactName);
        let mut merged = 0;
        let mut candidates = Vec::new();
        for (a, b) in names {
            let v = gw
                .judge(&JudgeQuestion::Merge {
                    a: EntitySummary { name: a, description: "" },
                    b: EntitySummary { name: b, description: "" },
                })
                .unwrap();
            merged += usize::from(v.decision == Decision::Merge);
            candidates.push(MergeCandidate {
                entity_a: a.into(),
                entity_b: b.into(),
                similarity: 0.99,
                verdict: Some(v),
                judge_failed: false,
            });
        }
        assert_eq!(merged, 3);
        let bins = merge_audit(&candidates, gate, 6);
        assert_eq!(bins.iter().map(|b| b.merged).sum::<usize>(), 3);
        assert_eq!(bins.iter().map(|b| b.skipped).sum::<usize>(), 7);
    }

    fn random_graph(points: &[(f32, f32)]) -> KnowledgeGraph {
        let mut g = KnowledgeGraph::new();
        for (i, (x, y)) in points.iter().enumerate() {
            entity(&mut g, &format!("Node {i}"), &[*x, *y, 0.3], &[&format!("c{i}")]);
        }
        g
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn merging_keeps_provenance_and_gate_is_monotone(
            points in proptest::collection::vec((-1.0f32..1.0, -1.0f32..1.0), 2..12),
            lo in 0.5f64..0.9,
            delta in 0.0f64..0.1,
        ) {
            let base = random_graph(&points);
            let chunks_before: BTreeSet<ChunkId> =
                base.entities().flat_map(|e| e.chunk_ids.iter().cloned()).collect();
            let mut g1 = base.clone();
            let r1 = merge_entities(&mut g1, lo, &gw(MergeRule::TokenPrefix)).unwrap();
            let mut g2 = base.clone();
            let r2 = merge_entities(&mut g2, lo + delta, &gw(MergeRule::TokenPrefix)).unwrap();
            let pairs = |r: &MergeReport| -> BTreeSet<(EntityId, EntityId)> {
                r.candidates.iter().map(|c| (c.entity_a.clone(), c.entity_b.clone())).collect()
            };
            prop_assert!(pairs(&r2).is_subset(&pairs(&r1)));
            prop_assert!(g1.entity_count() <= base.entity_count());
            let chunks_after: BTreeSet<ChunkId> =
                g1.entities().flat_map(|e| e.chunk_ids.iter().cloned()).collect();
            prop_assert_eq!(chunks_before, chunks_after);
            g1.validate().unwrap();
        }
    }
}

use std::cmp::Ordering;

use rayon::prelude::*;

use super::cues::QueryCues;
use super::view::GraphView;
use super::CueAggregation;
use crate::vector::cosine;

/// Query affinities of every entity (against low-level cues) and every relation (against
/// high-level cues), indexed like the [`GraphView`]. `None` when that cue level is empty.
#[derive(Debug, Clone, Default)]
pub struct Affinities {
    pub entity: Option<Vec<f64>>,
    pub relation: Option<Vec<f64>>,
}

impl Affinities {
    pub fn entity(&self, i: usize) -> f64 {
        self.entity.as_ref().map_or(0.0, |v| v[i])
    }

    pub fn relation(&self, r: usize) -> f64 {
        self.relation.as_ref().map_or(0.0, |v| v[r])
    }
}

pub fn aggregate(v: &[f32], cues: &[Vec<f32>], how: CueAggregation) -> f64 {
    if cues.is_empty() {
        return 0.0;
    }
    let sims = cues.iter().map(|c| cosine(v, c));
    match how {
        CueAggregation::Max => sims.fold(f64::NEG_INFINITY, f64::max),
        CueAggregation::Mean => sims.sum::<f64>() / cues.len() as f64,
    }
}

pub fn affinities(view: &GraphView<'_>, cues: &QueryCues, how: CueAggregation) -> Affinities {
    let graph = view.graph;
    let entity = (!cues.low_embeddings.is_empty()).then(|| {
        view.entity_ids
            .par_iter()
            .map(|id| {
                graph.entity(id)
                    .and_then(|e| e.embedding.as_ref())
                    .map_or(0.0, |emb| aggregate(emb.as_slice(), &cues.low_embeddings, how))
            })
            .collect()
    });
    let relation = (!cues.high_embeddings.is_empty()).then(|| {
        view.relation_ids
            .par_iter()
            .map(|id| {
                graph.relation(id)
                    .and_then(|r| r.embedding.as_ref())
                    .map_or(0.0, |emb| aggregate(emb.as_slice(), &cues.high_embeddings, how))
            })
            .collect()
    });
    Affinities { entity, relation }
}

/// Indices of the `k` highest scores, descending, ties by lower index.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    let cmp = |a: &usize, b: &usize| {
        scores[*b]
            .partial_cmp(&scores[*a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(b))
    };
    if k < idx.len() {
        idx.select_nth_unstable_by(k, cmp);
        idx.truncate(k);
    }
    idx.sort_by(cmp);
    idx
}

/// Entry entities and relations as view indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EntryIndices {
    /// Ranked entity entries.
    pub entities: Vec<usize>,
    /// Ranked relation entries.
    pub relations: Vec<usize>,
    /// E₀: entity entries plus both endpoints of every relation entry, ascending.
    pub seeds: Vec<usize>,
}

pub fn find_entry_indices(view: &GraphView<'_>, aff: &Affinities, k: usize) -> EntryIndices {
    let entities = aff.entity.as_deref().map_or_else(Vec::new, |s| top_k(s, k));
    let relations = aff.relation.as_deref().map_or_else(Vec::new, |s| top_k(s, k));
    let mut seeds: Vec<usize> = entities.clone();
    for &r in &relations {
        let (s, t) = view.endpoints[r];
        seeds.push(s);
        seeds.push(t);
    }
    seeds.sort_unstable();
    seeds.dedup();
    EntryIndices {
        entities,
        relations,
        seeds,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Gateway, MockConfig};
    use crate::graph::{Embedding, Entity, KnowledgeGraph};

    fn graph_with(names: &[&str], gw: &Gateway) -> KnowledgeGraph {
        let mut g = KnowledgeGraph::new();
        for n in names {
            let mut e = Entity::new(n, "t", "");
            e.embedding = Some(Embedding(gw.embed_one(n).unwrap().values));
            g.upsert_entity(e).unwrap();
        }
        g
    }

    fn cues(low: &[&str], gw: &Gateway) -> QueryCues {
        QueryCues {
            low_level: low.iter().map(|s| s.to_string()).collect(),
            low_embeddings: low.iter().map(|s| gw.embed_one(s).unwrap().values).collect(),
            ..QueryCues::default()
        }
    }

    #[test]
    fn exact_name_ranks_first() {
        let gw = Gateway::mock(MockConfig::default());
        let g = graph_with(&["Alpha Corp", "Beta Labs", "Gamma"], &gw);
        let v = GraphView::new(&g);
        let aff = affinities(&v, &cues(&["Beta Labs"], &gw), CueAggregation::Max);
        let e = find_entry_indices(&v, &aff, 10);
        assert_eq!(v.entity_ids[e.entities[0]].as_str(), "beta labs");
        assert_eq!(e.entities.len(), 3);
        assert!((aff.entity(e.entities[0]) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn ties_break_by_id() {
        assert_eq!(top_k(&[1.0, 0.5, 1.0, 1.0], 2), [0, 2]);
        assert_eq!(top_k(&[0.1, 0.9], 10), [1, 0]);
        assert!(top_k(&[0.3], 0).is_empty());
    }

    #[test]
    fn no_relation_entries_without_high_cues() {
        let gw = Gateway::mock(MockConfig::default());
        let g = graph_with(&["A", "B"], &gw);
        let v = GraphView::new(&g);
        let aff = affinities(&v, &cues(&["A"], &gw), CueAggregation::Max);
        assert!(aff.relation.is_none());
        assert!(find_entry_indices(&v, &aff, 10).relations.is_empty());
    }
}

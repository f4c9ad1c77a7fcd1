use std::collections::{BTreeSet, HashMap};

use crate::graph::{EntityId, KnowledgeGraph, RelationId};

/// Dense index over an immutable graph snapshot: entities and relations are numbered in id
/// order, and adjacency is stored in compressed sparse rows.
#[derive(Debug, Clone)]
pub struct GraphView<'g> {
    pub graph: &'g KnowledgeGraph,
    pub entity_ids: Vec<&'g EntityId>,
    pub relation_ids: Vec<&'g RelationId>,
    entity_index: HashMap<&'g EntityId, usize>,
    /// `offsets[i]..offsets[i + 1]` indexes `edges` for entity `i`.
    offsets: Vec<usize>,
    /// `(neighbor, relation)` pairs.
    edges: Vec<(usize, usize)>,
    /// Relation endpoints as entity indices.
    pub endpoints: Vec<(usize, usize)>,
    pub weights: Vec<f64>,
}

impl<'g> GraphView<'g> {
    pub fn new(graph: &'g KnowledgeGraph) -> Self {
        let entity_ids: Vec<&EntityId> = graph.entities().map(|e| &e.id).collect();
        let entity_index: HashMap<&EntityId, usize> =
            entity_ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        let relation_ids: Vec<&RelationId> = graph.relations().map(|r| &r.id).collect();
        let endpoints: Vec<(usize, usize)> = graph
            .relations()
            .map(|r| (entity_index[&r.source_id], entity_index[&r.target_id]))
            .collect();
        let weights = graph.relations().map(|r| r.weight).collect();
        let n = entity_ids.len();
        let mut degree = vec![0usize; n];
        for &(s, t) in &endpoints {
            degree[s] += 1;
            degree[t] += 1;
        }
        let mut offsets = vec![0usize; n + 1];
        for i in 0..n {
            offsets[i + 1] = offsets[i] + degree[i];
        }
        let mut fill = offsets.clone();
        let mut edges = vec![(0usize, 0usize); offsets[n]];
        for (r, &(s, t)) in endpoints.iter().enumerate() {
            edges[fill[s]] = (t, r);
            fill[s] += 1;
            edges[fill[t]] = (s, r);
            fill[t] += 1;
        }
        for i in 0..n {
            edges[offsets[i]..offsets[i + 1]].sort_unstable();
        }
        Self {
            graph,
            entity_ids,
            relation_ids,
            entity_index,
            offsets,
            edges,
            endpoints,
            weights,
        }
    }

    pub fn entity_count(&self) -> usize {
        self.entity_ids.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relation_ids.len()
    }

    pub fn index_of(&self, id: &EntityId) -> Option<usize> {
        self.entity_index.get(id).copied()
    }

    /// `(neighbor, relation)` pairs of entity `i`, ordered by neighbor index.
    pub fn edges(&self, i: usize) -> &[(usize, usize)] {
        &self.edges[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Position of entity `i`'s first edge in the flattened edge list.
    pub fn edge_offset(&self, i: usize) -> usize {
        self.offsets[i]
    }

    pub fn edge_total(&self) -> usize {
        self.edges.len()
    }

    /// Relations with both endpoints in `members`.
    pub fn induced_relations(&self, members: &BTreeSet<usize>) -> BTreeSet<RelationId> {
        let mut out = BTreeSet::new();
        for &i in members {
            for &(j, r) in self.edges(i) {
                if i < j && members.contains(&j) {
                    out.insert(self.relation_ids[r].clone());
                }
            }
        }
        out
    }
}

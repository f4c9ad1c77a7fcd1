//! Personalized PageRank over the entity graph.
//!
//! `s = (1 - d) p + d M s`, where `p` is a softmax over entry-entity affinities and `M` moves
//! mass from an entity to its neighbors by a per-node softmax over the query affinity of each
//! incident relation. Mass sitting on entities without edges returns to `p`.

use super::entries::Affinities;
use super::view::GraphView;

pub const TOLERANCE: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 100;

pub fn softmax(values: &[f64]) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Personalization vector over all entities, supported on `seeds`.
pub fn personalization(view: &GraphView<'_>, aff: &Affinities, seeds: &[usize]) -> Vec<f64> {
    let mut p = vec![0.0; view.entity_count()];
    let sims: Vec<f64> = seeds.iter().map(|&i| aff.entity(i)).collect();
    for (&i, w) in seeds.iter().zip(softmax(&sims)) {
        p[i] += w;
    }
    p
}

/// Transition probabilities aligned with the view's flattened edge list: entry `k` in
/// entity `i`'s range is the probability of stepping from `i` along that edge.
pub fn transitions(view: &GraphView<'_>, aff: &Affinities) -> Vec<f64> {
    let mut out = vec![0.0; view.edge_total()];
    for i in 0..view.entity_count() {
        let edges = view.edges(i);
        if edges.is_empty() {
            continue;
        }
        let base = view.edge_offset(i);
        let probs = match &aff.relation {
            Some(rel) => softmax(&edges.iter().map(|&(_, r)| rel[r]).collect::<Vec<_>>()),
            None => {
                let total: f64 = edges.iter().map(|&(_, r)| view.weights[r]).sum();
                edges.iter().map(|&(_, r)| view.weights[r] / total).collect()
            }
        };
        out[base..base + edges.len()].copy_from_slice(&probs);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PprResult {
    pub scores: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

pub fn personalized_pagerank(
    view: &GraphView<'_>,
    personalization: &[f64],
    transitions: &[f64],
    damping: f64,
) -> PprResult {
    let n = view.entity_count();
    let mut s = personalization.to_vec();
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS && residual >= TOLERANCE {
        next.iter_mut()
            .zip(personalization)
            .for_each(|(x, p)| *x = (1.0 - damping) * p);
        let mut dangling = 0.0;
        for (i, &mass) in s.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            let edges = view.edges(i);
            if edges.is_empty() {
                dangling += mass;
                continue;
            }
            let base = view.edge_offset(i);
            for (k, &(j, _)) in edges.iter().enumerate() {
                next[j] += damping * mass * transitions[base + k];
            }
        }
        if dangling > 0.0 {
            for (x, p) in next.iter_mut().zip(personalization) {
                *x += damping * dangling * p;
            }
        }
        residual = s.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut s, &mut next);
        iterations += 1;
    }
    PprResult {
        scores: s,
        iterations,
        residual,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Entity, KnowledgeGraph, Relation};
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    fn graph(n: usize, edges: &[(usize, usize, f64)]) -> KnowledgeGraph {
        let mut g = KnowledgeGraph::new();
        for i in 0..n {
            g.upsert_entity(Entity::new(&format!("n{i:03}"), "t", "")).unwrap();
        }
        for &(a, b, w) in edges {
            if a != b {
                let r = Relation::new(
                    format!("n{a:03}").as_str().into(),
                    format!("n{b:03}").as_str().into(),
                    "",
                )
                .with_weight(w);
                g.upsert_relation(r).unwrap();
            }
        }
        g
    }

    /// Dense oracle: column-stochastic M with dangling columns replaced by `p`, then plain
    /// power iteration.
    fn dense_oracle(view: &GraphView<'_>, p: &[f64], t: &[f64], d: f64) -> Vec<f64> {
        let n = view.entity_count();
        let mut m = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            let edges = view.edges(i);
            if edges.is_empty() {
                for j in 0..n {
                    m[(j, i)] = p[j];
                }
            }
            for (k, &(j, _)) in edges.iter().enumerate() {
                m[(j, i)] += t[view.edge_offset(i) + k];
            }
        }
        let pv = DVector::from_column_slice(p);
        let mut s = pv.clone();
        for _ in 0..2000 {
            s = &pv * (1.0 - d) + (&m * &s) * d;
        }
        s.iter().copied().collect()
    }

    #[test]
    fn isolated_single_entity() {
        let g = graph(1, &[]);
        let v = GraphView::new(&g);
        let aff = Affinities::default();
        let p = personalization(&v, &aff, &[0]);
        let r = personalized_pagerank(&v, &p, &transitions(&v, &aff), 0.85);
        assert!((r.scores[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_node_symmetry() {
        let g = graph(2, &[(0, 1, 1.0)]);
        let v = GraphView::new(&g);
        let aff = Affinities::default();
        let p = personalization(&v, &aff, &[0, 1]);
        let r = personalized_pagerank(&v, &p, &transitions(&v, &aff), 0.85);
        assert!((r.scores[0] - 0.5).abs() < 1e-9);
        assert!((r.scores[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn three_node_path_matches_oracle() {
        let g = graph(3, &[(0, 1, 1.0), (1, 2, 1.0)]);
        let v = GraphView::new(&g);
        let aff = Affinities {
            entity: Some(vec![0.9, 0.1, 0.0]),
            relation: None,
        };
        let p = personalization(&v, &aff, &[0]);
        let t = transitions(&v, &aff);
        let r = personalized_pagerank(&v, &p, &t, 0.85);
        let oracle = dense_oracle(&v, &p, &t, 0.85);
        for (a, b) in r.scores.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        assert!(r.scores[0] > r.scores[2]);
    }

    #[test]
    fn cycle_is_uniform() {
        let n = 7;
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n, 1.0)).collect();
        let g = graph(n, &edges);
        let v = GraphView::new(&g);
        let aff = Affinities::default();
        let seeds: Vec<usize> = (0..n).collect();
        let p = personalization(&v, &aff, &seeds);
        let r = personalized_pagerank(&v, &p, &transitions(&v, &aff), 0.85);
        for s in &r.scores {
            assert!((s - 1.0 / n as f64).abs() < 1e-9);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn agrees_with_dense_oracle(
            n in 1usize..50,
            raw_edges in proptest::collection::vec((0usize..50, 0usize..50, 1.0f64..4.0), 0..120),
            raw_seeds in proptest::collection::vec(0usize..50, 1..5),
            use_rel in any::<bool>(),
            ent_sims in proptest::collection::vec(-1.0f64..1.0, 50),
            rel_sims in proptest::collection::vec(-1.0f64..1.0, 120),
        ) {
            let edges: Vec<_> = raw_edges.into_iter().map(|(a, b, w)| (a % n, b % n, w)).collect();
            let g = graph(n, &edges);
            let v = GraphView::new(&g);
            let mut seeds: Vec<usize> = raw_seeds.into_iter().map(|s| s % n).collect();
            seeds.sort_unstable();
            seeds.dedup();
            let aff = Affinities {
                entity: Some(ent_sims[..n].to_vec()),
                relation: use_rel.then(|| rel_sims[..v.relation_count()].to_vec()),
            };
            let p = personalization(&v, &aff, &seeds);
            let t = transitions(&v, &aff);
            let r = personalized_pagerank(&v, &p, &t, 0.85);
            prop_assert!(r.scores.iter().all(|s| *s >= 0.0));
            prop_assert!((r.scores.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let oracle = dense_oracle(&v, &p, &t, 0.85);
            for (a, b) in r.scores.iter().zip(&oracle) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }
    }
}

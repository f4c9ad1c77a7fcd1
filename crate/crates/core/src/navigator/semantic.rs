use std::cmp::Ordering;

use super::entries::Affinities;
use super::view::GraphView;

/// `alpha * sim_rel + beta * sim_ent`.
pub fn semantic_score(sim_rel: f64, sim_ent: f64, alpha: f64, beta: f64) -> f64 {
    alpha * sim_rel + beta * sim_ent
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemanticHit {
    pub entry: usize,
    pub neighbor: usize,
    pub relation: usize,
    pub score: f64,
}

/// Ranks `candidates` (neighbor, relation, score) for one entry: drops scores below `tau`,
/// sorts descending with ties by neighbor index and keeps `cap`.
pub fn prune(mut candidates: Vec<(usize, usize, f64)>, tau: f64, cap: usize) -> Vec<(usize, usize, f64)> {
    candidates.retain(|c| c.2 >= tau);
    candidates.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .unwrap_or(Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    candidates.truncate(cap);
    candidates
}

/// One-hop neighbors of every seed, scored and pruned per seed.
pub fn semantic_association(
    view: &GraphView<'_>,
    aff: &Affinities,
    seeds: &[usize],
    alpha: f64,
    beta: f64,
    tau: f64,
    top_neighbors: usize,
) -> Vec<SemanticHit> {
    if top_neighbors == 0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    for &entry in seeds {
        let candidates: Vec<(usize, usize, f64)> = view
            .edges(entry)
            .iter()
            .map(|&(n, r)| (n, r, semantic_score(aff.relation(r), aff.entity(n), alpha, beta)))
            .collect();
        out.extend(
            prune(candidates, tau, top_neighbors)
                .into_iter()
                .map(|(neighbor, relation, score)| SemanticHit {
                    entry,
                    neighbor,
                    relation,
                    score,
                }),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Entity, KnowledgeGraph, Relation};
    use proptest::prelude::*;

    #[test]
    fn score_arithmetic() {
        assert!((semantic_score(0.8, 0.6, 0.5, 0.4) - 0.64).abs() < 1e-12);
    }

    #[test]
    fn below_tau_is_pruned() {
        assert!(prune(vec![(1, 0, 0.34)], 0.35, 10).is_empty());
        assert_eq!(prune(vec![(1, 0, 0.35)], 0.35, 10).len(), 1);
    }

    #[test]
    fn star_keeps_ten_best() {
        // hub with 15 spokes whose entity affinities are 0.40, 0.42, ..., 0.68
        let mut g = KnowledgeGraph::new();
        g.upsert_entity(Entity::new("hub", "t", "")).unwrap();
        for i in 0..15 {
            let name = format!("spoke{i:02}");
            g.upsert_entity(Entity::new(&name, "t", "")).unwrap();
            g.upsert_relation(Relation::new("hub".into(), name.as_str().into(), "")).unwrap();
        }
        let v = GraphView::new(&g);
        let hub = v.index_of(&"hub".into()).unwrap();
        let mut ent = vec![0.0; v.entity_count()];
        for i in 0..15 {
            ent[v.index_of(&format!("spoke{i:02}").as_str().into()).unwrap()] = 0.40 + 0.02 * i as f64;
        }
        let aff = Affinities {
            entity: Some(ent.clone()),
            relation: Some(vec![0.5; v.relation_count()]),
        };
        let hits = semantic_association(&v, &aff, &[hub], 0.5, 0.4, 0.35, 10);
        // oracle: sort all spokes by score and take ten
        let mut oracle: Vec<(f64, usize)> = (0..v.entity_count())
            .filter(|&i| i != hub)
            .map(|i| (0.5 * 0.5 + 0.4 * ent[i], i))
            .collect();
        oracle.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let expected: Vec<usize> = oracle.iter().take(10).map(|o| o.1).collect();
        let got: Vec<usize> = hits.iter().map(|h| h.neighbor).collect();
        assert_eq!(got, expected);
    }

    proptest! {
        #[test]
        fn affine_in_coefficients(r in -1.0f64..1.0, e in -1.0f64..1.0, a in 0.0f64..2.0, b in 0.0f64..2.0, c in 0.0f64..3.0) {
            let base = semantic_score(r, e, a, b);
            let scaled = semantic_score(r, e, c * a, b);
            prop_assert!((scaled - base - (c - 1.0) * a * r).abs() < 1e-12);
        }

        #[test]
        fn pruning_soundness(scores in proptest::collection::vec(0.0f64..1.0, 0..40), tau in 0.0f64..1.0, cap in 0usize..12) {
            let cands: Vec<(usize, usize, f64)> = scores.iter().enumerate().map(|(i, s)| (i, i, *s)).collect();
            let kept = prune(cands, tau, cap);
            prop_assert!(kept.iter().all(|k| k.2 >= tau));
            let qualifying = scores.iter().filter(|s| **s >= tau).count();
            prop_assert_eq!(kept.len(), qualifying.min(cap));
            if let Some(min_kept) = kept.last().map(|k| k.2) {
                // anything dropped with a qualifying score lost to the cap, so it is no better
                let kept_ids: Vec<usize> = kept.iter().map(|k| k.0).collect();
                for (i, s) in scores.iter().enumerate() {
                    if *s >= tau && !kept_ids.contains(&i) {
                        prop_assert!(*s <= min_kept);
                    }
                }
            }
        }
    }
}

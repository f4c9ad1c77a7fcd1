use std::cmp::Ordering;

use super::fastrp::StructuralEmbeddings;

fn unit(row: &[f64]) -> Option<Vec<f64>> {
    let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
    (n > 0.0).then(|| row.iter().map(|x| x / n).collect())
}

/// Mean cosine similarity of every non-entry entity to the entry set, as `(index, score)`
/// ranked descending with ties by index, truncated to `top_k`.
pub fn functional_association(
    x: &StructuralEmbeddings,
    seeds: &[usize],
    top_k: usize,
) -> Vec<(usize, f64)> {
    if seeds.is_empty() || top_k == 0 {
        return Vec::new();
    }
    let dim = x.dimension;
    // mean of unit entry vectors; a zero entry vector contributes a zero cosine
    let mut centroid = vec![0.0; dim];
    for &s in seeds {
        if let Some(u) = unit(x.row(s)) {
            centroid.iter_mut().zip(u).for_each(|(c, v)| *c += v);
        }
    }
    centroid.iter_mut().for_each(|c| *c /= seeds.len() as f64);
    let mut scored: Vec<(usize, f64)> = (0..x.rows())
        .filter(|i| !seeds.contains(i))
        .map(|i| {
            let score = unit(x.row(i))
                .map_or(0.0, |u| u.iter().zip(&centroid).map(|(a, b)| a * b).sum());
            (i, score)
        })
        .collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    scored.truncate(top_k);
    scored
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::navigator::fastrp::{compute, FastRPConfig};
    use crate::navigator::view::GraphView;
    use crate::graph::{Entity, KnowledgeGraph, Relation};

    fn emb(rows: &[&[f64]]) -> StructuralEmbeddings {
        StructuralEmbeddings {
            dimension: rows[0].len(),
            values: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        }
    }

    #[test]
    fn identical_to_single_entry() {
        let x = emb(&[&[1.0, 2.0], &[1.0, 2.0], &[-1.0, 0.5]]);
        let out = functional_association(&x, &[0], 10);
        assert_eq!(out[0].0, 1);
        assert!((out[0].1 - 1.0).abs() < 1e-12);
        assert!(out.iter().all(|(i, _)| *i != 0));
    }

    #[test]
    fn opposite_entries_cancel() {
        let x = emb(&[&[1.0, 0.0], &[-1.0, 0.0], &[1.0, 0.0]]);
        let out = functional_association(&x, &[0, 1], 10);
        assert_eq!(out, [(2, 0.0)]);
    }

    fn cos(a: &[f64], b: &[f64]) -> f64 {
        let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        d / (na * nb)
    }

    #[test]
    fn barbell_matches_brute_force() {
        // two triangles joined by a bridge
        let names = ["a1", "a2", "a3", "b1", "b2", "b3"];
        let mut g = KnowledgeGraph::new();
        for n in names {
            g.upsert_entity(Entity::new(n, "t", "")).unwrap();
        }
        for (s, t) in [("a1", "a2"), ("a2", "a3"), ("a1", "a3"), ("b1", "b2"), ("b2", "b3"), ("b1", "b3"), ("a3", "b1")] {
            g.upsert_relation(Relation::new(s.into(), t.into(), "")).unwrap();
        }
        let v = GraphView::new(&g);
        let x = compute(&v, &FastRPConfig { dimension: 64, ..FastRPConfig::default() });
        let seeds = [0usize, 1];
        let got = functional_association(&x, &seeds, 10);
        let mut oracle: Vec<(usize, f64)> = (2..6)
            .map(|i| {
                let s = seeds.iter().map(|&e| cos(x.row(e), x.row(i))).sum::<f64>() / 2.0;
                (i, s)
            })
            .collect();
        oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        assert_eq!(got.iter().map(|g| g.0).collect::<Vec<_>>(), oracle.iter().map(|o| o.0).collect::<Vec<_>>());
        for (a, b) in got.iter().zip(&oracle) {
            assert!((a.1 - b.1).abs() < 1e-12);
        }
        // scaling every embedding leaves the ranking unchanged
        let scaled = StructuralEmbeddings {
            dimension: x.dimension,
            values: x.values.iter().map(|v| v * 7.5).collect(),
        };
        let again = functional_association(&scaled, &seeds, 10);
        assert_eq!(
            again.iter().map(|g| g.0).collect::<Vec<_>>(),
            got.iter().map(|g| g.0).collect::<Vec<_>>()
        );
    }
}

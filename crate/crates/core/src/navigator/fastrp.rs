//! FastRP structural embeddings:
//!
//! `X = sum_k w_k * D^r * S^k * R`, with `S = D^-1/2 (A + I) D^-1/2`, `A` the relation-weight
//! adjacency and `D` the degree matrix of `A + I`. Rows of the random projection `R` are sparse
//! `{+1, 0, -1}` draws (density 1/3) from a generator seeded by `(seed, entity id)`, then
//! L2-normalized, so a row does not depend on which other entities exist.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::view::GraphView;
use crate::graph::{EntityId, KnowledgeGraph};
use crate::text::fnv1a64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FastRPConfig {
    pub dimension: usize,
    pub normalization_strength: f64,
    pub iteration_weights: Vec<f64>,
    pub seed: u64,
}

impl Default for FastRPConfig {
    fn default() -> Self {
        Self {
            dimension: 256,
            normalization_strength: -0.1,
            iteration_weights: vec![1.0, 1.0, 0.5, 0.25],
            seed: 0,
        }
    }
}

impl FastRPConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.dimension == 0 {
            return Err("fastrp dimension must be at least 1".into());
        }
        if self.iteration_weights.is_empty() {
            return Err("fastrp iteration_weights must hold at least w_0".into());
        }
        Ok(())
    }
}

/// Row-major `n x dimension` matrix aligned with a [`GraphView`]'s entity order.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralEmbeddings {
    pub dimension: usize,
    pub values: Vec<f64>,
}

impl StructuralEmbeddings {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dimension..(i + 1) * self.dimension]
    }

    pub fn rows(&self) -> usize {
        self.values.len().checked_div(self.dimension).unwrap_or(0)
    }
}

/// The L2-normalized projection row for one entity.
pub fn projection_row(id: &EntityId, dimension: usize, seed: u64) -> Vec<f64> {
    let mut key = seed.to_le_bytes().to_vec();
    key.extend_from_slice(id.as_str().as_bytes());
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64(&key));
    let mut row: Vec<f64> = (0..dimension)
        .map(|_| match rng.random_range(0..6u8) {
            0 => 1.0,
            1 => -1.0,
            _ => 0.0,
        })
        .collect();
    let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        // all-zero draw: fall back to a single deterministic coordinate
        row[(fnv1a64(&key) % dimension as u64) as usize] = 1.0;
    } else {
        row.iter_mut().for_each(|x| *x /= norm);
    }
    row
}

/// Degrees of `A + I`: one plus the summed weight of incident relations.
pub fn degrees(view: &GraphView<'_>) -> Vec<f64> {
    (0..view.entity_count())
        .map(|i| 1.0 + view.edges(i).iter().map(|&(_, r)| view.weights[r]).sum::<f64>())
        .collect()
}

pub fn compute(view: &GraphView<'_>, config: &FastRPConfig) -> StructuralEmbeddings {
    let n = view.entity_count();
    let dim = config.dimension;
    let deg = degrees(view);
    let inv_sqrt: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut current: Vec<f64> = view
        .entity_ids
        .par_iter()
        .flat_map_iter(|id| projection_row(id, dim, config.seed))
        .collect();
    let w0 = config.iteration_weights[0];
    let mut acc: Vec<f64> = current.iter().map(|x| w0 * x).collect();
    let mut next = vec![0.0; n * dim];
    for &w in &config.iteration_weights[1..] {
        next.par_chunks_mut(dim).enumerate().for_each(|(i, out)| {
            let self_coef = inv_sqrt[i] * inv_sqrt[i];
            let src = &current[i * dim..(i + 1) * dim];
            for (o, s) in out.iter_mut().zip(src) {
                *o = self_coef * s;
            }
            for &(j, r) in view.edges(i) {
                let coef = view.weights[r] * inv_sqrt[i] * inv_sqrt[j];
                let src = &current[j * dim..(j + 1) * dim];
                for (o, s) in out.iter_mut().zip(src) {
                    *o += coef * s;
                }
            }
        });
        std::mem::swap(&mut current, &mut next);
        acc.iter_mut().zip(&current).for_each(|(a, c)| *a += w * c);
    }
    acc.par_chunks_mut(dim).enumerate().for_each(|(i, row)| {
        let scale = deg[i].powf(config.normalization_strength);
        row.iter_mut().for_each(|x| *x *= scale);
    });
    StructuralEmbeddings {
        dimension: dim,
        values: acc,
    }
}

/// Structural embedding of every entity, keyed by id.
pub fn compute_structural_embeddings(
    graph: &KnowledgeGraph,
    config: &FastRPConfig,
) -> BTreeMap<EntityId, Vec<f64>> {
    let view = GraphView::new(graph);
    let x = compute(&view, config);
    view.entity_ids
        .iter()
        .enumerate()
        .map(|(i, id)| ((*id).clone(), x.row(i).to_vec()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Entity, Relation};
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn fixture(names: &[&str], edges: &[(usize, usize, f64)]) -> KnowledgeGraph {
        let mut g = KnowledgeGraph::new();
        for n in names {
            g.upsert_entity(Entity::new(n, "t", "")).unwrap();
        }
        for &(a, b, w) in edges {
            g.upsert_relation(Relation::new(names[a].into(), names[b].into(), "").with_weight(w))
                .unwrap();
        }
        g
    }

    /// Explicit dense evaluation of the defining sum.
    fn dense_oracle(g: &KnowledgeGraph, config: &FastRPConfig) -> DMatrix<f64> {
        let ids: Vec<&EntityId> = g.entities().map(|e| &e.id).collect();
        let n = ids.len();
        let pos = |id: &EntityId| ids.iter().position(|x| *x == id).unwrap();
        let mut a = DMatrix::<f64>::identity(n, n);
        for r in g.relations() {
            let (i, j) = (pos(&r.source_id), pos(&r.target_id));
            a[(i, j)] += r.weight;
            a[(j, i)] += r.weight;
        }
        let deg: Vec<f64> = (0..n).map(|i| a.row(i).sum()).collect();
        let d_half = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            n,
            deg.iter().map(|d| d.powf(-0.5)),
        ));
        let d_r = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            n,
            deg.iter().map(|d| d.powf(config.normalization_strength)),
        ));
        let s = &d_half * &a * &d_half;
        let mut r = DMatrix::<f64>::zeros(n, config.dimension);
        for (i, id) in ids.iter().enumerate() {
            for (c, v) in projection_row(id, config.dimension, config.seed).into_iter().enumerate() {
                r[(i, c)] = v;
            }
        }
        let mut x = DMatrix::<f64>::zeros(n, config.dimension);
        let mut sk = DMatrix::<f64>::identity(n, n);
        for &w in &config.iteration_weights {
            x += (&d_r * &sk * &r) * w;
            sk = &s * &sk;
        }
        x
    }

    #[test]
    fn zeroth_order_is_the_projection() {
        let g = fixture(&["a", "b", "c"], &[(0, 1, 2.0)]);
        let cfg = FastRPConfig {
            dimension: 16,
            normalization_strength: 0.0,
            iteration_weights: vec![1.0],
            seed: 3,
        };
        let x = compute_structural_embeddings(&g, &cfg);
        for (id, row) in &x {
            assert_eq!(row, &projection_row(id, 16, 3));
        }
    }

    #[test]
    fn shape() {
        let g = fixture(&["a", "b", "c", "d"], &[(0, 1, 1.0), (2, 3, 1.0)]);
        let x = compute(&GraphView::new(&g), &FastRPConfig::default());
        assert_eq!(x.rows(), 4);
        assert_eq!(x.dimension, 256);
    }

    #[test]
    fn projection_rows_are_unit_and_sparse() {
        let row = projection_row(&"x".into(), 256, 0);
        let norm: f64 = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        let nonzero = row.iter().filter(|x| **x != 0.0).count();
        // density 1/3 of 256 is about 85
        assert!((50..120).contains(&nonzero), "{nonzero}");
    }

    #[test]
    fn five_node_weighted_fixture_matches_dense_product() {
        let names = ["v1", "v2", "v3", "v4", "v5"];
        let g = fixture(
            &names,
            &[(0, 1, 1.0), (1, 2, 2.0), (2, 3, 1.0), (3, 4, 3.0), (4, 0, 1.0), (1, 3, 2.0)],
        );
        let cfg = FastRPConfig::default();
        let fast = compute(&GraphView::new(&g), &cfg);
        let dense = dense_oracle(&g, &cfg);
        for i in 0..names.len() {
            for c in 0..cfg.dimension {
                assert!((fast.row(i)[c] - dense[(i, c)]).abs() < 1e-9);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn insertion_order_does_not_matter(
            n in 2usize..9,
            raw in proptest::collection::vec((0usize..9, 0usize..9, 1.0f64..3.0), 0..16),
            seed in any::<u64>(),
        ) {
            let names: Vec<String> = (0..n).map(|i| format!("node{i}")).collect();
            let edges: Vec<(usize, usize, f64)> = raw
                .into_iter()
                .map(|(a, b, w)| (a % n, b % n, w))
                .filter(|(a, b, _)| a != b)
                .collect();
            let build = |order: &[usize]| {
                let mut g = KnowledgeGraph::new();
                for &i in order {
                    g.upsert_entity(Entity::new(&names[i], "t", "")).unwrap();
                }
                for &(a, b, w) in edges.iter().rev() {
                    g.upsert_relation(
                        Relation::new(names[a].as_str().into(), names[b].as_str().into(), "").with_weight(w),
                    ).unwrap();
                }
                g
            };
            let forward: Vec<usize> = (0..n).collect();
            let backward: Vec<usize> = (0..n).rev().collect();
            let cfg = FastRPConfig { dimension: 32, seed, ..FastRPConfig::default() };
            let a = compute_structural_embeddings(&build(&forward), &cfg);
            let b = compute_structural_embeddings(&build(&backward), &cfg);
            prop_assert_eq!(&a, &b);
            let g = build(&forward);
            let dense = dense_oracle(&g, &cfg);
            for (i, row) in a.values().enumerate() {
                for (c, v) in row.iter().enumerate() {
                    prop_assert!((v - dense[(i, c)]).abs() < 1e-9);
                }
            }
        }
    }
}

//! Structural statistics of a knowledge graph.
//!
//! * `avg_cc`: mean local clustering coefficient over all entities (degree < 2 counts as 0).
//! * `lcc_ratio`: size of the largest non-isolated connected component over entity count.
//! * `iso_ratio`: entities with no incident relation over entity count.
//! * `frag_ratio`: number of non-isolated connected components over entity count.
//!
//! An empty graph reports zeros.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::KnowledgeGraph;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphMetrics {
    pub node_count: usize,
    pub edge_count: usize,
    pub avg_cc: f64,
    pub lcc_ratio: f64,
    pub iso_ratio: f64,
    pub frag_ratio: f64,
}

impl GraphMetrics {
    pub const CSV_HEADER: &'static str = "node_count,edge_count,avg_cc,lcc_ratio,iso_ratio,frag_ratio";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.node_count,
            self.edge_count,
            self.avg_cc,
            self.lcc_ratio,
            self.iso_ratio,
            self.frag_ratio
        )
    }
}

pub fn graph_metrics(graph: &KnowledgeGraph) -> GraphMetrics {
    let n = graph.entity_count();
    if n == 0 {
        return GraphMetrics::default();
    }
    let index: HashMap<_, _> = graph
        .entities()
        .enumerate()
        .map(|(i, e)| (e.id.clone(), i))
        .collect();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for r in graph.relations() {
        let (a, b) = (index[&r.source_id], index[&r.target_id]);
        adj[a].push(b);
        adj[b].push(a);
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }

    // Local clustering: count links among each node's neighbours using a mark array.
    let mut mark = vec![usize::MAX; n];
    let mut cc_sum = 0.0;
    for v in 0..n {
        let k = adj[v].len();
        if k < 2 {
            continue;
        }
        for &u in &adj[v] {
            mark[u] = v;
        }
        let mut links = 0usize;
        for &u in &adj[v] {
            links += adj[u].iter().filter(|&&w| w > u && mark[w] == v).count();
        }
        cc_sum += 2.0 * links as f64 / (k * (k - 1)) as f64;
    }

    let mut component = vec![usize::MAX; n];
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..n {
        if component[start] != usize::MAX || adj[start].is_empty() {
            continue;
        }
        let c = sizes.len();
        component[start] = c;
        stack.push(start);
        let mut size = 0;
        while let Some(v) = stack.pop() {
            size += 1;
            for &u in &adj[v] {
                if component[u] == usize::MAX {
                    component[u] = c;
                    stack.push(u);
                }
            }
        }
        sizes.push(size);
    }
    let isolated = adj.iter().filter(|a| a.is_empty()).count();
    let nf = n as f64;
    GraphMetrics {
        node_count: n,
        edge_count: graph.relation_count(),
        avg_cc: cc_sum / nf,
        lcc_ratio: sizes.iter().copied().max().unwrap_or(0) as f64 / nf,
        iso_ratio: isolated as f64 / nf,
        frag_ratio: sizes.len() as f64 / nf,
    }
}

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::RefinedEvidence;
use crate::graph::{ChunkId, KnowledgeGraph};
use crate::text::{sha256_hex, token_count, truncate_tokens};

pub const ENTITY_HEADER: &str = "-----Entities-----";
pub const RELATION_HEADER: &str = "-----Relations-----";
pub const CHUNK_HEADER: &str = "-----Chunks-----";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedChunk {
    pub chunk_id: ChunkId,
    pub score: usize,
}

/// Scores chunks by how many kept entities and relations cite them and returns the top `k`,
/// score descending, ties by chunk id.
pub fn rank_chunks(evidence: &RefinedEvidence, graph: &KnowledgeGraph, k: usize) -> Vec<RankedChunk> {
    if k == 0 {
        return Vec::new();
    }
    let mut counts: BTreeMap<&ChunkId, usize> = BTreeMap::new();
    let cited = evidence
        .kept_entities
        .iter()
        .filter_map(|id| graph.entity(id))
        .flat_map(|e| &e.chunk_ids)
        .chain(
            evidence
                .kept_relations
                .iter()
                .filter_map(|id| graph.relation(id))
                .flat_map(|r| &r.chunk_ids),
        );
    for c in cited {
        if graph.chunk(c).is_some() {
            *counts.entry(c).or_default() += 1;
        }
    }
    let mut ranked: Vec<RankedChunk> = counts
        .into_iter()
        .map(|(id, score)| RankedChunk {
            chunk_id: id.clone(),
            score,
        })
        .collect();
    ranked.sort_by(|a, b| b.score.cmp(&a.score).then_with(|| a.chunk_id.cmp(&b.chunk_id)));
    ranked.truncate(k);
    ranked
}

/// Whitespace-token accounting for an assembled context.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub budget: usize,
    pub entity_tokens: usize,
    pub relation_tokens: usize,
    pub chunk_tokens: usize,
    pub total_tokens: usize,
    pub chunks_dropped: usize,
    pub chunks_truncated: usize,
    pub relation_descriptions_truncated: usize,
    pub entity_descriptions_truncated: usize,
    /// Names and headers alone exceed the budget.
    pub over_budget: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssembledContext {
    pub entity_section: String,
    pub relation_section: String,
    pub chunk_section: String,
    pub chunk_ids: Vec<ChunkId>,
    pub budget_report: BudgetReport,
    pub fingerprint: String,
}

impl AssembledContext {
    pub fn text(&self) -> String {
        [&self.entity_section, &self.relation_section, &self.chunk_section]
            .into_iter()
            .filter(|s| !s.is_empty())
            .map(String::as_str)
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn is_empty(&self) -> bool {
        self.entity_section.is_empty() && self.relation_section.is_empty() && self.chunk_section.is_empty()
    }
}

/// A rendered line: `head` is never cut, `body` may be shortened from the end.
struct Line {
    head: String,
    body: String,
    sep: &'static str,
}

impl Line {
    fn tokens(&self) -> usize {
        token_count(&self.head) + token_count(&self.body)
    }

    fn render(&self) -> String {
        if self.body.is_empty() {
            self.head.clone()
        } else {
            format!("{}{}{}", self.head, self.sep, self.body)
        }
    }

    /// Removes up to `excess` body tokens, returning how many went.
    fn shave(&mut self, excess: usize) -> usize {
        let have = token_count(&self.body);
        let cut = have.min(excess);
        if cut > 0 {
            self.body = truncate_tokens(&self.body, have - cut).to_string();
        }
        cut
    }
}

fn section_tokens(lines: &[Line]) -> usize {
    if lines.is_empty() {
        0
    } else {
        1 + lines.iter().map(Line::tokens).sum::<usize>()
    }
}

fn render_section(header: &str, lines: &[Line]) -> String {
    if lines.is_empty() {
        return String::new();
    }
    let mut out = String::from(header);
    for l in lines {
        out.push('\n');
        out.push_str(&l.render());
    }
    out
}

fn flat(description: &str) -> String {
    description.replace("<SEP>", "; ").split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Renders entities, relations and chunks, then trims to `budget` tokens: chunks from the tail
/// first, then relation descriptions, then entity descriptions. Names are never cut.
pub fn build_context(
    evidence: &RefinedEvidence,
    chunks: &[RankedChunk],
    graph: &KnowledgeGraph,
    budget: usize,
) -> AssembledContext {
    let mut entities: Vec<Line> = evidence
        .kept_entities
        .iter()
        .filter_map(|id| graph.entity(id))
        .map(|e| Line {
            head: format!("- {} ({}):", e.name, e.type_label),
            body: flat(&e.description),
            sep: " ",
        })
        .collect();
    let name = |id| graph.entity(id).map_or_else(String::new, |e| e.name.clone());
    let mut relations: Vec<Line> = evidence
        .kept_relations
        .iter()
        .filter_map(|id| graph.relation(id))
        .map(|r| Line {
            head: format!("- {} <-> {}:", name(&r.source_id), name(&r.target_id)),
            body: flat(&r.description),
            sep: " ",
        })
        .collect();
    let (mut chunk_ids, mut blocks): (Vec<ChunkId>, Vec<Line>) = chunks
        .iter()
        .filter_map(|c| graph.chunk(&c.chunk_id))
        .map(|c| {
            let line = Line {
                head: format!("[{}]", c.id),
                body: c.text.trim().to_string(),
                sep: "\n",
            };
            (c.id.clone(), line)
        })
        .unzip();

    let mut report = BudgetReport {
        budget,
        ..BudgetReport::default()
    };
    let total = section_tokens(&entities) + section_tokens(&relations) + section_tokens(&blocks);
    let mut excess = total.saturating_sub(budget);

    while excess > 0 {
        let header = usize::from(blocks.len() == 1);
        let Some(last) = blocks.last_mut() else { break };
        let whole = last.tokens() + header;
        let body = token_count(&last.body);
        if whole <= excess || body <= excess {
            excess = excess.saturating_sub(whole);
            blocks.pop();
            chunk_ids.pop();
            report.chunks_dropped += 1;
        } else {
            last.shave(excess);
            excess = 0;
            report.chunks_truncated += 1;
        }
    }
    for l in relations.iter_mut().rev() {
        if excess == 0 {
            break;
        }
        let cut = l.shave(excess);
        if cut > 0 {
            excess -= cut;
            report.relation_descriptions_truncated += 1;
        }
    }
    for l in entities.iter_mut().rev() {
        if excess == 0 {
            break;
        }
        let cut = l.shave(excess);
        if cut > 0 {
            excess -= cut;
            report.entity_descriptions_truncated += 1;
        }
    }
    report.over_budget = excess > 0;

    report.entity_tokens = section_tokens(&entities);
    report.relation_tokens = section_tokens(&relations);
    report.chunk_tokens = section_tokens(&blocks);
    report.total_tokens = report.entity_tokens + report.relation_tokens + report.chunk_tokens;

    let mut ctx = AssembledContext {
        entity_section: render_section(ENTITY_HEADER, &entities),
        relation_section: render_section(RELATION_HEADER, &relations),
        chunk_section: render_section(CHUNK_HEADER, &blocks),
        chunk_ids,
        budget_report: report,
        fingerprint: String::new(),
    };
    ctx.fingerprint = sha256_hex(ctx.text().as_bytes());
    ctx
}

//! Entity-type discovery: per-chunk suggestion followed by a single consolidation pass.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::gateway::{prompts::STRICT_SUFFIX, Gateway, GatewayError, TemplateId};
use crate::graph::{Chunk, TypeDefinition, TypeInventory};

pub const DEFAULT_TYPE_CAP: usize = 30;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateType {
    pub label: String,
    pub definition: String,
    /// Document that suggested the label.
    pub doc_id: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Suggestions {
    pub candidates: Vec<(String, String)>,
    pub malformed: usize,
}

/// Parses `label | definition` lines.
pub fn parse_suggestions(reply: &str) -> Suggestions {
    let mut out = Suggestions::default();
    for line in reply.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let line = line.trim_start_matches(['-', '*', ' ']);
        match line.split_once('|') {
            Some((label, def)) if !label.trim().is_empty() && !def.trim().is_empty() => {
                out.candidates
                    .push((label.trim().to_string(), def.trim().to_string()));
            }
            _ => out.malformed += 1,
        }
    }
    out
}

pub fn suggest_types(chunk: &Chunk, gateway: &Gateway) -> Result<Suggestions, GatewayError> {
    let values = BTreeMap::from([("text", chunk.text.clone())]);
    let reply = gateway.run_allow_empty(TemplateId::SuggestTypes, &values)?;
    let parsed = parse_suggestions(&reply);
    if parsed.malformed > 0 {
        warn!(chunk = %chunk.id, malformed = parsed.malformed, "dropped malformed type lines");
    }
    Ok(parsed)
}

/// Candidates with exact (case-insensitive) duplicates folded together.
#[derive(Debug, Clone)]
struct Pooled {
    label: String,
    definition: String,
    docs: BTreeSet<String>,
}

fn pool(candidates: &[CandidateType]) -> Vec<Pooled> {
    let mut order: Vec<Pooled> = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    for c in candidates {
        let key = c.label.trim().to_lowercase();
        if key.is_empty() {
            continue;
        }
        match index.get(&key) {
            Some(&i) => {
                order[i].docs.insert(c.doc_id.clone());
            }
            None => {
                index.insert(key, order.len());
                order.push(Pooled {
                    label: c.label.trim().to_string(),
                    definition: c.definition.trim().to_string(),
                    docs: BTreeSet::from([c.doc_id.clone()]),
                });
            }
        }
    }
    order
}

/// Parses `label | definition | merged_from: a, b` lines, keeping only labels traceable to the
/// pooled candidates.
fn parse_refined(reply: &str, pooled: &[Pooled], cap: usize) -> Vec<TypeDefinition> {
    let lookup: BTreeMap<String, &Pooled> = pooled
        .iter()
        .map(|p| (p.label.to_lowercase(), p))
        .collect();
    let mut out: Vec<TypeDefinition> = Vec::new();
    for line in reply.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let parts: Vec<&str> = line.split('|').map(str::trim).collect();
        if parts.len() < 2 || parts[0].is_empty() {
            continue;
        }
        let label = parts[0].trim_start_matches(['-', '*', ' ']).trim();
        let definition = parts[1];
        let mut sources: Vec<String> = parts
            .get(2)
            .and_then(|p| p.strip_prefix("merged_from:"))
            .map(|list| list.split(',').map(|s| s.trim().to_lowercase()).collect())
            .unwrap_or_default();
        sources.push(label.to_lowercase());
        let docs: BTreeSet<String> = sources
            .iter()
            .filter_map(|s| lookup.get(s))
            .flat_map(|p| p.docs.iter().cloned())
            .collect();
        if docs.is_empty() {
            warn!(label, "refined type not traceable to any suggestion; dropped");
            continue;
        }
        if out.iter().any(|t| t.label.eq_ignore_ascii_case(label)) {
            continue;
        }
        if out.len() == cap {
            break;
        }
        out.push(TypeDefinition {
            label: label.to_string(),
            definition: definition.to_string(),
            suggested_by: docs,
        });
    }
    out
}

/// Consolidates aggregated candidates into an inventory of at most `cap` labels.
pub fn refine_types(
    candidates: &[CandidateType],
    cap: usize,
    gateway: &Gateway,
) -> Result<TypeInventory, GatewayError> {
    let pooled = pool(candidates);
    if pooled.is_empty() {
        return Err(GatewayError::Precondition(
            "type refinement needs at least one candidate".into(),
        ));
    }
    let direct = |p: &Pooled| TypeDefinition {
        label: p.label.clone(),
        definition: p.definition.clone(),
        suggested_by: p.docs.clone(),
    };
    if pooled.len() == 1 {
        return Ok(TypeInventory {
            types: vec![direct(&pooled[0])],
        });
    }
    let listing = pooled
        .iter()
        .map(|p| format!("{} | {}", p.label, p.definition))
        .collect::<Vec<_>>()
        .join("\n");
    let values = BTreeMap::from([("cap", cap.to_string()), ("candidates", listing)]);
    let prompt = crate::gateway::prompts::render(TemplateId::RefineTypes, &values)?;
    let reply = match gateway.run_prompt(prompt.clone()) {
        Err(GatewayError::EmptyReply) => String::new(),
        other => other?,
    };
    let mut types = parse_refined(&reply, &pooled, cap);
    if types.is_empty() {
        let reply = match gateway.run_prompt(format!("{prompt}{STRICT_SUFFIX}")) {
            Err(GatewayError::EmptyReply) => String::new(),
            other => other?,
        };
        types = parse_refined(&reply, &pooled, cap);
        if types.is_empty() {
            return Err(GatewayError::JudgeFormat {
                kind: "type refinement",
                reply,
            });
        }
    }
    Ok(TypeInventory { types })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{CompletionRequest, MockConfig, Provider, ProviderError};
    use std::sync::Arc;

    fn cand(label: &str, doc: &str) -> CandidateType {
        CandidateType {
            label: label.into(),
            definition: format!("{label} things"),
            doc_id: doc.into(),
        }
    }

    #[test]
    fn suggestion_parsing_counts_malformed() {
        let s = parse_suggestions("person | people\nno separator here\nplace | where things are");
        assert_eq!(s.candidates.len(), 2);
        assert_eq!(s.malformed, 1);
        assert_eq!(parse_suggestions(""), Suggestions::default());
    }

    #[test]
    fn mock_suggestions_are_the_configured_list() {
        let gw = Gateway::mock(MockConfig::default());
        let chunk = Chunk {
            id: "d#0000".into(),
            doc_id: "d".into(),
            ordinal: 0,
            text: "anything".into(),
            token_span: (0, 1),
        };
        let s = suggest_types(&chunk, &gw).unwrap();
        let labels: Vec<&str> = s.candidates.iter().map(|c| c.0.as_str()).collect();
        assert_eq!(labels, ["organization", "person", "location", "concept"]);
    }

    #[test]
    fn exact_duplicates_collapse() {
        let gw = Gateway::mock(MockConfig::default());
        let inv = refine_types(&[cand("organization", "a"), cand("Organization", "b")], 30, &gw)
            .unwrap();
        assert_eq!(inv.len(), 1);
        assert_eq!(inv.types[0].suggested_by, BTreeSet::from(["a".into(), "b".into()]));
    }

    #[test]
    fn cap_is_enforced() {
        let gw = Gateway::mock(MockConfig::default());
        let cands: Vec<_> = (0..40).map(|i| cand(&format!("t{i:02}"), "d")).collect();
        let inv = refine_types(&cands, 30, &gw).unwrap();
        assert_eq!(inv.len(), 30);
        assert_eq!(inv.types[0].label, "t00");
        assert!(inv.types.iter().all(|t| !t.suggested_by.is_empty()));
    }

    #[test]
    fn single_candidate_unchanged() {
        let gw = Gateway::mock(MockConfig::default());
        let inv = refine_types(&[cand("person", "d")], 30, &gw).unwrap();
        assert_eq!(inv.types[0].label, "person");
        assert_eq!(inv.types[0].definition, "person things");
    }

    struct Garbage;
    impl Provider for Garbage {
        fn name(&self) -> &str {
            "garbage"
        }
        fn complete(&self, _r: &CompletionRequest) -> Result<String, ProviderError> {
            Ok("what a lovely day".into())
        }
        fn embed(&self, t: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
            Ok(t.iter().map(|_| vec![1.0]).collect())
        }
        fn embedding_model(&self) -> &str {
            "g"
        }
        fn embedding_dimension(&self) -> usize {
            1
        }
    }

    #[test]
    fn unparseable_refinement_is_a_format_error() {
        let gw = Gateway::new(Arc::new(Garbage));
        let err = refine_types(&[cand("a", "d"), cand("b", "d")], 30, &gw).unwrap_err();
        assert!(matches!(err, GatewayError::JudgeFormat { .. }));
    }

    #[test]
    fn untraceable_labels_dropped() {
        let pooled = pool(&[cand("person", "d1"), cand("human", "d2")]);
        let types = parse_refined(
            "person | people | merged_from: person, human\ninvented | nowhere",
            &pooled,
            30,
        );
        assert_eq!(types.len(), 1);
        assert_eq!(types[0].suggested_by, BTreeSet::from(["d1".into(), "d2".into()]));
    }
}

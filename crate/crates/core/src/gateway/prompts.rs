//! Versioned prompt templates with named placeholders.
//!
//! Every template starts with a `TASK: <id>/<version>` line. Placeholder values are rendered
//! inside fenced sections:
//!
//! ```text
//! <<<name
//! value
//! >>>
//! ```
//!
//! so that providers (and the mock) can recover individual inputs with [`section`].
//! Rendering is pure: the same template and values always produce the same prompt.

use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TemplateId {
    SuggestTypes,
    RefineTypes,
    Extract,
    MergeJudge,
    QueryCues,
    Eliminate,
    Answer,
    AnswerInsufficient,
    JudgeSupport,
    JudgeReflects,
    ExtractClaims,
    GradeRelevanceA,
    GradeRelevanceB,
}

impl TemplateId {
    pub const ALL: [TemplateId; 13] = [
        TemplateId::SuggestTypes,
        TemplateId::RefineTypes,
        TemplateId::Extract,
        TemplateId::MergeJudge,
        TemplateId::QueryCues,
        TemplateId::Eliminate,
        TemplateId::Answer,
        TemplateId::AnswerInsufficient,
        TemplateId::JudgeSupport,
        TemplateId::JudgeReflects,
        TemplateId::ExtractClaims,
        TemplateId::GradeRelevanceA,
        TemplateId::GradeRelevanceB,
    ];

    /// The task tag written on the first line of the rendered prompt.
    pub fn task(self) -> &'static str {
        match self {
            TemplateId::SuggestTypes => "suggest_types/v1",
            TemplateId::RefineTypes => "refine_types/v1",
            TemplateId::Extract => "extract/v1",
            TemplateId::MergeJudge => "merge_judge/v1",
            TemplateId::QueryCues => "query_cues/v1",
            TemplateId::Eliminate => "eliminate/v1",
            TemplateId::Answer => "answer/v1",
            TemplateId::AnswerInsufficient => "answer_insufficient/v1",
            TemplateId::JudgeSupport => "judge_support/v1",
            TemplateId::JudgeReflects => "judge_reflects/v1",
            TemplateId::ExtractClaims => "extract_claims/v1",
            TemplateId::GradeRelevanceA => "grade_relevance_a/v1",
            TemplateId::GradeRelevanceB => "grade_relevance_b/v1",
        }
    }

    pub fn from_task(task: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.task() == task)
    }

    fn body(self) -> &'static str {
        match self {
            TemplateId::SuggestTypes => SUGGEST_TYPES,
            TemplateId::RefineTypes => REFINE_TYPES,
            TemplateId::Extract => EXTRACT,
            TemplateId::MergeJudge => MERGE_JUDGE,
            TemplateId::QueryCues => QUERY_CUES,
            TemplateId::Eliminate => ELIMINATE,
            TemplateId::Answer => ANSWER,
            TemplateId::AnswerInsufficient => ANSWER_INSUFFICIENT,
            TemplateId::JudgeSupport => JUDGE_SUPPORT,
            TemplateId::JudgeReflects => JUDGE_REFLECTS,
            TemplateId::ExtractClaims => EXTRACT_CLAIMS,
            TemplateId::GradeRelevanceA => GRADE_RELEVANCE_A,
            TemplateId::GradeRelevanceB => GRADE_RELEVANCE_B,
        }
    }

    /// Placeholder names the template expects, in order of appearance.
    pub fn placeholders(self) -> Vec<&'static str> {
        let body = self.body();
        let mut out = Vec::new();
        let mut rest = body;
        while let Some(start) = rest.find('{') {
            let after = &rest[start + 1..];
            match after.find('}') {
                Some(end) => {
                    out.push(&after[..end]);
                    rest = &after[end + 1..];
                }
                None => break,
            }
        }
        out
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template {task} is missing value for placeholder {name}")]
    MissingValue { task: &'static str, name: String },
    #[error("template {task} got unexpected value {name}")]
    UnexpectedValue { task: &'static str, name: String },
}

/// Extra instruction appended when re-asking after an unparseable reply.
pub const STRICT_SUFFIX: &str = "\nSTRICT: Your previous reply could not be parsed. Follow the output format exactly and add nothing before the first line.";

/// Renders `template` with the named `values`. Every placeholder must be supplied exactly.
pub fn render(template: TemplateId, values: &BTreeMap<&str, String>) -> Result<String, TemplateError> {
    let names = template.placeholders();
    for n in &names {
        if !values.contains_key(n) {
            return Err(TemplateError::MissingValue {
                task: template.task(),
                name: (*n).to_string(),
            });
        }
    }
    if let Some(extra) = values.keys().find(|k| !names.contains(k)) {
        return Err(TemplateError::UnexpectedValue {
            task: template.task(),
            name: (*extra).to_string(),
        });
    }
    let mut out = format!("TASK: {}\n", template.task());
    let mut rest = template.body();
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let after = &rest[start + 1..];
        let end = after.find('}').expect("placeholders are balanced");
        let name = &after[..end];
        out.push_str(&format!("<<<{name}\n{}\n>>>", escape(&values[name])));
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

fn escape(value: &str) -> String {
    value
        .lines()
        .map(|l| if l.starts_with(">>>") { format!(" {l}") } else { l.to_string() })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Reads the task tag from a rendered prompt.
pub fn task_of(prompt: &str) -> Option<TemplateId> {
    let first = prompt.lines().next()?;
    TemplateId::from_task(first.strip_prefix("TASK: ")?.trim())
}

/// Recovers the value rendered for placeholder `name`.
pub fn section<'a>(prompt: &'a str, name: &str) -> Option<&'a str> {
    let open = format!("<<<{name}\n");
    let start = prompt.find(&open)? + open.len();
    let rest = &prompt[start..];
    let end = rest.find("\n>>>")?;
    Some(&rest[..end])
}

const SUGGEST_TYPES: &str = "\
You are building an entity-type schema for a document collection.
1. Analyze document content, structural elements, and domain-specific patterns.
2. Identify recurring entity categories, their contextual roles, and relationships.
3. Propose non-overlapping, domain-appropriate entity types with concise explanations.
Output one type per line as: label | one-line definition
Document text:
{text}
";

const REFINE_TYPES: &str = "\
You are consolidating candidate entity types proposed for a document collection.
1. Identify duplicate or highly overlapping types by meaning.
2. Merge redundant types, consolidating the most overlapping labels first, while keeping meaningful domain distinctions.
3. Return a concise, balanced schema with at most the given number of types.
Output one type per line as: label | one-line definition | merged_from: candidate labels, comma separated
Maximum number of types:
{cap}
Candidate types (label | definition):
{candidates}
";

const EXTRACT: &str = "\
Extract a knowledge graph from the text.
1. Identify entities using the entity types below and give each a consistent name and a description.
2. Extract direct relationships among the identified entities, decomposing complex interactions into binary relations.
3. Ground every name and description strictly in the input text.
Output one record per line:
entity<|>name<|>type<|>description
relation<|>source name<|>target name<|>comma separated keywords<|>description
Entity types (label | definition):
{types}
Text:
{text}
";

const MERGE_JUDGE: &str = "\
Decide whether two entity records refer to the same real-world entity.
1. Compare the names and descriptions for semantic equivalence.
2. Apply strict criteria: require proper-noun consistency and ignore superficial similarity.
3. Merge only with high confidence; otherwise keep them distinct.
Reply with MERGE or KEEP_DISTINCT on the first line, then a one-line rationale.
Entity A name:
{name_a}
Entity A description:
{description_a}
Entity B name:
{name_b}
Entity B description:
{description_b}
";

const QUERY_CUES: &str = "\
Extract retrieval cues from the query.
1. High-level keywords capture the overall intent and semantic scope.
2. Low-level keywords name specific entities, terms or details.
3. Use only concise keywords derived from the query.
Reply with exactly two lines:
high_level: keyword, keyword
low_level: keyword, keyword
Query:
{query}
";

const ELIMINATE: &str = "\
Filter retrieved evidence for the query.
1. Evaluate each entity and relation and identify items that do not help answer the query.
2. Eliminate irrelevant or ambiguous items but keep useful intermediate or supporting information.
3. Keep a coherent evidence set; do not break necessary relational connections.
Pathway tags are advisory context only.
Reply with one line per item as: <number>: KEEP|ELIMINATE - rationale
Query:
{query}
Items:
{items}
";

const ANSWER: &str = "\
Answer the query using only the context.
1. Identify the relevant entities and relations in the context.
2. Ground the selected information in the supporting document chunks, preserving original phrasing when possible.
3. Write a precise answer whose every statement is strictly supported by the context.
Query:
{query}
Context:
{context}
";

const ANSWER_INSUFFICIENT: &str = "\
No supporting context was retrieved for the query. State that the available context is insufficient to answer it and do not guess.
Query:
{query}
";

const JUDGE_SUPPORT: &str = "\
Decide whether the claim is supported by the context.
Reply with SUPPORTED or UNSUPPORTED on the first line, then a one-line rationale.
Claim:
{claim}
Context:
{context}
";

const JUDGE_REFLECTS: &str = "\
Decide whether the required evidence is reflected in the answer.
Reply with SUPPORTED or UNSUPPORTED on the first line, then a one-line rationale.
Evidence:
{evidence}
Answer:
{answer}
";

const EXTRACT_CLAIMS: &str = "\
Break the text into short atomic factual claims.
Reply with one claim per line and nothing else.
Text:
{text}
";

const GRADE_RELEVANCE_A: &str = "\
Rate how relevant the retrieved context is to the query.
Reply with a single grade on the first line: 0 (irrelevant), 0.5 (partially relevant) or 1 (fully relevant), then a one-line rationale.
Query:
{query}
Context:
{context}
";

const GRADE_RELEVANCE_B: &str = "\
You are reviewing retrieval quality. Does the context contain the information needed to address the query?
Grade 1 if it clearly does, 0.5 if it only partly does, 0 if it does not. Put the grade alone on the first line, then a one-line rationale.
Query:
{query}
Context:
{context}
";

#[cfg(test)]
mod tests {
    use super::*;

    fn vals(pairs: &[(&'static str, &str)]) -> BTreeMap<&'static str, String> {
        pairs.iter().map(|(k, v)| (*k, v.to_string())).collect()
    }

    #[test]
    fn every_template_has_a_round_trippable_task_tag() {
        for t in TemplateId::ALL {
            let values = t.placeholders().into_iter().map(|p| (p, format!("value of {p}"))).collect();
            let prompt = render(t, &values).unwrap();
            assert_eq!(task_of(&prompt), Some(t));
            for p in t.placeholders() {
                assert_eq!(section(&prompt, p), Some(format!("value of {p}").as_str()));
            }
        }
    }

    #[test]
    fn render_is_pure_and_strict() {
        let v = vals(&[("claim", "X"), ("context", "Y")]);
        assert_eq!(render(TemplateId::JudgeSupport, &v), render(TemplateId::JudgeSupport, &v));
        assert!(matches!(
            render(TemplateId::JudgeSupport, &vals(&[("claim", "X")])),
            Err(TemplateError::MissingValue { .. })
        ));
        assert!(matches!(
            render(TemplateId::JudgeSupport, &vals(&[("claim", "X"), ("context", "Y"), ("z", "")])),
            Err(TemplateError::UnexpectedValue { .. })
        ));
    }

    #[test]
    fn sections_survive_fence_like_content() {
        let v = vals(&[("text", "line one\n>>> not a fence\nline three")]);
        let p = render(TemplateId::ExtractClaims, &v).unwrap();
        assert_eq!(section(&p, "text"), Some("line one\n >>> not a fence\nline three"));
        let empty = render(TemplateId::ExtractClaims, &vals(&[("text", "")])).unwrap();
        assert_eq!(section(&empty, "text"), Some(""));
    }
}

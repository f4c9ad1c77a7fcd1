//! Deterministic offline provider.
//!
//! The mock reads the `TASK:` tag of each prompt and answers from the rendered sections with
//! simple rules. Every reply is a pure function of the prompt and [`MockConfig`].
//!
//! * A line `ECHO: x` anywhere in the prompt makes the reply `x`.
//! * Embeddings are hashed bag-of-words: every lowercase alphanumeric token adds 1 to the
//!   coordinate selected by its seeded FNV-1a hash.
//! * Extraction treats runs of capitalized tokens as entity names and links consecutive
//!   entities within a sentence.
//! * Support and reflection judgements are verbatim substring containment.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::prompts::{section, task_of, TemplateId};
use super::{CompletionRequest, Provider, ProviderError};
use crate::text::{fnv1a64, normalized_words, sentences};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeRule {
    /// Merge when the normalized names are identical.
    ExactName,
    /// Merge when one name's words are a prefix of the other's ("Google" / "Google Inc").
    #[default]
    TokenPrefix,
    Never,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AnswerStyle {
    /// Reply with the name of the first entity in the context.
    EchoFirstEntity,
    /// Reply with up to `max` chunk sentences, verbatim, chosen by overlap with the query.
    ContextSentences { max: usize },
}

impl Default for AnswerStyle {
    fn default() -> Self {
        AnswerStyle::ContextSentences { max: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockConfig {
    pub seed: u64,
    pub embedding_dimension: usize,
    /// `(label, definition)` pairs returned by type suggestion for every chunk.
    pub suggested_types: Vec<(String, String)>,
    pub merge_rule: MergeRule,
    /// Evidence items (entity names, or `A <-> B` relation labels) the elimination judge drops.
    /// Matched case-insensitively.
    pub eliminate: BTreeSet<String>,
    pub answer_style: AnswerStyle,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            embedding_dimension: 64,
            suggested_types: vec![
                ("organization".into(), "companies, institutions and agencies".into()),
                ("person".into(), "named individuals".into()),
                ("location".into(), "places, regions and countries".into()),
                ("concept".into(), "products, technologies and abstract ideas".into()),
            ],
            merge_rule: MergeRule::TokenPrefix,
            eliminate: BTreeSet::new(),
            answer_style: AnswerStyle::default(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct MockProvider {
    config: MockConfig,
}

pub const INSUFFICIENT_CONTEXT_REPLY: &str = "The available context is insufficient to answer the question.";

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "and", "or", "but", "of", "in", "on", "at", "to", "for", "by", "with",
    "from", "as", "is", "are", "was", "were", "be", "been", "it", "its", "this", "that",
    "these", "those", "he", "she", "they", "we", "i", "you", "his", "her", "their", "our",
    "what", "who", "whom", "which", "when", "where", "why", "how", "does", "do", "did", "has",
    "have", "had", "not", "no", "yes", "after", "before", "during", "while", "also", "then",
    "there", "here", "into", "about", "between", "both", "all", "any", "can", "could", "will",
    "would", "should", "may", "might", "if", "so", "than", "such",
];

fn is_stopword(word: &str) -> bool {
    STOPWORDS.contains(&word.to_lowercase().as_str())
}

fn is_edge_punct(c: char) -> bool {
    !c.is_alphanumeric()
}

/// Byte ranges (within `sentence`) of capitalized-token runs, with leading stopwords removed.
/// A token ending in punctuation closes its run.
pub fn capitalized_runs(sentence: &str) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut current: Option<(usize, usize)> = None;
    for span in crate::text::whitespace_spans(sentence) {
        let raw = &sentence[span.clone()];
        let lead = raw.len() - raw.trim_start_matches(is_edge_punct).len();
        let core = raw.trim_matches(is_edge_punct);
        if core.is_empty() {
            if let Some(r) = current.take() {
                runs.push(r);
            }
            continue;
        }
        let start = span.start + lead;
        let end = start + core.len();
        let capitalized = core.chars().next().is_some_and(char::is_uppercase);
        let closes = raw.len() > lead + core.len();
        if capitalized && !(current.is_none() && is_stopword(core)) {
            current = Some(match current {
                Some((s, _)) => (s, end),
                None => (start, end),
            });
            if closes {
                runs.push(current.take().expect("run just set"));
            }
        } else if let Some(r) = current.take() {
            runs.push(r);
        }
    }
    if let Some(r) = current {
        runs.push(r);
    }
    runs
}

impl MockProvider {
    pub fn new(config: MockConfig) -> Self {
        Self { config }
    }

    pub fn config(&self) -> &MockConfig {
        &self.config
    }

    /// The raw (unnormalized) hashed bag-of-words vector.
    pub fn hashed_bag_of_words(&self, text: &str) -> Vec<f32> {
        let dim = self.config.embedding_dimension.max(1);
        let mut v = vec![0.0f32; dim];
        let mut any = false;
        for token in text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
        {
            v[self.bucket(&token.to_lowercase())] += 1.0;
            any = true;
        }
        if !any {
            v[self.bucket("")] = 1.0;
        }
        v
    }

    fn bucket(&self, token: &str) -> usize {
        let mut bytes = self.config.seed.to_le_bytes().to_vec();
        bytes.extend_from_slice(token.as_bytes());
        (fnv1a64(&bytes) % self.config.embedding_dimension.max(1) as u64) as usize
    }

    fn type_for(&self, name: &str, types: &[String]) -> String {
        if types.is_empty() {
            return "other".to_string();
        }
        let h = fnv1a64(name.to_lowercase().as_bytes());
        types[(h % types.len() as u64) as usize].clone()
    }

    fn suggest_types(&self) -> String {
        self.config
            .suggested_types
            .iter()
            .map(|(l, d)| format!("{l} | {d}"))
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn refine_types(&self, prompt: &str) -> String {
        let cap: usize = section(prompt, "cap")
            .and_then(|c| c.trim().parse().ok())
            .unwrap_or(usize::MAX);
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for line in section(prompt, "candidates").unwrap_or("").lines() {
            let mut parts = line.splitn(2, '|');
            let label = parts.next().unwrap_or("").trim();
            let def = parts.next().unwrap_or("").trim();
            if label.is_empty() || !seen.insert(label.to_lowercase()) {
                continue;
            }
            if out.len() == cap {
                break;
            }
            out.push(format!("{label} | {def} | merged_from: {label}"));
        }
        out.join("\n")
    }

    fn extract(&self, prompt: &str) -> String {
        let types: Vec<String> = section(prompt, "types")
            .unwrap_or("")
            .lines()
            .filter_map(|l| l.split('|').next())
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        let text = section(prompt, "text").unwrap_or("");
        let mut entity_lines = Vec::new();
        let mut relation_lines = Vec::new();
        let mut seen = BTreeSet::new();
        for sentence in sentences(text) {
            let runs = capitalized_runs(sentence);
            let names: Vec<&str> = runs.iter().map(|&(s, e)| &sentence[s..e]).collect();
            for name in &names {
                if seen.insert(name.to_lowercase()) {
                    entity_lines.push(format!(
                        "entity<|>{name}<|>{}<|>{sentence}",
                        self.type_for(name, &types)
                    ));
                }
            }
            for pair in runs.windows(2) {
                let (a, b) = (&sentence[pair[0].0..pair[0].1], &sentence[pair[1].0..pair[1].1]);
                if a.to_lowercase() == b.to_lowercase() {
                    continue;
                }
                let between: Vec<String> = normalized_words(&sentence[pair[0].1..pair[1].0])
                    .into_iter()
                    .filter(|w| !is_stopword(w))
                    .collect();
                let keywords = if between.is_empty() {
                    "associated with".to_string()
                } else {
                    between.join(" ")
                };
                relation_lines.push(format!("relation<|>{a}<|>{b}<|>{keywords}<|>{sentence}"));
            }
        }
        entity_lines.extend(relation_lines);
        entity_lines.join("\n")
    }

    fn merge(&self, prompt: &str) -> String {
        let a = normalized_words(section(prompt, "name_a").unwrap_or(""));
        let b = normalized_words(section(prompt, "name_b").unwrap_or(""));
        let merge = match self.config.merge_rule {
            MergeRule::Never => false,
            MergeRule::ExactName => !a.is_empty() && a == b,
            MergeRule::TokenPrefix => {
                let (short, long) = if a.len() <= b.len() { (&a, &b) } else { (&b, &a) };
                !short.is_empty() && long.starts_with(short)
            }
        };
        if merge {
            "MERGE\nnames agree under the mock rule".to_string()
        } else {
            "KEEP_DISTINCT\nnames differ under the mock rule".to_string()
        }
    }

    fn cues(&self, prompt: &str) -> String {
        let query = section(prompt, "query").unwrap_or("").trim();
        let split = |s: &str| -> Vec<String> {
            s.split(',')
                .map(str::trim)
                .filter(|c| !c.is_empty())
                .map(str::to_string)
                .collect()
        };
        let (high, low) = if let Some((h, l)) = query.split_once("::") {
            (split(h), split(l))
        } else {
            let mut low = Vec::new();
            let mut covered = vec![false; query.len()];
            for (s, e) in capitalized_runs(query) {
                low.push(query[s..e].to_string());
                covered[s..e].iter_mut().for_each(|c| *c = true);
            }
            let rest: String = query
                .char_indices()
                .map(|(i, c)| if covered[i] { ' ' } else { c })
                .collect();
            let words: Vec<String> = normalized_words(&rest)
                .into_iter()
                .filter(|w| !is_stopword(w))
                .collect();
            let high = if words.is_empty() {
                Vec::new()
            } else {
                vec![words.join(" ")]
            };
            (high, low)
        };
        if high.is_empty() && low.is_empty() {
            return String::new();
        }
        format!("high_level: {}\nlow_level: {}", high.join(", "), low.join(", "))
    }

    fn eliminate(&self, prompt: &str) -> String {
        let items = section(prompt, "items").unwrap_or("");
        items
            .lines()
            .filter_map(|line| {
                let (num, rest) = line.split_once(". ")?;
                let key = item_key(rest);
                let drop = self.config.eliminate.contains(&key.to_lowercase());
                Some(if drop {
                    format!("{num}: ELIMINATE - listed for elimination")
                } else {
                    format!("{num}: KEEP - relevant")
                })
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn answer(&self, prompt: &str) -> String {
        let context = section(prompt, "context").unwrap_or("");
        let query = section(prompt, "query").unwrap_or("");
        match self.config.answer_style {
            AnswerStyle::EchoFirstEntity => first_entity_name(context).unwrap_or_default(),
            AnswerStyle::ContextSentences { max } => {
                let candidates = context_sentences(context);
                let query_words: BTreeSet<String> = normalized_words(query)
                    .into_iter()
                    .filter(|w| !is_stopword(w))
                    .collect();
                let mut scored: Vec<(usize, usize, &str)> = candidates
                    .iter()
                    .enumerate()
                    .map(|(i, s)| {
                        let overlap = normalized_words(s)
                            .iter()
                            .collect::<BTreeSet<_>>()
                            .into_iter()
                            .filter(|w| query_words.contains(*w))
                            .count();
                        (overlap, i, *s)
                    })
                    .collect();
                scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
                scored.truncate(max);
                scored.sort_by_key(|s| s.1);
                let picked: Vec<&str> = scored.into_iter().map(|s| s.2).collect();
                if picked.is_empty() {
                    first_entity_name(context).unwrap_or_default()
                } else {
                    picked.join("\n")
                }
            }
        }
    }

    fn grade(&self, prompt: &str, lenient: bool) -> String {
        let query = section(prompt, "query").unwrap_or("");
        let context = section(prompt, "context").unwrap_or("").to_lowercase();
        let words: BTreeSet<String> = normalized_words(query)
            .into_iter()
            .filter(|w| !is_stopword(w))
            .collect();
        let context_words: BTreeSet<String> = normalized_words(&context).into_iter().collect();
        let hits = words.iter().filter(|w| context_words.contains(*w)).count();
        let grade = if words.is_empty() || hits == 0 {
            "0"
        } else if hits == words.len() || (lenient && 2 * hits >= words.len()) {
            "1"
        } else {
            "0.5"
        };
        format!("{grade}\n{hits} of {} query terms found in context", words.len())
    }
}

/// The key the mock matches against its elimination list: the entity name for
/// `entity: NAME | ...` items, the `A <-> B` label for relation items.
fn item_key(item: &str) -> &str {
    let body = item
        .split_once(": ")
        .map(|(_, b)| b)
        .unwrap_or(item);
    body.split(" | ").next().unwrap_or(body).trim()
}

fn first_entity_name(context: &str) -> Option<String> {
    let mut in_entities = false;
    for line in context.lines() {
        if line.starts_with("-----") {
            in_entities = line.contains("Entities");
            continue;
        }
        if in_entities {
            if let Some(rest) = line.strip_prefix("- ") {
                let name = rest.split(" (").next().unwrap_or(rest);
                return Some(name.trim().to_string());
            }
        }
    }
    None
}

/// Sentences from the chunk section of a rendered context, falling back to relation lines.
fn context_sentences(context: &str) -> Vec<&str> {
    let mut sections: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    let mut current = "";
    for line in context.lines() {
        if line.starts_with("-----") {
            current = line.trim_matches('-');
            continue;
        }
        if line.starts_with('[') || line.trim().is_empty() {
            continue;
        }
        sections.entry(current).or_default().push(line);
    }
    let pick = ["Chunks", "Relations", "Entities"]
        .into_iter()
        .find_map(|s| sections.get(s))
        .cloned()
        .unwrap_or_default();
    pick.into_iter().flat_map(sentences).collect()
}

impl Provider for MockProvider {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        let prompt = request.prompt.as_str();
        if let Some(line) = prompt.lines().find_map(|l| l.strip_prefix("ECHO: ")) {
            return Ok(line.to_string());
        }
        let Some(task) = task_of(prompt) else {
            return Ok(String::new());
        };
        let reply = match task {
            TemplateId::SuggestTypes => self.suggest_types(),
            TemplateId::RefineTypes => self.refine_types(prompt),
            TemplateId::Extract => self.extract(prompt),
            TemplateId::MergeJudge => self.merge(prompt),
            TemplateId::QueryCues => self.cues(prompt),
            TemplateId::Eliminate => self.eliminate(prompt),
            TemplateId::Answer => self.answer(prompt),
            TemplateId::AnswerInsufficient => INSUFFICIENT_CONTEXT_REPLY.to_string(),
            TemplateId::JudgeSupport => {
                let claim = section(prompt, "claim").unwrap_or("").trim();
                let context = section(prompt, "context").unwrap_or("");
                containment_verdict(claim, context)
            }
            TemplateId::JudgeReflects => {
                let evidence = section(prompt, "evidence").unwrap_or("").trim();
                let answer = section(prompt, "answer").unwrap_or("");
                containment_verdict(evidence, answer)
            }
            TemplateId::ExtractClaims => sentences(section(prompt, "text").unwrap_or("")).join("\n"),
            TemplateId::GradeRelevanceA => self.grade(prompt, false),
            TemplateId::GradeRelevanceB => self.grade(prompt, true),
        };
        Ok(reply)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, ProviderError> {
        Ok(texts.iter().map(|t| self.hashed_bag_of_words(t)).collect())
    }

    fn embedding_model(&self) -> &str {
        "mock-hashed-bow"
    }

    fn embedding_dimension(&self) -> usize {
        self.config.embedding_dimension.max(1)
    }

    fn token_spans(&self, text: &str) -> Result<Vec<std::ops::Range<usize>>, ProviderError> {
        Ok(crate::text::whitespace_spans(text))
    }
}

/// Substring support, ignoring the claim's terminal punctuation.
fn containment_verdict(needle: &str, haystack: &str) -> String {
    let needle = needle.trim().trim_end_matches(['.', '!', '?']);
    if !needle.is_empty() && haystack.contains(needle) {
        "SUPPORTED\nappears verbatim".to_string()
    } else {
        "UNSUPPORTED\nnot found verbatim".to_string()
    }
}

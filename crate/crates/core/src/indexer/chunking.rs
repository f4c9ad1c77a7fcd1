use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::IndexError;
use crate::graph::{Chunk, ChunkId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tokenizer {
    /// Whitespace-separated words stand in for model tokens.
    #[default]
    Whitespace,
    /// The provider's own tokenizer.
    Provider,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChunkingConfig {
    pub chunk_tokens: usize,
    pub overlap_tokens: usize,
    pub tokenizer: Tokenizer,
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        Self {
            chunk_tokens: 1200,
            overlap_tokens: 100,
            tokenizer: Tokenizer::Whitespace,
        }
    }
}

impl ChunkingConfig {
    pub fn validate(&self) -> Result<(), IndexError> {
        if self.chunk_tokens == 0 {
            return Err(IndexError::InvalidConfig("chunk_tokens must be positive".into()));
        }
        if self.overlap_tokens >= self.chunk_tokens {
            return Err(IndexError::InvalidConfig(format!(
                "overlap_tokens ({}) must be smaller than chunk_tokens ({})",
                self.overlap_tokens, self.chunk_tokens
            )));
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.chunk_tokens - self.overlap_tokens
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
        }
    }
}

/// Token windows `[start, end)` for a document of `n` tokens. Windows advance by the stride
/// and stop at the first window that reaches the end of the document.
pub fn window_spans(n: usize, config: &ChunkingConfig) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + config.chunk_tokens).min(n);
        out.push((start, end));
        if end == n {
            break;
        }
        start += config.stride();
    }
    out
}

/// Segments one document given its token byte ranges.
pub fn chunk_document(
    doc: &Document,
    tokens: &[Range<usize>],
    config: &ChunkingConfig,
) -> Vec<Chunk> {
    window_spans(tokens.len(), config)
        .into_iter()
        .enumerate()
        .map(|(ordinal, (start, end))| Chunk {
            id: ChunkId::for_position(&doc.id, ordinal),
            doc_id: doc.id.clone(),
            ordinal,
            text: doc.text[tokens[start].start..tokens[end - 1].end].to_string(),
            token_span: (start, end),
        })
        .collect()
}

/// Sliding-window segmentation of every document with whitespace tokens.
pub fn chunk_corpus(documents: &[Document], config: &ChunkingConfig) -> Result<Vec<Chunk>, IndexError> {
    config.validate()?;
    Ok(documents
        .iter()
        .flat_map(|d| chunk_document(d, &crate::text::whitespace_spans(&d.text), config))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc_of(n: usize) -> Document {
        let words: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
        Document::new("d", words.join(" "))
    }

    #[test]
    fn single_window() {
        let chunks = chunk_corpus(&[doc_of(1200)], &ChunkingConfig::default()).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].token_span, (0, 1200));
    }

    #[test]
    fn stride_arithmetic() {
        // stride = 1200 - 100 = 1100: windows [0,1200) and [1100,2300); the second reaches
        // the end of the document so no further window is emitted.
        let chunks = chunk_corpus(&[doc_of(2300)], &ChunkingConfig::default()).unwrap();
        let spans: Vec<_> = chunks.iter().map(|c| c.token_span).collect();
        assert_eq!(spans, [(0, 1200), (1100, 2300)]);
        assert!(chunks[1].text.starts_with("w1100 "));
        assert!(chunks[1].text.ends_with(" w2299"));

        let chunks = chunk_corpus(&[doc_of(2350)], &ChunkingConfig::default()).unwrap();
        let spans: Vec<_> = chunks.iter().map(|c| c.token_span).collect();
        assert_eq!(spans, [(0, 1200), (1100, 2300), (2200, 2350)]);
    }

    #[test]
    fn empty_document() {
        assert!(chunk_corpus(&[Document::new("e", "   ")], &ChunkingConfig::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn invalid_overlap_rejected() {
        let cfg = ChunkingConfig {
            chunk_tokens: 10,
            overlap_tokens: 10,
            ..ChunkingConfig::default()
        };
        assert!(matches!(chunk_corpus(&[doc_of(5)], &cfg), Err(IndexError::InvalidConfig(_))));
    }

    proptest! {
        #[test]
        fn windows_tile_the_document(n in 0usize..400, size in 1usize..60, overlap_frac in 0.0f64..1.0) {
            let overlap = ((size as f64) * overlap_frac) as usize;
            let overlap = overlap.min(size - 1);
            let cfg = ChunkingConfig { chunk_tokens: size, overlap_tokens: overlap, tokenizer: Tokenizer::Whitespace };
            let spans = window_spans(n, &cfg);
            if n == 0 {
                prop_assert!(spans.is_empty());
            } else {
                prop_assert_eq!(spans[0].0, 0);
                prop_assert_eq!(spans.last().unwrap().1, n);
                for w in spans.windows(2) {
                    // consecutive windows overlap by exactly the configured amount
                    prop_assert_eq!(w[0].1 - w[1].0, overlap);
                    prop_assert_eq!(w[0].1 - w[0].0, size);
                }
                let mut covered = vec![false; n];
                for (s, e) in &spans {
                    for c in &mut covered[*s..*e] { *c = true; }
                }
                prop_assert!(covered.into_iter().all(|c| c));
            }
        }
    }
}

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::gateway::{prompts, Gateway, GatewayError, TemplateId};

/// Query cues and their embeddings, aligned index-wise.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryCues {
    pub high_level: Vec<String>,
    pub low_level: Vec<String>,
    #[serde(skip)]
    pub high_embeddings: Vec<Vec<f32>>,
    #[serde(skip)]
    pub low_embeddings: Vec<Vec<f32>>,
    /// The cue generator produced nothing usable and the raw query stands in as the single
    /// low-level cue.
    pub fallback: bool,
}

/// Parses `high_level: a, b` and `low_level: c, d` lines. Returns `None` when neither line is
/// present.
pub fn parse_cues(reply: &str) -> Option<(Vec<String>, Vec<String>)> {
    let mut high = None;
    let mut low = None;
    for line in reply.lines() {
        let line = line.trim().trim_start_matches(['-', '*', ' ']);
        let Some((key, rest)) = line.split_once(':') else {
            continue;
        };
        let key = key.trim().to_lowercase().replace([' ', '-'], "_");
        let list: Vec<String> = rest
            .split(',')
            .map(|c| c.trim().trim_matches('"').to_string())
            .filter(|c| !c.is_empty())
            .collect();
        match key.as_str() {
            "high_level" | "high_level_keywords" => high = Some(list),
            "low_level" | "low_level_keywords" => low = Some(list),
            _ => {}
        }
    }
    if high.is_none() && low.is_none() {
        return None;
    }
    Some((high.unwrap_or_default(), low.unwrap_or_default()))
}

/// Asks for high- and low-level cues and embeds them. Any failure to obtain cues falls back to
/// the raw query as one low-level cue; transport failures still propagate.
pub fn generate_cues(query: &str, gateway: &Gateway) -> Result<QueryCues, GatewayError> {
    if query.trim().is_empty() {
        return Err(GatewayError::Precondition("query must be non-empty".into()));
    }
    let values = BTreeMap::from([("query", query.to_string())]);
    let prompt = prompts::render(TemplateId::QueryCues, &values)?;
    let ask = |p: String| match gateway.run_prompt(p) {
        Err(GatewayError::EmptyReply) => Ok(String::new()),
        other => other,
    };
    let reply = ask(prompt.clone())?;
    let parsed = if reply.trim().is_empty() {
        None
    } else {
        match parse_cues(&reply) {
            Some(p) => Some(p),
            None => parse_cues(&ask(format!("{prompt}{}", prompts::STRICT_SUFFIX))?),
        }
    };
    let mut cues = match parsed {
        Some((high, low)) if !(high.is_empty() && low.is_empty()) => QueryCues {
            high_level: high,
            low_level: low,
            ..QueryCues::default()
        },
        _ => {
            warn!("no usable cues; falling back to the raw query");
            QueryCues {
                low_level: vec![query.trim().to_string()],
                fallback: true,
                ..QueryCues::default()
            }
        }
    };
    let embed = |texts: &[String]| -> Result<Vec<Vec<f32>>, GatewayError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        Ok(gateway.embed(texts)?.into_iter().map(|v| v.values).collect())
    };
    cues.high_embeddings = embed(&cues.high_level)?;
    cues.low_embeddings = embed(&cues.low_level)?;
    Ok(cues)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::MockConfig;

    #[test]
    fn mock_marker_split() {
        let gw = Gateway::mock(MockConfig::default());
        let c = generate_cues("acquisitions, research :: Google, DeepMind", &gw).unwrap();
        assert_eq!(c.high_level, ["acquisitions", "research"]);
        assert_eq!(c.low_level, ["Google", "DeepMind"]);
        assert!(!c.fallback);
        assert_eq!(c.high_embeddings.len(), 2);
        assert_eq!(c.low_embeddings.len(), 2);
        assert_eq!(c.low_embeddings[1], gw.embed_one("DeepMind").unwrap().values);
    }

    #[test]
    fn empty_reply_falls_back_to_query() {
        let gw = Gateway::mock(MockConfig::default());
        // the mock finds no cues in a query made only of stopwords
        let c = generate_cues("what is it", &gw).unwrap();
        assert!(c.fallback);
        assert_eq!(c.low_level, ["what is it"]);
        assert!(c.high_level.is_empty());
        assert_eq!(c.low_embeddings.len(), 1);
    }

    #[test]
    fn parsing() {
        assert_eq!(
            parse_cues("High-level: a, b\nlow_level:"),
            Some((vec!["a".into(), "b".into()], vec![]))
        );
        assert_eq!(parse_cues("nothing useful"), None);
    }
}

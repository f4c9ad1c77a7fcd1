//! Per-chunk entity and relation extraction.
//!
//! The completion is a list of records, one per line, with `<|>`-separated fields:
//!
//! ```text
//! entity<|>NAME<|>TYPE<|>DESCRIPTION
//! relation<|>SOURCE<|>TARGET<|>KEYWORDS<|>DESCRIPTION
//! ```

use std::collections::BTreeMap;

use thiserror::Error;
use tracing::warn;

use crate::gateway::{Gateway, GatewayError, TemplateId};
use crate::graph::{accumulate_description, Chunk, Entity, EntityId, Relation, TypeInventory};

pub const FIELD_SEPARATOR: &str = "<|>";
pub const FALLBACK_TYPE: &str = "other";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Extraction {
    pub entities: Vec<Entity>,
    pub relations: Vec<Relation>,
    /// Lines that were neither a valid entity nor a valid relation record.
    pub malformed_lines: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExtractError {
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("no parseable records in extraction reply for chunk {chunk}")]
    Unparseable { chunk: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Parses an extraction reply for `chunk`. Types outside the inventory become
/// [`FALLBACK_TYPE`]; relations must join two entities extracted from the same chunk.
pub fn parse_extraction(reply: &str, chunk: &Chunk, inventory: &TypeInventory) -> Extraction {
    let mut entities: BTreeMap<EntityId, Entity> = BTreeMap::new();
    let mut order: Vec<EntityId> = Vec::new();
    let mut raw_relations: Vec<(String, String, String, String)> = Vec::new();
    let mut malformed = 0;
    for line in reply.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let fields: Vec<&str> = line.split(FIELD_SEPARATOR).map(str::trim).collect();
        match fields.first().map(|f| f.trim_matches(['(', ')', '"']).to_lowercase()) {
            Some(kind) if kind == "entity" && fields.len() == 4 && !fields[1].is_empty() => {
                let type_label = inventory.resolve(fields[2]).unwrap_or(FALLBACK_TYPE);
                let e = Entity::new(fields[1], type_label, fields[3]).with_chunk(chunk.id.clone());
                match entities.get_mut(&e.id) {
                    Some(existing) => {
                        existing.description =
                            accumulate_description(&existing.description, &e.description);
                        existing.aliases.extend(e.aliases);
                    }
                    None => {
                        order.push(e.id.clone());
                        entities.insert(e.id.clone(), e);
                    }
                }
            }
            Some(kind)
                if kind == "relation"
                    && fields.len() == 5
                    && !fields[1].is_empty()
                    && !fields[2].is_empty() =>
            {
                raw_relations.push((
                    fields[1].to_string(),
                    fields[2].to_string(),
                    fields[3].to_string(),
                    fields[4].to_string(),
                ));
            }
            _ => malformed += 1,
        }
    }
    let mut relations: Vec<Relation> = Vec::new();
    for (src, tgt, keywords, description) in raw_relations {
        let (s, t) = (EntityId::from_name(&src), EntityId::from_name(&tgt));
        if s == t || !entities.contains_key(&s) || !entities.contains_key(&t) {
            malformed += 1;
            continue;
        }
        let keywords: Vec<String> = keywords
            .split(',')
            .map(str::trim)
            .filter(|k| !k.is_empty())
            .map(str::to_string)
            .collect();
        let r = Relation::new(s, t, &description)
            .with_keywords(keywords)
            .with_chunk(chunk.id.clone());
        match relations.iter_mut().find(|x| x.id == r.id) {
            Some(existing) => {
                existing.weight += r.weight;
                existing.description =
                    accumulate_description(&existing.description, &r.description);
                for k in r.keywords {
                    if !existing.keywords.contains(&k) {
                        existing.keywords.push(k);
                    }
                }
            }
            None => relations.push(r),
        }
    }
    Extraction {
        entities: order
            .into_iter()
            .map(|id| entities.remove(&id).expect("ordered id present"))
            .collect(),
        relations,
        malformed_lines: malformed,
    }
}

pub fn extract(
    chunk: &Chunk,
    inventory: &TypeInventory,
    gateway: &Gateway,
) -> Result<Extraction, ExtractError> {
    if inventory.is_empty() {
        return Err(ExtractError::Precondition("type inventory is empty".into()));
    }
    let types = inventory
        .types
        .iter()
        .map(|t| format!("{} | {}", t.label, t.definition))
        .collect::<Vec<_>>()
        .join("\n");
    let values = BTreeMap::from([("types", types), ("text", chunk.text.clone())]);
    let reply = gateway.run_allow_empty(TemplateId::Extract, &values)?;
    let out = parse_extraction(&reply, chunk, inventory);
    if out.entities.is_empty() && out.malformed_lines > 0 {
        warn!(chunk = %chunk.id, "extraction reply had no parseable records");
        return Err(ExtractError::Unparseable {
            chunk: chunk.id.to_string(),
        });
    }
    Ok(out)
}

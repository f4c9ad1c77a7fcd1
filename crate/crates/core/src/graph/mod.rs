//! Knowledge-graph data model.
//!
//! A [`KnowledgeGraph`] owns entities, relations and chunks keyed by stable ids, plus the
//! entity-type inventory. Relations are undirected: each one is stored once and listed in the
//! adjacency of both endpoints. All maps are ordered so iteration (and therefore persistence)
//! is deterministic.

mod metrics;
mod store;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use metrics::{graph_metrics, GraphMetrics};
pub use store::{load, persist, PersistError, SCHEMA_VERSION};

/// Separator between accumulated description fragments.
pub const DESCRIPTION_SEPARATOR: &str = "<SEP>";
/// Maximum accumulated description length in characters; older fragments are dropped first.
pub const DESCRIPTION_CAP: usize = 2000;

macro_rules! id_newtype {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(raw: impl Into<String>) -> Self {
                Self(raw.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_string())
            }
        }
    };
}

id_newtype!(
    /// Entity identifier. Extraction derives it from the normalized surface name.
    EntityId
);
id_newtype!(
    /// Relation identifier, derived from the unordered endpoint pair.
    RelationId
);
id_newtype!(ChunkId);

impl EntityId {
    /// Canonical id for a surface name: lowercased, whitespace collapsed.
    pub fn from_name(name: &str) -> Self {
        let words: Vec<String> = name.split_whitespace().map(str::to_lowercase).collect();
        Self(words.join(" "))
    }
}

impl RelationId {
    pub fn for_pair(a: &EntityId, b: &EntityId) -> Self {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        Self(format!("{lo} <-> {hi}"))
    }
}

impl ChunkId {
    pub fn for_position(doc_id: &str, ordinal: usize) -> Self {
        Self(format!("{doc_id}#{ordinal:04}"))
    }
}

/// A unit-norm text embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(pub Vec<f32>);

impl Embedding {
    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: EntityId,
    pub name: String,
    pub type_label: String,
    pub description: String,
    pub aliases: BTreeSet<String>,
    pub chunk_ids: BTreeSet<ChunkId>,
    #[serde(with = "store::embedding_b64")]
    pub embedding: Option<Embedding>,
}

impl Entity {
    /// A fresh entity whose id is derived from `name` and whose alias set holds `name`.
    pub fn new(name: &str, type_label: &str, description: &str) -> Self {
        let name = name.trim().to_string();
        Self {
            id: EntityId::from_name(&name),
            aliases: BTreeSet::from([name.clone()]),
            name,
            type_label: type_label.to_string(),
            description: description.trim().to_string(),
            chunk_ids: BTreeSet::new(),
            embedding: None,
        }
    }

    pub fn with_chunk(mut self, chunk: ChunkId) -> Self {
        self.chunk_ids.insert(chunk);
        self
    }

    /// Text fed to the embedder: `name: description`.
    pub fn embedding_text(&self) -> String {
        format!("{}: {}", self.name, self.description)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Relation {
    pub id: RelationId,
    pub source_id: EntityId,
    pub target_id: EntityId,
    pub description: String,
    pub keywords: Vec<String>,
    pub weight: f64,
    pub chunk_ids: BTreeSet<ChunkId>,
    #[serde(with = "store::embedding_b64")]
    pub embedding: Option<Embedding>,
}

impl Relation {
    pub fn new(source: EntityId, target: EntityId, description: &str) -> Self {
        Self {
            id: RelationId::for_pair(&source, &target),
            source_id: source,
            target_id: target,
            description: description.trim().to_string(),
            keywords: Vec::new(),
            weight: 1.0,
            chunk_ids: BTreeSet::new(),
            embedding: None,
        }
    }

    pub fn with_keywords<I, S>(mut self, keywords: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.keywords = keywords.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    pub fn with_chunk(mut self, chunk: ChunkId) -> Self {
        self.chunk_ids.insert(chunk);
        self
    }

    /// The endpoint opposite `id`, or `None` if `id` is not an endpoint.
    pub fn other_endpoint(&self, id: &EntityId) -> Option<&EntityId> {
        if &self.source_id == id {
            Some(&self.target_id)
        } else if &self.target_id == id {
            Some(&self.source_id)
        } else {
            None
        }
    }

    /// Text fed to the embedder: `keywords: description`.
    pub fn embedding_text(&self) -> String {
        format!("{}: {}", self.keywords.join(", "), self.description)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: ChunkId,
    pub doc_id: String,
    pub ordinal: usize,
    pub text: String,
    /// Half-open `[start, end)` range in the document's token sequence.
    pub token_span: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeDefinition {
    pub label: String,
    pub definition: String,
    /// Documents whose chunks suggested this label.
    pub suggested_by: BTreeSet<String>,
}

/// Shared entity-type inventory. Labels are unique case-insensitively.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeInventory {
    pub types: Vec<TypeDefinition>,
}

impl TypeInventory {
    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    /// Looks a label up case-insensitively and returns its canonical spelling.
    pub fn resolve(&self, label: &str) -> Option<&str> {
        let wanted = label.trim().to_lowercase();
        self.types
            .iter()
            .find(|t| t.label.to_lowercase() == wanted)
            .map(|t| t.label.as_str())
    }
}

/// Provenance of a persisted graph: which configuration and embedding model built it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphMetadata {
    pub config_fingerprint: String,
    pub embedding_model: Option<String>,
    pub embedding_dimension: Option<usize>,
}

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("entity not found: {0}")]
    EntityNotFound(EntityId),
    #[error("relation endpoint not found: {0}")]
    EndpointNotFound(EntityId),
    #[error("self-loop relation on {0}")]
    SelfLoop(EntityId),
    #[error("entity name must be non-empty")]
    EmptyName,
    #[error("relation weight must be >= 1, got {0}")]
    InvalidWeight(f64),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

/// Entities plus the relations induced among them.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Subgraph {
    pub entities: BTreeSet<EntityId>,
    pub relations: BTreeSet<RelationId>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KnowledgeGraph {
    entities: BTreeMap<EntityId, Entity>,
    relations: BTreeMap<RelationId, Relation>,
    chunks: BTreeMap<ChunkId, Chunk>,
    type_inventory: TypeInventory,
    metadata: GraphMetadata,
    adjacency: BTreeMap<EntityId, BTreeSet<RelationId>>,
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entity(&self, id: &EntityId) -> Option<&Entity> {
        self.entities.get(id)
    }

    pub fn relation(&self, id: &RelationId) -> Option<&Relation> {
        self.relations.get(id)
    }

    pub fn chunk(&self, id: &ChunkId) -> Option<&Chunk> {
        self.chunks.get(id)
    }

    pub fn entities(&self) -> impl ExactSizeIterator<Item = &Entity> {
        self.entities.values()
    }

    pub fn relations(&self) -> impl ExactSizeIterator<Item = &Relation> {
        self.relations.values()
    }

    pub fn chunks(&self) -> impl ExactSizeIterator<Item = &Chunk> {
        self.chunks.values()
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn type_inventory(&self) -> &TypeInventory {
        &self.type_inventory
    }

    pub fn set_type_inventory(&mut self, inventory: TypeInventory) {
        self.type_inventory = inventory;
    }

    pub fn metadata(&self) -> &GraphMetadata {
        &self.metadata
    }

    pub fn set_metadata(&mut self, metadata: GraphMetadata) {
        self.metadata = metadata;
    }

    /// Relation ids incident to `id`, in id order.
    pub fn incident(&self, id: &EntityId) -> impl Iterator<Item = &RelationId> {
        self.adjacency.get(id).into_iter().flatten()
    }

    pub fn insert_chunk(&mut self, chunk: Chunk) {
        self.chunks.insert(chunk.id.clone(), chunk);
    }

    /// Inserts `entity`, or merges it into the existing entity with the same id:
    /// descriptions accumulate, aliases and chunk ids are unioned. Adjacency is unchanged.
    pub fn upsert_entity(&mut self, entity: Entity) -> Result<(), GraphError> {
        if entity.name.trim().is_empty() {
            return Err(GraphError::EmptyName);
        }
        match self.entities.get_mut(&entity.id) {
            Some(existing) => {
                existing.description =
                    accumulate_description(&existing.description, &entity.description);
                existing.aliases.extend(entity.aliases);
                existing.aliases.insert(entity.name);
                existing.chunk_ids.extend(entity.chunk_ids);
                if existing.embedding.is_none() {
                    existing.embedding = entity.embedding;
                }
            }
            None => {
                let mut entity = entity;
                entity.aliases.insert(entity.name.clone());
                self.entities.insert(entity.id.clone(), entity);
            }
        }
        Ok(())
    }

    /// Inserts `relation`, or merges it into the relation on the same unordered endpoint pair:
    /// weights are summed, descriptions, keywords and chunk ids merged.
    pub fn upsert_relation(&mut self, relation: Relation) -> Result<(), GraphError> {
        let mut relation = relation;
        if relation.source_id == relation.target_id {
            return Err(GraphError::SelfLoop(relation.source_id));
        }
        for end in [&relation.source_id, &relation.target_id] {
            if !self.entities.contains_key(end) {
                return Err(GraphError::EndpointNotFound(end.clone()));
            }
        }
        if !(relation.weight >= 1.0) {
            return Err(GraphError::InvalidWeight(relation.weight));
        }
        relation.id = RelationId::for_pair(&relation.source_id, &relation.target_id);
        match self.relations.get_mut(&relation.id) {
            Some(existing) => {
                existing.weight += relation.weight;
                existing.description =
                    accumulate_description(&existing.description, &relation.description);
                for k in relation.keywords {
                    if !existing.keywords.contains(&k) {
                        existing.keywords.push(k);
                    }
                }
                existing.chunk_ids.extend(relation.chunk_ids);
                if existing.embedding.is_none() {
                    existing.embedding = relation.embedding;
                }
            }
            None => {
                for end in [&relation.source_id, &relation.target_id] {
                    self.adjacency
                        .entry(end.clone())
                        .or_default()
                        .insert(relation.id.clone());
                }
                self.relations.insert(relation.id.clone(), relation);
            }
        }
        Ok(())
    }

    pub fn set_entity_embedding(&mut self, id: &EntityId, embedding: Embedding) -> bool {
        match self.entities.get_mut(id) {
            Some(e) => {
                e.embedding = Some(embedding);
                true
            }
            None => false,
        }
    }

    pub fn set_relation_embedding(&mut self, id: &RelationId, embedding: Embedding) -> bool {
        match self.relations.get_mut(id) {
            Some(r) => {
                r.embedding = Some(embedding);
                true
            }
            None => false,
        }
    }

    /// Every entity sharing a relation with `id`, paired with that relation, ordered by
    /// neighbor id.
    pub fn neighbors(&self, id: &EntityId) -> Result<Vec<(&Entity, &Relation)>, GraphError> {
        if !self.entities.contains_key(id) {
            return Err(GraphError::EntityNotFound(id.clone()));
        }
        let mut out: Vec<(&Entity, &Relation)> = self
            .incident(id)
            .filter_map(|rid| self.relations.get(rid))
            .filter_map(|r| {
                r.other_endpoint(id)
                    .and_then(|other| self.entities.get(other))
                    .map(|e| (e, r))
            })
            .collect();
        out.sort_by(|a, b| a.0.id.cmp(&b.0.id).then_with(|| a.1.id.cmp(&b.1.id)));
        Ok(out)
    }

    /// The given entities together with every relation whose endpoints are both in the set.
    pub fn induced_subgraph(&self, ids: &BTreeSet<EntityId>) -> Result<Subgraph, GraphError> {
        let mut relations = BTreeSet::new();
        for id in ids {
            if !self.entities.contains_key(id) {
                return Err(GraphError::EntityNotFound(id.clone()));
            }
            for rid in self.incident(id) {
                let r = &self.relations[rid];
                if r.other_endpoint(id).is_some_and(|o| ids.contains(o)) {
                    relations.insert(rid.clone());
                }
            }
        }
        Ok(Subgraph {
            entities: ids.clone(),
            relations,
        })
    }

    /// Adjacency recomputed from the relation map alone.
    pub fn rebuild_adjacency(&self) -> BTreeMap<EntityId, BTreeSet<RelationId>> {
        let mut adj: BTreeMap<EntityId, BTreeSet<RelationId>> = BTreeMap::new();
        for r in self.relations.values() {
            adj.entry(r.source_id.clone())
                .or_default()
                .insert(r.id.clone());
            adj.entry(r.target_id.clone())
                .or_default()
                .insert(r.id.clone());
        }
        adj
    }

    pub fn adjacency(&self) -> &BTreeMap<EntityId, BTreeSet<RelationId>> {
        &self.adjacency
    }

    /// Checks every structural invariant; used after loading and in tests.
    pub fn validate(&self) -> Result<(), GraphError> {
        let fail = |m: String| Err(GraphError::Invariant(m));
        for (id, e) in &self.entities {
            if id != &e.id {
                return fail(format!("entity key {id} does not match id {}", e.id));
            }
            if e.name.trim().is_empty() {
                return fail(format!("entity {id} has an empty name"));
            }
            if let Some(c) = e.chunk_ids.iter().find(|c| !self.chunks.contains_key(*c)) {
                return fail(format!("entity {id} references missing chunk {c}"));
            }
            if let Some(emb) = &e.embedding {
                let n = crate::vector::norm(emb.as_slice());
                if (n - 1.0).abs() > 1e-6 {
                    return fail(format!("entity {id} embedding norm {n}"));
                }
            }
        }
        let mut pairs = BTreeSet::new();
        for (id, r) in &self.relations {
            if id != &r.id || r.id != RelationId::for_pair(&r.source_id, &r.target_id) {
                return fail(format!("relation key {id} does not match its endpoints"));
            }
            if r.source_id == r.target_id {
                return fail(format!("relation {id} is a self-loop"));
            }
            for end in [&r.source_id, &r.target_id] {
                if !self.entities.contains_key(end) {
                    return fail(format!("relation {id} endpoint {end} missing"));
                }
            }
            if !(r.weight >= 1.0) {
                return fail(format!("relation {id} weight {}", r.weight));
            }
            let pair = if r.source_id <= r.target_id {
                (&r.source_id, &r.target_id)
            } else {
                (&r.target_id, &r.source_id)
            };
            if !pairs.insert(pair) {
                return fail(format!("duplicate endpoint pair for {id}"));
            }
            if let Some(c) = r.chunk_ids.iter().find(|c| !self.chunks.contains_key(*c)) {
                return fail(format!("relation {id} references missing chunk {c}"));
            }
        }
        if self.adjacency != self.rebuild_adjacency() {
            return fail("adjacency inconsistent with relations".to_string());
        }
        Ok(())
    }

    /// Replaces the entity and relation sets wholesale, rebuilding adjacency. Used by merging,
    /// which rewrites ids.
    pub(crate) fn replace_contents(
        &mut self,
        entities: BTreeMap<EntityId, Entity>,
        relations: BTreeMap<RelationId, Relation>,
    ) {
        self.entities = entities;
        self.relations = relations;
        self.adjacency = self.rebuild_adjacency();
    }
}

/// Appends `incoming` to `existing` with [`DESCRIPTION_SEPARATOR`], skipping fragments already
/// present and dropping the oldest fragments past [`DESCRIPTION_CAP`] characters.
pub fn accumulate_description(existing: &str, incoming: &str) -> String {
    let mut parts: Vec<&str> = existing
        .split(DESCRIPTION_SEPARATOR)
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .collect();
    for p in incoming.split(DESCRIPTION_SEPARATOR).map(str::trim) {
        if !p.is_empty() && !parts.contains(&p) {
            parts.push(p);
        }
    }
    let mut joined = parts.join(DESCRIPTION_SEPARATOR);
    while joined.chars().count() > DESCRIPTION_CAP && parts.len() > 1 {
        parts.remove(0);
        joined = parts.join(DESCRIPTION_SEPARATOR);
    }
    let len = joined.chars().count();
    if len > DESCRIPTION_CAP {
        joined = joined.chars().skip(len - DESCRIPTION_CAP).collect();
    }
    joined
}

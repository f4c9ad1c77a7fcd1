//! On-disk layout: `entities.jsonl`, `relations.jsonl`, `chunks.jsonl` and `manifest.json`.
//!
//! Records are written one JSON object per line in id order. Embeddings are base64 strings of
//! little-endian `f32`s, so a round trip is bit-exact.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Chunk, Entity, GraphMetadata, KnowledgeGraph, Relation, TypeInventory};

pub const SCHEMA_VERSION: &str = "dotlink-graph/1";

pub const ENTITIES_FILE: &str = "entities.jsonl";
pub const RELATIONS_FILE: &str = "relations.jsonl";
pub const CHUNKS_FILE: &str = "chunks.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
    #[error("unsupported schema version {found:?} (expected {SCHEMA_VERSION:?})")]
    UnknownSchema { found: String },
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    schema_version: String,
    config_fingerprint: String,
    embedding_model: Option<String>,
    embedding_dimension: Option<usize>,
    entity_count: usize,
    relation_count: usize,
    chunk_count: usize,
    type_inventory: TypeInventory,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PersistError + '_ {
    move |source| PersistError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_jsonl<'a, T: Serialize + 'a>(
    path: &Path,
    records: impl Iterator<Item = &'a T>,
) -> Result<(), PersistError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("graph records always serialize");
        w.write_all(line.as_bytes()).map_err(io_err(path))?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Writes `graph` into directory `dir`, creating it if needed.
pub fn persist(graph: &KnowledgeGraph, dir: &Path) -> Result<(), PersistError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_jsonl(&dir.join(ENTITIES_FILE), graph.entities())?;
    write_jsonl(&dir.join(RELATIONS_FILE), graph.relations())?;
    write_jsonl(&dir.join(CHUNKS_FILE), graph.chunks())?;
    let meta = graph.metadata();
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION.to_string(),
        config_fingerprint: meta.config_fingerprint.clone(),
        embedding_model: meta.embedding_model.clone(),
        embedding_dimension: meta.embedding_dimension,
        entity_count: graph.entity_count(),
        relation_count: graph.relation_count(),
        chunk_count: graph.chunks().len(),
        type_inventory: graph.type_inventory().clone(),
    };
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&path, text).map_err(io_err(&path))
}

fn read_jsonl<T: DeserializeOwned>(dir: &Path, name: &str) -> Result<Vec<(usize, T)>, PersistError> {
    let path = dir.join(name);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line).map_err(|e| PersistError::Parse {
            file: name.to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, rec));
    }
    Ok(out)
}

/// Reads a graph written by [`persist`], rejecting unknown schema versions and records that
/// violate graph invariants.
pub fn load(dir: &Path) -> Result<KnowledgeGraph, PersistError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| PersistError::Parse {
        file: MANIFEST_FILE.to_string(),
        line: e.line(),
        message: e.to_string(),
    })?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(PersistError::UnknownSchema {
            found: manifest.schema_version,
        });
    }
    let mut graph = KnowledgeGraph::new();
    graph.set_type_inventory(manifest.type_inventory);
    graph.set_metadata(GraphMetadata {
        config_fingerprint: manifest.config_fingerprint,
        embedding_model: manifest.embedding_model,
        embedding_dimension: manifest.embedding_dimension,
    });
    for (_, c) in read_jsonl::<Chunk>(dir, CHUNKS_FILE)? {
        graph.insert_chunk(c);
    }
    for (line, e) in read_jsonl::<Entity>(dir, ENTITIES_FILE)? {
        if graph.entity(&e.id).is_some() {
            return Err(PersistError::Parse {
                file: ENTITIES_FILE.to_string(),
                line,
                message: format!("duplicate entity id {}", e.id),
            });
        }
        graph.upsert_entity(e).map_err(|err| PersistError::Parse {
            file: ENTITIES_FILE.to_string(),
            line,
            message: err.to_string(),
        })?;
    }
    for (line, r) in read_jsonl::<Relation>(dir, RELATIONS_FILE)? {
        let stored_id = r.id.clone();
        if graph.relation(&stored_id).is_some() {
            return Err(PersistError::Parse {
                file: RELATIONS_FILE.to_string(),
                line,
                message: format!("duplicate relation {stored_id}"),
            });
        }
        graph.upsert_relation(r).map_err(|err| PersistError::Parse {
            file: RELATIONS_FILE.to_string(),
            line,
            message: err.to_string(),
        })?;
        if graph.relation(&stored_id).is_none() {
            return Err(PersistError::Parse {
                file: RELATIONS_FILE.to_string(),
                line,
                message: format!("relation id {stored_id} does not match its endpoints"),
            });
        }
    }
    graph.validate().map_err(|e| PersistError::Parse {
        file: MANIFEST_FILE.to_string(),
        line: 0,
        message: e.to_string(),
    })?;
    Ok(graph)
}

pub(crate) mod embedding_b64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine as _;
    use serde::{de, Deserialize, Deserializer, Serializer};

    use crate::graph::Embedding;

    pub fn encode(values: &[f32]) -> String {
        let mut bytes = Vec::with_capacity(values.len() * 4);
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        STANDARD.encode(bytes)
    }

    pub fn decode(text: &str) -> Result<Vec<f32>, String> {
        let bytes = STANDARD.decode(text).map_err(|e| e.to_string())?;
        if bytes.len() % 4 != 0 {
            return Err(format!("embedding byte length {} is not a multiple of 4", bytes.len()));
        }
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    pub fn serialize<S: Serializer>(v: &Option<Embedding>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(e) => s.serialize_some(&encode(&e.0)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Embedding>, D::Error> {
        let raw: Option<String> = Option::deserialize(d)?;
        raw.map(|t| decode(&t).map(Embedding).map_err(de::Error::custom))
            .transpose()
    }
}

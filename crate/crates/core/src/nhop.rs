//! Multi-hop directed paths turned into auxiliary edges.
//!
//! A path `s -r1-> m -r2-> t` becomes an extra in-edge of `t` whose relation
//! embedding is `g_r1 + g_r2`, recomputed from the live relation matrix on
//! every forward pass.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EntityId, KnowledgeGraph, RelationId};
use crate::numerics::Matrix;

pub const MAX_SUPPORTED_HOPS: usize = 5;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AuxPath {
    pub source: EntityId,
    pub target: EntityId,
    pub relation_seq: Vec<RelationId>,
}

impl AuxPath {
    pub fn hop_count(&self) -> usize {
        self.relation_seq.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuxConfig {
    pub max_hops: usize,
    /// Maximum number of auxiliary paths kept per terminal node.
    pub per_node_cap: usize,
    /// Keep one path per `(source, target, relation_seq)`.
    pub dedup: bool,
}

impl Default for AuxConfig {
    fn default() -> Self {
        AuxConfig {
            max_hops: 2,
            per_node_cap: 1000,
            dedup: true,
        }
    }
}

impl AuxConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=MAX_SUPPORTED_HOPS).contains(&self.max_hops) {
            return Err(Error::Config(format!(
                "max_hops must be in 2..={MAX_SUPPORTED_HOPS}, got {}",
                self.max_hops
            )));
        }
        if self.per_node_cap == 0 {
            return Err(Error::Config("per_node_cap must be at least 1".into()));
        }
        Ok(())
    }
}

/// All node-simple directed paths of 2..=`max_hops` training edges, ordered by
/// `(target, source, relation_seq)`.
///
/// Paths are built per terminal node by walking in-edges backwards; each node's
/// candidates are sorted and truncated to `per_node_cap`.
pub fn enumerate_nhop_paths(kg: &KnowledgeGraph, cfg: &AuxConfig) -> Result<Vec<AuxPath>> {
    cfg.validate()?;
    let mut in_edges: Vec<Vec<(u32, u32)>> = vec![Vec::new(); kg.n_entities()];
    for t in kg.train() {
        in_edges[t.tail.index()].push((t.head.0, t.relation.0));
    }
    for list in &mut in_edges {
        list.sort_unstable();
    }

    let mut out = Vec::new();
    let mut candidates: Vec<(u32, Vec<u32>)> = Vec::new();
    let mut nodes: Vec<u32> = Vec::with_capacity(cfg.max_hops + 1);
    let mut rels: Vec<u32> = Vec::with_capacity(cfg.max_hops);
    for target in 0..kg.n_entities() as u32 {
        candidates.clear();
        nodes.clear();
        nodes.push(target);
        walk_back(&in_edges, cfg.max_hops, &mut nodes, &mut rels, &mut candidates);
        candidates.sort_unstable();
        if cfg.dedup {
            candidates.dedup();
        }
        candidates.truncate(cfg.per_node_cap);
        out.extend(candidates.drain(..).map(|(source, seq)| AuxPath {
            source: EntityId(source),
            target: EntityId(target),
            relation_seq: seq.into_iter().map(RelationId).collect(),
        }));
    }
    Ok(out)
}

fn walk_back(
    in_edges: &[Vec<(u32, u32)>],
    max_hops: usize,
    nodes: &mut Vec<u32>,
    rels: &mut Vec<u32>,
    out: &mut Vec<(u32, Vec<u32>)>,
) {
    let current = *nodes.last().unwrap();
    for &(prev, rel) in &in_edges[current as usize] {
        if nodes.contains(&prev) {
            continue;
        }
        nodes.push(prev);
        rels.push(rel);
        if rels.len() >= 2 {
            // rels was collected target-first; the path runs source-first
            out.push((prev, rels.iter().rev().copied().collect()));
        }
        if rels.len() < max_hops {
            walk_back(in_edges, max_hops, nodes, rels, out);
        }
        nodes.pop();
        rels.pop();
    }
}

/// Sum of the current relation embeddings along `path`.
pub fn aux_relation_embedding(path: &AuxPath, relations: &Matrix) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; relations.cols()];
    for r in &path.relation_seq {
        if r.index() >= relations.rows() {
            return Err(Error::UnknownRelation(r.index()));
        }
        for (a, g) in acc.iter_mut().zip(relations.row(r.index())) {
            *a += g;
        }
    }
    Ok(acc)
}

/// Writes paths as `source<TAB>target<TAB>r1,r2,...` using numeric ids.
pub fn write_path_cache(paths: &[AuxPath], path: &Path) -> Result<()> {
    let mut s = String::new();
    for p in paths {
        let seq: Vec<String> = p.relation_seq.iter().map(|r| r.0.to_string()).collect();
        let _ = writeln!(s, "{}\t{}\t{}", p.source.0, p.target.0, seq.join(","));
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Reads a path cache, validating ids against `kg`.
pub fn read_path_cache(path: &Path, kg: &KnowledgeGraph) -> Result<Vec<AuxPath>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file = path.display().to_string();
    let bad = |line: usize, msg: String| Error::Parse {
        file: file.clone(),
        line,
        msg,
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(bad(i + 1, format!("expected 3 fields, found {}", fields.len())));
        }
        let entity = |s: &str| -> Result<EntityId> {
            let id: u32 = s.parse().map_err(|_| bad(i + 1, format!("bad id {s:?}")))?;
            if id as usize >= kg.n_entities() {
                return Err(Error::UnknownEntity(id as usize));
            }
            Ok(EntityId(id))
        };
        let relation_seq = fields[2]
            .split(',')
            .map(|s| {
                let id: u32 = s.parse().map_err(|_| bad(i + 1, format!("bad id {s:?}")))?;
                if id as usize >= kg.n_relations() {
                    return Err(Error::UnknownRelation(id as usize));
                }
                Ok(RelationId(id))
            })
            .collect::<Result<Vec<_>>>()?;
        if relation_seq.len() < 2 {
            return Err(bad(i + 1, "auxiliary path needs at least 2 hops".into()));
        }
        out.push(AuxPath {
            source: entity(fields[0])?,
            target: entity(fields[1])?,
            relation_seq,
        });
    }
    Ok(out)
}

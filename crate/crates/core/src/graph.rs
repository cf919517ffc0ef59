//! Triple datasets: vocabularies, splits, the in-neighbourhood index and
//! summary statistics.
//!
//! A dataset directory holds `train.txt`, `valid.txt` and `test.txt`, one
//! `head<TAB>relation<TAB>tail` triple per line. Optional `entity2id.txt` and
//! `relation2id.txt` (`name<TAB>id`) pin the id assignment; otherwise ids follow
//! first occurrence across train, valid, test in file order.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct EntityId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct RelationId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RelationKind {
    Original,
    /// The reserved relation carried by injected `(e, self, e)` edges.
    SelfLoop,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: u32, relation: u32, tail: u32) -> Self {
        Triple {
            head: EntityId(head),
            relation: RelationId(relation),
            tail: EntityId(tail),
        }
    }
}

/// Bidirectional name ↔ dense id map.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    names: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocab {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: u32) -> &str {
        &self.names[id as usize]
    }

    pub fn id(&self, name: &str) -> Option<u32> {
        self.ids.get(name).copied()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    fn intern(&mut self, name: &str) -> Result<u32> {
        if let Some(&id) = self.ids.get(name) {
            return Ok(id);
        }
        let id = u32::try_from(self.names.len())
            .map_err(|_| Error::IdOverflow(format!("more than {} names", u32::MAX)))?;
        self.names.push(name.to_string());
        self.ids.insert(name.to_string(), id);
        Ok(id)
    }

    /// Builds a vocabulary from explicit `(name, id)` pairs; ids must be dense.
    fn from_pairs(pairs: Vec<(String, u64)>, what: &str) -> Result<Self> {
        let n = pairs.len();
        let mut names = vec![None; n];
        for (name, id) in pairs {
            let slot = usize::try_from(id)
                .ok()
                .filter(|&i| i < n && i <= u32::MAX as usize)
                .ok_or_else(|| Error::IdOverflow(format!("{what} id {id} for {n} entries")))?;
            if names[slot].replace(name).is_some() {
                return Err(Error::IdOverflow(format!("{what} id {id} assigned twice")));
            }
        }
        let names: Vec<String> = names.into_iter().map(Option::unwrap).collect();
        let ids = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i as u32))
            .collect::<HashMap<_, _>>();
        if ids.len() != names.len() {
            return Err(Error::IdOverflow(format!("duplicate {what} name")));
        }
        Ok(Vocab { names, ids })
    }
}

/// Options controlling how a graph is assembled.
#[derive(Clone, Copy, Debug)]
pub struct GraphOptions {
    /// Inject `(e, self, e)` into every attention neighbourhood.
    pub self_loops: bool,
}

impl Default for GraphOptions {
    fn default() -> Self {
        GraphOptions { self_loops: true }
    }
}

/// Immutable knowledge graph with train/valid/test splits.
#[derive(Clone, Debug)]
pub struct KnowledgeGraph {
    entities: Vocab,
    relations: Vocab,
    train: Vec<Triple>,
    valid: Vec<Triple>,
    test: Vec<Triple>,
    self_loops: bool,
    in_index: Vec<Vec<(EntityId, RelationId)>>,
    known: HashSet<Triple>,
}

const SPLITS: [&str; 3] = ["train", "valid", "test"];

impl KnowledgeGraph {
    /// Assembles a graph from already-named triples; ids follow first occurrence.
    pub fn from_named(
        train: &[(&str, &str, &str)],
        valid: &[(&str, &str, &str)],
        test: &[(&str, &str, &str)],
        options: GraphOptions,
    ) -> Result<Self> {
        let mut entities = Vocab::default();
        let mut relations = Vocab::default();
        let mut convert = |rows: &[(&str, &str, &str)]| -> Result<Vec<Triple>> {
            rows.iter()
                .map(|(h, r, t)| {
                    let head = EntityId(entities.intern(h)?);
                    let relation = RelationId(relations.intern(r)?);
                    let tail = EntityId(entities.intern(t)?);
                    Ok(Triple {
                        head,
                        relation,
                        tail,
                    })
                })
                .collect()
        };
        let train = convert(train)?;
        let valid = convert(valid)?;
        let test = convert(test)?;
        KnowledgeGraph::from_parts(entities, relations, train, valid, test, options)
    }

    /// Assembles a graph over `n_entities` anonymous entities (`e0`, `e1`, …) and
    /// `n_relations` relations (`r0`, …) from raw id triples.
    pub fn from_ids(
        n_entities: usize,
        n_relations: usize,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
        options: GraphOptions,
    ) -> Result<Self> {
        let mut entities = Vocab::default();
        for i in 0..n_entities {
            entities.intern(&format!("e{i}"))?;
        }
        let mut relations = Vocab::default();
        for i in 0..n_relations {
            relations.intern(&format!("r{i}"))?;
        }
        KnowledgeGraph::from_parts(entities, relations, train, valid, test, options)
    }

    fn from_parts(
        entities: Vocab,
        relations: Vocab,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
        options: GraphOptions,
    ) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::NoTrainingTriples);
        }
        for t in train.iter().chain(&valid).chain(&test) {
            for e in [t.head, t.tail] {
                if e.index() >= entities.len() {
                    return Err(Error::UnknownEntity(e.index()));
                }
            }
            if t.relation.index() >= relations.len() {
                return Err(Error::UnknownRelation(t.relation.index()));
            }
        }
        let mut in_index = vec![Vec::new(); entities.len()];
        for t in &train {
            in_index[t.tail.index()].push((t.head, t.relation));
        }
        if options.self_loops {
            let self_rel = RelationId(relations.len() as u32);
            for (e, list) in in_index.iter_mut().enumerate() {
                list.push((EntityId(e as u32), self_rel));
            }
        }
        for list in &mut in_index {
            list.sort_unstable();
        }
        let train_set: HashSet<Triple> = train.iter().copied().collect();
        let valid_set: HashSet<Triple> = valid.iter().copied().collect();
        for (split, set_name, other) in [
            (&valid, "valid", &train_set),
            (&test, "test", &train_set),
            (&test, "test", &valid_set),
        ] {
            if let Some(t) = split.iter().find(|t| other.contains(t)) {
                return Err(Error::Parse {
                    file: format!("{set_name}.txt"),
                    line: 0,
                    msg: format!(
                        "triple ({}, {}, {}) appears in more than one split",
                        entities.name(t.head.0),
                        relations.name(t.relation.0),
                        entities.name(t.tail.0)
                    ),
                });
            }
        }
        let known = train.iter().chain(&valid).chain(&test).copied().collect();
        Ok(KnowledgeGraph {
            entities,
            relations,
            train,
            valid,
            test,
            self_loops: options.self_loops,
            in_index,
            known,
        })
    }

    pub fn entities(&self) -> &Vocab {
        &self.entities
    }

    pub fn relations(&self) -> &Vocab {
        &self.relations
    }

    pub fn n_entities(&self) -> usize {
        self.entities.len()
    }

    /// Number of dataset relations (excluding the reserved self-loop relation).
    pub fn n_relations(&self) -> usize {
        self.relations.len()
    }

    /// Rows needed in a relation embedding matrix: dataset relations plus `self`.
    pub fn n_relation_rows(&self) -> usize {
        self.relations.len() + usize::from(self.self_loops)
    }

    pub fn has_self_loops(&self) -> bool {
        self.self_loops
    }

    pub fn self_relation(&self) -> Option<RelationId> {
        self.self_loops
            .then(|| RelationId(self.relations.len() as u32))
    }

    pub fn relation_kind(&self, r: RelationId) -> Result<RelationKind> {
        match r.index() {
            i if i < self.relations.len() => Ok(RelationKind::Original),
            i if self.self_loops && i == self.relations.len() => Ok(RelationKind::SelfLoop),
            i => Err(Error::UnknownRelation(i)),
        }
    }

    pub fn relation_name(&self, r: RelationId) -> &str {
        if r.index() < self.relations.len() {
            self.relations.name(r.0)
        } else {
            "self"
        }
    }

    pub fn train(&self) -> &[Triple] {
        &self.train
    }

    pub fn valid(&self) -> &[Triple] {
        &self.valid
    }

    pub fn test(&self) -> &[Triple] {
        &self.test
    }

    /// True if the triple occurs in any split.
    pub fn is_known(&self, t: &Triple) -> bool {
        self.known.contains(t)
    }

    /// In-flowing `(neighbour, relation)` pairs of `e`, sorted; includes the
    /// self-loop when enabled.
    pub fn in_neighborhood(&self, e: EntityId) -> Result<&[(EntityId, RelationId)]> {
        self.in_index
            .get(e.index())
            .map(Vec::as_slice)
            .ok_or(Error::UnknownEntity(e.index()))
    }

    /// Writes the graph back to `dir`, including id maps.
    pub fn write_dataset(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, split) in SPLITS.iter().zip([&self.train, &self.valid, &self.test]) {
            let mut s = String::new();
            for t in split.iter() {
                s.push_str(self.entities.name(t.head.0));
                s.push('\t');
                s.push_str(self.relations.name(t.relation.0));
                s.push('\t');
                s.push_str(self.entities.name(t.tail.0));
                s.push('\n');
            }
            let path = dir.join(format!("{name}.txt"));
            fs::write(&path, s).map_err(|e| Error::io(&path, e))?;
        }
        for (file, vocab) in [
            ("entity2id.txt", &self.entities),
            ("relation2id.txt", &self.relations),
        ] {
            let s: String = vocab
                .names()
                .iter()
                .enumerate()
                .map(|(i, n)| format!("{n}\t{i}\n"))
                .collect();
            let path = dir.join(file);
            fs::write(&path, s).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

fn read_lines(path: &Path) -> Result<String> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_id_map(path: &Path, what: &str) -> Result<Option<Vocab>> {
    if !path.is_file() {
        return Ok(None);
    }
    let text = read_lines(path)?;
    let file = path.display().to_string();
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(Error::Parse {
                file,
                line: lineno + 1,
                msg: format!("expected 2 tab-separated fields, found {}", fields.len()),
            });
        }
        let id: u64 = fields[1].trim().parse().map_err(|_| Error::Parse {
            file: file.clone(),
            line: lineno + 1,
            msg: format!("bad id {:?}", fields[1]),
        })?;
        pairs.push((fields[0].to_string(), id));
    }
    Vocab::from_pairs(pairs, what).map(Some)
}

/// Loads `train.txt`, `valid.txt` and `test.txt` from `dir`.
pub fn load_dataset(dir: &Path) -> Result<KnowledgeGraph> {
    load_dataset_with(dir, GraphOptions::default())
}

pub fn load_dataset_with(dir: &Path, options: GraphOptions) -> Result<KnowledgeGraph> {
    let fixed_entities = parse_id_map(&dir.join("entity2id.txt"), "entity")?;
    let fixed_relations = parse_id_map(&dir.join("relation2id.txt"), "relation")?;
    let entities_fixed = fixed_entities.is_some();
    let relations_fixed = fixed_relations.is_some();
    let mut entities = fixed_entities.unwrap_or_default();
    let mut relations = fixed_relations.unwrap_or_default();

    let mut splits: Vec<Vec<Triple>> = Vec::with_capacity(3);
    for name in SPLITS {
        let path = dir.join(format!("{name}.txt"));
        let text = read_lines(&path)?;
        let file = path.display().to_string();
        let mut triples = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::Parse {
                    file,
                    line: lineno + 1,
                    msg: format!("expected 3 tab-separated fields, found {}", fields.len()),
                });
            }
            let lookup = |vocab: &mut Vocab, fixed: bool, name: &str, what: &str| {
                if fixed {
                    vocab.id(name).ok_or_else(|| Error::Parse {
                        file: file.clone(),
                        line: lineno + 1,
                        msg: format!("{what} {name:?} missing from id map"),
                    })
                } else {
                    vocab.intern(name)
                }
            };
            let head = lookup(&mut entities, entities_fixed, fields[0], "entity")?;
            let relation = lookup(&mut relations, relations_fixed, fields[1], "relation")?;
            let tail = lookup(&mut entities, entities_fixed, fields[2], "entity")?;
            triples.push(Triple::new(head, relation, tail));
        }
        splits.push(triples);
    }
    let test = splits.pop().unwrap();
    let valid = splits.pop().unwrap();
    let train = splits.pop().unwrap();
    KnowledgeGraph::from_parts(entities, relations, train, valid, test, options)
}

/// Dataset summary in the shape of the usual statistics table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GraphStats {
    pub n_entities: usize,
    pub n_relations: usize,
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    pub n_total: usize,
    pub mean_in_degree: f64,
    pub median_in_degree: f64,
}

/// In-degree of every entity over training edges (self-loops excluded).
pub fn in_degrees(kg: &KnowledgeGraph) -> Vec<usize> {
    let mut deg = vec![0usize; kg.n_entities()];
    for t in kg.train() {
        deg[t.tail.index()] += 1;
    }
    deg
}

/// Median with the mean-of-middle-pair rule for even lengths.
pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn compute_stats(kg: &KnowledgeGraph) -> GraphStats {
    let mut deg: Vec<f64> = in_degrees(kg).into_iter().map(|d| d as f64).collect();
    let (n_train, n_valid, n_test) = (kg.train().len(), kg.valid().len(), kg.test().len());
    GraphStats {
        n_entities: kg.n_entities(),
        n_relations: kg.n_relations(),
        n_train,
        n_valid,
        n_test,
        n_total: n_train + n_valid + n_test,
        mean_in_degree: n_train as f64 / kg.n_entities() as f64,
        median_in_degree: median(&mut deg),
    }
}

impl fmt::Display for GraphStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}",
            "entities", "relations", "train", "valid", "test", "total", "mean-in", "median-in"
        )?;
        write!(
            f,
            "{:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10.2} {:>10.2}",
            self.n_entities,
            self.n_relations,
            self.n_train,
            self.n_valid,
            self.n_test,
            self.n_total,
            self.mean_in_degree,
            self.median_in_degree
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> KnowledgeGraph {
        KnowledgeGraph::from_named(
            &[("a", "r", "b")],
            &[],
            &[],
            GraphOptions { self_loops: false },
        )
        .unwrap()
    }

    #[test]
    fn neighborhoods() {
        let kg = tiny();
        let (a, b) = (EntityId(0), EntityId(1));
        assert_eq!(kg.in_neighborhood(b).unwrap(), &[(a, RelationId(0))]);
        assert!(kg.in_neighborhood(a).unwrap().is_empty());
        assert!(matches!(
            kg.in_neighborhood(EntityId(9)),
            Err(Error::UnknownEntity(9))
        ));
    }

    #[test]
    fn self_loop_is_appended() {
        let kg =
            KnowledgeGraph::from_named(&[("a", "r", "b")], &[], &[], GraphOptions::default())
                .unwrap();
        assert_eq!(kg.n_relation_rows(), 2);
        let a = EntityId(0);
        assert_eq!(kg.in_neighborhood(a).unwrap(), &[(a, RelationId(1))]);
        assert_eq!(kg.relation_kind(RelationId(1)).unwrap(), RelationKind::SelfLoop);
        assert_eq!(kg.relation_name(RelationId(1)), "self");
    }

    #[test]
    fn single_triple_stats() {
        let s = compute_stats(&tiny());
        assert_eq!(s.mean_in_degree, 0.5);
        assert_eq!(s.median_in_degree, 0.5);
        assert_eq!(s.n_total, 1);
    }

    #[test]
    fn median_rules() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [82.0, 83.0, 1.0, 100.0]), 82.5);
    }

    #[test]
    fn overlapping_splits_rejected() {
        let r = KnowledgeGraph::from_named(
            &[("a", "r", "b")],
            &[("a", "r", "b")],
            &[],
            GraphOptions::default(),
        );
        assert!(r.is_err());
    }

    #[test]
    fn duplicate_fixed_id_rejected() {
        let pairs = vec![("a".to_string(), 0), ("b".to_string(), 0)];
        assert!(Vocab::from_pairs(pairs, "entity").is_err());
        let pairs = vec![("a".to_string(), 5)];
        assert!(matches!(
            Vocab::from_pairs(pairs, "entity"),
            Err(Error::IdOverflow(_))
        ));
    }
}

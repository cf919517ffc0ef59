//! Graph indexing and path enumeration checked against naive scans of the
//! raw Kinship files.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use relgat::graph::{load_dataset, load_dataset_with, EntityId, GraphOptions, RelationId};
use relgat::nhop::{enumerate_nhop_paths, read_path_cache, write_path_cache, AuxConfig};

const KINSHIP: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/kinship");

fn raw_rows(split: &str) -> Vec<(String, String, String)> {
    let text = fs::read_to_string(Path::new(KINSHIP).join(format!("{split}.txt"))).unwrap();
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            (f[0].to_string(), f[1].to_string(), f[2].to_string())
        })
        .collect()
}

#[test]
fn busiest_in_neighbourhood_matches_file_scan() {
    let kg = load_dataset_with(Path::new(KINSHIP), GraphOptions { self_loops: false }).unwrap();
    let rows = raw_rows("train");
    let (busiest, count) = (0..kg.n_entities())
        .map(|e| {
            let name = kg.entities().name(e as u32);
            (e, rows.iter().filter(|r| r.2 == name).count())
        })
        .max_by_key(|p| p.1)
        .unwrap();
    let nbhd = kg.in_neighborhood(EntityId(busiest as u32)).unwrap();
    assert_eq!(nbhd.len(), count);
    let mut expected: Vec<(String, String)> = rows
        .iter()
        .filter(|r| r.2 == kg.entities().name(busiest as u32))
        .map(|r| (r.0.clone(), r.1.clone()))
        .collect();
    let mut got: Vec<(String, String)> = nbhd
        .iter()
        .map(|(e, r)| (kg.entities().name(e.0).to_string(), kg.relation_name(*r).to_string()))
        .collect();
    expected.sort();
    got.sort();
    assert_eq!(got, expected);
}

#[test]
fn self_loop_adds_one_neighbour_each() {
    let plain = load_dataset_with(Path::new(KINSHIP), GraphOptions { self_loops: false }).unwrap();
    let looped = load_dataset(Path::new(KINSHIP)).unwrap();
    let self_rel = looped.self_relation().unwrap();
    assert_eq!(self_rel, RelationId(looped.n_relations() as u32));
    for e in 0..plain.n_entities() as u32 {
        let a = plain.in_neighborhood(EntityId(e)).unwrap();
        let b = looped.in_neighborhood(EntityId(e)).unwrap();
        assert_eq!(b.len(), a.len() + 1);
        assert!(b.contains(&(EntityId(e), self_rel)));
    }
}

#[test]
fn two_hop_paths_equal_nested_join() {
    let kg = load_dataset(Path::new(KINSHIP)).unwrap();
    let cfg = AuxConfig {
        max_hops: 2,
        per_node_cap: usize::MAX,
        dedup: true,
    };
    let paths = enumerate_nhop_paths(&kg, &cfg).unwrap();
    let mut oracle = BTreeSet::new();
    for a in kg.train() {
        for b in kg.train() {
            let distinct = a.head != a.tail && a.head != b.tail && a.tail != b.tail;
            if a.tail == b.head && distinct {
                oracle.insert((a.head.0, b.tail.0, a.relation.0, b.relation.0));
            }
        }
    }
    let got: BTreeSet<_> = paths
        .iter()
        .map(|p| (p.source.0, p.target.0, p.relation_seq[0].0, p.relation_seq[1].0))
        .collect();
    assert_eq!(paths.len(), oracle.len());
    assert_eq!(got, oracle);
}

#[test]
fn dataset_and_path_cache_round_trip() {
    let kg = load_dataset(Path::new(KINSHIP)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    kg.write_dataset(dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.entities(), kg.entities());
    assert_eq!(back.relations(), kg.relations());
    assert_eq!(back.train(), kg.train());
    assert_eq!(back.valid(), kg.valid());
    assert_eq!(back.test(), kg.test());

    let paths = enumerate_nhop_paths(&kg, &AuxConfig::default()).unwrap();
    let file = dir.path().join("aux.tsv");
    write_path_cache(&paths, &file).unwrap();
    assert_eq!(read_path_cache(&file, &kg).unwrap(), paths);
}

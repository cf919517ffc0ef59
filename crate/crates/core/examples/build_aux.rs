//! Enumerate n-hop auxiliary paths and cache them as TSV.
//!
//! ```text
//! cargo run --release --example build_aux -- data/kinship /tmp/aux.tsv 2
//! ```

use std::collections::BTreeMap;
use std::path::PathBuf;

use relgat::graph::load_dataset;
use relgat::nhop::{enumerate_nhop_paths, write_path_cache, AuxConfig};

fn main() -> relgat::Result<()> {
    let mut args = std::env::args().skip(1);
    let data = PathBuf::from(args.next().unwrap_or_else(|| "data/kinship".into()));
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/aux_paths.tsv".into()));
    let max_hops = args.next().map(|s| s.parse().expect("max hops")).unwrap_or(2);
    let kg = load_dataset(&data)?;
    let cfg = AuxConfig {
        max_hops,
        ..AuxConfig::default()
    };
    let paths = enumerate_nhop_paths(&kg, &cfg)?;
    let mut by_hops = BTreeMap::new();
    for p in &paths {
        *by_hops.entry(p.hop_count()).or_insert(0usize) += 1;
    }
    for (hops, n) in by_hops {
        println!("{hops}-hop paths: {n}");
    }
    if let Some(p) = paths.first() {
        let rels: Vec<&str> = p.relation_seq.iter().map(|r| kg.relation_name(*r)).collect();
        println!(
            "first: {} -[{}]-> {}",
            kg.entities().name(p.source.0),
            rels.join(" / "),
            kg.entities().name(p.target.0)
        );
    }
    write_path_cache(&paths, &out)?;
    println!("wrote {}", out.display());
    Ok(())
}

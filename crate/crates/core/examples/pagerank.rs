//! PageRank over the training graph; the mean is always `1 / entities`.
//!
//! ```text
//! cargo run --release --example pagerank -- data/kinship data/umls
//! ```

use std::path::Path;

use relgat::analysis::{pagerank, AnalysisConfig};
use relgat::graph::load_dataset;

fn main() -> relgat::Result<()> {
    let mut dirs: Vec<String> = std::env::args().skip(1).collect();
    if dirs.is_empty() {
        dirs = vec!["data/kinship".into(), "data/umls".into()];
    }
    for dir in dirs {
        let kg = load_dataset(Path::new(&dir))?;
        let pr = pagerank(&kg, &AnalysisConfig::default())?;
        let mean = pr.iter().sum::<f64>() / pr.len() as f64;
        println!("{dir}: mean {:.0}e-5", mean * 1e5);
        let mut order: Vec<usize> = (0..pr.len()).collect();
        order.sort_by(|a, b| pr[*b].total_cmp(&pr[*a]));
        for &i in order.iter().take(3) {
            println!("  {:<20} {:.5}", kg.entities().name(i as u32), pr[i]);
        }
    }
    Ok(())
}

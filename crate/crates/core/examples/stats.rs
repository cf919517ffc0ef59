//! Dataset statistics for one or more split directories.
//!
//! ```text
//! cargo run --example stats -- data/kinship data/umls
//! ```

use std::path::Path;

use relgat::graph::{compute_stats, in_degrees, load_dataset};

fn main() -> relgat::Result<()> {
    let mut dirs: Vec<String> = std::env::args().skip(1).collect();
    if dirs.is_empty() {
        dirs = vec!["data/kinship".into(), "data/umls".into()];
    }
    for dir in dirs {
        let kg = load_dataset(Path::new(&dir))?;
        println!("{dir}");
        println!("{}", compute_stats(&kg));
        let deg = in_degrees(&kg);
        let (argmax, max) = deg.iter().enumerate().max_by_key(|p| p.1).unwrap();
        println!("busiest entity: {} ({max} incoming edges)\n", kg.entities().name(argmax as u32));
    }
    Ok(())
}

//! Filtered and raw ranking of a decoder checkpoint, with the worst test queries.
//!
//! ```text
//! cargo run --release --example evaluate -- data/kinship /tmp/dec
//! ```

use std::path::PathBuf;

use relgat::eval::evaluate_with;
use relgat::graph::load_dataset;
use relgat::training::read_decoder_checkpoint;

fn main() -> relgat::Result<()> {
    let mut args = std::env::args().skip(1);
    let data = PathBuf::from(args.next().unwrap_or_else(|| "data/kinship".into()));
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "target/decoder".into()));
    let kg = load_dataset(&data)?;
    let (model, _) = read_decoder_checkpoint(&dir)?;
    let filtered = evaluate_with(kg.test(), &model, &kg, true)?;
    let raw = evaluate_with(kg.test(), &model, &kg, false)?;
    println!("filtered\n{}\n\nraw\n{}\n", filtered.metrics, raw.metrics);
    let mut worst = filtered.ranks.clone();
    worst.sort_by_key(|q| std::cmp::Reverse(q.rank));
    for q in worst.iter().take(5) {
        println!(
            "rank {:>4}  {} {} {} ({} side)",
            q.rank,
            kg.entities().name(q.triple.head.0),
            kg.relation_name(q.triple.relation),
            kg.entities().name(q.triple.tail.0),
            q.side
        );
    }
    Ok(())
}

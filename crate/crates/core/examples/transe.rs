//! TransE input embeddings and their translational ranking quality.
//!
//! ```text
//! cargo run --release --example transe -- data/kinship [epochs]
//! ```

use std::path::PathBuf;

use relgat::eval::{evaluate, TranslationalScorer};
use relgat::graph::load_dataset;
use relgat::training::{train_transe, TrainConfig};

fn main() -> relgat::Result<()> {
    let mut args = std::env::args().skip(1);
    let data = PathBuf::from(args.next().unwrap_or_else(|| "data/kinship".into()));
    let kg = load_dataset(&data)?;
    let mut cfg = TrainConfig::transe();
    if let Some(e) = args.next() {
        cfg.epochs = e.parse().expect("epochs");
    }
    let (state, log) = train_transe(&kg, 50, &cfg)?;
    println!(
        "loss {:.2} -> {:.2} over {} epochs",
        log.losses.first().unwrap_or(&f64::NAN),
        log.losses.last().unwrap_or(&f64::NAN),
        log.losses.len()
    );
    let scorer = TranslationalScorer {
        entities: &state.entities,
        relations: &state.relations,
        use_relations: true,
    };
    println!("{}", evaluate(kg.test(), &scorer, &kg)?);
    Ok(())
}

//! Track one entity's attention weights while the encoder trains.
//!
//! ```text
//! cargo run --release --example attention_export -- data/kinship person84 /tmp/att.csv
//! ```

use std::path::PathBuf;

use relgat::analysis::{attention_snapshots, export_attention};
use relgat::config::PipelineConfig;
use relgat::encoder::Neighborhoods;
use relgat::graph::{load_dataset, EntityId};
use relgat::nhop::enumerate_nhop_paths;
use relgat::training::train_transe;

fn main() -> relgat::Result<()> {
    let mut args = std::env::args().skip(1);
    let data = PathBuf::from(args.next().unwrap_or_else(|| "data/kinship".into()));
    let kg = load_dataset(&data)?;
    let entity = args.next().unwrap_or_else(|| kg.entities().name(0).to_string());
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/attention.csv".into()));
    let id = EntityId(kg.entities().id(&entity).expect("entity not in dataset"));

    let mut cfg = PipelineConfig::default();
    cfg.apply_override("transe.epochs=50")?;
    let (init, _) = train_transe(&kg, cfg.transe_dim, &cfg.transe)?;
    let nb = Neighborhoods::build(&kg, &enumerate_nhop_paths(&kg, &cfg.aux)?)?;
    let snaps = attention_snapshots(&kg, &nb, init, &cfg.encoder, &cfg.encoder_train, id, &[0, 10, 20])?;
    export_attention(&snaps, id, &kg, &out)?;

    // strongest neighbour in the last layer, first head, at each snapshot
    for s in &snaps {
        let last = s.traces.iter().map(|t| t.layer).max().unwrap_or(0);
        let trace = s.traces.iter().find(|t| t.layer == last && t.head == 0).unwrap();
        let top = trace.entries.iter().max_by(|a, b| a.alpha.total_cmp(&b.alpha)).unwrap();
        let rels: Vec<&str> = top.relations.iter().map(|r| kg.relation_name(*r)).collect();
        println!(
            "epoch {:>3}: alpha {:.4} from {} via {}",
            s.epoch,
            top.alpha,
            kg.entities().name(top.source.0),
            rels.join("+")
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

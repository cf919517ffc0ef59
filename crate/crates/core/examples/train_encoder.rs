//! Train the attention encoder from TransE inputs and compare the
//! translational ranking before and after.
//!
//! ```text
//! cargo run --release --example train_encoder -- data/kinship /tmp/enc [key=value ...]
//! ```

use std::path::PathBuf;

use relgat::config::PipelineConfig;
use relgat::encoder::Neighborhoods;
use relgat::eval::{evaluate, TranslationalScorer};
use relgat::graph::load_dataset;
use relgat::nhop::enumerate_nhop_paths;
use relgat::training::{encoder_outputs, train_encoder, train_transe, write_encoder_checkpoint};

fn main() -> relgat::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let data = PathBuf::from(args.next().unwrap_or_else(|| "data/kinship".into()));
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/encoder".into()));
    let mut cfg = PipelineConfig::default();
    cfg.apply_override("encoder.epochs=100")?;
    for a in args {
        cfg.apply_override(&a)?;
    }
    let kg = load_dataset(&data)?;
    let (init, _) = train_transe(&kg, cfg.transe_dim, &cfg.transe)?;
    let before = TranslationalScorer {
        entities: &init.entities,
        relations: &init.relations,
        use_relations: true,
    };
    println!("TransE test MRR {:.4}", evaluate(kg.test(), &before, &kg)?.mrr);

    let aux = enumerate_nhop_paths(&kg, &cfg.aux)?;
    let nb = Neighborhoods::build(&kg, &aux)?;
    let (enc, log) = train_encoder(&kg, &nb, init, &cfg.encoder, &cfg.encoder_train)?;
    println!("encoder loss {:.2} after {} epochs", log.losses.last().unwrap_or(&f64::NAN), log.losses.len());
    let (h, g) = encoder_outputs(&enc, &nb)?;
    let after = TranslationalScorer {
        entities: &h,
        relations: &g,
        use_relations: true,
    };
    println!("encoder test MRR {:.4}", evaluate(kg.test(), &after, &kg)?.mrr);
    write_encoder_checkpoint(&out, &enc, &nb)?;
    println!("checkpoint in {}", out.display());
    Ok(())
}

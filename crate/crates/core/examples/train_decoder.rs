//! Train ConvKB on the outputs of an encoder checkpoint.
//!
//! ```text
//! cargo run --release --example train_encoder -- data/kinship /tmp/enc
//! cargo run --release --example train_decoder -- data/kinship /tmp/enc /tmp/dec [key=value ...]
//! ```

use std::path::PathBuf;

use relgat::config::PipelineConfig;
use relgat::eval::evaluate;
use relgat::graph::load_dataset;
use relgat::training::{read_encoder_checkpoint, train_decoder, write_decoder_checkpoint};

fn main() -> relgat::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let data = PathBuf::from(args.next().unwrap_or_else(|| "data/kinship".into()));
    let enc_dir = PathBuf::from(args.next().unwrap_or_else(|| "target/encoder".into()));
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/decoder".into()));
    let mut cfg = PipelineConfig::default();
    cfg.apply_override("decoder.epochs=20")?;
    for a in args {
        cfg.apply_override(&a)?;
    }
    let kg = load_dataset(&data)?;
    let ck = read_encoder_checkpoint(&enc_dir)?;
    let (model, log) = train_decoder(&kg, &ck.h_out, &ck.g_out, &cfg.decoder)?;
    println!("best epoch {:?}, early stop {}", log.best_epoch, log.stopped_early);
    println!("{}", evaluate(kg.test(), &model, &kg)?);
    write_decoder_checkpoint(&out, &model, &cfg.decoder)?;
    println!("checkpoint in {}", out.display());
    Ok(())
}

//! Full two-stage run on a dataset directory.
//!
//! ```text
//! cargo run --release --example pipeline -- data/kinship /tmp/kinship-run [key=value ...]
//! ```

use std::path::PathBuf;
use std::time::Instant;

use relgat::config::PipelineConfig;
use relgat::pipeline::{run_pipeline, PipelineOptions};

fn main() -> relgat::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let data = PathBuf::from(args.next().unwrap_or_else(|| "data/kinship".into()));
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/kinship-run".into()));
    let mut cfg = PipelineConfig::default();
    for a in args {
        cfg.apply_override(&a)?;
    }
    let t = Instant::now();
    let report = run_pipeline(&data, &cfg, &out, &PipelineOptions::default())?;
    println!("{}", report.metrics);
    println!("{}", report.metrics.to_json_line());
    println!("elapsed {:.1}s", t.elapsed().as_secs_f64());
    Ok(())
}

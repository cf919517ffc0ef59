//! Encoder test-MR curves for the full model and its ablations.
//!
//! ```text
//! cargo run --release --example ablation -- data/kinship [key=value ...]
//! ```

use std::path::PathBuf;

use relgat::analysis::{run_ablation_from, AblationSpec};
use relgat::config::PipelineConfig;
use relgat::graph::load_dataset;
use relgat::training::train_transe;

fn main() -> relgat::Result<()> {
    let mut args = std::env::args().skip(1);
    let data = PathBuf::from(args.next().unwrap_or_else(|| "data/kinship".into()));
    let mut cfg = PipelineConfig::default();
    cfg.apply_override("encoder.epochs=200")?;
    cfg.apply_override("ablation.curve_every=50")?;
    for a in args {
        cfg.apply_override(&a)?;
    }
    let kg = load_dataset(&data)?;
    let ab = cfg.ablation();
    // one shared TransE start so the modes differ only in the encoder
    let (init, _) = train_transe(&kg, ab.transe_dim, &ab.transe)?;
    for spec in [AblationSpec::Full, AblationSpec::MinusPg, AblationSpec::MinusRelations] {
        let curve = run_ablation_from(&kg, spec, &ab, init.clone())?;
        let pts: Vec<String> = curve.points.iter().map(|(e, mr)| format!("{e}:{mr:.1}")).collect();
        println!("{spec:<16} {}", pts.join("  "));
    }
    Ok(())
}

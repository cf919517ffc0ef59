//! Command-line front end. Each subcommand is a thin wrapper over the library.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use relgat::analysis::{attention_snapshots, export_attention, pagerank, run_ablation, AblationSpec};
use relgat::config::{resolve_seed, PipelineConfig, SEED_ENV};
use relgat::encoder::Neighborhoods;
use relgat::graph::{compute_stats, EntityId};
use relgat::pipeline::{self as pl, PipelineOptions, RunManifest};
use relgat::training::{read_decoder_checkpoint, read_encoder_checkpoint};
use relgat::{Error, Result};

#[derive(Parser)]
#[command(name = "relgat", version, about = "Knowledge-graph link prediction with a relation-aware attention encoder and a ConvKB decoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Dataset directory with train.txt, valid.txt, test.txt
    #[arg(long)]
    data: PathBuf,
    /// Config file of `key = value` lines
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Seed for every stage (falls back to KG_SEED)
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; nothing is written outside it
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Dataset statistics
    Stats {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Enumerate n-hop auxiliary paths into out/aux_paths.tsv
    BuildAux(Common),
    /// Train TransE input embeddings into out/transe
    InitTranse(Common),
    /// Train the attention encoder into out/encoder
    TrainEncoder {
        #[command(flatten)]
        common: Common,
        /// TransE checkpoint to start from (default out/transe, trained if absent)
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Train the ConvKB decoder on encoder outputs into out/decoder
    TrainDecoder {
        #[command(flatten)]
        common: Common,
        /// Encoder checkpoint (default out/encoder)
        #[arg(long)]
        encoder: Option<PathBuf>,
        /// Keep the embeddings fixed and train only the decoder
        #[arg(long)]
        freeze: bool,
    },
    /// Filtered ranking metrics of a decoder checkpoint on the test split
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Decoder checkpoint (default out/decoder)
        #[arg(long)]
        decoder: Option<PathBuf>,
        /// Also write out/per_triple.csv
        #[arg(long)]
        per_triple: bool,
        /// Raw instead of filtered ranks
        #[arg(long)]
        raw: bool,
    },
    /// Encoder test-MR curve under one ablation mode
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "full")]
        mode: AblationSpec,
    },
    /// PageRank and attention inspection
    Analyze {
        #[command(subcommand)]
        what: Analyze,
    },
    /// Every stage end to end
    Pipeline {
        #[command(flatten)]
        common: Common,
        /// Start from this TransE checkpoint instead of training one
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        per_triple: bool,
        /// Run an ablation curve instead of the two-stage model
        #[arg(long)]
        ablation: Option<AblationSpec>,
    },
}

#[derive(Subcommand)]
enum Analyze {
    /// PageRank of every entity into out/pagerank.tsv
    Pagerank(Common),
    /// Attention weights of one entity over training into out/attention_<entity>.csv
    Attention {
        #[command(flatten)]
        common: Common,
        /// Entity name as it appears in the dataset
        #[arg(long)]
        entity: String,
        /// TransE checkpoint to start from (default out/transe, trained if absent)
        #[arg(long)]
        init: Option<PathBuf>,
    },
}

fn load_config(c: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &c.config {
        Some(path) => PipelineConfig::from_file(path)?,
        None => PipelineConfig::default(),
    };
    if c.seed.is_some() || std::env::var_os(SEED_ENV).is_some() {
        cfg.set_seed(resolve_seed(c.seed)?);
    }
    for s in &c.set {
        cfg.apply_override(s)?;
    }
    cfg.validate()?;
    pl::ensure_dir(&c.out)?;
    Ok(cfg)
}

/// Cached aux paths when present, otherwise built (and cached) now.
fn aux_for(kg: &relgat::graph::KnowledgeGraph, cfg: &PipelineConfig, out: &Path) -> Result<Vec<relgat::nhop::AuxPath>> {
    let cache = out.join(pl::AUX_FILE);
    if cache.exists() {
        pl::load_aux(kg, &cache)
    } else {
        pl::stage_aux(kg, cfg, out)
    }
}

fn transe_for(
    kg: &relgat::graph::KnowledgeGraph,
    cfg: &PipelineConfig,
    out: &Path,
    init: Option<&Path>,
) -> Result<relgat::encoder::EmbeddingState> {
    let default = out.join(pl::TRANSE_DIR);
    match init {
        Some(dir) => pl::load_transe(dir),
        None if default.exists() => pl::load_transe(&default),
        None => Ok(pl::stage_transe(kg, cfg, out)?.0),
    }
}

fn ablate(c: &Common, cfg: &PipelineConfig, mode: AblationSpec, command: &str) -> Result<()> {
    let mut manifest = RunManifest::begin(command, &c.data, cfg)?;
    let kg = pl::load_graph(&c.data, cfg)?;
    let curve = run_ablation(&kg, mode, &cfg.ablation()).map_err(|e| e.in_stage("ablate"))?;
    let name = format!("ablation_{mode}.csv");
    let path = c.out.join(&name);
    fs::write(&path, curve.to_csv()).map_err(|e| Error::io(&path, e))?;
    print!("{}", curve.to_csv());
    manifest.outputs = vec![name];
    manifest.finish(&c.out)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Stats { data, json } => {
            let kg = relgat::graph::load_dataset(&data)?;
            let stats = compute_stats(&kg);
            if json {
                println!("{}", serde_json::to_string(&stats).map_err(|e| Error::Checkpoint(e.to_string()))?);
            } else {
                println!("{stats}");
            }
        }
        Command::BuildAux(c) => {
            let cfg = load_config(&c)?;
            let mut manifest = RunManifest::begin("build-aux", &c.data, &cfg)?;
            let kg = pl::load_graph(&c.data, &cfg)?;
            let paths = pl::stage_aux(&kg, &cfg, &c.out)?;
            println!("{} auxiliary paths", paths.len());
            manifest.outputs = vec![pl::AUX_FILE.into()];
            manifest.finish(&c.out)?;
        }
        Command::InitTranse(c) => {
            let cfg = load_config(&c)?;
            let mut manifest = RunManifest::begin("init-transe", &c.data, &cfg)?;
            let kg = pl::load_graph(&c.data, &cfg)?;
            let (_, log) = pl::stage_transe(&kg, &cfg, &c.out)?;
            println!("final loss {:.4}", log.losses.last().copied().unwrap_or(f64::NAN));
            manifest.outputs = vec![pl::TRANSE_DIR.into()];
            manifest.finish(&c.out)?;
        }
        Command::TrainEncoder { common: c, init } => {
            let cfg = load_config(&c)?;
            let mut manifest = RunManifest::begin("train-encoder", &c.data, &cfg)?;
            let kg = pl::load_graph(&c.data, &cfg)?;
            let aux = aux_for(&kg, &cfg, &c.out)?;
            let state = transe_for(&kg, &cfg, &c.out, init.as_deref())?;
            let (_, _, log) = pl::stage_encoder(&kg, &aux, state, &cfg, &c.out)?;
            println!("final loss {:.4}", log.losses.last().copied().unwrap_or(f64::NAN));
            pl::StageLogs {
                encoder: Some(log),
                ..Default::default()
            }
            .write(&c.out)?;
            manifest.outputs = vec![pl::ENCODER_DIR.into(), pl::LOG_FILE.into()];
            manifest.finish(&c.out)?;
        }
        Command::TrainDecoder {
            common: c,
            encoder,
            freeze,
        } => {
            let mut cfg = load_config(&c)?;
            cfg.decoder.freeze_embeddings |= freeze;
            let mut manifest = RunManifest::begin("train-decoder", &c.data, &cfg)?;
            let kg = pl::load_graph(&c.data, &cfg)?;
            let dir = encoder.unwrap_or_else(|| c.out.join(pl::ENCODER_DIR));
            let ck = read_encoder_checkpoint(&dir).map_err(|e| e.in_stage("train-decoder"))?;
            let (_, log) = pl::stage_decoder(&kg, &ck.h_out, &ck.g_out, &cfg, &c.out)?;
            println!("final loss {:.4}", log.losses.last().copied().unwrap_or(f64::NAN));
            pl::StageLogs {
                decoder: Some(log),
                ..Default::default()
            }
            .write(&c.out)?;
            manifest.outputs = vec![pl::DECODER_DIR.into(), pl::LOG_FILE.into()];
            manifest.finish(&c.out)?;
        }
        Command::Evaluate {
            common: c,
            decoder,
            per_triple,
            raw,
        } => {
            let cfg = load_config(&c)?;
            let mut manifest = RunManifest::begin("evaluate", &c.data, &cfg)?;
            let kg = pl::load_graph(&c.data, &cfg)?;
            let dir = decoder.unwrap_or_else(|| c.out.join(pl::DECODER_DIR));
            let (model, _) = read_decoder_checkpoint(&dir).map_err(|e| e.in_stage("evaluate"))?;
            let report = pl::stage_evaluate(&kg, &model, &c.out, per_triple, !raw)?;
            println!("{}", report.metrics);
            manifest.outputs = vec![pl::METRICS_FILE.into()];
            if per_triple {
                manifest.outputs.push(pl::PER_TRIPLE_FILE.into());
            }
            manifest.metrics = Some(report.metrics);
            manifest.finish(&c.out)?;
        }
        Command::Ablate { common: c, mode } => {
            let cfg = load_config(&c)?;
            ablate(&c, &cfg, mode, "ablate")?;
        }
        Command::Analyze {
            what: Analyze::Pagerank(c),
        } => {
            let cfg = load_config(&c)?;
            let mut manifest = RunManifest::begin("analyze-pagerank", &c.data, &cfg)?;
            let kg = pl::load_graph(&c.data, &cfg)?;
            let scores = pagerank(&kg, &cfg.analysis).map_err(|e| e.in_stage("analyze"))?;
            let mut text = String::from("entity\tpagerank\n");
            for (i, s) in scores.iter().enumerate() {
                let _ = writeln!(text, "{}\t{s:.17e}", kg.entities().name(i as u32));
            }
            let path = c.out.join("pagerank.tsv");
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            let mean = scores.iter().sum::<f64>() / scores.len() as f64;
            println!("entities {}  mean pagerank {mean:.6e}", scores.len());
            manifest.outputs = vec!["pagerank.tsv".into()];
            manifest.finish(&c.out)?;
        }
        Command::Analyze {
            what: Analyze::Attention { common: c, entity, init },
        } => {
            let cfg = load_config(&c)?;
            let mut manifest = RunManifest::begin("analyze-attention", &c.data, &cfg)?;
            let kg = pl::load_graph(&c.data, &cfg)?;
            let id = kg
                .entities()
                .id(&entity)
                .ok_or_else(|| Error::Config(format!("unknown entity {entity:?}")))?;
            let aux = aux_for(&kg, &cfg, &c.out)?;
            let state = transe_for(&kg, &cfg, &c.out, init.as_deref())?;
            let nb = Neighborhoods::build(&kg, &aux)?;
            let mut epochs = cfg.analysis.epochs_snapshot.clone();
            if epochs.is_empty() {
                epochs = vec![0, cfg.encoder_train.epochs];
            }
            let snaps = attention_snapshots(&kg, &nb, state, &cfg.encoder, &cfg.encoder_train, EntityId(id), &epochs)
                .map_err(|e| e.in_stage("analyze"))?;
            let name = format!("attention_{}.csv", entity.replace(['/', '\\'], "_"));
            export_attention(&snaps, EntityId(id), &kg, &c.out.join(&name))?;
            println!("{} snapshots written to {name}", snaps.len());
            manifest.outputs = vec![name];
            manifest.finish(&c.out)?;
        }
        Command::Pipeline {
            common: c,
            init,
            per_triple,
            ablation,
        } => {
            let cfg = load_config(&c)?;
            if let Some(mode) = ablation {
                return ablate(&c, &cfg, mode, "pipeline");
            }
            let opts = PipelineOptions {
                init_from: init,
                per_triple,
            };
            let report = pl::run_pipeline(&c.data, &cfg, &c.out, &opts)?;
            println!("{}", report.metrics);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

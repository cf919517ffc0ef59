//! End-to-end runs: auxiliary edges, TransE, encoder, decoder, evaluation.
//!
//! Every artefact lands under one output directory:
//!
//! ```text
//! out/
//!   aux_paths.tsv   transe/   encoder/   decoder/
//!   logs.json       metrics.json   config.txt   manifest.json
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use log::info;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::decoder::ConvKb;
use crate::encoder::{EmbeddingState, Encoder, Neighborhoods};
use crate::error::{Error, Result};
use crate::eval::{evaluate_with, EvalReport, RankingMetrics};
use crate::graph::{load_dataset_with, GraphOptions, KnowledgeGraph};
use crate::nhop::{enumerate_nhop_paths, read_path_cache, write_path_cache, AuxPath};
use crate::training::{
    encoder_outputs, read_transe_checkpoint, train_decoder, train_encoder, train_transe,
    write_decoder_checkpoint, write_encoder_checkpoint, write_transe_checkpoint, TrainLog,
};

pub const AUX_FILE: &str = "aux_paths.tsv";
pub const TRANSE_DIR: &str = "transe";
pub const ENCODER_DIR: &str = "encoder";
pub const DECODER_DIR: &str = "decoder";
pub const METRICS_FILE: &str = "metrics.json";
pub const PER_TRIPLE_FILE: &str = "per_triple.csv";
pub const LOG_FILE: &str = "logs.json";
pub const CONFIG_FILE: &str = "config.txt";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one run, written next to its outputs.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub dataset: PathBuf,
    /// Full configuration as `key = value` lines.
    pub config: Vec<String>,
    pub seed: u64,
    /// SHA-256 over the dataset files, each framed as `name blob <len>\0<bytes>`.
    pub input_hash: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// Paths relative to the output directory.
    pub outputs: Vec<String>,
    pub metrics: Option<RankingMetrics>,
}

fn stage_file(command: &str, name: &str) -> String {
    if command == "pipeline" {
        name.to_string()
    } else {
        format!("{command}.{name}")
    }
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Content hash of every dataset file present in `dir`.
pub fn hash_inputs(dir: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    for name in ["train.txt", "valid.txt", "test.txt", "entity2id.txt", "relation2id.txt"] {
        let path = dir.join(name);
        if !path.exists() {
            continue;
        }
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        hasher.update(format!("{name} blob {}\0", bytes.len()).as_bytes());
        hasher.update(&bytes);
    }
    Ok(hex(&hasher.finalize()))
}

impl RunManifest {
    pub fn begin(command: &str, dataset: &Path, cfg: &PipelineConfig) -> Result<Self> {
        Ok(RunManifest {
            command: command.to_string(),
            dataset: dataset.to_path_buf(),
            config: cfg.to_text().lines().map(str::to_string).collect(),
            seed: cfg.seed,
            input_hash: hash_inputs(dataset)?,
            started_unix: now(),
            finished_unix: 0,
            outputs: Vec::new(),
            metrics: None,
        })
    }

    /// `manifest.json` for a full pipeline, `<command>.manifest.json` for a single stage.
    pub fn file_name(&self) -> String {
        stage_file(&self.command, MANIFEST_FILE)
    }

    /// Stamps the finish time and writes the manifest and a config snapshot.
    pub fn finish(mut self, out: &Path) -> Result<()> {
        self.finished_unix = now();
        let cfg_path = out.join(stage_file(&self.command, CONFIG_FILE));
        fs::write(&cfg_path, self.config.join("\n") + "\n").map_err(|e| Error::io(&cfg_path, e))?;
        let path = out.join(self.file_name());
        let text = serde_json::to_string_pretty(&self).map_err(|e| Error::Checkpoint(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn load_graph(data: &Path, cfg: &PipelineConfig) -> Result<KnowledgeGraph> {
    load_dataset_with(
        data,
        GraphOptions {
            self_loops: cfg.self_loops,
        },
    )
    .map_err(|e| e.in_stage("load"))
}

/// Auxiliary paths per the config (empty when disabled), cached to `out/aux_paths.tsv`.
pub fn stage_aux(kg: &KnowledgeGraph, cfg: &PipelineConfig, out: &Path) -> Result<Vec<AuxPath>> {
    let run = || -> Result<Vec<AuxPath>> {
        let paths = if cfg.aux_enabled {
            enumerate_nhop_paths(kg, &cfg.aux)?
        } else {
            Vec::new()
        };
        write_path_cache(&paths, &out.join(AUX_FILE))?;
        info!("{} auxiliary paths", paths.len());
        Ok(paths)
    };
    run().map_err(|e| e.in_stage("build-aux"))
}

pub fn load_aux(kg: &KnowledgeGraph, path: &Path) -> Result<Vec<AuxPath>> {
    read_path_cache(path, kg).map_err(|e| e.in_stage("build-aux"))
}

pub fn stage_transe(kg: &KnowledgeGraph, cfg: &PipelineConfig, out: &Path) -> Result<(EmbeddingState, TrainLog)> {
    let run = || -> Result<(EmbeddingState, TrainLog)> {
        let (state, log) = train_transe(kg, cfg.transe_dim, &cfg.transe)?;
        write_transe_checkpoint(&out.join(TRANSE_DIR), &state, &cfg.transe)?;
        Ok((state, log))
    };
    run().map_err(|e| e.in_stage("init-transe"))
}

pub fn load_transe(dir: &Path) -> Result<EmbeddingState> {
    read_transe_checkpoint(dir).map_err(|e| e.in_stage("init-transe"))
}

pub fn stage_encoder(
    kg: &KnowledgeGraph,
    aux: &[AuxPath],
    init: EmbeddingState,
    cfg: &PipelineConfig,
    out: &Path,
) -> Result<(Encoder, Neighborhoods, TrainLog)> {
    let run = || -> Result<(Encoder, Neighborhoods, TrainLog)> {
        let nb = Neighborhoods::build(kg, aux)?;
        let (enc, log) = train_encoder(kg, &nb, init, &cfg.encoder, &cfg.encoder_train)?;
        write_encoder_checkpoint(&out.join(ENCODER_DIR), &enc, &nb)?;
        Ok((enc, nb, log))
    };
    run().map_err(|e| e.in_stage("train-encoder"))
}

pub fn stage_decoder(
    kg: &KnowledgeGraph,
    entities: &crate::numerics::Matrix,
    relations: &crate::numerics::Matrix,
    cfg: &PipelineConfig,
    out: &Path,
) -> Result<(ConvKb, TrainLog)> {
    let run = || -> Result<(ConvKb, TrainLog)> {
        let (model, log) = train_decoder(kg, entities, relations, &cfg.decoder)?;
        write_decoder_checkpoint(&out.join(DECODER_DIR), &model, &cfg.decoder)?;
        Ok((model, log))
    };
    run().map_err(|e| e.in_stage("train-decoder"))
}

/// Test-split metrics written to `out/metrics.json` (and per-query ranks if asked).
pub fn stage_evaluate(
    kg: &KnowledgeGraph,
    model: &ConvKb,
    out: &Path,
    per_triple: bool,
    filtered: bool,
) -> Result<EvalReport> {
    let run = || -> Result<EvalReport> {
        let report = evaluate_with(kg.test(), model, kg, filtered)?;
        let path = out.join(METRICS_FILE);
        fs::write(&path, report.metrics.to_json_line() + "\n").map_err(|e| Error::io(&path, e))?;
        if per_triple {
            report.write_csv(kg, &out.join(PER_TRIPLE_FILE))?;
        }
        Ok(report)
    };
    run().map_err(|e| e.in_stage("evaluate"))
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct StageLogs {
    pub transe: Option<TrainLog>,
    pub encoder: Option<TrainLog>,
    pub decoder: Option<TrainLog>,
}

impl StageLogs {
    pub fn write(&self, out: &Path) -> Result<()> {
        let path = out.join(LOG_FILE);
        let text = serde_json::to_string(self).map_err(|e| Error::Checkpoint(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}

#[derive(Clone, Debug, Default)]
pub struct PipelineOptions {
    /// Start from an existing TransE checkpoint instead of training one.
    pub init_from: Option<PathBuf>,
    pub per_triple: bool,
}

pub struct PipelineReport {
    pub metrics: RankingMetrics,
    pub logs: StageLogs,
    pub decoder: ConvKb,
}

/// Runs every stage and writes all artefacts plus the manifest under `out`.
pub fn run_pipeline(data: &Path, cfg: &PipelineConfig, out: &Path, opts: &PipelineOptions) -> Result<PipelineReport> {
    cfg.validate()?;
    ensure_dir(out)?;
    let mut manifest = RunManifest::begin("pipeline", data, cfg)?;
    let kg = load_graph(data, cfg)?;
    let aux = stage_aux(&kg, cfg, out)?;
    let mut logs = StageLogs::default();
    let init = match &opts.init_from {
        Some(dir) => load_transe(dir)?,
        None => {
            let (state, log) = stage_transe(&kg, cfg, out)?;
            logs.transe = Some(log);
            state
        }
    };
    let (enc, nb, log) = stage_encoder(&kg, &aux, init, cfg, out)?;
    logs.encoder = Some(log);
    let (h, g) = encoder_outputs(&enc, &nb).map_err(|e| e.in_stage("train-encoder"))?;
    let (model, log) = stage_decoder(&kg, &h, &g, cfg, out)?;
    logs.decoder = Some(log);
    let report = stage_evaluate(&kg, &model, out, opts.per_triple, true)?;
    logs.write(out)?;
    manifest.outputs = [AUX_FILE, TRANSE_DIR, ENCODER_DIR, DECODER_DIR, METRICS_FILE, LOG_FILE, CONFIG_FILE]
        .iter()
        .filter(|p| opts.init_from.is_none() || **p != TRANSE_DIR)
        .map(|s| s.to_string())
        .chain(opts.per_triple.then(|| PER_TRIPLE_FILE.to_string()))
        .collect();
    manifest.metrics = Some(report.metrics.clone());
    manifest.finish(out)?;
    Ok(PipelineReport {
        metrics: report.metrics,
        logs,
        decoder: model,
    })
}

//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Later assignments win, so CLI
//! overrides are applied after the file.

use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analysis::{AblationConfig, AnalysisConfig};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::nhop::AuxConfig;
use crate::training::{DecoderTrainConfig, TrainConfig};

/// Environment variable consulted for the seed when none is configured.
pub const SEED_ENV: &str = "KG_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub seed: u64,
    pub self_loops: bool,
    /// Build auxiliary n-hop edges at all.
    pub aux_enabled: bool,
    pub aux: AuxConfig,
    pub transe_dim: usize,
    pub transe: TrainConfig,
    pub encoder: EncoderConfig,
    pub encoder_train: TrainConfig,
    pub decoder: DecoderTrainConfig,
    pub analysis: AnalysisConfig,
    pub ablation_curve_every: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            self_loops: true,
            aux_enabled: true,
            aux: AuxConfig::default(),
            transe_dim: 50,
            transe: TrainConfig::transe(),
            encoder: EncoderConfig::default(),
            encoder_train: TrainConfig::default(),
            decoder: DecoderTrainConfig::default(),
            analysis: AnalysisConfig::default(),
            ablation_curve_every: 100,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn list<T: Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn set_train(t: &mut TrainConfig, key: &str, field: &str, value: &str) -> Result<bool> {
    match field {
        "margin" => t.gamma = parse(key, value)?,
        "lr" => t.lr = parse(key, value)?,
        "epochs" => t.epochs = parse(key, value)?,
        "negative_ratio" => t.negative_ratio = parse(key, value)?,
        "normalize_every_iter" => t.normalize_every_iter = parse(key, value)?,
        "weight_decay" => t.weight_decay = parse(key, value)?,
        "lr_decay_every" => t.lr_decay_every = parse(key, value)?,
        "lr_decay" => t.lr_decay = parse(key, value)?,
        "hinge_form" => t.hinge_form = value.parse()?,
        "batch_size" => t.batch_size = parse(key, value)?,
        "eval_every" => t.eval_every = parse(key, value)?,
        "patience" => t.patience = parse(key, value)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn train_entries(prefix: &str, t: &TrainConfig, out: &mut Vec<(String, String)>) {
    let mut push = |k: &str, v: String| out.push((format!("{prefix}.{k}"), v));
    push("margin", t.gamma.to_string());
    push("lr", t.lr.to_string());
    push("epochs", t.epochs.to_string());
    push("negative_ratio", t.negative_ratio.to_string());
    push("normalize_every_iter", t.normalize_every_iter.to_string());
    push("weight_decay", t.weight_decay.to_string());
    push("lr_decay_every", t.lr_decay_every.to_string());
    push("lr_decay", t.lr_decay.to_string());
    push("hinge_form", t.hinge_form.to_string());
    push("batch_size", t.batch_size.to_string());
    push("eval_every", t.eval_every.to_string());
    push("patience", t.patience.to_string());
}

impl PipelineConfig {
    /// Applies one assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let unknown = || Error::Config(format!("unknown key {key:?}"));
        let (section, field) = key.split_once('.').unwrap_or(("", key));
        match (section, field) {
            ("", "seed") => self.set_seed(parse(key, value)?),
            ("", "self_loops") => self.self_loops = parse(key, value)?,
            ("aux", "enabled") => self.aux_enabled = parse(key, value)?,
            ("aux", "max_hops") => self.aux.max_hops = parse(key, value)?,
            ("aux", "per_node_cap") => self.aux.per_node_cap = parse(key, value)?,
            ("aux", "dedup") => self.aux.dedup = parse(key, value)?,
            ("transe", "dim") => self.transe_dim = parse(key, value)?,
            ("transe", f) => {
                if !set_train(&mut self.transe, key, f, value)? {
                    return Err(unknown());
                }
            }
            ("encoder", f) => {
                let e = &mut self.encoder;
                match f {
                    "entity_dims" => e.entity_dims = parse_list(key, value)?,
                    "relation_dims" => e.relation_dims = parse_list(key, value)?,
                    "heads" => e.heads = parse(key, value)?,
                    "slope" => e.slope = parse(key, value)?,
                    "activation" => e.activation = value.parse()?,
                    "normalize" => e.normalize = parse(key, value)?,
                    "dropout" => e.dropout = parse(key, value)?,
                    "use_relations" => e.use_relations = parse(key, value)?,
                    _ => {
                        if !set_train(&mut self.encoder_train, key, f, value)? {
                            return Err(unknown());
                        }
                    }
                }
            }
            ("decoder", f) => {
                let d = &mut self.decoder;
                match f {
                    "lambda" => d.lambda = parse(key, value)?,
                    "negative_ratio" => d.negative_ratio = parse(key, value)?,
                    "lr" => d.lr = parse(key, value)?,
                    "epochs" => d.epochs = parse(key, value)?,
                    "batch_size" => d.batch_size = parse(key, value)?,
                    "n_filters" => d.n_filters = parse(key, value)?,
                    "dropout" => d.dropout = parse(key, value)?,
                    "freeze_embeddings" => d.freeze_embeddings = parse(key, value)?,
                    "embedding_lr_scale" => d.embedding_lr_scale = parse(key, value)?,
                    "weight_decay" => d.weight_decay = parse(key, value)?,
                    "lr_decay_every" => d.lr_decay_every = parse(key, value)?,
                    "lr_decay" => d.lr_decay = parse(key, value)?,
                    "eval_every" => d.eval_every = parse(key, value)?,
                    "patience" => d.patience = parse(key, value)?,
                    "init_noise" => d.init_noise = parse(key, value)?,
                    _ => return Err(unknown()),
                }
            }
            ("analysis", "damping") => self.analysis.damping = parse(key, value)?,
            ("analysis", "pr_tol") => self.analysis.pr_tol = parse(key, value)?,
            ("analysis", "pr_max_iters") => self.analysis.pr_max_iters = parse(key, value)?,
            ("analysis", "epochs_snapshot") => self.analysis.epochs_snapshot = parse_list(key, value)?,
            ("ablation", "curve_every") => self.ablation_curve_every = parse(key, value)?,
            _ => return Err(unknown()),
        }
        Ok(())
    }

    /// One seed drives every stage.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.transe.seed = seed;
        self.encoder_train.seed = seed;
        self.decoder.seed = seed;
    }

    /// Applies `key = value` lines.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                file: origin.to_string(),
                line: i + 1,
                msg: format!("expected `key = value`, found {line:?}"),
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = PipelineConfig::default();
        cfg.apply_text(&text, &path.display().to_string())?;
        Ok(cfg)
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        self.set(k.trim(), v)
    }

    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let mut push = |k: &str, v: String| out.push((k.to_string(), v));
        push("seed", self.seed.to_string());
        push("self_loops", self.self_loops.to_string());
        push("aux.enabled", self.aux_enabled.to_string());
        push("aux.max_hops", self.aux.max_hops.to_string());
        push("aux.per_node_cap", self.aux.per_node_cap.to_string());
        push("aux.dedup", self.aux.dedup.to_string());
        push("transe.dim", self.transe_dim.to_string());
        let e = &self.encoder;
        push("encoder.entity_dims", list(&e.entity_dims));
        push("encoder.relation_dims", list(&e.relation_dims));
        push("encoder.heads", e.heads.to_string());
        push("encoder.slope", e.slope.to_string());
        push("encoder.activation", e.activation.to_string());
        push("encoder.normalize", e.normalize.to_string());
        push("encoder.dropout", e.dropout.to_string());
        push("encoder.use_relations", e.use_relations.to_string());
        let d = &self.decoder;
        push("decoder.lambda", d.lambda.to_string());
        push("decoder.negative_ratio", d.negative_ratio.to_string());
        push("decoder.lr", d.lr.to_string());
        push("decoder.epochs", d.epochs.to_string());
        push("decoder.batch_size", d.batch_size.to_string());
        push("decoder.n_filters", d.n_filters.to_string());
        push("decoder.dropout", d.dropout.to_string());
        push("decoder.freeze_embeddings", d.freeze_embeddings.to_string());
        push("decoder.embedding_lr_scale", d.embedding_lr_scale.to_string());
        push("decoder.weight_decay", d.weight_decay.to_string());
        push("decoder.lr_decay_every", d.lr_decay_every.to_string());
        push("decoder.lr_decay", d.lr_decay.to_string());
        push("decoder.eval_every", d.eval_every.to_string());
        push("decoder.patience", d.patience.to_string());
        push("decoder.init_noise", d.init_noise.to_string());
        push("analysis.damping", self.analysis.damping.to_string());
        push("analysis.pr_tol", self.analysis.pr_tol.to_string());
        push("analysis.pr_max_iters", self.analysis.pr_max_iters.to_string());
        push("analysis.epochs_snapshot", list(&self.analysis.epochs_snapshot));
        push("ablation.curve_every", self.ablation_curve_every.to_string());
        train_entries("transe", &self.transe, &mut out);
        train_entries("encoder", &self.encoder_train, &mut out);
        out
    }

    /// The full configuration as `key = value` lines; parsing it back yields `self`.
    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.aux_enabled {
            self.aux.validate()?;
        }
        self.transe.validate()?;
        self.encoder.validate()?;
        self.encoder_train.validate()?;
        self.decoder.validate()?;
        self.analysis.validate()?;
        if self.transe_dim != self.encoder.entity_dims[0] || self.transe_dim != self.encoder.relation_dims[0] {
            return Err(Error::Config(format!(
                "transe.dim {} must equal the encoder input dims {:?}",
                self.transe_dim,
                self.encoder.input_dims()
            )));
        }
        Ok(())
    }

    pub fn ablation(&self) -> AblationConfig {
        AblationConfig {
            aux: self.aux,
            transe_dim: self.transe_dim,
            transe: self.transe.clone(),
            encoder: self.encoder.clone(),
            train: self.encoder_train.clone(),
            curve_every: self.ablation_curve_every,
        }
    }
}

/// Seed from an explicit value, else `KG_SEED`, else 0.
pub fn resolve_seed(explicit: Option<u64>) -> Result<u64> {
    if let Some(s) = explicit {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

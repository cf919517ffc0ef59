//! Negative sampling, TransE initialisation and the two training stages.
//!
//! Stage one fits the attention encoder with the margin loss on full-graph
//! steps; stage two fits ConvKB with the soft-margin loss on minibatches,
//! starting from the encoder's output embeddings.

use std::path::Path;

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{read_checkpoint, write_checkpoint};
use crate::decoder::{ConvKb, DecoderParams};
use crate::encoder::{
    encoder_forward, encoder_loss_and_grad, hinge_loss_and_grad, EmbeddingState, Encoder,
    EncoderConfig, EncoderParams, HingeForm, MarginLoss, Neighborhoods,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, Scorer, TranslationalScorer};
use crate::graph::{EntityId, KnowledgeGraph, Triple};
use crate::numerics::{adam_update, normalize_rows, AdamConfig, AdamState, Matrix};

/// Random streams, one per consumer, so adding draws in one place never
/// shifts another.
const STREAM_INIT: u64 = 1;
const STREAM_NEGATIVES: u64 = 2;
const STREAM_DROPOUT: u64 = 3;
const STREAM_SHUFFLE: u64 = 4;

pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Positives with `ratio` corruptions each; the negatives of `positives[p]`
/// are `negatives[p·ratio .. (p+1)·ratio]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NegativeSampleBatch {
    pub positives: Vec<Triple>,
    pub negatives: Vec<Triple>,
    pub ratio: usize,
}

impl NegativeSampleBatch {
    pub fn negatives_of(&self, p: usize) -> &[Triple] {
        &self.negatives[p * self.ratio..(p + 1) * self.ratio]
    }

    /// Positives labelled `+1` followed by negatives labelled `−1`.
    pub fn labelled(&self) -> (Vec<Triple>, Vec<f64>) {
        let triples = self.positives.iter().chain(&self.negatives).copied().collect();
        let labels = std::iter::repeat(1.0)
            .take(self.positives.len())
            .chain(std::iter::repeat(-1.0).take(self.negatives.len()))
            .collect();
        (triples, labels)
    }

    /// Every negative differs from its positive in exactly one of head or tail.
    pub fn is_aligned(&self) -> bool {
        self.negatives.len() == self.positives.len() * self.ratio
            && self.positives.iter().enumerate().all(|(p, pos)| {
                self.negatives_of(p).iter().all(|n| {
                    n.relation == pos.relation
                        && ((n.head != pos.head) ^ (n.tail != pos.tail))
                })
            })
    }
}

/// Uniform draw from `0..n` excluding `skip`.
fn other_entity<R: Rng + ?Sized>(n: usize, skip: EntityId, rng: &mut R) -> EntityId {
    let r = rng.gen_range(0..n as u32 - 1);
    EntityId(if r >= skip.0 { r + 1 } else { r })
}

pub fn sample_negatives_with<R: Rng + ?Sized>(
    n_entities: usize,
    batch: &[Triple],
    ratio: usize,
    rng: &mut R,
) -> Result<NegativeSampleBatch> {
    if n_entities < 2 {
        return Err(Error::Config("negative sampling needs at least 2 entities".into()));
    }
    if ratio == 0 {
        return Err(Error::Config("negative ratio must be at least 1".into()));
    }
    let mut negatives = Vec::with_capacity(batch.len() * ratio);
    for pos in batch {
        for _ in 0..ratio {
            let neg = if rng.gen::<bool>() {
                Triple {
                    head: other_entity(n_entities, pos.head, rng),
                    ..*pos
                }
            } else {
                Triple {
                    tail: other_entity(n_entities, pos.tail, rng),
                    ..*pos
                }
            };
            negatives.push(neg);
        }
    }
    Ok(NegativeSampleBatch {
        positives: batch.to_vec(),
        negatives,
        ratio,
    })
}

/// Replaces head or tail (fair coin) with a uniformly drawn different entity.
/// Negatives are not filtered against known triples.
pub fn sample_negatives(
    kg: &KnowledgeGraph,
    batch: &[Triple],
    ratio: usize,
    seed: u64,
) -> Result<NegativeSampleBatch> {
    sample_negatives_with(kg.n_entities(), batch, ratio, &mut rng_for(seed, STREAM_NEGATIVES))
}

/// Margin-loss training settings, shared by TransE and the encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub gamma: f64,
    pub lr: f64,
    pub epochs: usize,
    pub negative_ratio: usize,
    pub seed: u64,
    /// Rescale input entity rows to unit L2 norm before every step.
    pub normalize_every_iter: bool,
    pub weight_decay: f64,
    /// Multiply the learning rate by `lr_decay` every this many epochs (0 = never).
    pub lr_decay_every: usize,
    pub lr_decay: f64,
    pub hinge_form: HingeForm,
    /// Positives per step; 0 means the whole training split. The encoder
    /// always steps on the full graph.
    pub batch_size: usize,
    /// Validation MRR every this many epochs (0 = never).
    pub eval_every: usize,
    /// Stop after this many validations without improvement (0 = never).
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 1.0,
            lr: 1e-3,
            epochs: 3000,
            negative_ratio: 2,
            seed: 0,
            normalize_every_iter: true,
            weight_decay: 1e-5,
            lr_decay_every: 500,
            lr_decay: 0.5,
            hinge_form: HingeForm::Standard,
            batch_size: 0,
            eval_every: 0,
            patience: 0,
        }
    }
}

impl TrainConfig {
    /// TransE defaults.
    pub fn transe() -> Self {
        TrainConfig {
            lr: 1e-2,
            epochs: 500,
            negative_ratio: 1,
            weight_decay: 0.0,
            lr_decay_every: 0,
            batch_size: 1024,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("margin must be ≥ 0, got {}", self.gamma)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if self.negative_ratio == 0 {
            return Err(Error::Config("negative_ratio must be at least 1".into()));
        }
        if !(self.lr_decay > 0.0) {
            return Err(Error::Config("lr_decay must be > 0".into()));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }

    fn margin(&self, use_relations: bool) -> MarginLoss {
        MarginLoss {
            gamma: self.gamma,
            form: self.hinge_form,
            use_relations,
        }
    }
}

/// Per-epoch record of one training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub losses: Vec<f64>,
    /// `(epoch, validation MRR)`, epochs counted from 1.
    pub validation: Vec<(usize, f64)>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
    pub smoothed_monotone: bool,
}

impl TrainLog {
    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }

    fn finish(&mut self, what: &str) {
        self.smoothed_monotone = smoothed_non_increasing(&self.losses);
        if !self.smoothed_monotone {
            warn!("{what}: smoothed training loss increased at some point");
        }
    }
}

/// Whether means over consecutive windows (a tenth of the run) never rise by
/// more than 1%.
pub fn smoothed_non_increasing(losses: &[f64]) -> bool {
    let w = (losses.len() / 10).max(1);
    let means: Vec<f64> = losses
        .chunks(w)
        .filter(|c| c.len() == w)
        .map(|c| c.iter().sum::<f64>() / w as f64)
        .collect();
    means.windows(2).all(|p| p[1] <= p[0] * 1.01 + 1e-12)
}

/// Adam states for a fixed list of matrices.
struct Optimizer {
    states: Vec<AdamState>,
}

impl Optimizer {
    fn new(params: &[&Matrix], config: AdamConfig) -> Self {
        Optimizer {
            states: params.iter().map(|m| AdamState::for_param(m, config)).collect(),
        }
    }

    fn step(&mut self, params: Vec<&mut Matrix>, grads: Vec<&Matrix>, frozen: &[usize]) -> Result<()> {
        for (i, ((p, g), st)) in params.into_iter().zip(grads).zip(&mut self.states).enumerate() {
            if !frozen.contains(&i) {
                adam_update(p, g, st)?;
            }
        }
        Ok(())
    }

    fn scale_lr(&mut self, factor: f64) {
        for st in &mut self.states {
            st.config.lr *= factor;
        }
    }
}

fn decay_lr(opt: &mut Optimizer, epoch: usize, every: usize, factor: f64) {
    if every > 0 && epoch % every == 0 {
        opt.scale_lr(factor);
        debug!("epoch {epoch}: learning rate now {:e}", opt.states[0].config.lr);
    }
}

/// Tracks validation MRR and decides when to stop.
struct EarlyStop<T> {
    every: usize,
    patience: usize,
    best: Option<(f64, usize, T)>,
    since_best: usize,
}

impl<T: Clone> EarlyStop<T> {
    fn new(every: usize, patience: usize) -> Self {
        EarlyStop {
            every,
            patience,
            best: None,
            since_best: 0,
        }
    }

    fn due(&self, epoch: usize) -> bool {
        self.every > 0 && epoch % self.every == 0
    }

    /// Returns true when training should stop.
    fn record(&mut self, epoch: usize, mrr: f64, snapshot: impl FnOnce() -> T, log: &mut TrainLog) -> bool {
        log.validation.push((epoch, mrr));
        if self.best.as_ref().is_none_or(|(b, _, _)| mrr > *b) {
            self.best = Some((mrr, epoch, snapshot()));
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        self.patience > 0 && self.since_best >= self.patience
    }

    fn into_best(self, log: &mut TrainLog) -> Option<T> {
        self.best.map(|(_, epoch, t)| {
            log.best_epoch = Some(epoch);
            t
        })
    }
}

fn batches(len: usize, batch_size: usize) -> usize {
    if batch_size == 0 || batch_size >= len {
        1
    } else {
        len.div_ceil(batch_size)
    }
}

/// Plain TransE over `‖h + g − t‖₁` with the margin loss. Relation rows start
/// at unit norm; entity rows are rescaled to unit norm at the start of every epoch.
///
/// The relation matrix has a row for every relation id the graph uses,
/// including the self-loop relation, which TransE never trains.
pub fn train_transe(kg: &KnowledgeGraph, dims: usize, cfg: &TrainConfig) -> Result<(EmbeddingState, TrainLog)> {
    cfg.validate()?;
    if dims == 0 {
        return Err(Error::Config("TransE dimension must be positive".into()));
    }
    let mut state = EmbeddingState::random(
        kg.n_entities(),
        kg.n_relation_rows(),
        dims,
        dims,
        &mut rng_for(cfg.seed, STREAM_INIT),
    );
    normalize_rows(&mut state.relations);
    let mut neg_rng = rng_for(cfg.seed, STREAM_NEGATIVES);
    let mut shuffle_rng = rng_for(cfg.seed, STREAM_SHUFFLE);
    let mut opt = Optimizer::new(&[&state.entities, &state.relations], cfg.adam());
    let margin = cfg.margin(true);
    let mut train = kg.train().to_vec();
    let n_batches = batches(train.len(), cfg.batch_size);
    let mut log = TrainLog::default();
    for epoch in 1..=cfg.epochs {
        normalize_rows(&mut state.entities);
        if n_batches > 1 {
            train.shuffle(&mut shuffle_rng);
        }
        let mut total = 0.0;
        for chunk in train.chunks(train.len().div_ceil(n_batches)) {
            let neg = sample_negatives_with(kg.n_entities(), chunk, cfg.negative_ratio, &mut neg_rng)?;
            let (loss, grads) = hinge_loss_and_grad(
                chunk,
                &neg.negatives,
                &state.entities,
                &state.relations,
                &margin,
                true,
            )?;
            let (de, dr) = grads.expect("gradient requested");
            opt.step(vec![&mut state.entities, &mut state.relations], vec![&de, &dr], &[])?;
            total += loss;
        }
        if !total.is_finite() {
            return Err(Error::NonFinite(format!("TransE loss at epoch {epoch}")));
        }
        log.losses.push(total);
        decay_lr(&mut opt, epoch, cfg.lr_decay_every, cfg.lr_decay);
    }
    if cfg.epochs > 0 {
        normalize_rows(&mut state.entities);
        info!("TransE: final loss {:.4}", log.losses.last().unwrap());
    }
    log.finish("TransE");
    Ok((state, log))
}

/// Encoder output embeddings `(H″, G′)`.
pub fn encoder_outputs(enc: &Encoder, nb: &Neighborhoods) -> Result<(Matrix, Matrix)> {
    let out = encoder_forward(enc, nb, None)?;
    Ok((out.h_residual_out, out.g_out))
}

/// Filtered validation MRR of the translational scorer on `(H″, G′)`.
fn encoder_validation_mrr(kg: &KnowledgeGraph, enc: &Encoder, nb: &Neighborhoods) -> Result<f64> {
    let (h, g) = encoder_outputs(enc, nb)?;
    let scorer = TranslationalScorer {
        entities: &h,
        relations: &g,
        use_relations: enc.config.use_relations,
    };
    Ok(evaluate(kg.valid(), &scorer, kg)?.mrr)
}

/// Callback invoked after every encoder epoch with `(epoch, encoder)`.
pub type EpochHook<'a> = &'a mut dyn FnMut(usize, &Encoder) -> Result<()>;

/// Fits the attention encoder with full-graph Adam steps on the margin loss
/// over `(H″, G′)`.
pub fn train_encoder(
    kg: &KnowledgeGraph,
    nb: &Neighborhoods,
    init: EmbeddingState,
    enc_cfg: &EncoderConfig,
    cfg: &TrainConfig,
) -> Result<(Encoder, TrainLog)> {
    train_encoder_with_hook(kg, nb, init, enc_cfg, cfg, None)
}

pub fn train_encoder_with_hook(
    kg: &KnowledgeGraph,
    nb: &Neighborhoods,
    init: EmbeddingState,
    enc_cfg: &EncoderConfig,
    cfg: &TrainConfig,
    mut hook: Option<EpochHook<'_>>,
) -> Result<(Encoder, TrainLog)> {
    cfg.validate()?;
    enc_cfg.validate()?;
    if init.entities.rows() != kg.n_entities() || init.relations.rows() != kg.n_relation_rows() {
        return Err(Error::Dimension(format!(
            "initial embeddings cover {}/{} ids, graph has {}/{}",
            init.entities.rows(),
            init.relations.rows(),
            kg.n_entities(),
            kg.n_relation_rows()
        )));
    }
    let params = EncoderParams::init(enc_cfg, &mut rng_for(cfg.seed, STREAM_INIT));
    let mut enc = Encoder::new(enc_cfg.clone(), init, params)?;
    let mut opt = Optimizer::new(
        &enc.named_matrices().into_iter().map(|(_, m)| m).collect::<Vec<_>>(),
        cfg.adam(),
    );
    let mut neg_rng = rng_for(cfg.seed, STREAM_NEGATIVES);
    let mut drop_rng = rng_for(cfg.seed, STREAM_DROPOUT);
    let margin = cfg.margin(enc_cfg.use_relations);
    let mut log = TrainLog::default();
    let mut stopper = EarlyStop::new(cfg.eval_every, cfg.patience);
    for epoch in 1..=cfg.epochs {
        if cfg.normalize_every_iter {
            enc.project_entities();
        }
        let neg = sample_negatives_with(kg.n_entities(), kg.train(), cfg.negative_ratio, &mut neg_rng)?;
        let dropout = (enc_cfg.dropout > 0.0).then_some(&mut drop_rng);
        let (loss, grads) = encoder_loss_and_grad(&enc, nb, kg.train(), &neg.negatives, &margin, dropout)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("encoder loss at epoch {epoch}")));
        }
        let grad_list: Vec<&Matrix> = grads.named_matrices().into_iter().map(|(_, m)| m).collect();
        opt.step(enc.matrices_mut(), grad_list, &[])?;
        log.losses.push(loss);
        debug!("encoder epoch {epoch}: loss {loss:.4}");
        decay_lr(&mut opt, epoch, cfg.lr_decay_every, cfg.lr_decay);
        if let Some(h) = hook.as_mut() {
            h(epoch, &enc)?;
        }
        if stopper.due(epoch) {
            let mrr = encoder_validation_mrr(kg, &enc, nb)?;
            info!("encoder epoch {epoch}: loss {loss:.4}, validation MRR {mrr:.4}");
            if stopper.record(epoch, mrr, || enc.clone(), &mut log) {
                log.stopped_early = true;
                break;
            }
        }
    }
    if let Some(best) = stopper.into_best(&mut log) {
        enc = best;
    }
    log.finish("encoder");
    Ok((enc, log))
}

/// ConvKB training settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderTrainConfig {
    /// L2 coefficient on `W`.
    pub lambda: f64,
    pub negative_ratio: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub n_filters: usize,
    /// Dropout on the concatenated feature maps.
    pub dropout: f64,
    pub freeze_embeddings: bool,
    /// Learning rate of `H″`/`G′` relative to `lr` while they are fine-tuned.
    pub embedding_lr_scale: f64,
    pub weight_decay: f64,
    pub lr_decay_every: usize,
    pub lr_decay: f64,
    pub eval_every: usize,
    pub patience: usize,
    pub seed: u64,
    /// Half-width of the uniform noise added to the initial filters.
    pub init_noise: f64,
}

impl Default for DecoderTrainConfig {
    fn default() -> Self {
        DecoderTrainConfig {
            lambda: 1e-5,
            negative_ratio: 10,
            lr: 1e-3,
            epochs: 400,
            batch_size: 128,
            n_filters: 50,
            dropout: 0.3,
            freeze_embeddings: false,
            embedding_lr_scale: 1.0,
            weight_decay: 1e-5,
            lr_decay_every: 25,
            lr_decay: 0.5,
            eval_every: 50,
            patience: 3,
            seed: 0,
            init_noise: 0.01,
        }
    }
}

impl DecoderTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.lambda >= 0.0) {
            return bad("lambda must be ≥ 0");
        }
        if !(self.lr > 0.0) {
            return bad("decoder learning rate must be > 0");
        }
        if self.negative_ratio == 0 || self.batch_size == 0 || self.n_filters == 0 {
            return bad("negative_ratio, batch_size and n_filters must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("decoder dropout must be in [0, 1)");
        }
        if !(self.lr_decay > 0.0) {
            return bad("lr_decay must be > 0");
        }
        if !(self.embedding_lr_scale > 0.0) {
            return bad("embedding_lr_scale must be > 0");
        }
        Ok(())
    }
}

/// Fits ConvKB on a copy of `(entities, relations)`; the inputs are left untouched.
pub fn train_decoder(
    kg: &KnowledgeGraph,
    entities: &Matrix,
    relations: &Matrix,
    cfg: &DecoderTrainConfig,
) -> Result<(ConvKb, TrainLog)> {
    cfg.validate()?;
    if entities.rows() != kg.n_entities() || relations.rows() < kg.n_relations() {
        return Err(Error::Dimension(format!(
            "embeddings cover {}/{} ids, graph has {}/{}",
            entities.rows(),
            relations.rows(),
            kg.n_entities(),
            kg.n_relations()
        )));
    }
    let k = entities.cols();
    let params = DecoderParams::init(cfg.n_filters, k, cfg.init_noise, &mut rng_for(cfg.seed, STREAM_INIT));
    let mut model = ConvKb::new(params, entities.clone(), relations.clone())?;
    let adam = AdamConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..AdamConfig::default()
    };
    let mut opt = Optimizer::new(
        &model.named_matrices().into_iter().map(|(_, m)| m).collect::<Vec<_>>(),
        adam,
    );
    // matrices are ordered filters, W, H, G
    for st in &mut opt.states[2..] {
        st.config.lr *= cfg.embedding_lr_scale;
    }
    let frozen: &[usize] = if cfg.freeze_embeddings { &[2, 3] } else { &[] };
    let mut neg_rng = rng_for(cfg.seed, STREAM_NEGATIVES);
    let mut drop_rng = rng_for(cfg.seed, STREAM_DROPOUT);
    let mut shuffle_rng = rng_for(cfg.seed, STREAM_SHUFFLE);
    let mut train = kg.train().to_vec();
    let mut log = TrainLog::default();
    let mut stopper = EarlyStop::new(cfg.eval_every, cfg.patience);
    for epoch in 1..=cfg.epochs {
        train.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for chunk in train.chunks(cfg.batch_size) {
            let neg = sample_negatives_with(kg.n_entities(), chunk, cfg.negative_ratio, &mut neg_rng)?;
            let (triples, labels) = neg.labelled();
            let dropout = (cfg.dropout > 0.0).then_some((cfg.dropout, &mut drop_rng));
            let (loss, grads) = model.loss_and_grad(&triples, &labels, cfg.lambda, dropout)?;
            let grad_list: Vec<&Matrix> = grads.named_matrices().into_iter().map(|(_, m)| m).collect();
            opt.step(model.matrices_mut(), grad_list, frozen)?;
            total += loss;
        }
        if !total.is_finite() {
            return Err(Error::NonFinite(format!("decoder loss at epoch {epoch}")));
        }
        log.losses.push(total);
        debug!("decoder epoch {epoch}: loss {total:.4}");
        decay_lr(&mut opt, epoch, cfg.lr_decay_every, cfg.lr_decay);
        if stopper.due(epoch) {
            let mrr = evaluate(kg.valid(), &model, kg)?.mrr;
            info!("decoder epoch {epoch}: loss {total:.4}, validation MRR {mrr:.4}");
            if stopper.record(epoch, mrr, || model.clone(), &mut log) {
                log.stopped_early = true;
                break;
            }
        }
    }
    if let Some(best) = stopper.into_best(&mut log) {
        model = best;
    }
    log.finish("decoder");
    Ok((model, log))
}

/// Writes TransE embeddings as a checkpoint.
pub fn write_transe_checkpoint(dir: &Path, state: &EmbeddingState, cfg: &TrainConfig) -> Result<()> {
    write_checkpoint(
        dir,
        "transe",
        cfg,
        &[("H".into(), &state.entities), ("G".into(), &state.relations)],
    )
}

pub fn read_transe_checkpoint(dir: &Path) -> Result<EmbeddingState> {
    let mut ck = read_checkpoint(dir, "transe")?;
    Ok(EmbeddingState {
        entities: ck.take("H")?,
        relations: ck.take("G")?,
    })
}

/// An encoder checkpoint also stores the output embeddings the decoder starts from.
pub fn write_encoder_checkpoint(dir: &Path, enc: &Encoder, nb: &Neighborhoods) -> Result<()> {
    let (h_out, g_out) = encoder_outputs(enc, nb)?;
    let mut mats = enc.named_matrices();
    mats.push(("out.H".into(), &h_out));
    mats.push(("out.G".into(), &g_out));
    write_checkpoint(dir, "encoder", &enc.config, &mats)
}

/// Loaded encoder plus its stored `(H″, G′)`.
pub struct EncoderCheckpoint {
    pub encoder: Encoder,
    pub h_out: Matrix,
    pub g_out: Matrix,
}

pub fn read_encoder_checkpoint(dir: &Path) -> Result<EncoderCheckpoint> {
    let mut ck = read_checkpoint(dir, "encoder")?;
    let config: EncoderConfig = ck.config()?;
    // rebuild a same-shaped encoder, then overwrite every matrix by name
    let (t0, p0) = config.input_dims();
    let shapes = |name: &str, ck: &crate::checkpoint::Checkpoint| {
        ck.matrices.get(name).map(|m| m.rows()).unwrap_or(0)
    };
    let n_e = shapes("H", &ck);
    let n_r = shapes("G", &ck);
    let mut enc = Encoder::new(
        config.clone(),
        EmbeddingState {
            entities: Matrix::zeros(n_e, t0),
            relations: Matrix::zeros(n_r, p0),
        },
        EncoderParams::init(&config, &mut rng_for(0, 0)),
    )?;
    let names: Vec<String> = enc.named_matrices().into_iter().map(|(n, _)| n).collect();
    for (name, slot) in names.iter().zip(enc.matrices_mut()) {
        let m = ck.take(name)?;
        m.expect_shape(slot.shape(), name)?;
        *slot = m;
    }
    Ok(EncoderCheckpoint {
        encoder: enc,
        h_out: ck.take("out.H")?,
        g_out: ck.take("out.G")?,
    })
}

pub fn write_decoder_checkpoint(dir: &Path, model: &ConvKb, cfg: &DecoderTrainConfig) -> Result<()> {
    write_checkpoint(dir, "decoder", cfg, &model.named_matrices())
}

pub fn read_decoder_checkpoint(dir: &Path) -> Result<(ConvKb, DecoderTrainConfig)> {
    let mut ck = read_checkpoint(dir, "decoder")?;
    let cfg: DecoderTrainConfig = ck.config()?;
    let params = DecoderParams {
        filters: ck.take("filters")?,
        w: ck.take("W")?,
    };
    Ok((ConvKb::new(params, ck.take("H")?, ck.take("G")?)?, cfg))
}

/// Mean `‖h + g − t‖₁` over `triples`.
pub fn mean_distance(triples: &[Triple], state: &EmbeddingState) -> f64 {
    let scorer = TranslationalScorer {
        entities: &state.entities,
        relations: &state.relations,
        use_relations: true,
    };
    triples.iter().map(|t| scorer.score(t)).sum::<f64>() / triples.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::hinge_loss;
    use crate::graph::GraphOptions;
    use crate::nhop::{enumerate_nhop_paths, AuxConfig};
    use proptest::prelude::*;

    /// Square `a=(1,0) b=(0,1) c=(−1,0) d=(0,−1)`: `r = (−1,1)` maps a→b and d→c,
    /// `s = (−1,−1)` maps a→d and b→c.
    pub(crate) fn square_graph() -> KnowledgeGraph {
        let (a, b, c, d) = ("a", "b", "c", "d");
        KnowledgeGraph::from_named(
            &[(a, "r", b), (a, "s", d), (b, "s", c)],
            &[],
            &[(d, "r", c)],
            GraphOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn replacement_candidates() {
        let kg = KnowledgeGraph::from_named(&[("a", "r", "b"), ("c", "r", "a")], &[], &[], GraphOptions::default())
            .unwrap();
        let pos = Triple::new(0, 0, 1);
        let neg = sample_negatives(&kg, &[pos], 400, 3).unwrap();
        let mut heads = std::collections::BTreeSet::new();
        let mut tails = std::collections::BTreeSet::new();
        for n in &neg.negatives {
            if n.head != pos.head {
                heads.insert(n.head.0);
            } else {
                tails.insert(n.tail.0);
            }
        }
        assert_eq!(heads.into_iter().collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(tails.into_iter().collect::<Vec<_>>(), vec![0, 2]);
        assert!(neg.is_aligned());
    }

    #[test]
    fn counts_and_errors() {
        let kg = KnowledgeGraph::from_ids(10, 1, vec![Triple::new(0, 0, 1)], vec![], vec![], GraphOptions::default())
            .unwrap();
        let batch: Vec<Triple> = (0..100).map(|i| Triple::new(i % 10, 0, (i + 1) % 10)).collect();
        let neg = sample_negatives(&kg, &batch, 2, 1).unwrap();
        assert_eq!(neg.negatives.len(), 200);
        assert!(neg.is_aligned());
        assert_eq!(neg, sample_negatives(&kg, &batch, 2, 1).unwrap());
        assert!(sample_negatives(&kg, &batch, 0, 1).is_err());
        let tiny = KnowledgeGraph::from_ids(1, 1, vec![Triple::new(0, 0, 0)], vec![], vec![], GraphOptions::default())
            .unwrap();
        assert!(sample_negatives(&tiny, &[Triple::new(0, 0, 0)], 1, 1).is_err());
    }

    #[test]
    fn replacement_entities_are_uniform() {
        // χ² over the 9 candidates of a 10-entity graph; 99th percentile of χ²(8) is 20.09
        let n = 10;
        let pos = Triple::new(4, 0, 4);
        let mut rng = rng_for(17, 0);
        let neg = sample_negatives_with(n, &vec![pos; 1000], 100, &mut rng).unwrap();
        let mut counts = vec![0f64; n];
        let mut head_side = 0usize;
        for t in &neg.negatives {
            if t.head != pos.head {
                counts[t.head.index()] += 1.0;
                head_side += 1;
            } else {
                counts[t.tail.index()] += 1.0;
            }
        }
        assert_eq!(counts[4], 0.0);
        let total = neg.negatives.len() as f64;
        let expected = total / 9.0;
        let chi2: f64 = counts
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != 4)
            .map(|(_, &c)| (c - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < 20.09, "chi2 = {chi2}");
        let frac = head_side as f64 / total;
        assert!((frac - 0.5).abs() < 0.01, "head fraction {frac}");
    }

    proptest! {
        #[test]
        fn batches_stay_aligned(seed in any::<u64>(), ratio in 1usize..6, n in 2usize..20) {
            let batch: Vec<Triple> = (0..15u32).map(|i| Triple::new(i % n as u32, i % 3, (i * 7) % n as u32)).collect();
            let neg = sample_negatives_with(n, &batch, ratio, &mut rng_for(seed, 0)).unwrap();
            prop_assert!(neg.is_aligned());
            let (triples, labels) = neg.labelled();
            prop_assert_eq!(triples.len(), batch.len() * (ratio + 1));
            prop_assert_eq!(labels.iter().filter(|&&l| l == 1.0).count(), batch.len());
        }
    }

    fn transe_cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            gamma: 2.0,
            lr: 0.01,
            epochs,
            negative_ratio: 4,
            seed: 5,
            weight_decay: 0.0,
            lr_decay_every: 0,
            batch_size: 0,
            ..TrainConfig::default()
        }
    }

    /// Margin 2 equals the L1 gap between the square's valid and corrupted
    /// triples, so zero loss forces the constructed solution. Unit-norm entities
    /// make the problem non-convex; the seed is fixed.
    #[test]
    fn transe_recovers_exact_translations() {
        let kg = square_graph();
        let (state, log) = train_transe(&kg, 2, &transe_cfg(2000)).unwrap();
        let all: Vec<Triple> = kg.train().iter().chain(kg.test()).copied().collect();
        let d = mean_distance(&all, &state);
        assert!(d < 0.05, "mean distance {d}, final loss {:?}", log.final_loss());
    }

    #[test]
    fn transe_zero_epochs_and_determinism() {
        let kg = square_graph();
        let (zero, log) = train_transe(&kg, 3, &transe_cfg(0)).unwrap();
        assert!(log.losses.is_empty());
        let mut init = EmbeddingState::random(4, kg.n_relation_rows(), 3, 3, &mut rng_for(5, STREAM_INIT));
        normalize_rows(&mut init.relations);
        assert_eq!(zero, init);
        let a = train_transe(&kg, 3, &transe_cfg(30)).unwrap();
        let b = train_transe(&kg, 3, &transe_cfg(30)).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    fn small_encoder() -> EncoderConfig {
        EncoderConfig {
            entity_dims: vec![4, 6, 4],
            relation_dims: vec![4, 6, 4],
            dropout: 0.0,
            ..EncoderConfig::default()
        }
    }

    #[test]
    fn encoder_training_reduces_loss() {
        let kg = square_graph();
        let aux = enumerate_nhop_paths(&kg, &AuxConfig::default()).unwrap();
        let nb = Neighborhoods::build(&kg, &aux).unwrap();
        let init = EmbeddingState::random(4, kg.n_relation_rows(), 4, 4, &mut rng_for(1, 1));
        let cfg = TrainConfig {
            epochs: 200,
            lr: 0.01,
            seed: 2,
            ..TrainConfig::default()
        };
        let (enc, log) = train_encoder(&kg, &nb, init.clone(), &small_encoder(), &cfg).unwrap();
        assert_eq!(log.losses.len(), 200);
        assert!(log.final_loss().unwrap() < log.losses[0]);
        let (h, g) = encoder_outputs(&enc, &nb).unwrap();
        assert_eq!(h.shape(), (4, 4));
        assert_eq!(g.rows(), kg.n_relation_rows());

        let zero_margin = TrainConfig {
            gamma: 0.0,
            epochs: 20,
            ..cfg.clone()
        };
        let (_, log) = train_encoder(&kg, &nb, init.clone(), &small_encoder(), &zero_margin).unwrap();
        assert!(log.losses.iter().all(|&l| l >= 0.0));

        let wrong = EmbeddingState::random(3, kg.n_relation_rows(), 4, 4, &mut rng_for(1, 1));
        assert!(train_encoder(&kg, &nb, wrong, &small_encoder(), &cfg).is_err());
    }

    #[test]
    fn encoder_checkpoint_round_trip() {
        let kg = square_graph();
        let nb = Neighborhoods::build(&kg, &[]).unwrap();
        let init = EmbeddingState::random(4, kg.n_relation_rows(), 4, 4, &mut rng_for(1, 1));
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let (enc, _) = train_encoder(&kg, &nb, init, &small_encoder(), &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_encoder_checkpoint(&dir.path().join("enc"), &enc, &nb).unwrap();
        let back = read_encoder_checkpoint(&dir.path().join("enc")).unwrap();
        assert_eq!(back.encoder, enc);
        let (h, g) = encoder_outputs(&enc, &nb).unwrap();
        assert_eq!((back.h_out, back.g_out), (h, g));
    }

    /// Ten entities on random points; each relation is the exact offset of its
    /// training pairs, so valid rows of `[h, g, t]` satisfy `h + g − t = 0`.
    fn separable() -> (KnowledgeGraph, Matrix, Matrix) {
        let mut rng = rng_for(9, 0);
        let k = 4;
        let ents = Matrix::uniform(10, k, 1.0, &mut rng);
        let train: Vec<Triple> = (0..5u32).map(|i| Triple::new(i, i, i + 5)).collect();
        let mut rels = Matrix::zeros(5, k);
        for t in &train {
            for d in 0..k {
                rels[(t.relation.index(), d)] = ents[(t.tail.index(), d)] - ents[(t.head.index(), d)];
            }
        }
        let kg = KnowledgeGraph::from_ids(10, 5, train, vec![], vec![], GraphOptions { self_loops: false })
            .unwrap();
        (kg, ents, rels)
    }

    fn frozen_cfg(epochs: usize) -> DecoderTrainConfig {
        DecoderTrainConfig {
            epochs,
            n_filters: 3,
            negative_ratio: 2,
            batch_size: 8,
            lr: 0.01,
            dropout: 0.0,
            freeze_embeddings: true,
            lr_decay_every: 0,
            eval_every: 0,
            seed: 4,
            ..DecoderTrainConfig::default()
        }
    }

    #[test]
    fn decoder_fits_separable_data() {
        let (kg, ents, rels) = separable();
        let (model, log) = train_decoder(&kg, &ents, &rels, &frozen_cfg(100)).unwrap();
        assert!(
            log.final_loss().unwrap() <= 0.5 * log.losses[0],
            "{:?} -> {:?}",
            log.losses[0],
            log.final_loss()
        );
        assert_eq!(model.entities, ents);
        assert_eq!(model.relations, rels);
        let again = train_decoder(&kg, &ents, &rels, &frozen_cfg(100)).unwrap().1;
        assert_eq!(again.losses, log.losses);
    }

    #[test]
    fn heavy_penalty_shrinks_w() {
        let (kg, ents, rels) = separable();
        let mut norms = Vec::new();
        for epochs in 0..=15 {
            let cfg = DecoderTrainConfig {
                lambda: 1e3,
                batch_size: 64,
                ..frozen_cfg(epochs)
            };
            norms.push(train_decoder(&kg, &ents, &rels, &cfg).unwrap().0.params.w.frobenius_sq());
        }
        assert!(norms.windows(2).all(|w| w[1] < w[0]), "{norms:?}");
    }

    #[test]
    fn decoder_checkpoint_round_trip() {
        let (kg, ents, rels) = separable();
        let cfg = frozen_cfg(2);
        let (model, _) = train_decoder(&kg, &ents, &rels, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_decoder_checkpoint(dir.path(), &model, &cfg).unwrap();
        let (back, back_cfg) = read_decoder_checkpoint(dir.path()).unwrap();
        assert_eq!(back, model);
        assert_eq!(back_cfg, cfg);
    }

    #[test]
    fn hinge_is_never_negative_with_zero_margin() {
        let kg = square_graph();
        let st = EmbeddingState::random(4, kg.n_relation_rows(), 3, 3, &mut rng_for(3, 3));
        let neg = sample_negatives(&kg, kg.train(), 3, 0).unwrap();
        let m = MarginLoss {
            gamma: 0.0,
            ..MarginLoss::default()
        };
        assert!(hinge_loss(kg.train(), &neg.negatives, &st.entities, &st.relations, &m).unwrap() >= 0.0);
    }

    #[test]
    fn smoothing_detects_rises() {
        let down: Vec<f64> = (0..100).map(|i| 100.0 - i as f64).collect();
        assert!(smoothed_non_increasing(&down));
        let mut up = down.clone();
        up.reverse();
        assert!(!smoothed_non_increasing(&up));
    }
}

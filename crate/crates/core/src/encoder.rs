//! Relation-aware multi-head graph attention encoder.
//!
//! Each layer scores every incoming triple `(i, j, k)` of an entity by
//! `c = W1·[h_i ‖ h_j ‖ g_k]`, `b = LeakyReLU(W2·c)`, normalises the scores with a
//! softmax over the entity's neighbourhood and aggregates `σ(Σ α·c)`. Heads are
//! concatenated in intermediate layers and averaged in the last one. Relation
//! embeddings are mapped by `G·W_R` per layer, and the output is
//! `H″ = H_in·W_E + H_final`.
//!
//! `W1` is split column-wise into the head, neighbour and relation blocks so that
//! `c` is a sum of per-node projections; this keeps per-edge work at `O(T_c)`
//! and lets backward recompute `c` instead of caching it.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EntityId, KnowledgeGraph, RelationId, Triple};
use crate::nhop::AuxPath;
use crate::numerics::{
    axpy, dot, grouped_softmax_backward, leaky_relu_grad, leaky_relu_scalar, normalize_rows,
    normalize_rows_backward, sign, softmax_into, Activation, GroupIndex, Matrix,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// `[T_in, T_1, …, T_final]`; intermediate sizes are `heads × per-head size`.
    pub entity_dims: Vec<usize>,
    /// `[P_in, P_1, …, P_final]`; `P_final` must equal `T_final`.
    pub relation_dims: Vec<usize>,
    pub heads: usize,
    pub slope: f64,
    pub activation: Activation,
    pub normalize: bool,
    /// Dropout probability on attention coefficients during training.
    pub dropout: f64,
    /// When false, the relation block of `c` is zeroed (the −Relations ablation).
    pub use_relations: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            entity_dims: vec![50, 200, 200],
            relation_dims: vec![50, 200, 200],
            heads: 2,
            slope: 0.2,
            activation: Activation::Elu,
            normalize: true,
            dropout: 0.3,
            use_relations: true,
        }
    }
}

impl EncoderConfig {
    pub fn n_layers(&self) -> usize {
        self.entity_dims.len() - 1
    }

    pub fn input_dims(&self) -> (usize, usize) {
        (self.entity_dims[0], self.relation_dims[0])
    }

    pub fn final_dim(&self) -> usize {
        *self.entity_dims.last().unwrap()
    }

    fn is_final(&self, layer: usize) -> bool {
        layer + 1 == self.n_layers()
    }

    /// Width of one head's triple representation in `layer`.
    pub fn head_dim(&self, layer: usize) -> usize {
        let out = self.entity_dims[layer + 1];
        if self.is_final(layer) {
            out
        } else {
            out / self.heads
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.entity_dims.is_empty() || self.entity_dims.len() != self.relation_dims.len() {
            return bad("entity_dims and relation_dims need the same non-zero length".into());
        }
        if self.entity_dims.iter().chain(&self.relation_dims).any(|&d| d == 0) {
            return bad("dimensions must be positive".into());
        }
        if self.heads == 0 {
            return bad("heads must be at least 1".into());
        }
        if self.final_dim() != *self.relation_dims.last().unwrap() {
            return bad("final entity and relation dims must match".into());
        }
        for l in 0..self.n_layers().saturating_sub(1) {
            if self.entity_dims[l + 1] % self.heads != 0 {
                return bad(format!(
                    "layer {l} output {} not divisible by {} heads",
                    self.entity_dims[l + 1],
                    self.heads
                ));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)".into());
        }
        if !(self.slope > 0.0 && self.slope < 1.0) {
            return bad("LeakyReLU slope must be in (0, 1)".into());
        }
        Ok(())
    }
}

/// Entity matrix `H` (`N_e × T`) and relation matrix `G` (`N_r × P`).
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingState {
    pub entities: Matrix,
    pub relations: Matrix,
}

impl EmbeddingState {
    /// Uniform `(−6/√d, 6/√d)` initialisation.
    pub fn random<R: Rng + ?Sized>(
        n_entities: usize,
        n_relations: usize,
        entity_dim: usize,
        relation_dim: usize,
        rng: &mut R,
    ) -> Self {
        EmbeddingState {
            entities: Matrix::uniform(n_entities, entity_dim, 6.0 / (entity_dim as f64).sqrt(), rng),
            relations: Matrix::uniform(
                n_relations,
                relation_dim,
                6.0 / (relation_dim as f64).sqrt(),
                rng,
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionHeadParams {
    /// `T_c × (2T + P)`
    pub w1: Matrix,
    /// `1 × T_c`
    pub w2: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayerParams {
    pub heads: Vec<AttentionHeadParams>,
    /// `P × P′`, shared by all heads.
    pub w_r: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub layers: Vec<EncoderLayerParams>,
    /// `T_in × T_final`
    pub w_e: Matrix,
}

impl EncoderParams {
    pub fn init<R: Rng + ?Sized>(config: &EncoderConfig, rng: &mut R) -> Self {
        let layers = (0..config.n_layers())
            .map(|l| {
                let (t, p) = (config.entity_dims[l], config.relation_dims[l]);
                let tc = config.head_dim(l);
                let heads = (0..config.heads)
                    .map(|_| AttentionHeadParams {
                        w1: Matrix::xavier(tc, 2 * t + p, rng),
                        w2: Matrix::xavier(1, tc, rng),
                    })
                    .collect();
                EncoderLayerParams {
                    heads,
                    w_r: Matrix::xavier(p, config.relation_dims[l + 1], rng),
                }
            })
            .collect();
        EncoderParams {
            layers,
            w_e: Matrix::xavier(config.entity_dims[0], config.final_dim(), rng),
        }
    }
}

/// Trainable encoder: input embeddings plus layer weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub state: EmbeddingState,
    pub params: EncoderParams,
}

impl Encoder {
    pub fn new(config: EncoderConfig, state: EmbeddingState, params: EncoderParams) -> Result<Self> {
        config.validate()?;
        let enc = Encoder {
            config,
            state,
            params,
        };
        enc.check_shapes()?;
        Ok(enc)
    }

    /// Fresh weights around the given input embeddings.
    pub fn with_state<R: Rng + ?Sized>(
        config: EncoderConfig,
        state: EmbeddingState,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let params = EncoderParams::init(&config, rng);
        Encoder::new(config, state, params)
    }

    fn check_shapes(&self) -> Result<()> {
        let c = &self.config;
        let (t0, p0) = c.input_dims();
        if self.state.entities.cols() != t0 || self.state.relations.cols() != p0 {
            return Err(Error::Dimension(format!(
                "input embeddings are {}/{} wide, config expects {t0}/{p0}",
                self.state.entities.cols(),
                self.state.relations.cols()
            )));
        }
        if self.params.layers.len() != c.n_layers() {
            return Err(Error::Dimension("layer count mismatch".into()));
        }
        for (l, layer) in self.params.layers.iter().enumerate() {
            let (t, p, tc) = (c.entity_dims[l], c.relation_dims[l], c.head_dim(l));
            if layer.heads.len() != c.heads {
                return Err(Error::Dimension(format!("layer {l} head count")));
            }
            for head in &layer.heads {
                head.w1.expect_shape((tc, 2 * t + p), "W1")?;
                head.w2.expect_shape((1, tc), "W2")?;
            }
            layer.w_r.expect_shape((p, c.relation_dims[l + 1]), "W_R")?;
        }
        self.params.w_e.expect_shape((t0, c.final_dim()), "W_E")
    }

    /// Same-shaped container of zeros, used to hold gradients.
    pub fn zeros_like(&self) -> Encoder {
        let z = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        Encoder {
            config: self.config.clone(),
            state: EmbeddingState {
                entities: z(&self.state.entities),
                relations: z(&self.state.relations),
            },
            params: EncoderParams {
                layers: self
                    .params
                    .layers
                    .iter()
                    .map(|l| EncoderLayerParams {
                        heads: l
                            .heads
                            .iter()
                            .map(|h| AttentionHeadParams {
                                w1: z(&h.w1),
                                w2: z(&h.w2),
                            })
                            .collect(),
                        w_r: z(&l.w_r),
                    })
                    .collect(),
                w_e: z(&self.params.w_e),
            },
        }
    }

    /// Every trainable matrix with its checkpoint name, in a fixed order.
    pub fn named_matrices(&self) -> Vec<(String, &Matrix)> {
        let mut out = vec![
            ("H".to_string(), &self.state.entities),
            ("G".to_string(), &self.state.relations),
        ];
        for (l, layer) in self.params.layers.iter().enumerate() {
            for (m, head) in layer.heads.iter().enumerate() {
                out.push((format!("layer{l}.head{m}.W1"), &head.w1));
                out.push((format!("layer{l}.head{m}.W2"), &head.w2));
            }
            out.push((format!("layer{l}.W_R"), &layer.w_r));
        }
        out.push(("W_E".to_string(), &self.params.w_e));
        out
    }

    /// Mutable view in the same order as [`Encoder::named_matrices`].
    pub fn matrices_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.state.entities, &mut self.state.relations];
        for layer in &mut self.params.layers {
            for head in &mut layer.heads {
                out.push(&mut head.w1);
                out.push(&mut head.w2);
            }
            out.push(&mut layer.w_r);
        }
        out.push(&mut self.params.w_e);
        out
    }

    /// All trainable values flattened, for gradient checks.
    pub fn flatten(&self) -> Vec<f64> {
        self.named_matrices()
            .into_iter()
            .flat_map(|(_, m)| m.data().to_vec())
            .collect()
    }

    pub fn unflatten(&mut self, values: &[f64]) {
        let mut offset = 0;
        for m in self.matrices_mut() {
            let n = m.data().len();
            m.data_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
    }

    /// Rescales input entity rows to unit norm in place.
    pub fn project_entities(&mut self) {
        if self.config.normalize {
            normalize_rows(&mut self.state.entities);
        }
    }
}

/// Attention neighbourhoods: direct in-edges, self-loops and auxiliary paths,
/// grouped by target entity.
#[derive(Clone, Debug)]
pub struct Neighborhoods {
    n_entities: usize,
    targets: Vec<u32>,
    sources: Vec<u32>,
    rel_offsets: Vec<usize>,
    rels: Vec<u32>,
    groups: GroupIndex,
}

impl Neighborhoods {
    pub fn build(kg: &KnowledgeGraph, aux: &[AuxPath]) -> Result<Self> {
        let n = kg.n_entities();
        let mut aux_by_target: Vec<Vec<&AuxPath>> = vec![Vec::new(); n];
        for p in aux {
            if p.target.index() >= n || p.source.index() >= n {
                return Err(Error::UnknownEntity(p.target.index().max(p.source.index())));
            }
            if let Some(r) = p.relation_seq.iter().find(|r| r.index() >= kg.n_relations()) {
                return Err(Error::UnknownRelation(r.index()));
            }
            aux_by_target[p.target.index()].push(p);
        }
        let mut nb = Neighborhoods {
            n_entities: n,
            targets: Vec::new(),
            sources: Vec::new(),
            rel_offsets: vec![0],
            rels: Vec::new(),
            groups: GroupIndex::new(Vec::new(), 0)?,
        };
        for i in 0..n {
            let e = EntityId(i as u32);
            for &(j, r) in kg.in_neighborhood(e)? {
                nb.push(i as u32, j.0, &[r.0]);
            }
            for p in &aux_by_target[i] {
                let seq: Vec<u32> = p.relation_seq.iter().map(|r| r.0).collect();
                nb.push(i as u32, p.source.0, &seq);
            }
        }
        nb.groups = GroupIndex::new(nb.targets.iter().map(|&t| t as usize).collect(), n)?;
        Ok(nb)
    }

    fn push(&mut self, target: u32, source: u32, rels: &[u32]) {
        self.targets.push(target);
        self.sources.push(source);
        self.rels.extend_from_slice(rels);
        self.rel_offsets.push(self.rels.len());
    }

    pub fn n_edges(&self) -> usize {
        self.targets.len()
    }

    pub fn n_entities(&self) -> usize {
        self.n_entities
    }

    pub fn target(&self, e: usize) -> usize {
        self.targets[e] as usize
    }

    pub fn source(&self, e: usize) -> usize {
        self.sources[e] as usize
    }

    pub fn relations(&self, e: usize) -> &[u32] {
        &self.rels[self.rel_offsets[e]..self.rel_offsets[e + 1]]
    }

    pub fn hop_count(&self, e: usize) -> usize {
        self.rel_offsets[e + 1] - self.rel_offsets[e]
    }

    pub fn groups(&self) -> &GroupIndex {
        &self.groups
    }

    /// Largest relation id referenced, if any.
    fn max_relation(&self) -> Option<u32> {
        self.rels.iter().copied().max()
    }
}

/// One aggregated triple as seen by one head of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceEntry {
    pub target: EntityId,
    pub source: EntityId,
    pub relations: Vec<RelationId>,
    pub hop_count: usize,
    pub c: Vec<f64>,
    pub b: f64,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionTrace {
    pub layer: usize,
    pub head: usize,
    pub entries: Vec<TraceEntry>,
}

/// Which target entities to record attention for (`None` = all).
#[derive(Clone, Debug, Default)]
pub struct TraceRequest {
    pub targets: Option<HashSet<EntityId>>,
}

impl TraceRequest {
    pub fn all() -> Self {
        TraceRequest { targets: None }
    }

    pub fn entities(ids: impl IntoIterator<Item = EntityId>) -> Self {
        TraceRequest {
            targets: Some(ids.into_iter().collect()),
        }
    }

    fn wants(&self, target: usize) -> bool {
        self.targets
            .as_ref()
            .is_none_or(|s| s.contains(&EntityId(target as u32)))
    }
}

#[derive(Clone, Debug)]
pub struct EncoderForwardResult {
    /// Output of the last attention layer.
    pub h_final: Matrix,
    /// `H_in·W_E + H_final`
    pub h_residual_out: Matrix,
    pub g_out: Matrix,
    pub traces: Option<Vec<AttentionTrace>>,
}

struct HeadCache {
    pa: Matrix,
    pb: Matrix,
    pc: Option<Matrix>,
    s: Vec<f64>,
    alpha: Vec<f64>,
    /// Dropout multiplier per edge (1 when dropout is off).
    keep: Vec<f64>,
}

struct LayerCache {
    h_in: Matrix,
    g_in: Matrix,
    heads: Vec<HeadCache>,
    pre: Matrix,
    out: Matrix,
    norms: Option<Vec<f64>>,
}

struct ForwardCache {
    h_input: Matrix,
    input_norms: Option<Vec<f64>>,
    layers: Vec<LayerCache>,
}

/// Per-head layer forward. Returns the aggregate `Σ α̃·c` per target (`N × T_c`).
#[allow(clippy::too_many_arguments)]
fn head_forward(
    h: &Matrix,
    g: &Matrix,
    nb: &Neighborhoods,
    head: &AttentionHeadParams,
    config: &EncoderConfig,
    keep: Vec<f64>,
    trace: Option<(&TraceRequest, &mut Vec<TraceEntry>)>,
) -> Result<(Matrix, HeadCache)> {
    let t = h.cols();
    let p = g.cols();
    let tc = head.w1.rows();
    let pa = h.matmul_t(&head.w1.column_block(0, t))?;
    let pb = h.matmul_t(&head.w1.column_block(t, t))?;
    let pc = if config.use_relations {
        Some(g.matmul_t(&head.w1.column_block(2 * t, p))?)
    } else {
        None
    };
    let w2 = head.w2.row(0);
    let qa = pa.matvec(w2)?;
    let qb = pb.matvec(w2)?;
    let qc = pc.as_ref().map(|m| m.matvec(w2)).transpose()?;

    let n_edges = nb.n_edges();
    let mut s = vec![0.0; n_edges];
    let mut b = vec![0.0; n_edges];
    for e in 0..n_edges {
        let mut v = qa[nb.target(e)] + qb[nb.source(e)];
        if let Some(qc) = &qc {
            v += nb.relations(e).iter().map(|&r| qc[r as usize]).sum::<f64>();
        }
        s[e] = v;
        b[e] = leaky_relu_scalar(v, config.slope);
    }
    let mut alpha = vec![0.0; n_edges];
    let groups = nb.groups();
    for grp in 0..groups.n_groups() {
        softmax_into(&b, groups.members(grp), &mut alpha);
    }

    let mut agg = Matrix::zeros(nb.n_entities(), tc);
    let mut c = vec![0.0; tc];
    let mut trace = trace;
    for e in 0..n_edges {
        let i = nb.target(e);
        edge_repr(&pa, &pb, pc.as_ref(), nb, e, &mut c);
        axpy(alpha[e] * keep[e], &c, agg.row_mut(i));
        if let Some((req, entries)) = trace.as_mut() {
            if req.wants(i) {
                entries.push(TraceEntry {
                    target: EntityId(i as u32),
                    source: EntityId(nb.source(e) as u32),
                    relations: nb.relations(e).iter().map(|&r| RelationId(r)).collect(),
                    hop_count: nb.hop_count(e),
                    c: c.clone(),
                    b: b[e],
                    alpha: alpha[e],
                });
            }
        }
    }
    Ok((
        agg,
        HeadCache {
            pa,
            pb,
            pc,
            s,
            alpha,
            keep,
        },
    ))
}

#[inline]
fn edge_repr(
    pa: &Matrix,
    pb: &Matrix,
    pc: Option<&Matrix>,
    nb: &Neighborhoods,
    e: usize,
    out: &mut [f64],
) {
    out.copy_from_slice(pa.row(nb.target(e)));
    axpy(1.0, pb.row(nb.source(e)), out);
    if let Some(pc) = pc {
        for &r in nb.relations(e) {
            axpy(1.0, pc.row(r as usize), out);
        }
    }
}

fn dropout_mask<R: Rng + ?Sized>(n: usize, p: f64, rng: Option<&mut R>) -> Vec<f64> {
    match rng {
        Some(rng) if p > 0.0 => {
            let scale = 1.0 / (1.0 - p);
            (0..n)
                .map(|_| if rng.gen::<f64>() < p { 0.0 } else { scale })
                .collect()
        }
        _ => vec![1.0; n],
    }
}

/// Runs one attention layer. Returns `(H′, G′)` plus traces when requested.
pub fn layer_forward(
    state: &EmbeddingState,
    nb: &Neighborhoods,
    params: &EncoderLayerParams,
    config: &EncoderConfig,
    is_final: bool,
    trace: Option<&TraceRequest>,
) -> Result<(EmbeddingState, Vec<AttentionTrace>)> {
    let (cache, traces) = layer_forward_cached::<rand_chacha::ChaCha8Rng>(
        &state.entities,
        &state.relations,
        nb,
        params,
        config,
        is_final,
        None,
        trace,
        0,
    )?;
    let g_out = state.relations.matmul(&params.w_r)?;
    Ok((
        EmbeddingState {
            entities: cache.out,
            relations: g_out,
        },
        traces,
    ))
}

#[allow(clippy::too_many_arguments)]
fn layer_forward_cached<R: Rng + ?Sized>(
    h: &Matrix,
    g: &Matrix,
    nb: &Neighborhoods,
    params: &EncoderLayerParams,
    config: &EncoderConfig,
    is_final: bool,
    mut rng: Option<&mut R>,
    trace: Option<&TraceRequest>,
    layer_index: usize,
) -> Result<(LayerCache, Vec<AttentionTrace>)> {
    if h.rows() != nb.n_entities() {
        return Err(Error::Dimension(format!(
            "{} entity rows for {} neighbourhoods",
            h.rows(),
            nb.n_entities()
        )));
    }
    if let Some(r) = nb.max_relation() {
        if r as usize >= g.rows() {
            return Err(Error::UnknownRelation(r as usize));
        }
    }
    let m = params.heads.len();
    let mut heads = Vec::with_capacity(m);
    let mut traces = Vec::new();
    let mut aggs = Vec::with_capacity(m);
    for (hi, head) in params.heads.iter().enumerate() {
        let t = h.cols();
        head.w1
            .expect_shape((head.w1.rows(), 2 * t + g.cols()), "W1 input width")?;
        let keep = dropout_mask(nb.n_edges(), config.dropout, rng.as_deref_mut());
        let mut entries = Vec::new();
        let (agg, cache) = head_forward(
            h,
            g,
            nb,
            head,
            config,
            keep,
            trace.map(|req| (req, &mut entries)),
        )?;
        if trace.is_some() {
            traces.push(AttentionTrace {
                layer: layer_index,
                head: hi,
                entries,
            });
        }
        aggs.push(agg);
        heads.push(cache);
    }
    let tc = aggs[0].cols();
    let n = h.rows();
    let pre = if is_final {
        let mut mean = Matrix::zeros(n, tc);
        for a in &aggs {
            mean.add_assign(a)?;
        }
        mean.scale(1.0 / m as f64);
        mean
    } else {
        let mut cat = Matrix::zeros(n, tc * m);
        for (k, a) in aggs.iter().enumerate() {
            cat.add_column_block(k * tc, a);
        }
        cat
    };
    let mut out = pre.clone();
    out.data_mut()
        .iter_mut()
        .for_each(|x| *x = config.activation.apply(*x));
    out.check_finite("attention layer activation")?;
    let norms = config.normalize.then(|| normalize_rows(&mut out));
    Ok((
        LayerCache {
            h_in: h.clone(),
            g_in: g.clone(),
            heads,
            pre,
            out,
            norms,
        },
        traces,
    ))
}

fn forward_cached<R: Rng + ?Sized>(
    enc: &Encoder,
    nb: &Neighborhoods,
    mut rng: Option<&mut R>,
    trace: Option<&TraceRequest>,
) -> Result<(EncoderForwardResult, ForwardCache)> {
    let config = &enc.config;
    let mut h_input = enc.state.entities.clone();
    let input_norms = config.normalize.then(|| normalize_rows(&mut h_input));
    let mut h = h_input.clone();
    let mut g = enc.state.relations.clone();
    let mut layers = Vec::with_capacity(config.n_layers());
    let mut traces = trace.map(|_| Vec::new());
    for (l, params) in enc.params.layers.iter().enumerate() {
        let (cache, t) = layer_forward_cached(
            &h,
            &g,
            nb,
            params,
            config,
            config.is_final(l),
            rng.as_deref_mut(),
            trace,
            l,
        )?;
        if let Some(all) = traces.as_mut() {
            all.extend(t);
        }
        h = cache.out.clone();
        g = g.matmul(&params.w_r)?;
        layers.push(cache);
    }
    let mut h_residual_out = h_input.matmul(&enc.params.w_e)?;
    h_residual_out.add_assign(&h)?;
    Ok((
        EncoderForwardResult {
            h_final: h,
            h_residual_out,
            g_out: g,
            traces,
        },
        ForwardCache {
            h_input,
            input_norms,
            layers,
        },
    ))
}

/// Inference-mode forward pass (no dropout).
pub fn encoder_forward(
    enc: &Encoder,
    nb: &Neighborhoods,
    trace: Option<&TraceRequest>,
) -> Result<EncoderForwardResult> {
    forward_cached::<rand_chacha::ChaCha8Rng>(enc, nb, None, trace).map(|(r, _)| r)
}

/// Backward of one head given `∂L/∂agg`; accumulates into the layer input
/// gradients and the head's weight gradients.
fn head_backward(
    cache: &HeadCache,
    head: &AttentionHeadParams,
    grad: &mut AttentionHeadParams,
    nb: &Neighborhoods,
    config: &EncoderConfig,
    d_agg: &Matrix,
    h_in: &Matrix,
    g_in: &Matrix,
    dh: &mut Matrix,
    dg: &mut Matrix,
) -> Result<()> {
    let tc = head.w1.rows();
    let t = h_in.cols();
    let p = g_in.cols();
    let n_edges = nb.n_edges();
    let pc = cache.pc.as_ref();
    let mut c = vec![0.0; tc];

    let mut d_alpha = vec![0.0; n_edges];
    for (e, da) in d_alpha.iter_mut().enumerate() {
        edge_repr(&cache.pa, &cache.pb, pc, nb, e, &mut c);
        *da = dot(d_agg.row(nb.target(e)), &c) * cache.keep[e];
    }
    let d_b = grouped_softmax_backward(&cache.alpha, &d_alpha, nb.groups());

    let w2 = head.w2.row(0);
    let mut d_pa = Matrix::zeros(cache.pa.rows(), tc);
    let mut d_pb = Matrix::zeros(cache.pb.rows(), tc);
    let mut d_pc = pc.map(|m| Matrix::zeros(m.rows(), tc));
    let mut d_w2 = vec![0.0; tc];
    let mut d_c = vec![0.0; tc];
    for e in 0..n_edges {
        let ds = d_b[e] * leaky_relu_grad(cache.s[e], config.slope);
        let weight = cache.alpha[e] * cache.keep[e];
        let i = nb.target(e);
        for ((dc, &da), &w) in d_c.iter_mut().zip(d_agg.row(i)).zip(w2) {
            *dc = weight * da + ds * w;
        }
        if ds != 0.0 {
            edge_repr(&cache.pa, &cache.pb, pc, nb, e, &mut c);
            axpy(ds, &c, &mut d_w2);
        }
        axpy(1.0, &d_c, d_pa.row_mut(i));
        axpy(1.0, &d_c, d_pb.row_mut(nb.source(e)));
        if let Some(d_pc) = d_pc.as_mut() {
            for &r in nb.relations(e) {
                axpy(1.0, &d_c, d_pc.row_mut(r as usize));
            }
        }
    }
    axpy(1.0, &d_w2, grad.w2.row_mut(0));

    let a = head.w1.column_block(0, t);
    let b = head.w1.column_block(t, t);
    dh.add_assign(&d_pa.matmul(&a)?)?;
    dh.add_assign(&d_pb.matmul(&b)?)?;
    grad.w1.add_column_block(0, &d_pa.t_matmul(h_in)?);
    grad.w1.add_column_block(t, &d_pb.t_matmul(h_in)?);
    if let Some(d_pc) = d_pc {
        let cblk = head.w1.column_block(2 * t, p);
        dg.add_assign(&d_pc.matmul(&cblk)?)?;
        grad.w1.add_column_block(2 * t, &d_pc.t_matmul(g_in)?);
    }
    Ok(())
}

/// Backward of a whole layer. `d_out` is w.r.t. the (normalised) layer output.
fn layer_backward(
    cache: &LayerCache,
    params: &EncoderLayerParams,
    grads: &mut EncoderLayerParams,
    nb: &Neighborhoods,
    config: &EncoderConfig,
    is_final: bool,
    d_out: &Matrix,
    d_g_out: &Matrix,
) -> Result<(Matrix, Matrix)> {
    let d_act = match &cache.norms {
        Some(norms) => normalize_rows_backward(&cache.out, norms, d_out),
        None => d_out.clone(),
    };
    let mut d_pre = d_act;
    for (d, &x) in d_pre.data_mut().iter_mut().zip(cache.pre.data()) {
        *d *= config.activation.derivative(x);
    }
    let m = params.heads.len();
    let mut dh = Matrix::zeros(cache.h_in.rows(), cache.h_in.cols());
    let mut dg = Matrix::zeros(cache.g_in.rows(), cache.g_in.cols());
    for (k, (hc, (head, grad))) in cache
        .heads
        .iter()
        .zip(params.heads.iter().zip(grads.heads.iter_mut()))
        .enumerate()
    {
        let tc = head.w1.rows();
        let d_agg = if is_final {
            let mut d = d_pre.clone();
            d.scale(1.0 / m as f64);
            d
        } else {
            d_pre.column_block(k * tc, tc)
        };
        head_backward(
            hc, head, grad, nb, config, &d_agg, &cache.h_in, &cache.g_in, &mut dh, &mut dg,
        )?;
    }
    // G′ = G·W_R
    dg.add_assign(&d_g_out.matmul_t(&params.w_r)?)?;
    grads.w_r.add_assign(&cache.g_in.t_matmul(d_g_out)?)?;
    Ok((dh, dg))
}

fn backward(
    enc: &Encoder,
    cache: &ForwardCache,
    nb: &Neighborhoods,
    d_h_out: &Matrix,
    d_g_out: &Matrix,
) -> Result<Encoder> {
    let mut grads = enc.zeros_like();
    // H″ = H_in·W_E + H_final
    grads.params.w_e = cache.h_input.t_matmul(d_h_out)?;
    let mut d_h_input = d_h_out.matmul_t(&enc.params.w_e)?;
    let mut dh = d_h_out.clone();
    let mut dg = d_g_out.clone();
    for l in (0..enc.config.n_layers()).rev() {
        let (h, g) = layer_backward(
            &cache.layers[l],
            &enc.params.layers[l],
            &mut grads.params.layers[l],
            nb,
            &enc.config,
            enc.config.is_final(l),
            &dh,
            &dg,
        )?;
        dh = h;
        dg = g;
    }
    d_h_input.add_assign(&dh)?;
    grads.state.entities = match &cache.input_norms {
        Some(norms) => normalize_rows_backward(&cache.h_input, norms, &d_h_input),
        None => d_h_input,
    };
    grads.state.relations = dg;
    Ok(grads)
}

/// Which way round the margin terms are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HingeForm {
    /// `max(γ + d_valid − d_invalid, 0)`
    #[default]
    Standard,
    /// `max(d_invalid − d_valid + γ, 0)`, the sign as literally printed.
    Literal,
}

impl std::str::FromStr for HingeForm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(HingeForm::Standard),
            "literal" => Ok(HingeForm::Literal),
            _ => Err(Error::Config(format!("unknown hinge form {s:?}"))),
        }
    }
}

impl std::fmt::Display for HingeForm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            HingeForm::Standard => "standard",
            HingeForm::Literal => "literal",
        })
    }
}

/// `‖h + g − t‖₁`
pub fn translational_distance(h: &[f64], g: &[f64], t: &[f64]) -> Result<f64> {
    if h.len() != g.len() || h.len() != t.len() {
        return Err(Error::Dimension(format!(
            "distance over lengths {}, {}, {}",
            h.len(),
            g.len(),
            t.len()
        )));
    }
    Ok(h.iter()
        .zip(g)
        .zip(t)
        .map(|((a, b), c)| (a + b - c).abs())
        .sum())
}

/// One pair's contribution to the margin loss.
#[inline]
pub fn hinge_term(d_valid: f64, d_invalid: f64, gamma: f64, form: HingeForm) -> f64 {
    match form {
        HingeForm::Standard => (gamma + d_valid - d_invalid).max(0.0),
        HingeForm::Literal => (d_invalid - d_valid + gamma).max(0.0),
    }
}

/// Margin loss settings shared by the encoder and TransE trainers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarginLoss {
    pub gamma: f64,
    pub form: HingeForm,
    /// When false, distances ignore relation embeddings (`‖h − t‖₁`).
    pub use_relations: bool,
}

impl Default for MarginLoss {
    fn default() -> Self {
        MarginLoss {
            gamma: 1.0,
            form: HingeForm::Standard,
            use_relations: true,
        }
    }
}

fn check_alignment(valid: &[Triple], invalid: &[Triple]) -> Result<usize> {
    if valid.is_empty() || invalid.len() % valid.len() != 0 || invalid.is_empty() {
        return Err(Error::Dimension(format!(
            "{} invalid triples are not aligned to {} valid ones",
            invalid.len(),
            valid.len()
        )));
    }
    Ok(invalid.len() / valid.len())
}

fn distance_of(t: &Triple, entities: &Matrix, relations: &Matrix, use_relations: bool) -> f64 {
    let h = entities.row(t.head.index());
    let tl = entities.row(t.tail.index());
    if use_relations {
        let g = relations.row(t.relation.index());
        h.iter()
            .zip(g)
            .zip(tl)
            .map(|((a, b), c)| (a + b - c).abs())
            .sum()
    } else {
        h.iter().zip(tl).map(|(a, c)| (a - c).abs()).sum()
    }
}

fn check_triples(triples: &[Triple], entities: &Matrix, relations: &Matrix) -> Result<()> {
    if entities.cols() != relations.cols() {
        return Err(Error::Dimension(format!(
            "entity dim {} differs from relation dim {}",
            entities.cols(),
            relations.cols()
        )));
    }
    for t in triples {
        for e in [t.head, t.tail] {
            if e.index() >= entities.rows() {
                return Err(Error::UnknownEntity(e.index()));
            }
        }
        if t.relation.index() >= relations.rows() {
            return Err(Error::UnknownRelation(t.relation.index()));
        }
    }
    Ok(())
}

/// `Σ max(γ + d_valid − d_invalid, 0)` over aligned pairs; the negatives for
/// `valid[p]` are `invalid[p·ratio .. (p+1)·ratio]`.
pub fn hinge_loss(
    valid: &[Triple],
    invalid: &[Triple],
    entities: &Matrix,
    relations: &Matrix,
    loss: &MarginLoss,
) -> Result<f64> {
    hinge_loss_and_grad(valid, invalid, entities, relations, loss, false).map(|(l, _)| l)
}

/// Loss plus gradients w.r.t. the entity and relation matrices.
pub fn hinge_loss_and_grad(
    valid: &[Triple],
    invalid: &[Triple],
    entities: &Matrix,
    relations: &Matrix,
    loss: &MarginLoss,
    want_grad: bool,
) -> Result<(f64, Option<(Matrix, Matrix)>)> {
    let ratio = check_alignment(valid, invalid)?;
    check_triples(valid, entities, relations)?;
    check_triples(invalid, entities, relations)?;
    let mut grads = want_grad.then(|| {
        (
            Matrix::zeros(entities.rows(), entities.cols()),
            Matrix::zeros(relations.rows(), relations.cols()),
        )
    });
    let mut total = 0.0;
    for (p, pos) in valid.iter().enumerate() {
        let d_pos = distance_of(pos, entities, relations, loss.use_relations);
        for neg in &invalid[p * ratio..(p + 1) * ratio] {
            let d_neg = distance_of(neg, entities, relations, loss.use_relations);
            let term = hinge_term(d_pos, d_neg, loss.gamma, loss.form);
            total += term;
            if term > 0.0 {
                if let Some((de, dr)) = grads.as_mut() {
                    let (w_pos, w_neg) = match loss.form {
                        HingeForm::Standard => (1.0, -1.0),
                        HingeForm::Literal => (-1.0, 1.0),
                    };
                    distance_grad(pos, entities, relations, loss.use_relations, w_pos, de, dr);
                    distance_grad(neg, entities, relations, loss.use_relations, w_neg, de, dr);
                }
            }
        }
    }
    if !total.is_finite() {
        return Err(Error::NonFinite("hinge loss".into()));
    }
    Ok((total, grads))
}

fn distance_grad(
    t: &Triple,
    entities: &Matrix,
    relations: &Matrix,
    use_relations: bool,
    weight: f64,
    de: &mut Matrix,
    dr: &mut Matrix,
) {
    let dim = entities.cols();
    let (hi, ti, ri) = (t.head.index(), t.tail.index(), t.relation.index());
    for d in 0..dim {
        let mut diff = entities[(hi, d)] - entities[(ti, d)];
        if use_relations {
            diff += relations[(ri, d)];
        }
        let s = weight * sign(diff);
        if s == 0.0 {
            continue;
        }
        de[(hi, d)] += s;
        de[(ti, d)] -= s;
        if use_relations {
            dr[(ri, d)] += s;
        }
    }
}

/// Encoder training objective: margin loss on `(H″, G′)` and the gradient of
/// every trainable matrix.
pub fn encoder_loss_and_grad<R: Rng + ?Sized>(
    enc: &Encoder,
    nb: &Neighborhoods,
    valid: &[Triple],
    invalid: &[Triple],
    loss: &MarginLoss,
    dropout_rng: Option<&mut R>,
) -> Result<(f64, Encoder)> {
    let (out, cache) = forward_cached(enc, nb, dropout_rng, None)?;
    let (value, grads) =
        hinge_loss_and_grad(valid, invalid, &out.h_residual_out, &out.g_out, loss, true)?;
    let (d_h, d_g) = grads.expect("gradient requested");
    let grads = backward(enc, &cache, nb, &d_h, &d_g)?;
    Ok((value, grads))
}

/// Loss only, no dropout.
pub fn encoder_loss(
    enc: &Encoder,
    nb: &Neighborhoods,
    valid: &[Triple],
    invalid: &[Triple],
    loss: &MarginLoss,
) -> Result<f64> {
    let out = encoder_forward(enc, nb, None)?;
    hinge_loss(valid, invalid, &out.h_residual_out, &out.g_out, loss)
}

/// `c = W1·[h_i ‖ h_j ‖ g_k]` for a single triple.
pub fn triple_representation(h_i: &[f64], h_j: &[f64], g_k: &[f64], w1: &Matrix) -> Result<Vec<f64>> {
    let x: Vec<f64> = h_i.iter().chain(h_j).chain(g_k).copied().collect();
    if h_i.len() != h_j.len() || x.len() != w1.cols() {
        return Err(Error::Dimension(format!(
            "triple of widths {}/{}/{} into W1 with {} columns",
            h_i.len(),
            h_j.len(),
            g_k.len(),
            w1.cols()
        )));
    }
    w1.matvec(&x)
}

/// Attention scores `b` and coefficients `α` for the triples of one target entity,
/// given their representations.
pub fn attention_coefficients(c: &[Vec<f64>], w2: &Matrix, slope: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if c.is_empty() {
        return Err(Error::EmptyGroup(0));
    }
    let b = c
        .iter()
        .map(|ci| {
            if ci.len() != w2.cols() || w2.rows() != 1 {
                return Err(Error::Dimension("W2 must be 1 × T_c".into()));
            }
            Ok(leaky_relu_scalar(dot(w2.row(0), ci), slope))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut alpha = vec![0.0; b.len()];
    let members: Vec<usize> = (0..b.len()).collect();
    softmax_into(&b, &members, &mut alpha);
    Ok((b, alpha))
}

//! PageRank over the training graph, attention exports and the ablation runner.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{
    encoder_forward, AttentionTrace, EmbeddingState, Encoder, EncoderConfig, Neighborhoods,
    TraceRequest,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, TranslationalScorer};
use crate::graph::{EntityId, KnowledgeGraph};
use crate::nhop::{enumerate_nhop_paths, AuxConfig};
use crate::training::{encoder_outputs, train_encoder_with_hook, train_transe, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub damping: f64,
    /// L1 change between iterates at which PageRank stops.
    pub pr_tol: f64,
    pub pr_max_iters: usize,
    /// Encoder epochs at which attention is recorded (0 = before training).
    pub epochs_snapshot: Vec<usize>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            damping: 0.85,
            pr_tol: 1e-10,
            pr_max_iters: 1000,
            epochs_snapshot: Vec::new(),
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return Err(Error::Config(format!("damping must be in (0, 1), got {}", self.damping)));
        }
        if !(self.pr_tol > 0.0) || self.pr_max_iters == 0 {
            return Err(Error::Config("pr_tol and pr_max_iters must be positive".into()));
        }
        Ok(())
    }
}

/// Damped PageRank on the directed training graph.
///
/// Parallel edges and relation labels are collapsed to simple edges; dangling
/// mass and teleportation are spread uniformly. The result sums to 1.
pub fn pagerank(kg: &KnowledgeGraph, cfg: &AnalysisConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let n = kg.n_entities();
    let edges: BTreeSet<(usize, usize)> = kg
        .train()
        .iter()
        .map(|t| (t.head.index(), t.tail.index()))
        .collect();
    let mut out_degree = vec![0usize; n];
    for &(s, _) in &edges {
        out_degree[s] += 1;
    }
    let uniform = 1.0 / n as f64;
    let mut x = vec![uniform; n];
    let mut next = vec![0.0; n];
    for _ in 0..cfg.pr_max_iters {
        let dangling: f64 = (0..n).filter(|&i| out_degree[i] == 0).map(|i| x[i]).sum();
        let base = (1.0 - cfg.damping) * uniform + cfg.damping * dangling * uniform;
        next.fill(base);
        for &(s, t) in &edges {
            next[t] += cfg.damping * x[s] / out_degree[s] as f64;
        }
        let residual: f64 = x.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut x, &mut next);
        if residual < cfg.pr_tol {
            return Ok(x);
        }
    }
    let residual = x.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
    Err(Error::NonConvergence {
        iters: cfg.pr_max_iters,
        residual,
    })
}

/// Attention recorded at one training epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionSnapshot {
    pub epoch: usize,
    pub traces: Vec<AttentionTrace>,
}

/// Inference-mode attention of `enc` for the given targets.
pub fn capture_attention(
    enc: &Encoder,
    nb: &Neighborhoods,
    targets: impl IntoIterator<Item = EntityId>,
) -> Result<Vec<AttentionTrace>> {
    let req = TraceRequest::entities(targets);
    Ok(encoder_forward(enc, nb, Some(&req))?.traces.unwrap_or_default())
}

pub const ATTENTION_HEADER: &str = "epoch,layer,head,target_entity,source_entity,relation,hop_count,alpha";

/// CSV rows of `entity`'s attention. Auxiliary edges list their relation path
/// joined by `+`.
pub fn attention_csv(snapshots: &[AttentionSnapshot], entity: EntityId, kg: &KnowledgeGraph) -> Result<String> {
    let mut s = String::from(ATTENTION_HEADER);
    s.push('\n');
    let mut found = false;
    for snap in snapshots {
        for trace in &snap.traces {
            for e in trace.entries.iter().filter(|e| e.target == entity) {
                found = true;
                let rel: Vec<&str> = e.relations.iter().map(|&r| kg.relation_name(r)).collect();
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{:.17e}",
                    snap.epoch,
                    trace.layer,
                    trace.head,
                    kg.entities().name(e.target.0),
                    kg.entities().name(e.source.0),
                    rel.join("+"),
                    e.hop_count,
                    e.alpha
                );
            }
        }
    }
    if !found {
        return Err(Error::EntityNotTraced(entity.index()));
    }
    Ok(s)
}

pub fn export_attention(
    snapshots: &[AttentionSnapshot],
    entity: EntityId,
    kg: &KnowledgeGraph,
    path: &Path,
) -> Result<()> {
    let csv = attention_csv(snapshots, entity, kg)?;
    fs::write(path, csv).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationSpec {
    Full,
    /// Without auxiliary n-hop edges.
    MinusPg,
    /// Without relation features in `c` or the distance.
    MinusRelations,
}

impl std::str::FromStr for AblationSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(AblationSpec::Full),
            "minus_pg" => Ok(AblationSpec::MinusPg),
            "minus_relations" => Ok(AblationSpec::MinusRelations),
            _ => Err(Error::Config(format!("unknown ablation {s:?}"))),
        }
    }
}

impl std::fmt::Display for AblationSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AblationSpec::Full => "full",
            AblationSpec::MinusPg => "minus_pg",
            AblationSpec::MinusRelations => "minus_relations",
        })
    }
}

/// Everything one ablation run needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub aux: AuxConfig,
    pub transe_dim: usize,
    pub transe: TrainConfig,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    /// Test MR is recorded every this many encoder epochs and at the end.
    pub curve_every: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationCurve {
    pub mode: AblationSpec,
    /// `(epoch, filtered test MR)` under the translational scorer on `(H″, G′)`.
    pub points: Vec<(usize, f64)>,
}

impl AblationCurve {
    pub fn final_mr(&self) -> Option<f64> {
        self.points.last().map(|p| p.1)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("mode,epoch,test_mr\n");
        for (e, mr) in &self.points {
            let _ = writeln!(s, "{},{e},{mr}", self.mode);
        }
        s
    }
}

fn test_mr(kg: &KnowledgeGraph, enc: &Encoder, nb: &Neighborhoods) -> Result<f64> {
    let (h, g) = encoder_outputs(enc, nb)?;
    let scorer = TranslationalScorer {
        entities: &h,
        relations: &g,
        use_relations: enc.config.use_relations,
    };
    Ok(evaluate(kg.test(), &scorer, kg)?.mr)
}

/// Trains the encoder in the given mode from a shared TransE start and
/// records the test MR curve.
pub fn run_ablation(kg: &KnowledgeGraph, spec: AblationSpec, cfg: &AblationConfig) -> Result<AblationCurve> {
    let (init, _) = train_transe(kg, cfg.transe_dim, &cfg.transe)?;
    run_ablation_from(kg, spec, cfg, init)
}

/// As [`run_ablation`], starting from given input embeddings.
pub fn run_ablation_from(
    kg: &KnowledgeGraph,
    spec: AblationSpec,
    cfg: &AblationConfig,
    init: EmbeddingState,
) -> Result<AblationCurve> {
    if cfg.curve_every == 0 {
        return Err(Error::Config("curve_every must be at least 1".into()));
    }
    let aux = match spec {
        AblationSpec::MinusPg => Vec::new(),
        _ => enumerate_nhop_paths(kg, &cfg.aux)?,
    };
    let nb = Neighborhoods::build(kg, &aux)?;
    let mut enc_cfg = cfg.encoder.clone();
    enc_cfg.use_relations = spec != AblationSpec::MinusRelations;
    let train = TrainConfig {
        eval_every: 0,
        patience: 0,
        ..cfg.train.clone()
    };
    let mut points = Vec::new();
    let mut hook = |epoch: usize, enc: &Encoder| -> Result<()> {
        if epoch % cfg.curve_every == 0 || epoch == train.epochs {
            points.push((epoch, test_mr(kg, enc, &nb)?));
        }
        Ok(())
    };
    train_encoder_with_hook(kg, &nb, init, &enc_cfg, &train, Some(&mut hook))?;
    Ok(AblationCurve { mode: spec, points })
}

/// Trains the encoder, capturing `entity`'s attention at each snapshot epoch.
pub fn attention_snapshots(
    kg: &KnowledgeGraph,
    nb: &Neighborhoods,
    init: EmbeddingState,
    enc_cfg: &EncoderConfig,
    train: &TrainConfig,
    entity: EntityId,
    epochs: &[usize],
) -> Result<Vec<AttentionSnapshot>> {
    let mut snaps = Vec::new();
    if epochs.contains(&0) {
        let mut rng = crate::training::rng_for(train.seed, 1);
        let enc = Encoder::with_state(enc_cfg.clone(), init.clone(), &mut rng)?;
        snaps.push(AttentionSnapshot {
            epoch: 0,
            traces: capture_attention(&enc, nb, [entity])?,
        });
    }
    let mut hook = |epoch: usize, enc: &Encoder| -> Result<()> {
        if epochs.contains(&epoch) {
            snaps.push(AttentionSnapshot {
                epoch,
                traces: capture_attention(enc, nb, [entity])?,
            });
        }
        Ok(())
    };
    let last = epochs.iter().copied().max().unwrap_or(0);
    let train = TrainConfig {
        epochs: last,
        eval_every: 0,
        patience: 0,
        ..train.clone()
    };
    train_encoder_with_hook(kg, nb, init, enc_cfg, &train, Some(&mut hook))?;
    Ok(snaps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{GraphOptions, Triple};
    use crate::numerics::Matrix;
    use crate::training::rng_for;

    fn graph(n: usize, edges: &[(u32, u32)]) -> KnowledgeGraph {
        let train = edges.iter().map(|&(h, t)| Triple::new(h, 0, t)).collect();
        KnowledgeGraph::from_ids(n, 1, train, vec![], vec![], GraphOptions::default()).unwrap()
    }

    /// Dense power iteration over the full Google matrix.
    fn dense_pagerank(n: usize, edges: &[(u32, u32)], d: f64) -> Vec<f64> {
        let simple: BTreeSet<(usize, usize)> = edges.iter().map(|&(a, b)| (a as usize, b as usize)).collect();
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            let outs: Vec<usize> = simple.iter().filter(|e| e.0 == i).map(|e| e.1).collect();
            for j in 0..n {
                let link = if outs.is_empty() {
                    1.0 / n as f64
                } else if outs.contains(&j) {
                    1.0 / outs.len() as f64
                } else {
                    0.0
                };
                m[(j, i)] = d * link + (1.0 - d) / n as f64;
            }
        }
        let mut x = vec![1.0 / n as f64; n];
        for _ in 0..5000 {
            x = m.matvec(&x).unwrap();
        }
        x
    }

    #[test]
    fn two_cycle_is_uniform() {
        let pr = pagerank(&graph(2, &[(0, 1), (1, 0)]), &AnalysisConfig::default()).unwrap();
        assert!((pr[0] - 0.5).abs() < 1e-12 && (pr[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn star_matches_dense_oracle() {
        let edges = [(1, 0), (2, 0), (3, 0), (4, 0), (1, 0)];
        let pr = pagerank(&graph(5, &edges), &AnalysisConfig::default()).unwrap();
        let oracle = dense_pagerank(5, &edges, 0.85);
        for (a, b) in pr.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-8, "{pr:?} vs {oracle:?}");
        }
        assert!((pr.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn non_convergence_and_bad_config() {
        let kg = graph(3, &[(0, 1), (1, 2)]);
        let cfg = AnalysisConfig {
            pr_max_iters: 1,
            ..AnalysisConfig::default()
        };
        assert!(matches!(pagerank(&kg, &cfg), Err(Error::NonConvergence { .. })));
        let cfg = AnalysisConfig {
            damping: 1.0,
            ..AnalysisConfig::default()
        };
        assert!(pagerank(&kg, &cfg).is_err());
    }

    fn tiny_encoder() -> EncoderConfig {
        EncoderConfig {
            entity_dims: vec![4, 4, 4],
            relation_dims: vec![4, 4, 4],
            dropout: 0.0,
            ..EncoderConfig::default()
        }
    }

    #[test]
    fn single_in_edge_gets_all_attention() {
        // a 2-cycle without self-loops: each entity has exactly one in-edge
        let kg = KnowledgeGraph::from_named(&[("a", "r", "b"), ("b", "r", "a")], &[], &[], GraphOptions { self_loops: false })
            .unwrap();
        let nb = Neighborhoods::build(&kg, &enumerate_nhop_paths(&kg, &AuxConfig::default()).unwrap()).unwrap();
        let init = EmbeddingState::random(2, kg.n_relation_rows(), 4, 4, &mut rng_for(1, 0));
        let enc = Encoder::with_state(tiny_encoder(), init, &mut rng_for(2, 0)).unwrap();
        let snap = vec![AttentionSnapshot {
            epoch: 0,
            traces: capture_attention(&enc, &nb, [EntityId(1)]).unwrap(),
        }];
        let csv = attention_csv(&snap, EntityId(1), &kg).unwrap();
        let rows: Vec<&str> = csv.lines().skip(1).collect();
        // one row per layer and head
        assert_eq!(rows.len(), 4);
        for r in rows {
            assert!(r.starts_with("0,") && r.contains(",b,a,r,1,"), "{r}");
            let alpha: f64 = r.rsplit(',').next().unwrap().parse().unwrap();
            assert_eq!(alpha, 1.0);
        }
    }

    #[test]
    fn attention_rows() {
        // c has three incoming triples: a→c, b→c and the path a→b→c
        let kg = KnowledgeGraph::from_named(
            &[("a", "r", "b"), ("a", "r", "c"), ("b", "s", "c"), ("c", "r", "a")],
            &[],
            &[],
            GraphOptions { self_loops: false },
        )
        .unwrap();
        let aux = enumerate_nhop_paths(&kg, &AuxConfig::default()).unwrap();
        let nb = Neighborhoods::build(&kg, &aux).unwrap();
        let init = EmbeddingState::random(3, kg.n_relation_rows(), 4, 4, &mut rng_for(1, 0));
        let enc = Encoder::with_state(tiny_encoder(), init.clone(), &mut rng_for(2, 0)).unwrap();
        let traces = capture_attention(&enc, &nb, [EntityId(2)]).unwrap();
        assert_eq!(traces.len(), 4);
        for t in &traces {
            let sum: f64 = t.entries.iter().map(|e| e.alpha).sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert_eq!(t.entries.len(), 3);
        }
        let snap = vec![AttentionSnapshot { epoch: 0, traces }];
        let csv = attention_csv(&snap, EntityId(2), &kg).unwrap();
        assert!(csv.contains(",c,a,r+s,2,"), "{csv}");
        assert!(matches!(
            attention_csv(&snap, EntityId(0), &kg),
            Err(Error::EntityNotTraced(0))
        ));

        let train = TrainConfig {
            epochs: 4,
            seed: 3,
            ..TrainConfig::default()
        };
        let snaps = attention_snapshots(&kg, &nb, init, &tiny_encoder(), &train, EntityId(2), &[0, 2, 4]).unwrap();
        let csv = attention_csv(&snaps, EntityId(2), &kg).unwrap();
        let epochs: BTreeSet<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(epochs.into_iter().collect::<Vec<_>>(), vec!["0", "2", "4"]);
    }

    fn ablation_cfg() -> AblationConfig {
        AblationConfig {
            aux: AuxConfig::default(),
            transe_dim: 4,
            transe: TrainConfig {
                epochs: 20,
                ..TrainConfig::transe()
            },
            encoder: tiny_encoder(),
            train: TrainConfig {
                epochs: 6,
                lr: 0.01,
                ..TrainConfig::default()
            },
            curve_every: 2,
        }
    }

    #[test]
    fn minus_pg_without_paths_is_a_no_op() {
        // a star has no directed 2-hop paths
        let kg = KnowledgeGraph::from_named(
            &[("a", "r", "hub"), ("b", "r", "hub"), ("c", "s", "hub")],
            &[],
            &[("d", "r", "hub")],
            GraphOptions::default(),
        )
        .unwrap();
        let cfg = ablation_cfg();
        let full = run_ablation(&kg, AblationSpec::Full, &cfg).unwrap();
        let pg = run_ablation(&kg, AblationSpec::MinusPg, &cfg).unwrap();
        assert_eq!(full.points, pg.points);
        assert_eq!(full.points.iter().map(|p| p.0).collect::<Vec<_>>(), vec![2, 4, 6]);
    }

    #[test]
    fn minus_relations_ignores_g() {
        let kg = KnowledgeGraph::from_named(
            &[("a", "r", "b"), ("b", "s", "c"), ("c", "r", "a")],
            &[],
            &[],
            GraphOptions::default(),
        )
        .unwrap();
        let aux = enumerate_nhop_paths(&kg, &AuxConfig::default()).unwrap();
        let nb = Neighborhoods::build(&kg, &aux).unwrap();
        let cfg = EncoderConfig {
            use_relations: false,
            ..tiny_encoder()
        };
        let init = EmbeddingState::random(3, kg.n_relation_rows(), 4, 4, &mut rng_for(1, 0));
        let enc = Encoder::with_state(cfg, init, &mut rng_for(2, 0)).unwrap();
        let mut other = enc.clone();
        other.state.relations = Matrix::uniform(other.state.relations.rows(), 4, 5.0, &mut rng_for(8, 0));
        let a = encoder_forward(&enc, &nb, None).unwrap();
        let b = encoder_forward(&other, &nb, None).unwrap();
        assert_eq!(a.h_residual_out, b.h_residual_out);
    }

    #[test]
    fn ablation_names_round_trip() {
        for s in [AblationSpec::Full, AblationSpec::MinusPg, AblationSpec::MinusRelations] {
            assert_eq!(s.to_string().parse::<AblationSpec>().unwrap(), s);
        }
        assert!("minus_x".parse::<AblationSpec>().is_err());
    }
}

//! Filtered link-prediction ranking.
//!
//! Every scorer follows one convention: **lower scores are more plausible**.
//! Ties are pessimistic, so a candidate scoring equal to the true triple is
//! ranked ahead of it.

use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decoder::ConvKb;
use crate::error::{Error, Result};
use crate::graph::{EntityId, KnowledgeGraph, Triple};
use crate::numerics::Matrix;

/// Anything that assigns a score to a triple; lower is better.
pub trait Scorer {
    fn score(&self, t: &Triple) -> f64;
}

impl<F: Fn(&Triple) -> f64> Scorer for F {
    fn score(&self, t: &Triple) -> f64 {
        self(t)
    }
}

impl Scorer for ConvKb {
    fn score(&self, t: &Triple) -> f64 {
        ConvKb::score(self, t)
    }
}

/// `‖h + g − t‖₁` over fixed embedding matrices.
#[derive(Clone, Copy, Debug)]
pub struct TranslationalScorer<'a> {
    pub entities: &'a Matrix,
    pub relations: &'a Matrix,
    pub use_relations: bool,
}

impl Scorer for TranslationalScorer<'_> {
    fn score(&self, t: &Triple) -> f64 {
        let h = self.entities.row(t.head.index());
        let tl = self.entities.row(t.tail.index());
        if self.use_relations {
            let g = self.relations.row(t.relation.index());
            h.iter().zip(g).zip(tl).map(|((a, b), c)| (a + b - c).abs()).sum()
        } else {
            h.iter().zip(tl).map(|(a, c)| (a - c).abs()).sum()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Head,
    Tail,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Head => "head",
            Side::Tail => "tail",
        })
    }
}

fn corrupt(t: &Triple, side: Side, e: u32) -> Triple {
    match side {
        Side::Head => Triple { head: EntityId(e), ..*t },
        Side::Tail => Triple { tail: EntityId(e), ..*t },
    }
}

fn check_ids(t: &Triple, kg: &KnowledgeGraph) -> Result<()> {
    for e in [t.head, t.tail] {
        if e.index() >= kg.n_entities() {
            return Err(Error::UnknownEntity(e.index()));
        }
    }
    if t.relation.index() >= kg.n_relations() {
        return Err(Error::UnknownRelation(t.relation.index()));
    }
    Ok(())
}

/// Rank of `triple` among its corruptions on `side`.
///
/// With `filtered`, corruptions found in any split are skipped; the true
/// triple is never filtered from its own query.
pub fn rank_with<S: Scorer + ?Sized>(
    triple: &Triple,
    side: Side,
    scorer: &S,
    kg: &KnowledgeGraph,
    filtered: bool,
) -> Result<usize> {
    check_ids(triple, kg)?;
    let target = scorer.score(triple);
    if !target.is_finite() {
        return Err(Error::NonFinite(format!("score of {triple:?}")));
    }
    let original = match side {
        Side::Head => triple.head.0,
        Side::Tail => triple.tail.0,
    };
    let mut ahead = 0;
    for e in 0..kg.n_entities() as u32 {
        if e == original {
            continue;
        }
        let c = corrupt(triple, side, e);
        if filtered && kg.is_known(&c) {
            continue;
        }
        let s = scorer.score(&c);
        if s.is_nan() {
            return Err(Error::NonFinite(format!("score of {c:?}")));
        }
        if s <= target {
            ahead += 1;
        }
    }
    Ok(ahead + 1)
}

pub fn filtered_rank<S: Scorer + ?Sized>(
    triple: &Triple,
    side: Side,
    scorer: &S,
    kg: &KnowledgeGraph,
) -> Result<usize> {
    rank_with(triple, side, scorer, kg, true)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingMetrics {
    pub mr: f64,
    pub mrr: f64,
    pub hits_at_1: f64,
    pub hits_at_3: f64,
    pub hits_at_10: f64,
    pub n_queries: usize,
}

impl RankingMetrics {
    pub fn from_ranks(ranks: &[usize]) -> Result<Self> {
        if ranks.is_empty() {
            return Err(Error::EmptySplit);
        }
        let n = ranks.len() as f64;
        let hits = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
        Ok(RankingMetrics {
            mr: ranks.iter().map(|&r| r as f64).sum::<f64>() / n,
            mrr: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
            hits_at_1: hits(1),
            hits_at_3: hits(3),
            hits_at_10: hits(10),
            n_queries: ranks.len(),
        })
    }

    pub fn hits_at(&self, k: usize) -> Option<f64> {
        match k {
            1 => Some(self.hits_at_1),
            3 => Some(self.hits_at_3),
            10 => Some(self.hits_at_10),
            _ => None,
        }
    }

    /// Single-line JSON record.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("metrics serialise")
    }
}

impl fmt::Display for RankingMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>10}", "metric", "value")?;
        writeln!(f, "{:<10} {:>10.3}", "MR", self.mr)?;
        writeln!(f, "{:<10} {:>10.4}", "MRR", self.mrr)?;
        writeln!(f, "{:<10} {:>10.4}", "Hits@1", self.hits_at_1)?;
        writeln!(f, "{:<10} {:>10.4}", "Hits@3", self.hits_at_3)?;
        writeln!(f, "{:<10} {:>10.4}", "Hits@10", self.hits_at_10)?;
        write!(f, "{:<10} {:>10}", "queries", self.n_queries)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct QueryRank {
    pub triple: Triple,
    pub side: Side,
    pub rank: usize,
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub metrics: RankingMetrics,
    /// Head query then tail query for each triple, in split order.
    pub ranks: Vec<QueryRank>,
}

impl EvalReport {
    /// `head,relation,tail,side,rank` rows with entity and relation names.
    pub fn to_csv(&self, kg: &KnowledgeGraph) -> String {
        let mut s = String::from("head,relation,tail,side,rank\n");
        for q in &self.ranks {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                kg.entities().name(q.triple.head.0),
                kg.relations().name(q.triple.relation.0),
                kg.entities().name(q.triple.tail.0),
                q.side,
                q.rank
            );
        }
        s
    }

    pub fn write_csv(&self, kg: &KnowledgeGraph, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv(kg)).map_err(|e| Error::io(path, e))
    }
}

/// Head- and tail-side ranks for every triple in `split`.
pub fn evaluate_with<S: Scorer + ?Sized>(
    split: &[Triple],
    scorer: &S,
    kg: &KnowledgeGraph,
    filtered: bool,
) -> Result<EvalReport> {
    if split.is_empty() {
        return Err(Error::EmptySplit);
    }
    let mut ranks = Vec::with_capacity(2 * split.len());
    for t in split {
        for side in [Side::Head, Side::Tail] {
            ranks.push(QueryRank {
                triple: *t,
                side,
                rank: rank_with(t, side, scorer, kg, filtered)?,
            });
        }
    }
    let flat: Vec<usize> = ranks.iter().map(|q| q.rank).collect();
    Ok(EvalReport {
        metrics: RankingMetrics::from_ranks(&flat)?,
        ranks,
    })
}

/// Filtered metrics averaged over both sides of every triple.
pub fn evaluate<S: Scorer + ?Sized>(
    split: &[Triple],
    scorer: &S,
    kg: &KnowledgeGraph,
) -> Result<RankingMetrics> {
    evaluate_with(split, scorer, kg, true).map(|r| r.metrics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphOptions;
    use proptest::prelude::*;

    fn kg(n: usize, train: &[Triple], test: &[Triple]) -> KnowledgeGraph {
        KnowledgeGraph::from_ids(n, 2, train.to_vec(), vec![], test.to_vec(), GraphOptions::default()).unwrap()
    }

    #[test]
    fn unique_minimum_ranks_first() {
        let test = [Triple::new(0, 0, 1)];
        let g = kg(5, &[Triple::new(1, 1, 2)], &test);
        let s = |t: &Triple| if *t == test[0] { -1.0 } else { 0.0 };
        assert_eq!(filtered_rank(&test[0], Side::Head, &s, &g).unwrap(), 1);
        assert_eq!(filtered_rank(&test[0], Side::Tail, &s, &g).unwrap(), 1);
    }

    #[test]
    fn constant_scorer_is_fully_pessimistic() {
        let test = [Triple::new(0, 0, 1)];
        let g = kg(5, &[Triple::new(1, 1, 2)], &test);
        let s = |_: &Triple| 0.0;
        assert_eq!(filtered_rank(&test[0], Side::Tail, &s, &g).unwrap(), 5);
    }

    #[test]
    fn filtered_corruptions_are_skipped() {
        // 6 entities; (0,0,2) and (0,0,3) are known and would outrank the truth
        let test = [Triple::new(0, 0, 1)];
        let train = [Triple::new(0, 0, 2), Triple::new(0, 0, 3)];
        let g = kg(6, &train, &test);
        let scores = [9.0, 5.0, 1.0, 2.0, 4.0, 7.0];
        let s = |t: &Triple| scores[t.tail.index()];
        // oracle: sort the candidates that survive filtering
        let mut cands: Vec<(f64, bool)> = (0..6u32)
            .filter(|&e| e == 1 || !g.is_known(&Triple::new(0, 0, e)))
            .map(|e| (scores[e as usize], e == 1))
            .collect();
        cands.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let oracle = cands.iter().position(|c| c.1).unwrap() + 1;
        assert_eq!(oracle, 2);
        assert_eq!(filtered_rank(&test[0], Side::Tail, &s, &g).unwrap(), oracle);
        assert_eq!(rank_with(&test[0], Side::Tail, &s, &g, false).unwrap(), 4);
    }

    #[test]
    fn metric_arithmetic() {
        let m = RankingMetrics::from_ranks(&[1, 1, 1]).unwrap();
        assert_eq!((m.mr, m.mrr, m.hits_at_1, m.hits_at_10), (1.0, 1.0, 1.0, 1.0));
        let m = RankingMetrics::from_ranks(&[1, 2]).unwrap();
        assert_eq!((m.mr, m.mrr, m.hits_at_1, m.hits_at_3), (1.5, 0.75, 0.5, 1.0));
        assert!(matches!(RankingMetrics::from_ranks(&[]), Err(Error::EmptySplit)));
        let line = m.to_json_line();
        assert!(!line.contains('\n'));
        let back: RankingMetrics = serde_json::from_str(&line).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn empty_split_and_bad_ids() {
        let g = kg(3, &[Triple::new(0, 0, 1)], &[]);
        let s = |_: &Triple| 0.0;
        assert!(matches!(evaluate(&[], &s, &g), Err(Error::EmptySplit)));
        assert!(filtered_rank(&Triple::new(7, 0, 1), Side::Head, &s, &g).is_err());
        assert!(filtered_rank(&Triple::new(0, 9, 1), Side::Head, &s, &g).is_err());
    }

    proptest! {
        #[test]
        fn monotone_transform_keeps_ranks(seed in any::<u64>(), shift in -5.0f64..5.0) {
            let n = 8;
            let test = [Triple::new(0, 0, 1), Triple::new(2, 1, 3)];
            let g = kg(n, &[Triple::new(4, 0, 5), Triple::new(0, 0, 6)], &test);
            let raw = move |t: &Triple| {
                let x = (t.head.0 as u64 * 31 + t.relation.0 as u64 * 7 + t.tail.0 as u64)
                    .wrapping_mul(seed | 1) % 5;
                x as f64
            };
            let transformed = move |t: &Triple| (raw(t) + shift).exp();
            let a = evaluate_with(&test, &raw, &g, true).unwrap();
            let b = evaluate_with(&test, &transformed, &g, true).unwrap();
            prop_assert_eq!(a.ranks, b.ranks);
        }
    }
}

//! Fusion of structural and semantic embeddings, candidate pools, cosine
//! re-ranking and Hits@K.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::graph::{EntityId, SeedPair};
use crate::linalg::{dot, normalize_rows, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum FusionMode {
    /// `rownorm(τ·G + (1−τ)·B)`; widths must agree.
    #[default]
    Sum,
    /// `rownorm([τ·G | (1−τ)·B])`.
    Concat,
}

impl FusionMode {
    pub fn tag(self) -> &'static str {
        match self {
            FusionMode::Sum => "sum",
            FusionMode::Concat => "concat",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        [FusionMode::Sum, FusionMode::Concat]
            .into_iter()
            .find(|m| m.tag() == tag)
    }
}

/// Weighted fusion of one graph's structural and semantic tables.
pub fn fuse(structural: &Matrix, semantic: &Matrix, tau: f64, mode: FusionMode) -> Result<Matrix> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Config(format!("tau must lie in [0, 1], got {tau}")));
    }
    if structural.rows() != semantic.rows() {
        return Err(Error::Width(format!(
            "structural table has {} rows, semantic table {}",
            structural.rows(),
            semantic.rows()
        )));
    }
    let mut fused = match mode {
        FusionMode::Sum => {
            if structural.cols() != semantic.cols() {
                return Err(Error::Config(format!(
                    "sum fusion needs equal widths (structural {}, semantic {}); use concat fusion",
                    structural.cols(),
                    semantic.cols()
                )));
            }
            structural.zip_with(semantic, |g, b| tau * g + (1.0 - tau) * b)
        }
        FusionMode::Concat => Matrix::hconcat(&[&structural.scale(tau), &semantic.scale(1.0 - tau)]),
    };
    normalize_rows(&mut fused);
    Ok(fused)
}

/// A scored target entity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub target: EntityId,
    pub score: f64,
}

/// Descending score, then ascending target id.
pub fn rank_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.target.cmp(&b.target))
}

/// Cosine scorer over a fixed target table.
///
/// Scores are `u·v / sqrt(|u|²·|v|²)`, which makes `score(v, v)` exactly 1.
#[derive(Debug, Clone)]
pub struct CosineScorer<'a> {
    targets: &'a Matrix,
    sq_norms: Vec<f64>,
}

impl<'a> CosineScorer<'a> {
    pub fn new(targets: &'a Matrix) -> Self {
        let sq_norms = (0..targets.rows())
            .map(|r| dot(targets.row(r), targets.row(r)))
            .collect();
        Self { targets, sq_norms }
    }

    pub fn target_count(&self) -> usize {
        self.targets.rows()
    }

    /// Cosine in `[-1, 1]`; 0 when either vector is zero. `query_sq_norm`
    /// is `query·query`.
    pub fn score(&self, query: &[f64], query_sq_norm: f64, target: EntityId) -> f64 {
        let tn = self.sq_norms[target.index()];
        if query_sq_norm == 0.0 || tn == 0.0 {
            return 0.0;
        }
        let c = dot(query, self.targets.row(target.index())) / libm::sqrt(query_sq_norm * tn);
        // `+ 0.0` maps -0 to +0 so orthogonal targets tie under `total_cmp`.
        c.clamp(-1.0, 1.0) + 0.0
    }

    /// The `q` best targets for `query`, in rank order.
    pub fn top(&self, query: &[f64], q: usize) -> Vec<Candidate> {
        let qn = dot(query, query);
        let mut all: Vec<Candidate> = (0..self.targets.rows() as u32)
            .map(|t| Candidate {
                target: EntityId(t),
                score: self.score(query, qn, EntityId(t)),
            })
            .collect();
        let q = q.min(all.len());
        if q == 0 {
            return Vec::new();
        }
        if q < all.len() {
            all.select_nth_unstable_by(q - 1, rank_order);
            all.truncate(q);
        }
        all.sort_by(rank_order);
        all
    }

    /// Scores `pool` and sorts it in rank order.
    pub fn rank(&self, query: &[f64], pool: &[EntityId]) -> Vec<Candidate> {
        let qn = dot(query, query);
        let mut out: Vec<Candidate> = pool
            .iter()
            .map(|&t| Candidate {
                target: t,
                score: self.score(query, qn, t),
            })
            .collect();
        out.sort_by(rank_order);
        out
    }
}

/// Per source, the `q` targets closest under the structural embeddings.
/// `q` larger than the target count yields the whole target set.
pub fn candidate_pool(
    structural: [&Matrix; 2],
    sources: &[EntityId],
    q: usize,
) -> Result<Vec<Vec<EntityId>>> {
    if q == 0 {
        return Err(Error::Config("candidate pool size must be at least 1".into()));
    }
    let scorer = CosineScorer::new(structural[1]);
    Ok(sources
        .iter()
        .map(|s| {
            scorer
                .top(structural[0].row(s.index()), q)
                .into_iter()
                .map(|c| c.target)
                .collect()
        })
        .collect())
}

/// Ranked candidates for one source entity.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub source: EntityId,
    pub candidates: Vec<Candidate>,
}

impl RankedList {
    /// 1-based rank of `target`, if present.
    pub fn rank_of(&self, target: EntityId) -> Option<usize> {
        self.candidates
            .iter()
            .position(|c| c.target == target)
            .map(|p| p + 1)
    }
}

/// Re-ranks each pool by cosine similarity under the fused embeddings.
pub fn rank_candidates(
    fused: [&Matrix; 2],
    sources: &[EntityId],
    pools: &[Vec<EntityId>],
) -> Vec<RankedList> {
    assert_eq!(sources.len(), pools.len(), "one pool per source");
    let scorer = CosineScorer::new(fused[1]);
    sources
        .iter()
        .zip(pools)
        .map(|(&s, pool)| RankedList {
            source: s,
            candidates: scorer.rank(fused[0].row(s.index()), pool),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HitsAtK {
    pub k: usize,
    pub value: f64,
}

/// Fraction of gold sources whose gold target is within the first `k`
/// candidates of its list. A source without a list, or whose target is not
/// in its list, counts as a miss.
pub fn hits_at_k(lists: &[RankedList], gold: &[SeedPair], ks: &[usize]) -> Result<Vec<HitsAtK>> {
    if let Some(&k) = ks.iter().find(|&&k| k == 0) {
        return Err(Error::Config(format!("Hits@k needs k >= 1, got {k}")));
    }
    if gold.is_empty() {
        return Err(Error::Config("Hits@k needs at least one gold pair".into()));
    }
    let by_source: BTreeMap<EntityId, &RankedList> = lists.iter().map(|l| (l.source, l)).collect();
    let ranks: Vec<Option<usize>> = gold
        .iter()
        .map(|g| by_source.get(&g.left).and_then(|l| l.rank_of(g.right)))
        .collect();
    Ok(ks
        .iter()
        .map(|&k| {
            let hits = ranks.iter().filter(|r| r.is_some_and(|r| r <= k)).count();
            HitsAtK {
                k,
                value: hits as f64 / gold.len() as f64,
            }
        })
        .collect())
}

/// Mean of `1 / rank` over gold pairs, misses contributing 0.
pub fn mean_reciprocal_rank(lists: &[RankedList], gold: &[SeedPair]) -> f64 {
    if gold.is_empty() {
        return 0.0;
    }
    let by_source: BTreeMap<EntityId, &RankedList> = lists.iter().map(|l| (l.source, l)).collect();
    let total: f64 = gold
        .iter()
        .filter_map(|g| by_source.get(&g.left).and_then(|l| l.rank_of(g.right)))
        .map(|r| 1.0 / r as f64)
        .sum();
    total / gold.len() as f64
}

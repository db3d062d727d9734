//! Ranking and retrieval metrics.
//!
//! Metrics are reported as percentages. NDCG uses binary relevance.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Gallery indices sorted by descending score; equal scores keep index order.
pub fn rank(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Query index to the set of relevant gallery indices.
#[derive(Clone, Debug, PartialEq)]
pub struct RelevanceMap {
    relevant: Vec<BTreeSet<usize>>,
}

impl RelevanceMap {
    pub fn new(relevant: Vec<BTreeSet<usize>>) -> Result<Self> {
        if let Some(q) = relevant.iter().position(|r| r.is_empty()) {
            return Err(Error::InvalidArgument(format!("query {q} has no relevant item")));
        }
        Ok(RelevanceMap { relevant })
    }

    /// One relevant item per query.
    pub fn single(targets: &[usize]) -> Result<Self> {
        Self::new(targets.iter().map(|&t| BTreeSet::from([t])).collect())
    }

    pub fn num_queries(&self) -> usize {
        self.relevant.len()
    }

    pub fn relevant(&self, q: usize) -> &BTreeSet<usize> {
        &self.relevant[q]
    }
}

/// One ranked gallery list per query.
#[derive(Clone, Debug, PartialEq)]
pub struct RankingResult {
    rankings: Vec<Vec<usize>>,
}

impl RankingResult {
    pub fn from_scores(scores: &Tensor) -> Self {
        RankingResult {
            rankings: (0..scores.rows()).map(|q| rank(scores.row_slice(q))).collect(),
        }
    }

    pub fn new(rankings: Vec<Vec<usize>>) -> Self {
        RankingResult { rankings }
    }

    pub fn num_queries(&self) -> usize {
        self.rankings.len()
    }

    pub fn ranking(&self, q: usize) -> &[usize] {
        &self.rankings[q]
    }
}

fn check(rankings: &RankingResult, rel: &RelevanceMap, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if rankings.num_queries() == 0 {
        return Err(Error::InvalidArgument("no queries".into()));
    }
    if rankings.num_queries() != rel.num_queries() {
        return Err(Error::InvalidArgument(format!(
            "{} rankings vs {} relevance entries",
            rankings.num_queries(),
            rel.num_queries()
        )));
    }
    Ok(())
}

pub fn recall_at_k(rankings: &RankingResult, rel: &RelevanceMap, k: usize) -> Result<f64> {
    check(rankings, rel, k)?;
    let hits = rankings
        .rankings
        .iter()
        .enumerate()
        .filter(|(q, r)| r.iter().take(k).any(|g| rel.relevant(*q).contains(g)))
        .count();
    Ok(100.0 * hits as f64 / rankings.num_queries() as f64)
}

/// Mean NDCG@k in [0, 1].
pub fn ndcg_at_k(rankings: &RankingResult, rel: &RelevanceMap, k: usize) -> Result<f64> {
    check(rankings, rel, k)?;
    let mut total = 0.0;
    for (q, r) in rankings.rankings.iter().enumerate() {
        let relevant = rel.relevant(q);
        let mut dcg = 0.0;
        for (i, g) in r.iter().take(k).enumerate() {
            if relevant.contains(g) {
                dcg += 1.0 / ((i + 2) as f64).log2();
            }
        }
        let mut idcg = 0.0;
        for i in 0..relevant.len().min(k) {
            idcg += 1.0 / ((i + 2) as f64).log2();
        }
        total += dcg / idcg;
    }
    Ok(total / rankings.num_queries() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionMetrics {
    #[serde(rename = "RR@1")]
    pub rr1: f64,
    #[serde(rename = "RR@5")]
    pub rr5: f64,
    #[serde(rename = "NDCG@5")]
    pub ndcg5: f64,
}

impl DirectionMetrics {
    pub fn compute(rankings: &RankingResult, rel: &RelevanceMap) -> Result<Self> {
        Ok(DirectionMetrics {
            rr1: recall_at_k(rankings, rel, 1)?,
            rr5: recall_at_k(rankings, rel, 5)?,
            ndcg5: 100.0 * ndcg_at_k(rankings, rel, 5)?,
        })
    }
}

/// Both retrieval directions, keyed `S2T` and `T2S`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport(pub BTreeMap<String, DirectionMetrics>);

impl MetricsReport {
    /// `scores` is shapes x captions; `caption_shape[j]` is the shape of caption `j`.
    /// Shape queries count every caption of that shape as relevant.
    pub fn from_scores(scores: &Tensor, caption_shape: &[usize]) -> Result<Self> {
        let (ns, nc) = (scores.rows(), scores.cols());
        if caption_shape.len() != nc {
            return Err(Error::shape("metrics", format!("{nc} captions vs {} owners", caption_shape.len())));
        }
        if let Some(&bad) = caption_shape.iter().find(|&&s| s >= ns) {
            return Err(Error::InvalidArgument(format!("caption owner {bad} outside gallery of {ns}")));
        }
        let mut per_shape = vec![BTreeSet::new(); ns];
        for (j, &s) in caption_shape.iter().enumerate() {
            per_shape[s].insert(j);
        }
        let s2t = DirectionMetrics::compute(&RankingResult::from_scores(scores), &RelevanceMap::new(per_shape)?)?;
        let t2s = DirectionMetrics::compute(
            &RankingResult::from_scores(&scores.transpose()),
            &RelevanceMap::single(caption_shape)?,
        )?;
        Ok(MetricsReport(BTreeMap::from([("S2T".to_string(), s2t), ("T2S".to_string(), t2s)])))
    }

    pub fn get(&self, direction: &str) -> Option<&DirectionMetrics> {
        self.0.get(direction)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialise")
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:<10}{:>10}{:>10}{:>10}\n", "direction", "RR@1", "RR@5", "NDCG@5");
        for (dir, m) in &self.0 {
            let _ = writeln!(out, "{dir:<10}{:>10.2}{:>10.2}{:>10.2}", m.rr1, m.rr5, m.ndcg5);
        }
        out
    }
}

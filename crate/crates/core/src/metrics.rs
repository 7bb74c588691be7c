//! Top-k ranking metrics and the per-entity quality indicator.
//!
//! Relevance sets are sorted id slices (the layout `InteractionDataset`
//! hands out), rankings are item ids in descending score order.

use serde::{Deserialize, Serialize};

use crate::corpus::InteractionDataset;
use crate::error::{Error, Result};

/// Cutoffs averaged by the per-user evaluation ensemble.
pub const K_SET: [usize; 3] = [5, 10, 20];

/// Floor applied to full-size evaluation scores before they divide anything.
pub const BASELINE_FLOOR: f64 = 1e-6;

fn check(relevant: &[u32], k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Invalid("k must be at least 1".into()));
    }
    if relevant.is_empty() {
        return Err(Error::Empty("relevant set is empty".into()));
    }
    Ok(())
}

fn hit(relevant: &[u32], item: u32) -> bool {
    relevant.binary_search(&item).is_ok()
}

/// `|top-k ∩ relevant| / |relevant|`.
pub fn recall_at_k(ranked: &[u32], relevant: &[u32], k: usize) -> Result<f64> {
    check(relevant, k)?;
    let hits = ranked.iter().take(k).filter(|&&v| hit(relevant, v)).count();
    Ok(hits as f64 / relevant.len() as f64)
}

/// Binary-gain NDCG with a `1 / log2(rank + 1)` discount.
pub fn ndcg_at_k(ranked: &[u32], relevant: &[u32], k: usize) -> Result<f64> {
    check(relevant, k)?;
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, &v)| hit(relevant, v))
        .map(|(i, _)| discount(i))
        .sum();
    let ideal: f64 = (0..k.min(relevant.len())).map(discount).sum();
    Ok(dcg / ideal)
}

#[inline]
fn discount(zero_based_rank: usize) -> f64 {
    1.0 / ((zero_based_rank + 2) as f64).log2()
}

/// Mean of the recall and NDCG scores over all cutoffs:
/// `Σ_k (Recall@k + NDCG@k) / (2 |K|)`.
pub fn eval_ensemble(recalls: &[f64], ndcgs: &[f64]) -> f64 {
    debug_assert_eq!(recalls.len(), ndcgs.len());
    let total: f64 = recalls.iter().chain(ndcgs).sum();
    total / (2 * recalls.len()) as f64
}

/// Mean of `scores[u]` over `members`; the item-side evaluation.
pub fn group_mean(scores: &[f64], members: &[u32]) -> Result<f64> {
    if members.is_empty() {
        return Err(Error::Empty("item has no interacting users".into()));
    }
    Ok(members.iter().map(|&u| scores[u as usize]).sum::<f64>() / members.len() as f64)
}

/// `min(current / baseline, 1)` with the baseline floored at [`BASELINE_FLOOR`].
pub fn quality_q(current: f64, baseline: f64) -> f64 {
    (current / baseline.max(BASELINE_FLOOR)).min(1.0)
}

/// Per-user metrics at every cutoff in [`K_SET`] for one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub recall: Vec<[f64; 3]>,
    pub ndcg: Vec<[f64; 3]>,
}

impl RankingReport {
    /// Scores top-`max(K_SET)` rankings against per-user relevance sets.
    pub fn from_rankings<'a>(
        rankings: &[Vec<u32>],
        relevant: impl Fn(u32) -> &'a [u32],
    ) -> Result<Self> {
        let mut recall = Vec::with_capacity(rankings.len());
        let mut ndcg = Vec::with_capacity(rankings.len());
        for (u, ranked) in rankings.iter().enumerate() {
            let rel = relevant(u as u32);
            let mut r = [0.0; 3];
            let mut n = [0.0; 3];
            for (j, &k) in K_SET.iter().enumerate() {
                r[j] = recall_at_k(ranked, rel, k)?;
                n[j] = ndcg_at_k(ranked, rel, k)?;
            }
            recall.push(r);
            ndcg.push(n);
        }
        Ok(Self { recall, ndcg })
    }

    pub fn num_users(&self) -> usize {
        self.recall.len()
    }

    /// Per-user evaluation ensemble.
    pub fn user_eval(&self) -> Vec<f64> {
        self.recall
            .iter()
            .zip(&self.ndcg)
            .map(|(r, n)| eval_ensemble(r, n))
            .collect()
    }

    fn slot(k: usize) -> usize {
        K_SET
            .iter()
            .position(|&x| x == k)
            .unwrap_or_else(|| panic!("k={k} not in {K_SET:?}"))
    }

    pub fn mean_recall(&self, k: usize) -> f64 {
        let j = Self::slot(k);
        mean(self.recall.iter().map(|r| r[j]))
    }

    pub fn mean_ndcg(&self, k: usize) -> f64 {
        let j = Self::slot(k);
        mean(self.ndcg.iter().map(|r| r[j]))
    }

    pub fn summary(&self) -> MetricSummary {
        MetricSummary {
            recall_5: self.mean_recall(5),
            recall_20: self.mean_recall(20),
            ndcg_5: self.mean_ndcg(5),
            ndcg_20: self.mean_ndcg(20),
        }
    }
}

fn mean(xs: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = xs.len();
    if n == 0 {
        return 0.0;
    }
    xs.sum::<f64>() / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    #[serde(rename = "recall@5")]
    pub recall_5: f64,
    #[serde(rename = "recall@20")]
    pub recall_20: f64,
    #[serde(rename = "ndcg@5")]
    pub ndcg_5: f64,
    #[serde(rename = "ndcg@20")]
    pub ndcg_20: f64,
}

/// Per-entity evaluation under the fully trained full-size recommender,
/// floored at [`BASELINE_FLOOR`]. Users first, then items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullEvalBaseline {
    pub entity_eval: Vec<f64>,
    pub num_users: usize,
    /// Validation NDCG@20 of the model the baseline was taken from.
    pub val_ndcg_20: f64,
    pub epochs_trained: usize,
}

impl FullEvalBaseline {
    pub fn from_user_eval(dataset: &InteractionDataset, user_eval: &[f64]) -> Result<Self> {
        let entity_eval = entity_eval(dataset, user_eval)?
            .into_iter()
            .map(|x| x.max(BASELINE_FLOOR))
            .collect();
        Ok(Self {
            entity_eval,
            num_users: dataset.num_users(),
            val_ndcg_20: 0.0,
            epochs_trained: 0,
        })
    }

    pub fn user_eval(&self) -> &[f64] {
        &self.entity_eval[..self.num_users]
    }
}

/// User scores followed by item scores (group mean over train interactors).
pub fn entity_eval(dataset: &InteractionDataset, user_eval: &[f64]) -> Result<Vec<f64>> {
    if user_eval.len() != dataset.num_users() {
        return Err(Error::Shape {
            expected: format!("{} user scores", dataset.num_users()),
            actual: user_eval.len().to_string(),
        });
    }
    let mut out = Vec::with_capacity(dataset.num_entities());
    out.extend_from_slice(user_eval);
    for v in 0..dataset.num_items() as u32 {
        out.push(group_mean(user_eval, dataset.train_users(v))?);
    }
    Ok(out)
}

/// Quality indicators for every entity at one point of the search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualitySnapshot {
    pub q: Vec<f64>,
    pub user_eval: Vec<f64>,
    pub mean_q: f64,
}

impl QualitySnapshot {
    pub fn compute(
        dataset: &InteractionDataset,
        user_eval: &[f64],
        baseline: &FullEvalBaseline,
    ) -> Result<Self> {
        let current = entity_eval(dataset, user_eval)?;
        if baseline.entity_eval.len() != current.len() {
            return Err(Error::Shape {
                expected: format!("{} baseline entries", current.len()),
                actual: baseline.entity_eval.len().to_string(),
            });
        }
        let q: Vec<f64> = current
            .iter()
            .zip(&baseline.entity_eval)
            .map(|(&c, &b)| quality_q(c, b))
            .collect();
        assert!(
            q.iter().all(|x| (0.0..=1.0).contains(x)),
            "quality indicator left [0, 1]"
        );
        let mean_q = q.iter().sum::<f64>() / q.len() as f64;
        Ok(Self {
            q,
            user_eval: user_eval.to_vec(),
            mean_q,
        })
    }

    /// Every entity at full quality; the state before any compression.
    pub fn full(num_entities: usize) -> Self {
        Self {
            q: vec![1.0; num_entities],
            user_eval: Vec::new(),
            mean_q: 1.0,
        }
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iteration: usize,
    #[serde(rename = "entity-scope")]
    pub entity_scope: String,
    #[serde(rename = "R@5")]
    pub r5: f64,
    #[serde(rename = "R@20")]
    pub r20: f64,
    #[serde(rename = "N@5")]
    pub n5: f64,
    #[serde(rename = "N@20")]
    pub n20: f64,
    #[serde(rename = "q_mean")]
    pub mean_q: f64,
    pub sparsity: f64,
}

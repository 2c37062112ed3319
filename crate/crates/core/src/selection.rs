//! Joint instance selection: intersect the predictor's confident predictions
//! with the retriever's per-relation lists, widening both until enough
//! mentions agree.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::corpus::{largest_remainder, IndexedMention};
use crate::error::{Error, Result};
use crate::predictor::{by_confidence, PredictorModel, RankedPrediction};
use crate::retriever::{top_per_label, RetrieverModel};

pub const DEFAULT_EXPANSION_FACTOR: f64 = 1.25;
pub const DEFAULT_MAX_EXPANSIONS: usize = 20;
pub const MAX_TOP_NK: usize = 7;

/// How the per-relation quota shares are estimated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DistributionSource {
    /// Label frequencies of the labeled set.
    True,
    /// Predicted-label frequencies among the `n·k` most confident pool mentions.
    TopNk(usize),
}

impl fmt::Display for DistributionSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistributionSource::True => write!(f, "true"),
            DistributionSource::TopNk(1) => write!(f, "top-k"),
            DistributionSource::TopNk(n) => write!(f, "top-{n}k"),
        }
    }
}

impl FromStr for DistributionSource {
    type Err = Error;

    /// Accepts `true`, `top-k` and `top-<n>k` for `n` in `1..=7`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown label distribution {s:?}; expected true or top-<n>k"));
        if s == "true" {
            return Ok(DistributionSource::True);
        }
        let rest = s.strip_prefix("top-").or_else(|| s.strip_prefix("top")).ok_or_else(bad)?;
        let digits = rest.strip_suffix('k').ok_or_else(bad)?;
        let n = if digits.is_empty() { 1 } else { digits.parse().map_err(|_| bad())? };
        if !(1..=MAX_TOP_NK).contains(&n) {
            return Err(bad());
        }
        Ok(DistributionSource::TopNk(n))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceDistribution {
    pub probs: Vec<f64>,
    pub source: DistributionSource,
}

/// Empirical frequencies of the labeled set's labels.
pub fn true_distribution(labels: &[usize], num_labels: usize) -> Result<ReferenceDistribution> {
    if labels.is_empty() {
        return Err(Error::EmptyLabeled);
    }
    Ok(ReferenceDistribution {
        probs: frequencies(labels.iter().copied(), num_labels),
        source: DistributionSource::True,
    })
}

/// Predicted-label frequencies among the first `n·k` entries of a confidence
/// ranking (the whole ranking when shorter).
pub fn top_nk_distribution(
    ranked: &[RankedPrediction],
    n: usize,
    k: usize,
    num_labels: usize,
) -> Result<ReferenceDistribution> {
    if ranked.is_empty() {
        return Err(Error::EmptyPool);
    }
    let take = (n * k).clamp(1, ranked.len());
    Ok(ReferenceDistribution {
        probs: frequencies(ranked[..take].iter().map(|r| r.label), num_labels),
        source: DistributionSource::TopNk(n),
    })
}

fn frequencies(labels: impl Iterator<Item = usize>, num_labels: usize) -> Vec<f64> {
    let mut counts = vec![0usize; num_labels];
    let mut total = 0usize;
    for y in labels {
        counts[y] += 1;
        total += 1;
    }
    counts.into_iter().map(|c| c as f64 / total as f64).collect()
}

/// Largest-remainder split of `k_prime` over the reference shares.
pub fn quota_from_distribution(k_prime: usize, dist: &ReferenceDistribution) -> Vec<usize> {
    largest_remainder(k_prime, &dist.probs)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SelectionConfig {
    pub k: usize,
    pub expansion_factor: f64,
    pub max_expansions: usize,
}

impl SelectionConfig {
    pub fn new(k: usize) -> Self {
        SelectionConfig {
            k,
            expansion_factor: DEFAULT_EXPANSION_FACTOR,
            max_expansions: DEFAULT_MAX_EXPANSIONS,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("selection k must be at least 1".into()));
        }
        if self.expansion_factor.is_nan() || self.expansion_factor <= 1.0 {
            return Err(Error::Config("expansion factor must exceed 1".into()));
        }
        Ok(())
    }

    /// Next upper bound `⌈factor·k′⌉`, forced to grow by at least one.
    pub fn expand(&self, k_prime: usize) -> usize {
        ((self.expansion_factor * k_prime as f64).ceil() as usize).max(k_prime + 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PromotedItem {
    pub id: String,
    pub label: usize,
    pub p_confidence: f64,
    pub q_score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PromotedBatch {
    pub items: Vec<PromotedItem>,
    /// Upper bound in force when the expansion loop stopped.
    pub k_prime: usize,
    pub expansions: usize,
}

/// Argmax label and its probability; ties go to the lower index.
fn argmax(row: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (y, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = y;
        }
    }
    (best, row[best])
}

fn ranked_by_confidence(ids: &[String], probs: &[Vec<f64>]) -> Vec<RankedPrediction> {
    let mut ranked: Vec<RankedPrediction> = ids
        .iter()
        .zip(probs)
        .map(|(id, p)| {
            let (label, confidence) = argmax(p);
            RankedPrediction {
                id: id.clone(),
                label,
                confidence,
            }
        })
        .collect();
    ranked.sort_by(by_confidence);
    ranked
}

/// Shared expansion loop. `second_view(k′)` yields, per mention id, the
/// single label and score that the second module proposes at bound `k′`.
fn expand_and_intersect<'a>(
    ranked: &'a [RankedPrediction],
    config: &SelectionConfig,
    mut second_view: impl FnMut(usize) -> HashMap<&'a str, (usize, f64)>,
) -> Result<PromotedBatch> {
    config.validate()?;
    if ranked.is_empty() {
        return Err(Error::EmptyPool);
    }
    let n = ranked.len();
    let mut k_prime = config.k;
    let mut expansions = 0;
    loop {
        let view = second_view(k_prime);
        let mut agreed: Vec<PromotedItem> = ranked[..k_prime.min(n)]
            .iter()
            .filter_map(|r| match view.get(r.id.as_str()) {
                Some(&(label, q)) if label == r.label => Some(PromotedItem {
                    id: r.id.clone(),
                    label,
                    p_confidence: r.confidence,
                    q_score: q,
                }),
                _ => None,
            })
            .collect();
        if agreed.len() >= config.k || expansions >= config.max_expansions || k_prime >= n {
            agreed.sort_by(|a, b| {
                (b.p_confidence * b.q_score)
                    .total_cmp(&(a.p_confidence * a.q_score))
                    .then_with(|| a.id.cmp(&b.id))
            });
            agreed.truncate(config.k);
            return Ok(PromotedBatch {
                items: agreed,
                k_prime,
                expansions,
            });
        }
        k_prime = config.expand(k_prime);
        expansions += 1;
    }
}

/// Joint selection over precomputed scores: `probs[i]` is the predictor's
/// distribution and `relevance[i]` the retriever's scores for mention `ids[i]`.
pub fn select_from_scores(
    ids: &[String],
    probs: &[Vec<f64>],
    relevance: &[Vec<f64>],
    dist: &ReferenceDistribution,
    config: &SelectionConfig,
) -> Result<PromotedBatch> {
    if ids.len() != probs.len() || ids.len() != relevance.len() {
        return Err(Error::Dimension("score tables do not match the pool".into()));
    }
    let ranked = ranked_by_confidence(ids, probs);
    let position: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    expand_and_intersect(&ranked, config, |k_prime| {
        let quotas = quota_from_distribution(k_prime, dist);
        let lists = top_per_label(ids, relevance, &quotas).lists;
        // a mention listed under several relations keeps its best-scoring one
        let mut best: HashMap<&str, (usize, f64)> = HashMap::new();
        for (y, list) in lists.iter().enumerate() {
            for (id, q) in list {
                let i = position[id.as_str()];
                let entry = best.entry(ids[i].as_str()).or_insert((y, *q));
                if *q > entry.1 {
                    *entry = (y, *q);
                }
            }
        }
        best
    })
}

fn pool_ids(pool: &[IndexedMention]) -> Vec<String> {
    pool.iter().map(|m| m.id.clone()).collect()
}

fn pool_probs(predictor: &PredictorModel, pool: &[IndexedMention]) -> Result<Vec<Vec<f64>>> {
    pool.par_iter()
        .map(|m| Ok(predictor.predict_proba(m)?.probs))
        .collect()
}

pub fn select_joint(
    predictor: &PredictorModel,
    retriever: &RetrieverModel,
    pool: &[IndexedMention],
    dist: &ReferenceDistribution,
    config: &SelectionConfig,
) -> Result<PromotedBatch> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    let probs = pool_probs(predictor, pool)?;
    let relevance = retriever.score_pool(pool)?;
    select_from_scores(&pool_ids(pool), &probs, &relevance, dist, config)
}

/// Predictor-only top-k with predicted labels; `q_score` is 1.
pub fn select_single(
    predictor: &PredictorModel,
    pool: &[IndexedMention],
    k: usize,
) -> Result<PromotedBatch> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    let ranked = ranked_by_confidence(&pool_ids(pool), &pool_probs(predictor, pool)?);
    Ok(PromotedBatch {
        items: ranked
            .into_iter()
            .take(k)
            .map(|r| PromotedItem {
                id: r.id,
                label: r.label,
                p_confidence: r.confidence,
                q_score: 1.0,
            })
            .collect(),
        k_prime: k,
        expansions: 0,
    })
}

/// Agreement of two predictors: the intersection of both top-k′ confidence
/// sets with equal labels; the second predictor's confidence is the `q_score`.
pub fn select_ensemble(
    first: &PredictorModel,
    second: &PredictorModel,
    pool: &[IndexedMention],
    config: &SelectionConfig,
) -> Result<PromotedBatch> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    let ids = pool_ids(pool);
    let ranked = ranked_by_confidence(&ids, &pool_probs(first, pool)?);
    let other = ranked_by_confidence(&ids, &pool_probs(second, pool)?);
    expand_and_intersect(&ranked, config, |k_prime| {
        other[..k_prime.min(other.len())]
            .iter()
            .map(|r| (r.id.as_str(), (r.label, r.confidence)))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("m{i}")).collect()
    }

    fn dist(probs: Vec<f64>) -> ReferenceDistribution {
        ReferenceDistribution {
            probs,
            source: DistributionSource::True,
        }
    }

    #[test]
    fn distribution_names_round_trip() {
        for s in ["true", "top-k", "top-3k", "top-7k"] {
            assert_eq!(s.parse::<DistributionSource>().unwrap().to_string(), s);
        }
        assert_eq!("top1k".parse::<DistributionSource>().unwrap(), DistributionSource::TopNk(1));
        assert!("top-8k".parse::<DistributionSource>().is_err());
        assert!("gold".parse::<DistributionSource>().is_err());
    }

    #[test]
    fn true_distribution_counts_labels() {
        let d = true_distribution(&[0, 0, 1], 2).unwrap();
        assert_eq!(d.probs, vec![2.0 / 3.0, 1.0 / 3.0]);
        assert!(matches!(true_distribution(&[], 2), Err(Error::EmptyLabeled)));
    }

    #[test]
    fn top_nk_uses_the_most_confident_prefix() {
        let r = |id: &str, label, confidence| RankedPrediction { id: id.into(), label, confidence };
        let ranked = vec![r("a", 1, 0.9), r("b", 1, 0.8), r("c", 2, 0.7), r("d", 2, 0.6)];
        assert_eq!(top_nk_distribution(&ranked, 1, 2, 3).unwrap().probs, vec![0.0, 1.0, 0.0]);
        assert_eq!(top_nk_distribution(&ranked, 3, 2, 3).unwrap().probs, vec![0.0, 0.5, 0.5]);
        assert!(matches!(top_nk_distribution(&[], 1, 2, 3), Err(Error::EmptyPool)));
    }

    #[test]
    fn quota_examples() {
        assert_eq!(quota_from_distribution(10, &dist(vec![0.5, 0.3, 0.2])), vec![5, 3, 2]);
        assert_eq!(quota_from_distribution(1, &dist(vec![0.6, 0.4])), vec![1, 0]);
        let q = quota_from_distribution(7, &dist(vec![1.0 / 3.0; 3]));
        assert_eq!(q.iter().sum::<usize>(), 7);
        assert!(q.iter().max().unwrap() - q.iter().min().unwrap() <= 1);
    }

    #[test]
    fn expansion_sequence_from_ten() {
        let c = SelectionConfig::new(10);
        let mut seq = vec![10];
        for _ in 0..5 {
            seq.push(c.expand(*seq.last().unwrap()));
        }
        assert_eq!(seq, vec![10, 13, 17, 22, 28, 35]);
        assert_eq!(c.expand(1), 2);
    }

    #[test]
    fn total_agreement_returns_the_predictor_top_k() {
        let n = 12;
        let probs: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let c = 0.5 + 0.04 * i as f64;
                if i % 2 == 0 { vec![c, 1.0 - c] } else { vec![1.0 - c, c] }
            })
            .collect();
        // relevance mirrors the predictor exactly
        let batch =
            select_from_scores(&ids(n), &probs, &probs, &dist(vec![0.5, 0.5]), &SelectionConfig::new(5)).unwrap();
        let mut top: Vec<usize> = (0..n).collect();
        top.sort_by(|&a, &b| {
            let ca = probs[a].iter().cloned().fold(0.0, f64::max);
            let cb = probs[b].iter().cloned().fold(0.0, f64::max);
            cb.partial_cmp(&ca).unwrap()
        });
        let mut got: Vec<String> = batch.items.iter().map(|i| i.id.clone()).collect();
        let mut want: Vec<String> = top[..5].iter().map(|&i| format!("m{i}")).collect();
        got.sort();
        want.sort();
        assert_eq!(batch.items.len(), 5);
        assert_eq!(got, want);
    }

    #[test]
    fn total_disagreement_exhausts_the_pool() {
        let n = 6;
        let probs: Vec<Vec<f64>> = (0..n).map(|_| vec![0.9, 0.1]).collect();
        let relevance: Vec<Vec<f64>> = (0..n).map(|_| vec![0.1, 0.9]).collect();
        let batch = select_from_scores(
            &ids(n),
            &probs,
            &relevance,
            &dist(vec![0.0, 1.0]),
            &SelectionConfig::new(2),
        )
        .unwrap();
        assert!(batch.items.is_empty());
        assert!(batch.k_prime >= n);
    }

    #[test]
    fn empty_pool_is_an_error() {
        let r = select_from_scores(&[], &[], &[], &dist(vec![1.0, 0.0]), &SelectionConfig::new(1));
        assert!(matches!(r, Err(Error::EmptyPool)));
    }

    #[test]
    fn multiply_retrieved_mention_keeps_its_best_label() {
        // m0 is retrieved under both labels, scoring higher under label 1,
        // so its label-0 prediction does not agree
        let probs = vec![vec![0.9, 0.1], vec![0.8, 0.2]];
        let relevance = vec![vec![0.7, 0.8], vec![0.6, 0.1]];
        let batch = select_from_scores(
            &ids(2),
            &probs,
            &relevance,
            &dist(vec![0.5, 0.5]),
            &SelectionConfig { k: 2, expansion_factor: 1.25, max_expansions: 0 },
        )
        .unwrap();
        assert!(batch.items.is_empty());
    }

    proptest! {
        #[test]
        fn batch_is_bounded_unique_and_agreed(
            rows in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), 1..25),
            k in 1usize..8,
            share in 0.0f64..1.0,
        ) {
            let n = rows.len();
            let probs: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.0, 1.0 - r.0]).collect();
            let relevance: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.1, r.2]).collect();
            let batch = select_from_scores(
                &ids(n), &probs, &relevance, &dist(vec![share, 1.0 - share]), &SelectionConfig::new(k),
            ).unwrap();
            prop_assert!(batch.items.len() <= k);
            let mut seen = std::collections::HashSet::new();
            for item in &batch.items {
                prop_assert!(seen.insert(item.id.clone()));
                let i: usize = item.id[1..].parse().unwrap();
                prop_assert_eq!(argmax(&probs[i]).0, item.label);
            }
            let again = select_from_scores(
                &ids(n), &probs, &relevance, &dist(vec![share, 1.0 - share]), &SelectionConfig::new(k),
            ).unwrap();
            prop_assert_eq!(batch, again);
        }
    }
}

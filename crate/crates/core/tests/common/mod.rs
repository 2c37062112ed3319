//! Shared fixtures for the integration tests: the synthetic benchmark and an
//! independent reference implementation of joint selection.

#![allow(dead_code)]

use dualre::corpus::{generate_synthetic, stratified_split, SplitSpec, SyntheticConfig};
use dualre::trainer::{Experiment, OptimConfig, TrainConfig};

pub const BENCH_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
pub const BENCH_NOISE: f64 = 0.15;
/// Noise level at which self-training visibly drifts.
pub const DRIFT_NOISE: f64 = 0.5;
const TEST_SEED_OFFSET: u64 = 10_000;

/// 3 relations plus `no_relation`, 1,000 examples.
pub fn bench_corpus(noise: f64, seed: u64) -> SyntheticConfig {
    SyntheticConfig {
        num_relations: 3,
        vocab_size: 1000,
        examples_per_relation: 250,
        trigger_noise: noise,
        negative_fraction: 0.25,
        seed,
    }
}

/// Dev carved first (10%), then 10% labeled and 50% unlabeled of the rest;
/// the test set is a fresh corpus from the same generator.
pub fn bench_experiment(noise: f64, seed: u64) -> Experiment {
    let corpus = generate_synthetic(&bench_corpus(noise, seed)).unwrap();
    let test = generate_synthetic(&bench_corpus(noise, seed + TEST_SEED_OFFSET)).unwrap();
    let split = stratified_split(
        &corpus.examples,
        corpus.schema.len(),
        &SplitSpec {
            labeled_fraction: 0.1,
            unlabeled_fraction: 0.5,
            dev_fraction: 0.1,
            seed,
        },
    )
    .unwrap();
    Experiment {
        schema: corpus.schema,
        labeled: split.labeled,
        unlabeled: split.unlabeled,
        dev: split.dev,
        test: test.examples,
        truth: Some(split.truth),
    }
}

/// Default hyperparameters except batch size 4 and patience 10, with which
/// the supervised baseline trains reliably on 90 labeled examples.
pub fn bench_config(seed: u64) -> TrainConfig {
    let optim = OptimConfig {
        learning_rate: 0.5,
        batch_size: 4,
        epochs: 30,
        patience: 10,
    };
    TrainConfig {
        predictor: optim,
        retriever: optim,
        seed,
        ..TrainConfig::default()
    }
}

/// One selected item as `(id, label, p, q)`.
pub type Item = (String, usize, f64, f64);

/// Joint selection written directly from its definition. Set membership is
/// decided by counting how many mentions outrank a candidate rather than by
/// sorting, and quotas use exact integer arithmetic over `counts`, the
/// reference distribution as label counts.
pub fn oracle_select(
    ids: &[String],
    probs: &[Vec<f64>],
    relevance: &[Vec<f64>],
    counts: &[u64],
    k: usize,
    max_expansions: usize,
) -> (Vec<Item>, usize, usize) {
    let n = ids.len();
    let labels = counts.len();
    let total: u64 = counts.iter().sum();
    let pred: Vec<(usize, f64)> = probs
        .iter()
        .map(|p| {
            let mut y = 0;
            for j in 1..p.len() {
                if p[j] > p[y] {
                    y = j;
                }
            }
            (y, p[y])
        })
        .collect();
    // j outranks i on score s when s_j > s_i, or equal with a smaller id
    let outranks = |sj: f64, si: f64, j: usize, i: usize| sj > si || (sj == si && ids[j] < ids[i]);

    let mut k_prime = k;
    let mut expansions = 0;
    loop {
        let quotas: Vec<usize> = {
            let scaled: Vec<u64> = counts.iter().map(|&c| c * k_prime as u64).collect();
            let mut seats: Vec<usize> = scaled.iter().map(|&s| (s / total) as usize).collect();
            let mut order: Vec<usize> = (0..labels).collect();
            order.sort_by(|&a, &b| (scaled[b] % total).cmp(&(scaled[a] % total)).then(a.cmp(&b)));
            let left = k_prime - seats.iter().sum::<usize>();
            for &y in order.iter().take(left) {
                seats[y] += 1;
            }
            seats
        };
        let mut chosen: Vec<Item> = Vec::new();
        for i in 0..n {
            let p_rank = (0..n).filter(|&j| outranks(pred[j].1, pred[i].1, j, i)).count();
            if p_rank >= k_prime {
                continue;
            }
            let listed: Vec<usize> = (0..labels)
                .filter(|&y| {
                    let q_rank = (0..n)
                        .filter(|&j| outranks(relevance[j][y], relevance[i][y], j, i))
                        .count();
                    q_rank < quotas[y]
                })
                .collect();
            let Some(&first) = listed.first() else { continue };
            let best = listed
                .iter()
                .copied()
                .fold(first, |b, y| if relevance[i][y] > relevance[i][b] { y } else { b });
            if best == pred[i].0 {
                chosen.push((ids[i].clone(), best, pred[i].1, relevance[i][best]));
            }
        }
        if chosen.len() >= k || expansions >= max_expansions || k_prime >= n {
            let mut ranked: Vec<Item> = Vec::new();
            for c in &chosen {
                let beaten_by = chosen
                    .iter()
                    .filter(|d| d.2 * d.3 > c.2 * c.3 || (d.2 * d.3 == c.2 * c.3 && d.0 < c.0))
                    .count();
                if beaten_by < k {
                    ranked.push(c.clone());
                }
            }
            ranked.sort_by(|a, b| (b.2 * b.3).total_cmp(&(a.2 * a.3)).then(a.0.cmp(&b.0)));
            return (ranked, k_prime, expansions);
        }
        k_prime = ((1.25 * k_prime as f64).ceil() as usize).max(k_prime + 1);
        expansions += 1;
    }
}

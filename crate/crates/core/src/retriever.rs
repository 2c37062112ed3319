//! Retrieval module: relevance `σ(zᵀy)` between a mention encoding and a
//! relation embedding, trained pointwise or pairwise.

use ndarray::{Array1, Array2, ArrayView2, ArrayViewMut2};
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;

use crate::corpus::IndexedMention;
use crate::encoder::{EncoderConfig, EncoderGrad, EncoderParams};
use crate::error::{Error, Result};
use crate::predictor::WeightedExample;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Negative labels scored per positive in the pointwise loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Negatives {
    All,
    /// Sampled uniformly without replacement; all of them when fewer exist.
    Sample(usize),
}

impl Negatives {
    /// Every negative for small schemas, ten sampled ones otherwise.
    pub fn default_for(num_labels: usize) -> Self {
        if num_labels <= 64 {
            Negatives::All
        } else {
            Negatives::Sample(10)
        }
    }
}

/// Order score of a pair: the partner is a negative (1) or another positive (1/2).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairOrder {
    Negative,
    Positive,
}

impl PairOrder {
    pub fn score(self) -> f64 {
        match self {
            PairOrder::Negative => 1.0,
            PairOrder::Positive => 0.5,
        }
    }
}

/// `(x⁺, x′)` scored against relation `label`, with `x⁺` a positive of `label`.
#[derive(Clone, Copy, Debug)]
pub struct RankPair<'a> {
    pub positive: &'a IndexedMention,
    pub other: &'a IndexedMention,
    pub label: usize,
    pub order: PairOrder,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrieverModel {
    pub encoder: EncoderParams,
    pub relation_embeddings: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrieverGrad {
    pub encoder: EncoderGrad,
    pub relation_embeddings: Array2<f64>,
}

impl RetrieverGrad {
    pub fn zeros_like(model: &RetrieverModel) -> Self {
        RetrieverGrad {
            encoder: EncoderGrad::zeros_like(&model.encoder),
            relation_embeddings: Array2::zeros(model.relation_embeddings.raw_dim()),
        }
    }

    pub fn dense_blocks(&self, model: &RetrieverModel) -> Vec<(&'static str, Array2<f64>)> {
        let mut out = self.encoder.dense_blocks(&model.encoder);
        out.push(("relation_embeddings", self.relation_embeddings.clone()));
        out
    }
}

/// Per-relation ranked lists of `(mention id, relevance)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Retrieval {
    pub lists: Vec<Vec<(String, f64)>>,
    /// Some quota asked for more mentions than the pool holds.
    pub truncated: bool,
}

/// Top `quotas[y]` rows of a precomputed score table per label, ties by ascending id.
pub(crate) fn top_per_label(ids: &[String], scores: &[Vec<f64>], quotas: &[usize]) -> Retrieval {
    let mut truncated = false;
    let lists = quotas
        .iter()
        .enumerate()
        .map(|(y, &k)| {
            if k > ids.len() {
                truncated = true;
            }
            let mut order: Vec<usize> = (0..ids.len()).collect();
            order.sort_by(|&a, &b| {
                scores[b][y]
                    .total_cmp(&scores[a][y])
                    .then_with(|| ids[a].cmp(&ids[b]))
            });
            order
                .into_iter()
                .take(k)
                .map(|i| (ids[i].clone(), scores[i][y]))
                .collect()
        })
        .collect();
    Retrieval { lists, truncated }
}

impl RetrieverModel {
    pub fn zeros(encoder: &EncoderConfig, num_labels: usize) -> Result<Self> {
        let encoder = EncoderParams::zeros(encoder)?;
        let d = encoder.hidden_dim();
        Ok(RetrieverModel {
            encoder,
            relation_embeddings: Array2::zeros((num_labels, d)),
        })
    }

    pub fn random(encoder: &EncoderConfig, num_labels: usize, rng: &mut impl Rng) -> Result<Self> {
        let encoder = EncoderParams::random(encoder, rng)?;
        let d = encoder.hidden_dim();
        let relation_embeddings =
            Array2::from_shape_simple_fn((num_labels, d), || rng.gen_range(-0.1..=0.1));
        Ok(RetrieverModel {
            encoder,
            relation_embeddings,
        })
    }

    pub fn num_labels(&self) -> usize {
        self.relation_embeddings.nrows()
    }

    pub fn blocks(&self) -> Vec<(&'static str, ArrayView2<'_, f64>)> {
        let mut out = self.encoder.blocks();
        out.push(("relation_embeddings", self.relation_embeddings.view()));
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<(&'static str, ArrayViewMut2<'_, f64>)> {
        let mut out = self.encoder.blocks_mut();
        out.push(("relation_embeddings", self.relation_embeddings.view_mut()));
        out
    }

    fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.num_labels() {
            return Err(Error::Dimension(format!(
                "label {label} out of {}",
                self.num_labels()
            )));
        }
        Ok(())
    }

    pub fn relevance(&self, mention: &IndexedMention, label: usize) -> Result<f64> {
        self.check_label(label)?;
        let z = self.encoder.encode(mention)?.z;
        Ok(sigmoid(self.relation_embeddings.row(label).dot(&z)))
    }

    /// Relevance of one mention to every relation.
    pub fn scores(&self, mention: &IndexedMention) -> Result<Vec<f64>> {
        let z = self.encoder.encode(mention)?.z;
        Ok(self.relation_embeddings.dot(&z).iter().map(|&s| sigmoid(s)).collect())
    }

    pub fn score_pool(&self, pool: &[IndexedMention]) -> Result<Vec<Vec<f64>>> {
        pool.par_iter().map(|m| self.scores(m)).collect()
    }

    /// Label with the highest relevance; ties go to the lower index.
    pub fn predict_labels(&self, mentions: &[IndexedMention]) -> Result<Vec<usize>> {
        Ok(self
            .score_pool(mentions)?
            .iter()
            .map(|s| {
                let mut best = 0;
                for (y, &v) in s.iter().enumerate() {
                    if v > s[best] {
                        best = y;
                    }
                }
                best
            })
            .collect())
    }

    pub fn retrieve_per_relation(&self, pool: &[IndexedMention], quotas: &[usize]) -> Result<Retrieval> {
        if quotas.len() != self.num_labels() {
            return Err(Error::Dimension(format!(
                "{} quotas for {} relations",
                quotas.len(),
                self.num_labels()
            )));
        }
        let ids: Vec<String> = pool.iter().map(|m| m.id.clone()).collect();
        let scores = self.score_pool(pool)?;
        Ok(top_per_label(&ids, &scores, quotas))
    }

    /// Weighted pointwise loss: each example contributes `-ln σ(zᵀy)` for its
    /// label plus `-ln(1 - σ(zᵀy'))` for every scored negative `y'`, scaled by
    /// `w / Σw`.
    pub fn pointwise_loss_and_grad(
        &self,
        batch: &[WeightedExample],
        negatives: Negatives,
        rng: &mut impl Rng,
    ) -> Result<(f64, RetrieverGrad)> {
        let r = self.num_labels();
        if r < 2 {
            return Err(Error::NoNegatives);
        }
        let scale = batch_scale(batch.iter().map(|e| e.weight))?;
        let mut grad = RetrieverGrad::zeros_like(self);
        let mut loss = 0.0;
        for e in batch {
            self.check_label(e.label)?;
            let others: Vec<usize> = (0..r).filter(|&y| y != e.label).collect();
            let chosen: Vec<usize> = match negatives {
                Negatives::Sample(n) if n < others.len() => {
                    let mut picks: Vec<usize> = index::sample(rng, others.len(), n)
                        .into_iter()
                        .map(|i| others[i])
                        .collect();
                    picks.sort_unstable();
                    picks
                }
                _ => others,
            };
            if e.weight == 0.0 {
                continue;
            }
            let s = e.weight * scale;
            let cache = self.encoder.forward(e.mention)?;
            let mut dz = Array1::<f64>::zeros(cache.z.len());
            let mut term = |y: usize, positive: bool, grad: &mut RetrieverGrad, dz: &mut Array1<f64>| {
                let row = self.relation_embeddings.row(y);
                let t = row.dot(&cache.z);
                let (l, dt) = if positive {
                    (softplus(-t), -sigmoid(-t))
                } else {
                    (softplus(t), sigmoid(t))
                };
                loss += s * l;
                grad.relation_embeddings
                    .row_mut(y)
                    .scaled_add(s * dt, &cache.z);
                dz.scaled_add(s * dt, &row);
            };
            term(e.label, true, &mut grad, &mut dz);
            for y in chosen {
                term(y, false, &mut grad, &mut dz);
            }
            self.encoder
                .backward_into(e.mention, &cache, dz.view(), &mut grad.encoder)?;
        }
        Ok((loss, grad))
    }

    /// Weighted pairwise loss `-(1/Σw) Σ w·r·ln σ(zᵀy - z′ᵀy)`.
    pub fn pairwise_loss_and_grad(&self, pairs: &[RankPair]) -> Result<(f64, RetrieverGrad)> {
        let scale = batch_scale(pairs.iter().map(|p| p.weight))?;
        let mut grad = RetrieverGrad::zeros_like(self);
        let mut loss = 0.0;
        for p in pairs {
            self.check_label(p.label)?;
            if p.weight == 0.0 {
                continue;
            }
            let s = p.weight * scale * p.order.score();
            let a = self.encoder.forward(p.positive)?;
            let b = self.encoder.forward(p.other)?;
            let row = self.relation_embeddings.row(p.label);
            let t = row.dot(&a.z) - row.dot(&b.z);
            loss += s * softplus(-t);
            let dt = -s * sigmoid(-t);
            let diff = &a.z - &b.z;
            grad.relation_embeddings
                .row_mut(p.label)
                .scaled_add(dt, &diff);
            let up = row.to_owned() * dt;
            self.encoder
                .backward_into(p.positive, &a, up.view(), &mut grad.encoder)?;
            let down = -up;
            self.encoder
                .backward_into(p.other, &b, down.view(), &mut grad.encoder)?;
        }
        Ok((loss, grad))
    }

    /// Rejects non-finite gradients before touching any parameter.
    pub fn sgd_step(&mut self, grad: &RetrieverGrad, learning_rate: f64) -> Result<()> {
        if !grad.encoder.is_finite() {
            return Err(Error::NonFinite("encoder"));
        }
        if !grad.relation_embeddings.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("relation embeddings"));
        }
        self.encoder.apply(&grad.encoder, learning_rate);
        self.relation_embeddings
            .scaled_add(-learning_rate, &grad.relation_embeddings);
        Ok(())
    }
}

/// `1 / Σw` after checking the batch is non-empty with finite, non-negative weights.
fn batch_scale(weights: impl Iterator<Item = f64>) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0;
    for w in weights {
        if !w.is_finite() || w < 0.0 {
            return Err(Error::NonFinite("example weight"));
        }
        total += w;
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyBatch);
    }
    if total <= 0.0 {
        return Err(Error::ZeroWeight);
    }
    Ok(1.0 / total)
}

/// Draws, for every anchor, two partners with another label (order 1) and
/// one other partner with the same label (order 1/2). Anchors come first;
/// the pair weight is the product of the two example weights.
pub fn sample_pairs<'a>(examples: &[WeightedExample<'a>], rng: &mut impl Rng) -> Vec<RankPair<'a>> {
    const NEGATIVE_PARTNERS: usize = 2;
    let num_labels = examples.iter().map(|e| e.label + 1).max().unwrap_or(0);
    let mut by_label: Vec<Vec<usize>> = vec![Vec::new(); num_labels];
    for (i, e) in examples.iter().enumerate() {
        by_label[e.label].push(i);
    }
    let mut pairs = Vec::new();
    for (i, anchor) in examples.iter().enumerate() {
        let same = &by_label[anchor.label];
        let others = examples.len() - same.len();
        for _ in 0..NEGATIVE_PARTNERS.min(others) {
            // uniform over examples with a different label
            let mut pick = rng.gen_range(0..others);
            let mut j = 0;
            for (y, members) in by_label.iter().enumerate() {
                if y == anchor.label {
                    continue;
                }
                if pick < members.len() {
                    j = members[pick];
                    break;
                }
                pick -= members.len();
            }
            let partner = &examples[j];
            pairs.push(RankPair {
                positive: anchor.mention,
                other: partner.mention,
                label: anchor.label,
                order: PairOrder::Negative,
                weight: anchor.weight * partner.weight,
            });
        }
        if same.len() > 1 {
            let peers: Vec<usize> = same.iter().copied().filter(|&j| j != i).collect();
            let j = *peers.choose(rng).expect("another positive exists");
            let partner = &examples[j];
            pairs.push(RankPair {
                positive: anchor.mention,
                other: partner.mention,
                label: anchor.label,
                order: PairOrder::Positive,
                weight: anchor.weight * partner.weight,
            });
        }
    }
    pairs
}

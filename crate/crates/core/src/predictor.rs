//! Prediction module: softmax relation classifier over mention encodings.

use std::cmp::Ordering;

use ndarray::{Array1, Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use rayon::prelude::*;

use crate::corpus::IndexedMention;
use crate::encoder::{EncoderConfig, EncoderGrad, EncoderParams};
use crate::error::{Error, Result};

/// A training instance with its promotion weight (1 for labeled data).
#[derive(Clone, Copy, Debug)]
pub struct WeightedExample<'a> {
    pub mention: &'a IndexedMention,
    pub label: usize,
    pub weight: f64,
}

/// Probability vector over the relation schema.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelDistribution {
    pub probs: Vec<f64>,
}

impl LabelDistribution {
    /// Most probable label; ties go to the lower index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn confidence(&self) -> f64 {
        self.probs[self.argmax()]
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictorModel {
    pub encoder: EncoderParams,
    pub softmax_weights: Array2<f64>,
    pub softmax_bias: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictorGrad {
    pub encoder: EncoderGrad,
    pub softmax_weights: Array2<f64>,
    pub softmax_bias: Array1<f64>,
}

impl PredictorGrad {
    pub fn zeros_like(model: &PredictorModel) -> Self {
        PredictorGrad {
            encoder: EncoderGrad::zeros_like(&model.encoder),
            softmax_weights: Array2::zeros(model.softmax_weights.raw_dim()),
            softmax_bias: Array1::zeros(model.softmax_bias.raw_dim()),
        }
    }

    pub fn dense_blocks(&self, model: &PredictorModel) -> Vec<(&'static str, Array2<f64>)> {
        let mut out = self.encoder.dense_blocks(&model.encoder);
        out.push(("softmax_weights", self.softmax_weights.clone()));
        out.push(("softmax_bias", self.softmax_bias.clone().insert_axis(Axis(0))));
        out
    }
}

/// One pool mention ranked by prediction confidence.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedPrediction {
    pub id: String,
    pub label: usize,
    pub confidence: f64,
}

/// Descending confidence, then ascending id.
pub(crate) fn by_confidence(a: &RankedPrediction, b: &RankedPrediction) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then_with(|| a.id.cmp(&b.id))
}

impl PredictorModel {
    pub fn zeros(encoder: &EncoderConfig, num_labels: usize) -> Result<Self> {
        let encoder = EncoderParams::zeros(encoder)?;
        let d = encoder.hidden_dim();
        Ok(PredictorModel {
            encoder,
            softmax_weights: Array2::zeros((num_labels, d)),
            softmax_bias: Array1::zeros(num_labels),
        })
    }

    pub fn random(encoder: &EncoderConfig, num_labels: usize, rng: &mut impl Rng) -> Result<Self> {
        let encoder = EncoderParams::random(encoder, rng)?;
        let d = encoder.hidden_dim();
        let mut m = PredictorModel {
            encoder,
            softmax_weights: Array2::zeros((num_labels, d)),
            softmax_bias: Array1::zeros(num_labels),
        };
        m.softmax_weights.mapv_inplace(|_| rng.gen_range(-0.1..=0.1));
        m.softmax_bias.mapv_inplace(|_| rng.gen_range(-0.1..=0.1));
        Ok(m)
    }

    pub fn num_labels(&self) -> usize {
        self.softmax_weights.nrows()
    }

    pub fn blocks(&self) -> Vec<(&'static str, ArrayView2<'_, f64>)> {
        let mut out = self.encoder.blocks();
        out.push(("softmax_weights", self.softmax_weights.view()));
        out.push(("softmax_bias", self.softmax_bias.view().insert_axis(Axis(0))));
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<(&'static str, ArrayViewMut2<'_, f64>)> {
        let mut out = self.encoder.blocks_mut();
        out.push(("softmax_weights", self.softmax_weights.view_mut()));
        out.push(("softmax_bias", self.softmax_bias.view_mut().insert_axis(Axis(0))));
        out
    }

    fn logits(&self, z: &Array1<f64>) -> Vec<f64> {
        (self.softmax_weights.dot(z) + &self.softmax_bias).to_vec()
    }

    pub fn predict_proba(&self, mention: &IndexedMention) -> Result<LabelDistribution> {
        let cache = self.encoder.forward(mention)?;
        Ok(LabelDistribution {
            probs: softmax(&self.logits(&cache.z)),
        })
    }

    /// Weighted negative log-likelihood `-(1/Σw) Σ w_i log p(y_i|x_i)` and its gradient.
    pub fn nll_loss_and_grad(&self, batch: &[WeightedExample]) -> Result<(f64, PredictorGrad)> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if batch.iter().any(|e| !e.weight.is_finite() || e.weight < 0.0) {
            return Err(Error::NonFinite("example weight"));
        }
        let total: f64 = batch.iter().map(|e| e.weight).sum();
        if total <= 0.0 {
            return Err(Error::ZeroWeight);
        }
        let k = self.num_labels();
        let mut grad = PredictorGrad::zeros_like(self);
        let mut loss = 0.0;
        for e in batch {
            if e.label >= k {
                return Err(Error::Dimension(format!("label {} out of {k}", e.label)));
            }
            if e.weight == 0.0 {
                continue;
            }
            let cache = self.encoder.forward(e.mention)?;
            let logits = self.logits(&cache.z);
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let log_sum = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
            let scale = e.weight / total;
            loss -= scale * (logits[e.label] - log_sum);

            // d loss / d logits = scale * (p - onehot)
            let mut dlogits: Array1<f64> = logits.iter().map(|l| (l - log_sum).exp()).collect();
            dlogits[e.label] -= 1.0;
            dlogits *= scale;
            for (mut row, &g) in grad.softmax_weights.outer_iter_mut().zip(dlogits.iter()) {
                row.scaled_add(g, &cache.z);
            }
            grad.softmax_bias += &dlogits;
            let dz = self.softmax_weights.t().dot(&dlogits);
            self.encoder
                .backward_into(e.mention, &cache, dz.view(), &mut grad.encoder)?;
        }
        Ok((loss, grad))
    }

    /// `params -= lr * grad`. Rejects non-finite gradients before touching any parameter.
    pub fn sgd_step(&mut self, grad: &PredictorGrad, learning_rate: f64) -> Result<()> {
        if !grad.encoder.is_finite() {
            return Err(Error::NonFinite("encoder"));
        }
        if !grad.softmax_weights.iter().chain(grad.softmax_bias.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("softmax"));
        }
        self.encoder.apply(&grad.encoder, learning_rate);
        self.softmax_weights
            .scaled_add(-learning_rate, &grad.softmax_weights);
        self.softmax_bias.scaled_add(-learning_rate, &grad.softmax_bias);
        Ok(())
    }

    /// Pool sorted by descending `max_y p(y|x)`, ties by ascending id.
    /// `no_relation` predictions are ranked like any other label.
    pub fn rank_unlabeled_by_confidence(
        &self,
        pool: &[IndexedMention],
    ) -> Result<Vec<RankedPrediction>> {
        let mut ranked = pool
            .par_iter()
            .map(|m| {
                let d = self.predict_proba(m)?;
                Ok(RankedPrediction {
                    id: m.id.clone(),
                    label: d.argmax(),
                    confidence: d.confidence(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        ranked.sort_by(by_confidence);
        Ok(ranked)
    }

    pub fn predict_labels(&self, mentions: &[IndexedMention]) -> Result<Vec<usize>> {
        mentions
            .par_iter()
            .map(|m| Ok(self.predict_proba(m)?.argmax()))
            .collect()
    }
}

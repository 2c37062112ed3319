//! Mention encoder: mean-pooled word and dual-position embeddings followed by
//! one `tanh` projection.
//!
//! ```text
//! h = mean_i [ word(t_i) ; pos(bucket(i, subj)) ; pos(bucket(i, obj)) ]
//! z = tanh(P h + b)
//! ```

use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;

use crate::corpus::{IndexedMention, Span};
use crate::error::{Error, Result};

const INIT_RANGE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub word_dim: usize,
    pub position_dim: usize,
    pub hidden_dim: usize,
    pub max_distance: usize,
}

impl EncoderConfig {
    pub fn with_vocab(vocab_size: usize) -> Self {
        EncoderConfig {
            vocab_size,
            word_dim: 50,
            position_dim: 10,
            hidden_dim: 64,
            max_distance: 30,
        }
    }

    pub fn num_buckets(&self) -> usize {
        2 * self.max_distance + 1
    }

    pub fn input_dim(&self) -> usize {
        self.word_dim + 2 * self.position_dim
    }

    fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.word_dim == 0 || self.position_dim == 0 || self.hidden_dim == 0
        {
            return Err(Error::Dimension(format!("encoder dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Signed distance from token `i` to `span`: negative before it, zero inside,
/// positive after it.
pub fn relative_distance(i: usize, span: Span) -> isize {
    if i < span.start {
        i as isize - span.start as isize
    } else if i > span.end {
        (i - span.end) as isize
    } else {
        0
    }
}

/// Clips a signed distance to `[-max_distance, max_distance]` and shifts it to a row index.
pub fn bucket(distance: isize, max_distance: usize) -> usize {
    let m = max_distance as isize;
    (distance.clamp(-m, m) + m) as usize
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub word_embeddings: Array2<f64>,
    pub position_embeddings: Array2<f64>,
    pub projection: Array2<f64>,
    pub bias: Array1<f64>,
    max_distance: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MentionEncoding {
    pub z: Array1<f64>,
}

/// Forward intermediates reused by the backward pass.
#[derive(Clone, Debug)]
pub struct EncoderCache {
    pooled: Array1<f64>,
    pub z: Array1<f64>,
}

/// Rows of an embedding gradient that were touched; all others are zero.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseRows {
    pub rows: BTreeMap<usize, Array1<f64>>,
}

impl SparseRows {
    fn add(&mut self, row: usize, values: ArrayView1<f64>, scale: f64) {
        self.rows
            .entry(row)
            .or_insert_with(|| Array1::zeros(values.len()))
            .scaled_add(scale, &values);
    }

    pub fn to_dense(&self, rows: usize, cols: usize) -> Array2<f64> {
        let mut out = Array2::zeros((rows, cols));
        for (&r, v) in &self.rows {
            out.row_mut(r).assign(v);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderGrad {
    pub word_embeddings: SparseRows,
    pub position_embeddings: Array2<f64>,
    pub projection: Array2<f64>,
    pub bias: Array1<f64>,
}

impl EncoderGrad {
    pub fn zeros_like(params: &EncoderParams) -> Self {
        EncoderGrad {
            word_embeddings: SparseRows::default(),
            position_embeddings: Array2::zeros(params.position_embeddings.raw_dim()),
            projection: Array2::zeros(params.projection.raw_dim()),
            bias: Array1::zeros(params.bias.raw_dim()),
        }
    }

    pub(crate) fn is_finite(&self) -> bool {
        self.word_embeddings
            .rows
            .values()
            .all(|r| r.iter().all(|v| v.is_finite()))
            && self.position_embeddings.iter().all(|v| v.is_finite())
            && self.projection.iter().all(|v| v.is_finite())
            && self.bias.iter().all(|v| v.is_finite())
    }

    /// Dense copies in the order of [`EncoderParams::blocks`].
    pub fn dense_blocks(&self, params: &EncoderParams) -> Vec<(&'static str, Array2<f64>)> {
        let (v, de) = params.word_embeddings.dim();
        vec![
            ("word_embeddings", self.word_embeddings.to_dense(v, de)),
            ("position_embeddings", self.position_embeddings.clone()),
            ("projection", self.projection.clone()),
            ("encoder_bias", self.bias.clone().insert_axis(Axis(0))),
        ]
    }
}

impl EncoderParams {
    pub fn zeros(config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        Ok(EncoderParams {
            word_embeddings: Array2::zeros((config.vocab_size, config.word_dim)),
            position_embeddings: Array2::zeros((config.num_buckets(), config.position_dim)),
            projection: Array2::zeros((config.hidden_dim, config.input_dim())),
            bias: Array1::zeros(config.hidden_dim),
            max_distance: config.max_distance,
        })
    }

    /// Every entry uniform in `[-0.1, 0.1]`.
    pub fn random(config: &EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        for (_, mut block) in p.blocks_mut() {
            block.mapv_inplace(|_| rng.gen_range(-INIT_RANGE..=INIT_RANGE));
        }
        Ok(p)
    }

    pub fn config(&self) -> EncoderConfig {
        EncoderConfig {
            vocab_size: self.word_embeddings.nrows(),
            word_dim: self.word_embeddings.ncols(),
            position_dim: self.position_embeddings.ncols(),
            hidden_dim: self.projection.nrows(),
            max_distance: self.max_distance,
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.projection.nrows()
    }

    pub fn blocks(&self) -> Vec<(&'static str, ArrayView2<'_, f64>)> {
        vec![
            ("word_embeddings", self.word_embeddings.view()),
            ("position_embeddings", self.position_embeddings.view()),
            ("projection", self.projection.view()),
            ("encoder_bias", self.bias.view().insert_axis(Axis(0))),
        ]
    }

    pub fn blocks_mut(&mut self) -> Vec<(&'static str, ArrayViewMut2<'_, f64>)> {
        vec![
            ("word_embeddings", self.word_embeddings.view_mut()),
            ("position_embeddings", self.position_embeddings.view_mut()),
            ("projection", self.projection.view_mut()),
            ("encoder_bias", self.bias.view_mut().insert_axis(Axis(0))),
        ]
    }

    fn check_mention(&self, m: &IndexedMention) -> Result<()> {
        let v = self.word_embeddings.nrows();
        if m.tokens.is_empty() {
            return Err(Error::Dimension(format!("mention {} has no tokens", m.id)));
        }
        if let Some(&t) = m.tokens.iter().find(|&&t| t >= v) {
            return Err(Error::Dimension(format!(
                "token row {t} of mention {} outside vocabulary of {v}",
                m.id
            )));
        }
        Ok(())
    }

    pub fn forward(&self, m: &IndexedMention) -> Result<EncoderCache> {
        self.check_mention(m)?;
        let de = self.word_embeddings.ncols();
        let dp = self.position_embeddings.ncols();
        let mut pooled = Array1::<f64>::zeros(de + 2 * dp);
        for (i, &t) in m.tokens.iter().enumerate() {
            let bs = bucket(relative_distance(i, m.subj), self.max_distance);
            let bo = bucket(relative_distance(i, m.obj), self.max_distance);
            pooled
                .slice_mut(s![..de])
                .scaled_add(1.0, &self.word_embeddings.row(t));
            pooled
                .slice_mut(s![de..de + dp])
                .scaled_add(1.0, &self.position_embeddings.row(bs));
            pooled
                .slice_mut(s![de + dp..])
                .scaled_add(1.0, &self.position_embeddings.row(bo));
        }
        pooled /= m.tokens.len() as f64;
        let z = (self.projection.dot(&pooled) + &self.bias).mapv(f64::tanh);
        Ok(EncoderCache { pooled, z })
    }

    pub fn encode(&self, m: &IndexedMention) -> Result<MentionEncoding> {
        Ok(MentionEncoding {
            z: self.forward(m)?.z,
        })
    }

    /// Accumulates the gradient of `z · upstream` into `grad`.
    pub fn backward_into(
        &self,
        m: &IndexedMention,
        cache: &EncoderCache,
        upstream: ArrayView1<f64>,
        grad: &mut EncoderGrad,
    ) -> Result<()> {
        let d = self.hidden_dim();
        if upstream.len() != d {
            return Err(Error::Dimension(format!(
                "upstream gradient has {} entries, encoder output has {d}",
                upstream.len()
            )));
        }
        let dpre: Array1<f64> = cache
            .z
            .iter()
            .zip(upstream.iter())
            .map(|(z, g)| g * (1.0 - z * z))
            .collect();
        for (mut row, &g) in grad.projection.outer_iter_mut().zip(dpre.iter()) {
            if g != 0.0 {
                row.scaled_add(g, &cache.pooled);
            }
        }
        grad.bias += &dpre;

        let dpooled = self.projection.t().dot(&dpre) / m.tokens.len() as f64;
        let de = self.word_embeddings.ncols();
        let dp = self.position_embeddings.ncols();
        let dw = dpooled.slice(s![..de]);
        let ds = dpooled.slice(s![de..de + dp]);
        let dob = dpooled.slice(s![de + dp..]);
        for (i, &t) in m.tokens.iter().enumerate() {
            let bs = bucket(relative_distance(i, m.subj), self.max_distance);
            let bo = bucket(relative_distance(i, m.obj), self.max_distance);
            grad.word_embeddings.add(t, dw, 1.0);
            grad.position_embeddings.row_mut(bs).scaled_add(1.0, &ds);
            grad.position_embeddings.row_mut(bo).scaled_add(1.0, &dob);
        }
        Ok(())
    }

    /// Exact gradient of `z · upstream` with respect to every parameter block.
    pub fn encode_backward(&self, m: &IndexedMention, upstream: ArrayView1<f64>) -> Result<EncoderGrad> {
        let cache = self.forward(m)?;
        let mut grad = EncoderGrad::zeros_like(self);
        self.backward_into(m, &cache, upstream, &mut grad)?;
        Ok(grad)
    }

    /// `params -= lr * grad`; the caller has checked finiteness.
    pub(crate) fn apply(&mut self, grad: &EncoderGrad, lr: f64) {
        for (&r, g) in &grad.word_embeddings.rows {
            self.word_embeddings.row_mut(r).scaled_add(-lr, g);
        }
        self.position_embeddings
            .scaled_add(-lr, &grad.position_embeddings);
        self.projection.scaled_add(-lr, &grad.projection);
        self.bias.scaled_add(-lr, &grad.bias);
    }
}

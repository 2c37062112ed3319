//! Central finite-difference checks for the analytic gradients.

use ndarray::{Array2, ArrayViewMut2};
use rand::Rng;

use crate::corpus::{IndexedMention, Span};
use crate::encoder::EncoderConfig;

/// Per-block comparison of analytic and numerical gradients.
#[derive(Clone, Debug)]
pub struct BlockCheck {
    pub name: &'static str,
    /// `‖a − n‖ / (‖a‖ + ‖n‖)`, zero when both vanish.
    pub relative_error: f64,
}

/// Perturbs every coordinate of every block by `±step` and compares the
/// central difference of `loss` against `analytic` (same block order).
pub fn check_blocks<M>(
    model: &mut M,
    blocks_mut: impl Fn(&mut M) -> Vec<(&'static str, ArrayViewMut2<'_, f64>)>,
    loss: impl Fn(&M) -> f64,
    analytic: &[(&'static str, Array2<f64>)],
    step: f64,
) -> Vec<BlockCheck> {
    let shapes: Vec<(&'static str, (usize, usize))> =
        blocks_mut(model).iter().map(|(n, b)| (*n, b.dim())).collect();
    assert_eq!(shapes.len(), analytic.len(), "block count mismatch");
    let mut out = Vec::with_capacity(shapes.len());
    for (bi, (name, (rows, cols))) in shapes.into_iter().enumerate() {
        assert_eq!(analytic[bi].0, name, "block order mismatch");
        assert_eq!(analytic[bi].1.dim(), (rows, cols), "block {name} shape mismatch");
        let mut diff = 0.0;
        let mut norm_a = 0.0;
        let mut norm_n = 0.0;
        for r in 0..rows {
            for c in 0..cols {
                let original = blocks_mut(model)[bi].1[[r, c]];
                blocks_mut(model)[bi].1[[r, c]] = original + step;
                let plus = loss(model);
                blocks_mut(model)[bi].1[[r, c]] = original - step;
                let minus = loss(model);
                blocks_mut(model)[bi].1[[r, c]] = original;
                let numeric = (plus - minus) / (2.0 * step);
                let a = analytic[bi].1[[r, c]];
                diff += (a - numeric).powi(2);
                norm_a += a * a;
                norm_n += numeric * numeric;
            }
        }
        let denom = norm_a.sqrt() + norm_n.sqrt();
        let relative_error = if denom == 0.0 { 0.0 } else { diff.sqrt() / denom };
        out.push(BlockCheck { name, relative_error });
    }
    out
}

pub fn max_relative_error(checks: &[BlockCheck]) -> f64 {
    checks.iter().map(|c| c.relative_error).fold(0.0, f64::max)
}

/// Small encoder shape suitable for exhaustive finite differences.
pub fn small_encoder_config(rng: &mut impl Rng) -> EncoderConfig {
    EncoderConfig {
        vocab_size: rng.gen_range(4..=8),
        word_dim: rng.gen_range(2..=4),
        position_dim: rng.gen_range(1..=3),
        hidden_dim: rng.gen_range(2..=5),
        max_distance: rng.gen_range(1..=4),
    }
}

/// Random mention with two disjoint spans over `vocab_size` token rows.
pub fn random_mention(id: &str, vocab_size: usize, rng: &mut impl Rng) -> IndexedMention {
    let len = rng.gen_range(2..=9);
    let tokens = (0..len).map(|_| rng.gen_range(0..vocab_size)).collect();
    let cut = rng.gen_range(1..len);
    let a_start = rng.gen_range(0..cut);
    let a = Span::new(a_start, rng.gen_range(a_start..cut));
    let b_start = rng.gen_range(cut..len);
    let b = Span::new(b_start, rng.gen_range(b_start..len));
    let (subj, obj) = if rng.gen_bool(0.5) { (a, b) } else { (b, a) };
    IndexedMention {
        id: id.to_owned(),
        tokens,
        subj,
        obj,
    }
}

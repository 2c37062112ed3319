//! Desk-scale corpus with a known labeling rule.
//!
//! Every positive relation `y` owns one trigger token. A sentence expresses
//! `y` iff its inter-entity segment contains that trigger. A configured share
//! of each relation's sentences has the trigger swapped for a confounder
//! token while keeping label `y` (label noise). Negative sentences carry no
//! trigger and no confounder.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LabeledExample, RelationMention, RelationSchema, Span, NO_RELATION};
use crate::error::{Error, Result};

/// Fillers left over after triggers and confounders are placed.
const MIN_FILLERS: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    /// Number of positive relations (excluding `no_relation`).
    pub num_relations: usize,
    /// Distinct token types, triggers and confounders included.
    pub vocab_size: usize,
    pub examples_per_relation: usize,
    pub trigger_noise: f64,
    pub negative_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_relations: 3,
            vocab_size: 400,
            examples_per_relation: 250,
            trigger_noise: 0.15,
            negative_fraction: 0.25,
            seed: 0,
        }
    }
}

/// Generation record for one example.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SyntheticTruth {
    /// Relation whose trigger sits between the entities, if any.
    pub expressed: Option<usize>,
    /// The trigger was replaced by a confounder (label kept).
    pub noisy: bool,
}

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub schema: RelationSchema,
    pub examples: Vec<LabeledExample>,
    pub truth: Vec<SyntheticTruth>,
    /// Trigger token per label index; `None` for `no_relation`.
    pub triggers: Vec<Option<String>>,
    pub confounders: Vec<String>,
}

impl SyntheticCorpus {
    /// Bayes-optimal label under the generating process: the relation whose
    /// trigger lies strictly between the entity spans; a confounder there
    /// decides among positives uniformly (lowest index wins the tie);
    /// otherwise `no_relation`.
    pub fn bayes_label(&self, mention: &RelationMention) -> usize {
        let segment = inter_entity(mention);
        for (y, t) in self.triggers.iter().enumerate() {
            if let Some(t) = t {
                if segment.iter().any(|tok| tok == t) {
                    return y;
                }
            }
        }
        if segment.iter().any(|tok| self.confounders.contains(tok)) {
            return (0..self.schema.len())
                .find(|&y| self.schema.is_positive(y))
                .expect("schema has a positive label");
        }
        self.schema.no_relation_index()
    }
}

/// Tokens strictly between the two entity spans.
pub(crate) fn inter_entity(m: &RelationMention) -> &[String] {
    let (first, second) = if m.subj.start < m.obj.start {
        (m.subj, m.obj)
    } else {
        (m.obj, m.subj)
    };
    &m.tokens[first.end + 1..second.start]
}

fn trigger_token(y: usize) -> String {
    format!("T{y}")
}

fn confounder_token(j: usize) -> String {
    format!("C{j}")
}

fn filler_token(j: usize) -> String {
    format!("w{j}")
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticCorpus> {
    let r = config.num_relations;
    if r < 2 {
        return Err(Error::Synthetic("num_relations must be at least 2".into()));
    }
    let num_confounders = r;
    if config.vocab_size < r + num_confounders + MIN_FILLERS {
        return Err(Error::Synthetic(format!(
            "vocab_size {} cannot host {r} triggers, {num_confounders} confounders and {MIN_FILLERS} fillers",
            config.vocab_size
        )));
    }
    if !(0.0..=1.0).contains(&config.trigger_noise) {
        return Err(Error::Synthetic("trigger_noise must lie in [0, 1]".into()));
    }
    if !(0.0..1.0).contains(&config.negative_fraction) {
        return Err(Error::Synthetic("negative_fraction must lie in [0, 1)".into()));
    }
    if config.examples_per_relation == 0 {
        return Err(Error::Synthetic("examples_per_relation must be positive".into()));
    }

    let mut labels = vec![NO_RELATION.to_owned()];
    labels.extend((1..=r).map(|y| format!("rel{y}")));
    let schema = RelationSchema::new(labels, NO_RELATION)?;
    let triggers: Vec<Option<String>> = (0..=r)
        .map(|y| (y > 0).then(|| trigger_token(y)))
        .collect();
    let confounders: Vec<String> = (0..num_confounders).map(confounder_token).collect();
    let num_fillers = config.vocab_size - r - num_confounders;

    let positives = r * config.examples_per_relation;
    let nf = config.negative_fraction;
    let negatives = (positives as f64 * nf / (1.0 - nf)).round() as usize;
    let noisy_per_relation =
        (config.trigger_noise * config.examples_per_relation as f64).round() as usize;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    // (label, noisy) plan; shuffled so ids carry no label information
    let mut plan: Vec<(usize, bool)> = Vec::with_capacity(positives + negatives);
    for y in 1..=r {
        for i in 0..config.examples_per_relation {
            plan.push((y, i < noisy_per_relation));
        }
    }
    plan.extend(std::iter::repeat_n((0, false), negatives));
    plan.shuffle(&mut rng);

    let mut examples = Vec::with_capacity(plan.len());
    let mut truth = Vec::with_capacity(plan.len());
    for (i, &(label, noisy)) in plan.iter().enumerate() {
        let filler = |rng: &mut ChaCha8Rng| filler_token(rng.gen_range(0..num_fillers));
        let left: Vec<String> = (0..rng.gen_range(0..=3)).map(|_| filler(&mut rng)).collect();
        let e1: Vec<String> = (0..rng.gen_range(1..=2)).map(|_| filler(&mut rng)).collect();
        let mut middle: Vec<String> = (0..rng.gen_range(1..=4)).map(|_| filler(&mut rng)).collect();
        let e2: Vec<String> = (0..rng.gen_range(1..=2)).map(|_| filler(&mut rng)).collect();
        let right: Vec<String> = (0..rng.gen_range(0..=3)).map(|_| filler(&mut rng)).collect();

        let expressed = if label == 0 {
            None
        } else {
            let at = rng.gen_range(0..=middle.len());
            if noisy {
                let c = confounders[rng.gen_range(0..num_confounders)].clone();
                middle.insert(at, c);
                None
            } else {
                middle.insert(at, trigger_token(label));
                Some(label)
            }
        };

        let subject_first = rng.gen_bool(0.5);
        let n1 = left.len();
        let s1 = Span::new(n1, n1 + e1.len() - 1);
        let m0 = s1.end + 1;
        let s2 = Span::new(m0 + middle.len(), m0 + middle.len() + e2.len() - 1);
        let (subj, obj) = if subject_first { (s1, s2) } else { (s2, s1) };
        let tokens: Vec<String> = left
            .into_iter()
            .chain(e1)
            .chain(middle)
            .chain(e2)
            .chain(right)
            .collect();
        let mention = RelationMention::new(format!("s{}-{i:05}", config.seed), tokens, subj, obj)?;
        examples.push(LabeledExample { mention, label });
        truth.push(SyntheticTruth { expressed, noisy });
    }

    Ok(SyntheticCorpus {
        schema,
        examples,
        truth,
        triggers,
        confounders,
    })
}

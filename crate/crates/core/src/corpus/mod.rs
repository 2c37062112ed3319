//! Relation mentions, labeled examples, and the mutable corpus state that the
//! trainer moves instances through (labeled `L`, pseudo-labeled `L_U`, and the
//! unlabeled pool `U`).

mod io;
mod split;
mod synthetic;
mod vocab;

pub use io::{
    read_dataset, read_dataset_with_schema, read_mentions, read_truth, write_dataset, write_mentions, write_truth,
    DatasetFormat,
};
pub use split::{largest_remainder, stratified_split, Split, SplitSpec};
pub use synthetic::{generate_synthetic, SyntheticConfig, SyntheticCorpus, SyntheticTruth};
pub use vocab::{IndexedMention, Vocabulary, OOV_TOKEN};

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label string reserved for mentions that express none of the target relations.
pub const NO_RELATION: &str = "no_relation";

/// An inclusive token span `[start, end]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn contains(&self, i: usize) -> bool {
        self.start <= i && i <= self.end
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

/// A sentence with a subject and an object entity span.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationMention {
    pub id: String,
    pub tokens: Vec<String>,
    pub subj: Span,
    pub obj: Span,
    pub subj_type: Option<String>,
    pub obj_type: Option<String>,
    pub pos_tags: Option<Vec<String>>,
    pub ner_tags: Option<Vec<String>>,
}

impl RelationMention {
    /// Builds an untagged mention and checks its invariants.
    pub fn new(id: impl Into<String>, tokens: Vec<String>, subj: Span, obj: Span) -> Result<Self> {
        let m = RelationMention {
            id: id.into(),
            tokens,
            subj,
            obj,
            subj_type: None,
            obj_type: None,
            pos_tags: None,
            ner_tags: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.tokens.len();
        if n == 0 {
            return Err(Error::InvalidMention {
                id: self.id.clone(),
                message: "no tokens".into(),
            });
        }
        for (name, span) in [("subject", &self.subj), ("object", &self.obj)] {
            if span.start > span.end {
                return Err(Error::InvalidSpan {
                    id: self.id.clone(),
                    message: format!("{name} span ({}, {}) is reversed", span.start, span.end),
                });
            }
            if span.end >= n {
                return Err(Error::InvalidSpan {
                    id: self.id.clone(),
                    message: format!(
                        "{name} span ({}, {}) out of bounds for {n} tokens",
                        span.start, span.end
                    ),
                });
            }
        }
        if self.subj.overlaps(&self.obj) {
            return Err(Error::InvalidSpan {
                id: self.id.clone(),
                message: "subject and object spans overlap".into(),
            });
        }
        for (name, tags) in [("pos", &self.pos_tags), ("ner", &self.ner_tags)] {
            if let Some(tags) = tags {
                if tags.len() != n {
                    return Err(Error::InvalidMention {
                        id: self.id.clone(),
                        message: format!("{} {name} tags for {n} tokens", tags.len()),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Ordered relation label set including the distinguished `no_relation`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelationSchema {
    labels: Vec<String>,
    no_relation: usize,
    index: HashMap<String, usize>,
}

impl RelationSchema {
    pub fn new(labels: Vec<String>, no_relation: &str) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::Schema(format!(
                "need at least 2 labels, got {}",
                labels.len()
            )));
        }
        let mut index = HashMap::with_capacity(labels.len());
        for (i, l) in labels.iter().enumerate() {
            if index.insert(l.clone(), i).is_some() {
                return Err(Error::Schema(format!("duplicate label {l:?}")));
            }
        }
        let no_relation = *index
            .get(no_relation)
            .ok_or_else(|| Error::Schema(format!("no_relation label {no_relation:?} missing")))?;
        Ok(RelationSchema {
            labels,
            no_relation,
            index,
        })
    }

    /// `no_relation` first, then the remaining observed labels in lexicographic order.
    pub fn from_observed<'a>(observed: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut rest: Vec<String> = observed
            .into_iter()
            .filter(|l| *l != NO_RELATION)
            .map(str::to_owned)
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        rest.sort();
        let mut labels = vec![NO_RELATION.to_owned()];
        labels.extend(rest);
        RelationSchema::new(labels, NO_RELATION)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn no_relation_index(&self) -> usize {
        self.no_relation
    }

    pub fn is_positive(&self, label: usize) -> bool {
        label != self.no_relation
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledExample {
    pub mention: RelationMention,
    pub label: usize,
}

impl LabeledExample {
    pub fn id(&self) -> &str {
        &self.mention.id
    }
}

/// A promoted instance. Weights are fixed at promotion time.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoExample {
    pub example: LabeledExample,
    pub weight_p: f64,
    pub weight_q: f64,
}

/// One instance moved from `U` into `L_U`.
#[derive(Clone, Debug, PartialEq)]
pub struct Promotion {
    pub id: String,
    pub label: usize,
    pub weight_p: f64,
    pub weight_q: f64,
}

/// `L`, `L_U` and `U` with ids kept pairwise disjoint across every mutation.
#[derive(Clone, Debug)]
pub struct CorpusState {
    schema: RelationSchema,
    labeled: Vec<LabeledExample>,
    pseudo: Vec<PseudoExample>,
    unlabeled: Vec<RelationMention>,
}

impl CorpusState {
    pub fn new(
        schema: RelationSchema,
        labeled: Vec<LabeledExample>,
        unlabeled: Vec<RelationMention>,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        for id in labeled
            .iter()
            .map(|e| e.id())
            .chain(unlabeled.iter().map(|m| m.id.as_str()))
        {
            if !seen.insert(id) {
                return Err(Error::InvalidMention {
                    id: id.to_owned(),
                    message: "id appears more than once across labeled and unlabeled sets".into(),
                });
            }
        }
        for e in &labeled {
            if e.label >= schema.len() {
                return Err(Error::Schema(format!(
                    "label index {} out of range for mention {}",
                    e.label,
                    e.id()
                )));
            }
        }
        Ok(CorpusState {
            schema,
            labeled,
            pseudo: Vec::new(),
            unlabeled,
        })
    }

    pub fn schema(&self) -> &RelationSchema {
        &self.schema
    }

    pub fn labeled(&self) -> &[LabeledExample] {
        &self.labeled
    }

    pub fn pseudo(&self) -> &[PseudoExample] {
        &self.pseudo
    }

    pub fn unlabeled(&self) -> &[RelationMention] {
        &self.unlabeled
    }

    /// Moves every promoted id out of `U` into `L_U`. Fails without mutating
    /// if an id is absent from `U` or repeated in the batch.
    pub fn promote(&mut self, batch: &[Promotion]) -> Result<()> {
        let position: HashMap<&str, usize> = self
            .unlabeled
            .iter()
            .enumerate()
            .map(|(i, m)| (m.id.as_str(), i))
            .collect();
        let mut take = HashMap::with_capacity(batch.len());
        for p in batch {
            let Some(&i) = position.get(p.id.as_str()) else {
                return Err(Error::InvalidMention {
                    id: p.id.clone(),
                    message: "promoted id is not in the unlabeled pool".into(),
                });
            };
            if p.label >= self.schema.len() {
                return Err(Error::Schema(format!("label index {} out of range", p.label)));
            }
            if take.insert(i, p).is_some() {
                return Err(Error::InvalidMention {
                    id: p.id.clone(),
                    message: "promoted twice in one batch".into(),
                });
            }
        }
        let mut remaining = Vec::with_capacity(self.unlabeled.len() - take.len());
        let mut moved: Vec<Option<RelationMention>> = vec![None; batch.len()];
        let order: HashMap<&str, usize> = batch
            .iter()
            .enumerate()
            .map(|(j, p)| (p.id.as_str(), j))
            .collect();
        for (i, m) in std::mem::take(&mut self.unlabeled).into_iter().enumerate() {
            if take.contains_key(&i) {
                let j = order[m.id.as_str()];
                moved[j] = Some(m);
            } else {
                remaining.push(m);
            }
        }
        self.unlabeled = remaining;
        for (p, m) in batch.iter().zip(moved) {
            let mention = m.expect("every promoted id was located in the pool");
            self.pseudo.push(PseudoExample {
                example: LabeledExample {
                    mention,
                    label: p.label,
                },
                weight_p: p.weight_p,
                weight_q: p.weight_q,
            });
        }
        Ok(())
    }

    /// True when no id occurs twice across `L`, `L_U` and `U`.
    pub fn ids_disjoint(&self) -> bool {
        let mut seen = HashSet::new();
        self.labeled
            .iter()
            .map(|e| e.id())
            .chain(self.pseudo.iter().map(|p| p.example.id()))
            .chain(self.unlabeled.iter().map(|m| m.id.as_str()))
            .all(|id| seen.insert(id))
    }
}

/// Held-back true labels of the unlabeled pool. Read access is restricted to
/// this crate: analysis code and the gold-label upper bound.
#[derive(Clone, Debug, Default)]
pub struct SealedTruth {
    labels: HashMap<String, usize>,
}

impl SealedTruth {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, usize)>) -> Self {
        SealedTruth {
            labels: pairs.into_iter().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub(crate) fn get(&self, id: &str) -> Option<usize> {
        self.labels.get(id).copied()
    }

    pub(crate) fn iter(&self) -> impl Iterator<Item = (&str, usize)> {
        self.labels.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mention(id: &str, n: usize) -> RelationMention {
        let tokens = (0..n).map(|i| format!("w{i}")).collect();
        RelationMention::new(id, tokens, Span::new(0, 0), Span::new(n - 1, n - 1)).unwrap()
    }

    #[test]
    fn rejects_reversed_and_overlapping_spans() {
        let toks: Vec<String> = (0..6).map(|i| i.to_string()).collect();
        let err = RelationMention::new("a", toks.clone(), Span::new(5, 4), Span::new(0, 0));
        assert!(matches!(err, Err(Error::InvalidSpan { .. })));
        let err = RelationMention::new("b", toks.clone(), Span::new(1, 3), Span::new(3, 4));
        assert!(matches!(err, Err(Error::InvalidSpan { .. })));
        let err = RelationMention::new("c", toks, Span::new(0, 0), Span::new(6, 6));
        assert!(matches!(err, Err(Error::InvalidSpan { .. })));
    }

    #[test]
    fn schema_from_observed_puts_no_relation_first() {
        let s = RelationSchema::from_observed(["r2", "r1", "r2"]).unwrap();
        assert_eq!(s.labels(), &["no_relation", "r1", "r2"]);
        assert_eq!(s.no_relation_index(), 0);
        assert!(RelationSchema::new(vec!["a".into(), "a".into()], "a").is_err());
        assert!(RelationSchema::new(vec!["no_relation".into()], NO_RELATION).is_err());
    }

    #[test]
    fn promote_moves_ids_and_preserves_disjointness() {
        let schema = RelationSchema::from_observed(["r1"]).unwrap();
        let labeled = vec![LabeledExample {
            mention: mention("l0", 3),
            label: 1,
        }];
        let pool = (0..4).map(|i| mention(&format!("u{i}"), 3)).collect();
        let mut state = CorpusState::new(schema, labeled, pool).unwrap();
        let batch = vec![
            Promotion {
                id: "u2".into(),
                label: 1,
                weight_p: 0.5,
                weight_q: 0.25,
            },
            Promotion {
                id: "u0".into(),
                label: 0,
                weight_p: 1.0,
                weight_q: 1.0,
            },
        ];
        state.promote(&batch).unwrap();
        assert_eq!(state.unlabeled().len(), 2);
        assert_eq!(state.pseudo().len(), 2);
        assert_eq!(state.pseudo()[0].example.id(), "u2");
        assert_eq!(state.pseudo()[0].weight_q, 0.25);
        assert!(state.ids_disjoint());

        // a second promotion of the same id must fail and leave the state intact
        assert!(state.promote(&batch[..1]).is_err());
        assert_eq!(state.unlabeled().len(), 2);
    }

    #[test]
    fn duplicate_ids_rejected_at_construction() {
        let schema = RelationSchema::from_observed(["r1"]).unwrap();
        let labeled = vec![LabeledExample {
            mention: mention("x", 2),
            label: 1,
        }];
        assert!(CorpusState::new(schema, labeled, vec![mention("x", 2)]).is_err());
    }
}

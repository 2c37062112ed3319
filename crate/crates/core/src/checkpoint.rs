//! Plain-text model checkpoints.
//!
//! ```text
//! dualre-checkpoint 1
//! {"kind":"predictor","labels":[...],"no_relation":"...","vocabulary":[...],...}
//! block <name> <rows> <cols>
//! <one line of space-separated values per row>
//! ...
//! ```
//!
//! Values are written in shortest round-trip exponent form, so a loaded model
//! is bitwise identical to the saved one.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{ArrayView2, ArrayViewMut2};
use serde::{Deserialize, Serialize};

use crate::corpus::{RelationMention, RelationSchema, Vocabulary};
use crate::encoder::{EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::predictor::PredictorModel;
use crate::retriever::RetrieverModel;

const MAGIC: &str = "dualre-checkpoint 1";

#[derive(Clone, Debug)]
pub enum Model {
    Predictor(PredictorModel),
    Retriever(RetrieverModel),
}

impl Model {
    fn kind(&self) -> &'static str {
        match self {
            Model::Predictor(_) => "predictor",
            Model::Retriever(_) => "retriever",
        }
    }

    fn encoder(&self) -> &EncoderParams {
        match self {
            Model::Predictor(m) => &m.encoder,
            Model::Retriever(m) => &m.encoder,
        }
    }

    fn blocks(&self) -> Vec<(&'static str, ArrayView2<'_, f64>)> {
        match self {
            Model::Predictor(m) => m.blocks(),
            Model::Retriever(m) => m.blocks(),
        }
    }

    fn blocks_mut(&mut self) -> Vec<(&'static str, ArrayViewMut2<'_, f64>)> {
        match self {
            Model::Predictor(m) => m.blocks_mut(),
            Model::Retriever(m) => m.blocks_mut(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub schema: RelationSchema,
    pub vocabulary: Vocabulary,
    pub model: Model,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    labels: Vec<String>,
    no_relation: String,
    vocabulary: Vec<String>,
    vocabulary_hash: String,
    word_dim: usize,
    position_dim: usize,
    hidden_dim: usize,
    max_distance: usize,
}

impl Checkpoint {
    /// Labels predicted for raw mentions, tokens mapped through the stored vocabulary.
    pub fn predict_labels(&self, mentions: &[RelationMention]) -> Result<Vec<usize>> {
        let indexed: Vec<_> = mentions.iter().map(|m| self.vocabulary.index(m)).collect();
        match &self.model {
            Model::Predictor(m) => m.predict_labels(&indexed),
            Model::Retriever(m) => m.predict_labels(&indexed),
        }
    }

    pub fn render(&self) -> Result<String> {
        let enc = self.model.encoder().config();
        if enc.vocab_size != self.vocabulary.len() {
            return Err(Error::Checkpoint(format!(
                "model has {} word rows but the vocabulary has {} tokens",
                enc.vocab_size,
                self.vocabulary.len()
            )));
        }
        let schema = &self.schema;
        let header = Header {
            kind: self.model.kind().to_owned(),
            labels: schema.labels().to_vec(),
            no_relation: schema.label(schema.no_relation_index()).to_owned(),
            vocabulary: self.vocabulary.tokens().to_vec(),
            vocabulary_hash: self.vocabulary.hash(),
            word_dim: enc.word_dim,
            position_dim: enc.position_dim,
            hidden_dim: enc.hidden_dim,
            max_distance: enc.max_distance,
        };
        let mut out = format!("{MAGIC}\n{}\n", serde_json::to_string(&header)?);
        for (name, block) in self.model.blocks() {
            let (rows, cols) = block.dim();
            writeln!(out, "block {name} {rows} {cols}").expect("write to String");
            for row in block.rows() {
                let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
                out.push_str(&line.join(" "));
                out.push('\n');
            }
        }
        Ok(out)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::Checkpoint(msg);
        let mut lines = text.lines();
        if lines.next() != Some(MAGIC) {
            return Err(bad(format!("missing {MAGIC:?} header line")));
        }
        let header: Header = serde_json::from_str(lines.next().unwrap_or(""))
            .map_err(|e| bad(format!("header: {e}")))?;
        let vocabulary = Vocabulary::from_tokens(header.vocabulary)?;
        if vocabulary.hash() != header.vocabulary_hash {
            return Err(bad("vocabulary hash mismatch".into()));
        }
        let schema = RelationSchema::new(header.labels, &header.no_relation)?;
        let enc = EncoderConfig {
            vocab_size: vocabulary.len(),
            word_dim: header.word_dim,
            position_dim: header.position_dim,
            hidden_dim: header.hidden_dim,
            max_distance: header.max_distance,
        };
        let mut model = match header.kind.as_str() {
            "predictor" => Model::Predictor(PredictorModel::zeros(&enc, schema.len())?),
            "retriever" => Model::Retriever(RetrieverModel::zeros(&enc, schema.len())?),
            other => return Err(bad(format!("unknown model kind {other:?}"))),
        };

        let mut filled = Vec::new();
        {
            let mut blocks = model.blocks_mut();
            while let Some(line) = lines.next() {
                if line.trim().is_empty() {
                    continue;
                }
                let parts: Vec<&str> = line.split_whitespace().collect();
                let [tag, name, rows, cols] = parts[..] else {
                    return Err(bad(format!("expected a block line, got {line:?}")));
                };
                let dims = (rows.parse::<usize>(), cols.parse::<usize>());
                let (tag, (Ok(rows), Ok(cols))) = (tag, dims) else {
                    return Err(bad(format!("bad block dimensions in {line:?}")));
                };
                if tag != "block" {
                    return Err(bad(format!("expected a block line, got {line:?}")));
                }
                let (_, target) = blocks
                    .iter_mut()
                    .find(|(n, _)| *n == name)
                    .ok_or_else(|| bad(format!("unexpected block {name}")))?;
                if target.dim() != (rows, cols) {
                    return Err(bad(format!(
                        "block {name} is {rows}x{cols}, model expects {:?}",
                        target.dim()
                    )));
                }
                for r in 0..rows {
                    let row = lines
                        .next()
                        .ok_or_else(|| bad(format!("block {name} truncated at row {r}")))?;
                    let values: Vec<f64> = row
                        .split_whitespace()
                        .map(|v| v.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| bad(format!("block {name} row {r}: {e}")))?;
                    if values.len() != cols {
                        return Err(bad(format!(
                            "block {name} row {r} has {} values, expected {cols}",
                            values.len()
                        )));
                    }
                    if values.iter().any(|v| !v.is_finite()) {
                        return Err(bad(format!("block {name} row {r} is not finite")));
                    }
                    for (c, v) in values.into_iter().enumerate() {
                        target[[r, c]] = v;
                    }
                }
                if filled.contains(&name.to_owned()) {
                    return Err(bad(format!("block {name} appears twice")));
                }
                filled.push(name.to_owned());
            }
        }
        for (name, _) in model.blocks() {
            if !filled.iter().any(|f| f == name) {
                return Err(bad(format!("block {name} missing")));
            }
        }
        Ok(Checkpoint {
            schema,
            vocabulary,
            model,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Span;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fixture() -> Checkpoint {
        let m = RelationMention::new(
            "a",
            vec!["x".into(), "founded".into(), "y".into()],
            Span::new(0, 0),
            Span::new(2, 2),
        )
        .unwrap();
        let vocabulary = Vocabulary::build([&m]);
        let schema = RelationSchema::new(vec!["no_relation".into(), "org:founded".into()], "no_relation").unwrap();
        let enc = EncoderConfig {
            vocab_size: vocabulary.len(),
            word_dim: 3,
            position_dim: 2,
            hidden_dim: 4,
            max_distance: 3,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut model = PredictorModel::random(&enc, 2, &mut rng).unwrap();
        // values whose short decimal forms are awkward
        model.softmax_bias[0] = 0.1 + 0.2;
        model.softmax_bias[1] = -1e-300;
        Checkpoint {
            schema,
            vocabulary,
            model: Model::Predictor(model),
        }
    }

    #[test]
    fn reload_is_bitwise_identical() {
        let c = fixture();
        let text = c.render().unwrap();
        let back = Checkpoint::parse(&text).unwrap();
        let (Model::Predictor(a), Model::Predictor(b)) = (&c.model, &back.model) else {
            panic!("kind changed");
        };
        for ((_, x), (_, y)) in a.blocks().into_iter().zip(b.blocks()) {
            let bits = |v: &f64| v.to_bits();
            assert_eq!(x.iter().map(bits).collect::<Vec<_>>(), y.iter().map(bits).collect::<Vec<_>>());
        }
        assert_eq!(back.schema, c.schema);
        assert_eq!(back.render().unwrap(), text);
    }

    #[test]
    fn retriever_kind_survives() {
        let c = fixture();
        let enc = c.model.encoder().config();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = Checkpoint {
            model: Model::Retriever(RetrieverModel::random(&enc, 2, &mut rng).unwrap()),
            ..c
        };
        let back = Checkpoint::parse(&r.render().unwrap()).unwrap();
        assert!(matches!(back.model, Model::Retriever(_)));
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let text = fixture().render().unwrap();
        assert!(Checkpoint::parse("").is_err());
        assert!(Checkpoint::parse(&text.replacen("\"founded\"", "\"found\"", 1)).is_err());
        let truncated: String = text.lines().take(5).collect::<Vec<_>>().join("\n");
        assert!(Checkpoint::parse(&truncated).is_err());
        assert!(Checkpoint::parse(&text.replacen("block projection 4 7", "block projection 4 6", 1)).is_err());
        assert!(Checkpoint::parse(&text.replacen("\"hidden_dim\":4", "\"hidden_dim\":5", 1)).is_err());
    }
}

use std::collections::{BTreeSet, HashMap};

use sha2::{Digest, Sha256};

use super::{RelationMention, Span};
use crate::error::{Error, Result};

/// Reserved symbol for tokens outside the vocabulary. Always index 0.
pub const OOV_TOKEN: &str = "<unk>";

/// Token-string to row-index map shared by every encoder over one corpus.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

/// A mention with tokens resolved to vocabulary rows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexedMention {
    pub id: String,
    pub tokens: Vec<usize>,
    pub subj: Span,
    pub obj: Span,
}

impl Vocabulary {
    /// Sorted token types of `mentions`, preceded by the OOV row.
    pub fn build<'a>(mentions: impl IntoIterator<Item = &'a RelationMention>) -> Self {
        let types: BTreeSet<&str> = mentions
            .into_iter()
            .flat_map(|m| m.tokens.iter().map(String::as_str))
            .filter(|t| *t != OOV_TOKEN)
            .collect();
        let tokens = std::iter::once(OOV_TOKEN)
            .chain(types)
            .map(str::to_owned)
            .collect::<Vec<_>>();
        Self::from_tokens_unchecked(tokens)
    }

    /// Restores a vocabulary in stored order. The first entry must be the OOV symbol.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.first().map(String::as_str) != Some(OOV_TOKEN) {
            return Err(Error::Checkpoint(format!(
                "vocabulary must start with {OOV_TOKEN}"
            )));
        }
        let v = Self::from_tokens_unchecked(tokens);
        if v.index.len() != v.tokens.len() {
            return Err(Error::Checkpoint("vocabulary has duplicate tokens".into()));
        }
        Ok(v)
    }

    fn from_tokens_unchecked(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn lookup(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn index(&self, mention: &RelationMention) -> IndexedMention {
        IndexedMention {
            id: mention.id.clone(),
            tokens: mention.tokens.iter().map(|t| self.lookup(t)).collect(),
            subj: mention.subj,
            obj: mention.obj,
        }
    }

    /// Hex SHA-256 over the newline-terminated token list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        h.finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect::<String>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_tokens_map_to_oov() {
        let m = RelationMention::new(
            "a",
            vec!["b".into(), "a".into(), "c".into()],
            Span::new(0, 0),
            Span::new(2, 2),
        )
        .unwrap();
        let v = Vocabulary::build([&m]);
        assert_eq!(v.tokens(), &["<unk>", "a", "b", "c"]);
        assert_eq!(v.lookup("zzz"), 0);
        assert_eq!(v.index(&m).tokens, vec![2, 1, 3]);
        let restored = Vocabulary::from_tokens(v.tokens().to_vec()).unwrap();
        assert_eq!(restored.hash(), v.hash());
        assert!(Vocabulary::from_tokens(vec!["a".into()]).is_err());
    }
}

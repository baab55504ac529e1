//! Model-side vocabulary: factored tokens observed in the training data
//! plus control tokens (sequence markers, unknowns, length classes).

use std::collections::{BTreeSet, HashMap};

use thiserror::Error;

use crate::length::char_count;
use crate::subword::{parse_factored_token, FactoredToken, SubwordError};

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("unknown length-class label {0:?}")]
    UnknownLabel(String),
    #[error("malformed vocab entry: {0}")]
    Parse(#[from] SubwordError),
    #[error("malformed vocab entry: {0:?}")]
    BadEntry(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VocabEntry {
    Bos,
    Eos,
    Unk,
    /// Length-class pseudo-token carrying its bin label.
    LengthClass(String),
    Token(FactoredToken),
}

/// Unit in which forced lengths are expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LengthUnit {
    Tokens,
    Characters,
}

#[derive(Debug, Clone)]
pub struct ModelVocab {
    entries: Vec<VocabEntry>,
    token_ids: HashMap<FactoredToken, usize>,
    class_ids: Vec<(String, usize)>,
    /// Non-space character count of each entry's surface form.
    surface_chars: Vec<usize>,
}

pub const BOS_ID: usize = 0;
pub const EOS_ID: usize = 1;
pub const UNK_ID: usize = 2;

impl ModelVocab {
    /// Builds a vocabulary from every factored token observed in the
    /// corpus. Entries are sorted, so the result is deterministic.
    pub fn build<'a>(
        observed: impl IntoIterator<Item = &'a FactoredToken>,
        class_labels: &[String],
    ) -> Self {
        let distinct: BTreeSet<&FactoredToken> = observed.into_iter().collect();
        let mut entries = vec![VocabEntry::Bos, VocabEntry::Eos, VocabEntry::Unk];
        for label in class_labels {
            entries.push(VocabEntry::LengthClass(label.clone()));
        }
        for token in distinct {
            entries.push(VocabEntry::Token(token.clone()));
        }
        Self::from_entries(entries)
    }

    pub fn from_entries(entries: Vec<VocabEntry>) -> Self {
        let mut token_ids = HashMap::new();
        let mut class_ids = Vec::new();
        let mut surface_chars = Vec::with_capacity(entries.len());
        for (id, entry) in entries.iter().enumerate() {
            match entry {
                VocabEntry::Token(tok) => {
                    token_ids.insert(tok.clone(), id);
                    surface_chars.push(char_count(&tok.surface()));
                }
                VocabEntry::LengthClass(label) => {
                    class_ids.push((label.clone(), id));
                    surface_chars.push(0);
                }
                _ => surface_chars.push(0),
            }
        }
        ModelVocab {
            entries,
            token_ids,
            class_ids,
            surface_chars,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: usize) -> &VocabEntry {
        &self.entries[id]
    }

    pub fn id_of(&self, token: &FactoredToken) -> usize {
        self.token_ids.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn class_id(&self, label: &str) -> Result<usize, VocabError> {
        self.class_ids
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, id)| *id)
            .ok_or_else(|| VocabError::UnknownLabel(label.to_string()))
    }

    pub fn class_labels(&self) -> impl Iterator<Item = &str> {
        self.class_ids.iter().map(|(l, _)| l.as_str())
    }

    pub fn is_class_token(&self, id: usize) -> bool {
        matches!(self.entries[id], VocabEntry::LengthClass(_))
    }

    /// Countdown contribution of emitting `id`: characters of its surface
    /// (spaces never count), or one per real token in token mode. Sequence
    /// markers and length-class tokens contribute nothing in either unit.
    pub fn contribution(&self, id: usize, unit: LengthUnit) -> usize {
        match (&self.entries[id], unit) {
            (VocabEntry::Token(_), LengthUnit::Tokens) => 1,
            (VocabEntry::Token(_), LengthUnit::Characters) => self.surface_chars[id],
            _ => 0,
        }
    }

    /// Maps encoder/decoder ids back to factored tokens, dropping control
    /// tokens.
    pub fn tokens_of(&self, ids: &[usize]) -> Vec<FactoredToken> {
        ids.iter()
            .filter_map(|&id| match &self.entries[id] {
                VocabEntry::Token(tok) => Some(tok.clone()),
                _ => None,
            })
            .collect()
    }

    /// Encodes factored tokens as ids, unknown combinations map to `<unk>`.
    pub fn ids_of(&self, tokens: &[FactoredToken]) -> Vec<usize> {
        tokens.iter().map(|t| self.id_of(t)).collect()
    }

    pub fn entry_to_text(entry: &VocabEntry) -> String {
        match entry {
            VocabEntry::Bos => "<bos>".into(),
            VocabEntry::Eos => "<eos>".into(),
            VocabEntry::Unk => "<unk>".into(),
            VocabEntry::LengthClass(label) => format!("<len:{label}>"),
            VocabEntry::Token(tok) => tok.to_string(),
        }
    }

    pub fn entry_from_text(text: &str) -> Result<VocabEntry, VocabError> {
        Ok(match text {
            "<bos>" => VocabEntry::Bos,
            "<eos>" => VocabEntry::Eos,
            "<unk>" => VocabEntry::Unk,
            other => match other.strip_prefix("<len:").and_then(|s| s.strip_suffix('>')) {
                Some(label) => VocabEntry::LengthClass(label.to_string()),
                None => VocabEntry::Token(parse_factored_token(other)?),
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subword::CaseFactor;

    fn tok(unit: &str, glue: bool) -> FactoredToken {
        FactoredToken {
            unit: unit.to_string(),
            case: CaseFactor::Lower,
            glue,
        }
    }

    #[test]
    fn build_assigns_stable_ids() {
        let tokens = vec![tok("welt", false), tok("hallo", false), tok("welt", false)];
        let vocab = ModelVocab::build(tokens.iter(), &["S".into(), "M".into()]);
        assert_eq!(vocab.len(), 3 + 2 + 2);
        assert_eq!(vocab.class_id("S").unwrap(), 3);
        assert_eq!(vocab.class_id("M").unwrap(), 4);
        assert!(vocab.class_id("XL").is_err());
        // sorted: hallo before welt
        assert_eq!(vocab.id_of(&tok("hallo", false)), 5);
        assert_eq!(vocab.id_of(&tok("welt", false)), 6);
        assert_eq!(vocab.id_of(&tok("missing", false)), UNK_ID);
    }

    #[test]
    fn contributions_follow_unit() {
        let tokens = vec![tok("welt", false)];
        let vocab = ModelVocab::build(tokens.iter(), &["S".into()]);
        let id = vocab.id_of(&tok("welt", false));
        assert_eq!(vocab.contribution(id, LengthUnit::Characters), 4);
        assert_eq!(vocab.contribution(id, LengthUnit::Tokens), 1);
        assert_eq!(vocab.contribution(EOS_ID, LengthUnit::Characters), 0);
        assert_eq!(vocab.contribution(3, LengthUnit::Characters), 0); // class token
        assert_eq!(vocab.contribution(3, LengthUnit::Tokens), 0);
    }

    #[test]
    fn entries_round_trip_as_text() {
        let entries = vec![
            VocabEntry::Bos,
            VocabEntry::Eos,
            VocabEntry::Unk,
            VocabEntry::LengthClass("XXS".into()),
            VocabEntry::Token(tok("hal", false)),
            VocabEntry::Token(tok("lo", true)),
        ];
        for entry in entries {
            let text = ModelVocab::entry_to_text(&entry);
            assert_eq!(ModelVocab::entry_from_text(&text).unwrap(), entry);
        }
    }
}

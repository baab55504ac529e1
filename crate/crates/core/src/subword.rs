//! Greedy-merge subword segmentation with translation factors.
//!
//! The learner merges the most frequent adjacent unit pair until the
//! vocabulary (initial characters plus one unit per merge) reaches the
//! configured size; ties break lexicographically so training is
//! deterministic. Units are lowercased; the original casing travels in a
//! case factor and attachment to the previous subword in a glue factor, so
//! segmenting and reassembling reconstructs the input exactly.
//!
//! Representable text is single-spaced with no leading or trailing
//! whitespace; any character is covered via single-character fallback
//! units.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use thiserror::Error;

use crate::corpus::SentencePair;

#[derive(Debug, Error)]
pub enum SubwordError {
    #[error("vocab size {requested} is below the character inventory ({chars} chars)")]
    VocabTooSmall { requested: usize, chars: usize },
    #[error("empty training corpus")]
    EmptyCorpus,
    #[error("malformed subword model: {0}")]
    Parse(String),
}

/// Casing of a subword relative to its lowercased unit.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CaseFactor {
    Lower,
    /// First character uppercased.
    Title,
    /// Every character uppercased.
    Upper,
    /// Anything else; carries the original surface form.
    Mixed(String),
}

/// A lowercased subword unit with its case and glue factors.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FactoredToken {
    pub unit: String,
    pub case: CaseFactor,
    /// Attached to the previous subword (no space before it).
    pub glue: bool,
}

impl FactoredToken {
    /// Surface form with the case factor applied.
    pub fn surface(&self) -> String {
        match &self.case {
            CaseFactor::Lower => self.unit.clone(),
            CaseFactor::Title => {
                let mut chars = self.unit.chars();
                match chars.next() {
                    Some(first) => first.to_uppercase().chain(chars).collect(),
                    None => String::new(),
                }
            }
            CaseFactor::Upper => self.unit.chars().flat_map(char::to_uppercase).collect(),
            CaseFactor::Mixed(original) => original.clone(),
        }
    }
}

impl fmt::Display for FactoredToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let case = match &self.case {
            CaseFactor::Lower => "l".to_string(),
            CaseFactor::Title => "t".to_string(),
            CaseFactor::Upper => "u".to_string(),
            CaseFactor::Mixed(orig) => format!("m:{}", escape(orig)),
        };
        write!(
            f,
            "{}|{}|{}",
            escape(&self.unit),
            case,
            if self.glue { 1 } else { 0 }
        )
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('|', "\\p")
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('p') => out.push('|'),
                Some('\\') => out.push('\\'),
                Some(other) => {
                    out.push('\\');
                    out.push(other);
                }
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

/// Parses one `unit|case|glue` token of the factored stream format.
pub fn parse_factored_token(text: &str) -> Result<FactoredToken, SubwordError> {
    let parts: Vec<&str> = text.split('|').collect();
    if parts.len() != 3 {
        return Err(SubwordError::Parse(format!("bad factored token {text:?}")));
    }
    let unit = unescape(parts[0]);
    let case = match parts[1] {
        "l" => CaseFactor::Lower,
        "t" => CaseFactor::Title,
        "u" => CaseFactor::Upper,
        other => match other.strip_prefix("m:") {
            Some(orig) => CaseFactor::Mixed(unescape(orig)),
            None => {
                return Err(SubwordError::Parse(format!("bad case factor {other:?}")));
            }
        },
    };
    let glue = match parts[2] {
        "0" => false,
        "1" => true,
        other => return Err(SubwordError::Parse(format!("bad glue factor {other:?}"))),
    };
    Ok(FactoredToken { unit, case, glue })
}

/// Serializes a token sequence as space-separated `unit|case|glue` fields.
pub fn format_factored_stream(tokens: &[FactoredToken]) -> String {
    tokens
        .iter()
        .map(|t| t.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn parse_factored_stream(line: &str) -> Result<Vec<FactoredToken>, SubwordError> {
    line.split_whitespace().map(parse_factored_token).collect()
}

/// Character-aligned lowercase: keeps any character whose lowercase form is
/// not a single character, so unit spans stay aligned with the original.
fn aligned_lowercase(word: &str) -> String {
    word.chars()
        .map(|c| {
            let mut low = c.to_lowercase();
            match (low.next(), low.next()) {
                (Some(l), None) => l,
                _ => c,
            }
        })
        .collect()
}

fn derive_case(original: &str, unit: &str) -> CaseFactor {
    if original == unit {
        return CaseFactor::Lower;
    }
    let title: String = {
        let mut chars = unit.chars();
        match chars.next() {
            Some(first) => first.to_uppercase().chain(chars).collect(),
            None => String::new(),
        }
    };
    if original == title {
        return CaseFactor::Title;
    }
    let upper: String = unit.chars().flat_map(char::to_uppercase).collect();
    if original == upper {
        return CaseFactor::Upper;
    }
    CaseFactor::Mixed(original.to_string())
}

/// Learned subword segmentation rules.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubwordModel {
    /// Merge rules in rank order.
    merges: Vec<(String, String)>,
    vocab_size: usize,
    /// Trained jointly on source and target sides.
    joint: bool,
}

impl SubwordModel {
    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn is_joint(&self) -> bool {
        self.joint
    }

    /// Segments a single lowercased word into units.
    fn segment_word(&self, word: &str) -> Vec<String> {
        let mut units: Vec<String> = word.chars().map(String::from).collect();
        if units.len() < 2 {
            return units;
        }
        let ranks: HashMap<(&str, &str), usize> = self
            .merges
            .iter()
            .enumerate()
            .map(|(rank, (l, r))| ((l.as_str(), r.as_str()), rank))
            .collect();
        loop {
            let mut best: Option<(usize, usize)> = None; // (rank, position)
            for i in 0..units.len() - 1 {
                if let Some(&rank) = ranks.get(&(units[i].as_str(), units[i + 1].as_str())) {
                    if best.map_or(true, |(r, _)| rank < r) {
                        best = Some((rank, i));
                    }
                }
            }
            let Some((rank, _)) = best else { break };
            let (left, right) = &self.merges[rank];
            let merged = format!("{left}{right}");
            let mut rebuilt = Vec::with_capacity(units.len());
            let mut i = 0;
            while i < units.len() {
                if i + 1 < units.len() && units[i] == *left && units[i + 1] == *right {
                    rebuilt.push(merged.clone());
                    i += 2;
                } else {
                    rebuilt.push(units[i].clone());
                    i += 1;
                }
            }
            units = rebuilt;
        }
        units
    }

    /// Text serialization: header, then one merge rule per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("isomt-subword v1 vocab={}\n", self.vocab_size);
        for (rank, (left, right)) in self.merges.iter().enumerate() {
            out.push_str(&format!("{left}\t{right}\t{rank}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, SubwordError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| SubwordError::Parse("empty file".into()))?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some("isomt-subword") || parts.next() != Some("v1") {
            return Err(SubwordError::Parse(format!("bad header {header:?}")));
        }
        let vocab_size = parts
            .next()
            .and_then(|p| p.strip_prefix("vocab="))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| SubwordError::Parse(format!("bad header {header:?}")))?;
        let mut merges = Vec::new();
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(SubwordError::Parse(format!("bad merge line {line:?}")));
            }
            let rank: usize = fields[2]
                .parse()
                .map_err(|_| SubwordError::Parse(format!("bad rank in {line:?}")))?;
            if rank != merges.len() {
                return Err(SubwordError::Parse(format!(
                    "merge ranks out of order at {line:?}"
                )));
            }
            merges.push((fields[0].to_string(), fields[1].to_string()));
        }
        Ok(SubwordModel {
            merges,
            vocab_size,
            joint: true,
        })
    }
}

/// Trains a greedy frequency-merge subword model on both corpus sides.
///
/// Deterministic for a given corpus and size; merge-count ties break by
/// lexicographic order of the pair.
pub fn train_subword_model(
    corpus: &[SentencePair],
    vocab_size: usize,
) -> Result<SubwordModel, SubwordError> {
    if corpus.is_empty() {
        return Err(SubwordError::EmptyCorpus);
    }
    let mut word_counts: BTreeMap<String, u64> = BTreeMap::new();
    for pair in corpus {
        for word in pair.source.split_whitespace().chain(pair.target.split_whitespace()) {
            *word_counts.entry(aligned_lowercase(word)).or_insert(0) += 1;
        }
    }

    let mut char_inventory: BTreeMap<char, ()> = BTreeMap::new();
    for word in word_counts.keys() {
        for c in word.chars() {
            char_inventory.insert(c, ());
        }
    }
    let n_chars = char_inventory.len();
    if vocab_size < n_chars {
        return Err(SubwordError::VocabTooSmall {
            requested: vocab_size,
            chars: n_chars,
        });
    }

    let mut words: Vec<(Vec<String>, u64)> = word_counts
        .into_iter()
        .map(|(word, count)| (word.chars().map(String::from).collect(), count))
        .collect();

    let target_merges = vocab_size - n_chars;
    let mut merges = Vec::with_capacity(target_merges);
    while merges.len() < target_merges {
        let mut pair_counts: BTreeMap<(String, String), u64> = BTreeMap::new();
        for (units, count) in &words {
            for window in units.windows(2) {
                *pair_counts
                    .entry((window[0].clone(), window[1].clone()))
                    .or_insert(0) += count;
            }
        }
        // max count, ties by lexicographically smallest pair (BTreeMap order)
        let Some((best_pair, _)) = pair_counts
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
        else {
            break;
        };
        let (left, right) = best_pair.clone();
        let merged = format!("{left}{right}");
        for (units, _) in &mut words {
            let mut rebuilt = Vec::with_capacity(units.len());
            let mut i = 0;
            while i < units.len() {
                if i + 1 < units.len() && units[i] == left && units[i + 1] == right {
                    rebuilt.push(merged.clone());
                    i += 2;
                } else {
                    rebuilt.push(std::mem::take(&mut units[i]));
                    i += 1;
                }
            }
            *units = rebuilt;
        }
        merges.push((left, right));
    }

    Ok(SubwordModel {
        merges,
        vocab_size,
        joint: true,
    })
}

/// Segments text into factored tokens; total via character fallback.
pub fn encode(s: &str, model: &SubwordModel) -> Vec<FactoredToken> {
    let mut out = Vec::new();
    for word in s.split_whitespace() {
        let lowered = aligned_lowercase(word);
        let units = model.segment_word(&lowered);
        let original: Vec<char> = word.chars().collect();
        let mut offset = 0;
        for (k, unit) in units.iter().enumerate() {
            let len = unit.chars().count();
            let span: String = original[offset..offset + len].iter().collect();
            offset += len;
            out.push(FactoredToken {
                unit: unit.clone(),
                case: derive_case(&span, unit),
                glue: k > 0,
            });
        }
    }
    out
}

/// Reassembles text from factored tokens (inverse of [`encode`]).
pub fn decode(tokens: &[FactoredToken]) -> String {
    let mut out = String::new();
    for (i, token) in tokens.iter().enumerate() {
        if i > 0 && !token.glue {
            out.push(' ');
        }
        out.push_str(&token.surface());
    }
    out
}

//! Sentence pairs, text normalization, corpus filtering and the
//! concatenation corpus copy.
//!
//! A corpus is stored as two parallel line-aligned UTF-8 text files, plus an
//! optional third file with `doc_id<TAB>position` per line for
//! document-segmented data.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parallel files differ in length: {left} vs {right} lines")]
    LengthMismatch { left: usize, right: usize },
    #[error("malformed document line {line}: {text:?}")]
    BadDocLine { line: usize, text: String },
}

/// One aligned source/target sentence pair, the unit of corpus processing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePair {
    pub source: String,
    pub target: String,
    /// Document the pair belongs to, when the corpus is document-segmented.
    pub doc_id: Option<String>,
    /// Ordinal of the pair within its document.
    pub position_in_doc: Option<usize>,
}

impl SentencePair {
    pub fn new(source: String, target: String) -> Self {
        SentencePair {
            source,
            target,
            doc_id: None,
            position_in_doc: None,
        }
    }

    pub fn with_doc(source: String, target: String, doc_id: String, position: usize) -> Self {
        SentencePair {
            source,
            target,
            doc_id: Some(doc_id),
            position_in_doc: Some(position),
        }
    }
}

/// Maps curly and angled quotes to ASCII `"`/`'` and dashes to `-`.
///
/// Everything else passes through unchanged; the mapping is idempotent.
pub fn normalize_text(s: &str) -> String {
    s.chars()
        .map(|c| match c {
            '\u{201C}' | '\u{201D}' | '\u{201E}' | '\u{201F}' | '\u{00AB}' | '\u{00BB}' => '"',
            '\u{2018}' | '\u{2019}' | '\u{201A}' | '\u{201B}' | '\u{2039}' | '\u{203A}' => '\'',
            '\u{2012}' | '\u{2013}' | '\u{2014}' | '\u{2015}' => '-',
            other => other,
        })
        .collect()
}

fn digit_multiset(s: &str) -> HashMap<char, usize> {
    let mut counts = HashMap::new();
    for c in s.chars().filter(|c| c.is_ascii_digit()) {
        *counts.entry(c).or_insert(0) += 1;
    }
    counts
}

fn count_char(s: &str, target: char) -> usize {
    s.chars().filter(|&c| c == target).count()
}

/// Keeps a pair unless digits or parentheses mismatch between the sides.
pub fn filter_pair(pair: &SentencePair) -> bool {
    digit_multiset(&pair.source) == digit_multiset(&pair.target)
        && count_char(&pair.source, '(') == count_char(&pair.target, '(')
        && count_char(&pair.source, ')') == count_char(&pair.target, ')')
}

/// Joins consecutive sentences of the same document into one pair.
///
/// Output pair `i` of a document joins its sentences `2i` and `2i + 1` with
/// a single space on each side; an unpaired trailing sentence is dropped and
/// pairs never span documents. Pairs without a `doc_id` have no neighbors
/// and produce no output.
pub fn concat_adjacent(corpus: &[SentencePair]) -> Vec<SentencePair> {
    // group by doc_id preserving first-appearance order
    let mut order: Vec<&str> = Vec::new();
    let mut docs: HashMap<&str, Vec<&SentencePair>> = HashMap::new();
    for pair in corpus {
        let Some(doc) = pair.doc_id.as_deref() else {
            continue;
        };
        if !docs.contains_key(doc) {
            order.push(doc);
        }
        docs.entry(doc).or_default().push(pair);
    }

    let mut out = Vec::new();
    for doc in order {
        let mut members = docs.remove(doc).expect("doc present");
        members.sort_by_key(|p| p.position_in_doc);
        for (idx, chunk) in members.chunks_exact(2).enumerate() {
            let (a, b) = (chunk[0], chunk[1]);
            out.push(SentencePair {
                source: format!("{} {}", a.source, b.source),
                target: format!("{} {}", a.target, b.target),
                doc_id: Some(doc.to_string()),
                position_in_doc: Some(idx),
            });
        }
    }
    out
}

fn read_lines(path: &Path) -> Result<Vec<String>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Reads a parallel corpus, optionally with a document-segmentation file.
pub fn read_parallel(
    source_path: &Path,
    target_path: &Path,
    doc_path: Option<&Path>,
) -> Result<Vec<SentencePair>, CorpusError> {
    let sources = read_lines(source_path)?;
    let targets = read_lines(target_path)?;
    if sources.len() != targets.len() {
        return Err(CorpusError::LengthMismatch {
            left: sources.len(),
            right: targets.len(),
        });
    }
    let docs = match doc_path {
        Some(path) => {
            let lines = read_lines(path)?;
            if lines.len() != sources.len() {
                return Err(CorpusError::LengthMismatch {
                    left: sources.len(),
                    right: lines.len(),
                });
            }
            let mut parsed = Vec::with_capacity(lines.len());
            for (i, line) in lines.iter().enumerate() {
                let (doc, pos) = line.split_once('\t').ok_or_else(|| CorpusError::BadDocLine {
                    line: i + 1,
                    text: line.clone(),
                })?;
                let pos: usize = pos.trim().parse().map_err(|_| CorpusError::BadDocLine {
                    line: i + 1,
                    text: line.clone(),
                })?;
                parsed.push((doc.to_string(), pos));
            }
            Some(parsed)
        }
        None => None,
    };

    Ok(sources
        .into_iter()
        .zip(targets)
        .enumerate()
        .map(|(i, (source, target))| match &docs {
            Some(d) => {
                let (doc, pos) = &d[i];
                SentencePair::with_doc(source, target, doc.clone(), *pos)
            }
            None => SentencePair::new(source, target),
        })
        .collect())
}

/// Writes the two sides of a corpus back to parallel files.
pub fn write_parallel(
    corpus: &[SentencePair],
    source_path: &Path,
    target_path: &Path,
) -> Result<(), CorpusError> {
    let mut src = String::new();
    let mut tgt = String::new();
    for pair in corpus {
        src.push_str(&pair.source);
        src.push('\n');
        tgt.push_str(&pair.target);
        tgt.push('\n');
    }
    fs::write(source_path, src).map_err(|source| CorpusError::Io {
        path: source_path.display().to_string(),
        source,
    })?;
    fs::write(target_path, tgt).map_err(|source| CorpusError::Io {
        path: target_path.display().to_string(),
        source,
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pair(source: &str, target: &str) -> SentencePair {
        SentencePair::new(source.to_string(), target.to_string())
    }

    #[test]
    fn normalize_maps_quotes_and_dashes() {
        assert_eq!(normalize_text("\u{201C}Hi\u{201D} \u{2014} ok"), "\"Hi\" - ok");
        assert_eq!(normalize_text("plain text"), "plain text");
        assert_eq!(normalize_text("\u{00AB}x\u{00BB} \u{2018}y\u{2019}"), "\"x\" 'y'");
    }

    #[test]
    fn filter_keeps_matching_pairs() {
        assert!(filter_pair(&pair("I have 2 cats", "Ich habe 2 Katzen")));
        assert!(!filter_pair(&pair("I have 2 cats", "Ich habe drei Katzen")));
        assert!(!filter_pair(&pair("a (b)", "a b)")));
        assert!(filter_pair(&pair("a (b)", "(a b)"))); // counts match even if shifted
    }

    #[test]
    fn filter_is_symmetric() {
        let p = pair("12 (a", "21 b)");
        let swapped = pair("21 b)", "12 (a");
        assert_eq!(filter_pair(&p), filter_pair(&swapped));
    }

    #[test]
    fn concat_joins_within_documents() {
        let corpus = vec![
            SentencePair::with_doc("s1".into(), "t1".into(), "d1".into(), 0),
            SentencePair::with_doc("s2".into(), "t2".into(), "d1".into(), 1),
            SentencePair::with_doc("s3".into(), "t3".into(), "d1".into(), 2),
        ];
        let out = concat_adjacent(&corpus);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].source, "s1 s2");
        assert_eq!(out[0].target, "t1 t2");
    }

    #[test]
    fn concat_never_spans_documents() {
        let corpus = vec![
            SentencePair::with_doc("s1".into(), "t1".into(), "d1".into(), 0),
            SentencePair::with_doc("s2".into(), "t2".into(), "d2".into(), 0),
        ];
        assert!(concat_adjacent(&corpus).is_empty());
    }

    #[test]
    fn concat_count_matches_floor_halves() {
        let mut corpus = Vec::new();
        for (doc, n) in [("a", 5usize), ("b", 2), ("c", 1), ("d", 8)] {
            for i in 0..n {
                corpus.push(SentencePair::with_doc(
                    format!("s{i}"),
                    format!("t{i}"),
                    doc.to_string(),
                    i,
                ));
            }
        }
        let expected: usize = [5usize, 2, 1, 8].iter().map(|n| n / 2).sum();
        assert_eq!(concat_adjacent(&corpus).len(), expected);
    }

    #[test]
    fn parallel_round_trip_with_docs() {
        let dir = std::env::temp_dir().join(format!("isomt-corpus-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let src = dir.join("c.src");
        let tgt = dir.join("c.tgt");
        let doc = dir.join("c.doc");
        fs::write(&src, "hello\nworld\n").unwrap();
        fs::write(&tgt, "hallo\nwelt\n").unwrap();
        fs::write(&doc, "talk1\t0\ntalk1\t1\n").unwrap();
        let corpus = read_parallel(&src, &tgt, Some(&doc)).unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(corpus[0].doc_id.as_deref(), Some("talk1"));
        assert_eq!(corpus[1].position_in_doc, Some(1));
        fs::remove_dir_all(&dir).ok();
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in "\\PC{0,60}") {
            let once = normalize_text(&s);
            prop_assert_eq!(normalize_text(&once), once);
        }

        #[test]
        fn filter_symmetry_holds(a in "[a-z0-9() ]{0,30}", b in "[a-z0-9() ]{0,30}") {
            let p = pair(&a, &b);
            let q = pair(&b, &a);
            prop_assert_eq!(filter_pair(&p), filter_pair(&q));
        }
    }
}

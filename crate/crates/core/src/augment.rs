//! Synthetic-data machinery: word alignment via IBM Model 1 EM, bilingual
//! lexicon and phrase extraction, synonym replacement and length filtering
//! of generated translations.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::SentencePair;
use crate::length::{check_compliance, ComplianceStatus, DEFAULT_MARGIN};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("synonym replacement requires a non-compliant pair")]
    PairIsCompliant,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed file: {0}")]
    Parse(String),
}

/// Index of the artificial empty source word in the translation table.
const NULL_WORD: usize = 0;

/// Word-translation probabilities `p(target | source)` learned by EM,
/// including a NULL source word.
#[derive(Debug, Clone)]
pub struct TranslationTable {
    /// Source vocabulary; index 0 is the NULL word.
    src_vocab: Vec<String>,
    tgt_vocab: Vec<String>,
    src_index: HashMap<String, usize>,
    tgt_index: HashMap<String, usize>,
    probs: HashMap<(usize, usize), f64>,
    /// Corpus log-likelihood per EM iteration.
    pub log_likelihoods: Vec<f64>,
}

impl TranslationTable {
    pub fn prob(&self, src: &str, tgt: &str) -> f64 {
        let (Some(&s), Some(&t)) = (self.src_index.get(src), self.tgt_index.get(tgt)) else {
            return 0.0;
        };
        self.probs.get(&(s, t)).copied().unwrap_or(0.0)
    }

    fn prob_ids(&self, s: usize, t: usize) -> f64 {
        self.probs.get(&(s, t)).copied().unwrap_or(0.0)
    }

    /// All `(source, target, probability)` entries, sorted.
    pub fn entries(&self) -> Vec<(&str, &str, f64)> {
        let mut out: Vec<(&str, &str, f64)> = self
            .probs
            .iter()
            .map(|(&(s, t), &p)| (self.src_vocab[s].as_str(), self.tgt_vocab[t].as_str(), p))
            .collect();
        out.sort_by(|a, b| a.0.cmp(b.0).then(a.1.cmp(b.1)));
        out
    }
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(|w| w.to_lowercase()).collect()
}

/// IBM Model 1 expectation maximization with uniform initialization and a
/// NULL source word. The corpus is lowercased internally; per-iteration
/// corpus log-likelihood is recorded and is nondecreasing.
pub fn align_em(
    corpus: &[SentencePair],
    iterations: usize,
) -> Result<TranslationTable, AugmentError> {
    if corpus.is_empty() {
        return Err(AugmentError::EmptyCorpus);
    }
    let tokenized: Vec<(Vec<String>, Vec<String>)> = corpus
        .iter()
        .map(|p| (words(&p.source), words(&p.target)))
        .collect();

    let mut src_set: BTreeSet<&str> = BTreeSet::new();
    let mut tgt_set: BTreeSet<&str> = BTreeSet::new();
    for (src, tgt) in &tokenized {
        src_set.extend(src.iter().map(String::as_str));
        tgt_set.extend(tgt.iter().map(String::as_str));
    }
    let mut src_vocab: Vec<String> = vec!["<null>".into()];
    src_vocab.extend(src_set.iter().map(|s| s.to_string()));
    let tgt_vocab: Vec<String> = tgt_set.iter().map(|s| s.to_string()).collect();
    let src_index: HashMap<String, usize> = src_vocab
        .iter()
        .enumerate()
        .map(|(i, w)| (w.clone(), i))
        .collect();
    let tgt_index: HashMap<String, usize> = tgt_vocab
        .iter()
        .enumerate()
        .map(|(i, w)| (w.clone(), i))
        .collect();

    let id_pairs: Vec<(Vec<usize>, Vec<usize>)> = tokenized
        .iter()
        .map(|(src, tgt)| {
            (
                src.iter().map(|w| src_index[w]).collect(),
                tgt.iter().map(|w| tgt_index[w]).collect(),
            )
        })
        .collect();

    // uniform init over co-occurring pairs (others never receive counts)
    let uniform = 1.0 / tgt_vocab.len().max(1) as f64;
    let mut probs: HashMap<(usize, usize), f64> = HashMap::new();
    for (src_ids, tgt_ids) in &id_pairs {
        for &t in tgt_ids {
            probs.insert((NULL_WORD, t), uniform);
            for &s in src_ids {
                probs.insert((s, t), uniform);
            }
        }
    }

    let mut table = TranslationTable {
        src_vocab,
        tgt_vocab,
        src_index,
        tgt_index,
        probs,
        log_likelihoods: Vec::with_capacity(iterations),
    };

    for _ in 0..iterations {
        let mut counts: HashMap<(usize, usize), f64> = HashMap::with_capacity(table.probs.len());
        let mut totals: HashMap<usize, f64> = HashMap::new();
        let mut ll = 0.0;
        for (src_ids, tgt_ids) in &id_pairs {
            let len_norm = ((src_ids.len() + 1) as f64).ln();
            for &t in tgt_ids {
                let mut denom = table.prob_ids(NULL_WORD, t);
                for &s in src_ids {
                    denom += table.prob_ids(s, t);
                }
                ll += denom.ln() - len_norm;
                let posterior_null = table.prob_ids(NULL_WORD, t) / denom;
                *counts.entry((NULL_WORD, t)).or_insert(0.0) += posterior_null;
                *totals.entry(NULL_WORD).or_insert(0.0) += posterior_null;
                for &s in src_ids {
                    let c = table.prob_ids(s, t) / denom;
                    *counts.entry((s, t)).or_insert(0.0) += c;
                    *totals.entry(s).or_insert(0.0) += c;
                }
            }
        }
        let mut new_probs = HashMap::with_capacity(counts.len());
        for ((s, t), c) in counts {
            let total = totals[&s];
            if total > 0.0 {
                new_probs.insert((s, t), c / total);
            }
        }
        table.probs = new_probs;
        table.log_likelihoods.push(ll);
    }
    Ok(table)
}

/// Word-alignment links for one sentence pair.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Alignment {
    /// `(source index, target index)` pairs.
    pub links: BTreeSet<(usize, usize)>,
}

impl Alignment {
    pub fn from_links(links: impl IntoIterator<Item = (usize, usize)>) -> Self {
        Alignment {
            links: links.into_iter().collect(),
        }
    }

    /// Pharaoh `i-j` representation.
    pub fn to_pharaoh(&self) -> String {
        self.links
            .iter()
            .map(|(s, t)| format!("{s}-{t}"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn from_pharaoh(line: &str) -> Result<Self, AugmentError> {
        let mut links = BTreeSet::new();
        for chunk in line.split_whitespace() {
            let (s, t) = chunk
                .split_once('-')
                .ok_or_else(|| AugmentError::Parse(format!("bad link {chunk:?}")))?;
            let s = s
                .parse()
                .map_err(|_| AugmentError::Parse(format!("bad link {chunk:?}")))?;
            let t = t
                .parse()
                .map_err(|_| AugmentError::Parse(format!("bad link {chunk:?}")))?;
            links.insert((s, t));
        }
        Ok(Alignment { links })
    }
}

/// Links each target word to its most likely source word; NULL links are
/// omitted, as are words the table has never seen. Ties keep the leftmost
/// source word.
pub fn viterbi_align(pair: &SentencePair, table: &TranslationTable) -> Alignment {
    let src = words(&pair.source);
    let tgt = words(&pair.target);
    let mut links = BTreeSet::new();
    for (t_idx, t_word) in tgt.iter().enumerate() {
        let null_p = table.prob("<null>", t_word);
        let mut best: Option<(usize, f64)> = None;
        for (s_idx, s_word) in src.iter().enumerate() {
            let p = table.prob(s_word, t_word);
            if p > best.map_or(0.0, |(_, bp)| bp) {
                best = Some((s_idx, p));
            }
        }
        if let Some((s_idx, p)) = best {
            if p > 0.0 && p > null_p {
                links.insert((s_idx, t_idx));
            }
        }
    }
    Alignment { links }
}

/// Bilingual lexicon: `p(target | source)` entries kept under a cost bound.
#[derive(Debug, Clone)]
pub struct Lexicon {
    entries: BTreeMap<(String, String), f64>,
    /// Per-target candidates ordered by descending probability.
    by_target: HashMap<String, Vec<(String, f64)>>,
}

impl Lexicon {
    pub fn from_entries(entries: BTreeMap<(String, String), f64>) -> Self {
        let mut by_target: HashMap<String, Vec<(String, f64)>> = HashMap::new();
        for ((s, t), p) in &entries {
            by_target
                .entry(t.clone())
                .or_default()
                .push((s.clone(), *p));
        }
        for cands in by_target.values_mut() {
            cands.sort_by(|a, b| {
                b.1.partial_cmp(&a.1)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then_with(|| a.0.cmp(&b.0))
            });
        }
        Lexicon { entries, by_target }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn prob(&self, src: &str, tgt: &str) -> Option<f64> {
        self.entries
            .get(&(src.to_string(), tgt.to_string()))
            .copied()
    }

    /// Negative log probability.
    pub fn cost(&self, src: &str, tgt: &str) -> Option<f64> {
        self.prob(src, tgt).map(|p| -p.ln())
    }

    /// Source words translating to `tgt`, best probability first.
    pub fn sources_for(&self, tgt: &str) -> &[(String, f64)] {
        self.by_target.get(tgt).map_or(&[], Vec::as_slice)
    }

    pub fn write(&self, path: &Path) -> Result<(), AugmentError> {
        let mut out = String::new();
        for ((s, t), p) in &self.entries {
            out.push_str(&format!("{s}\t{t}\t{p}\n"));
        }
        fs::write(path, out).map_err(|source| AugmentError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self, AugmentError> {
        let text = fs::read_to_string(path).map_err(|source| AugmentError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut entries = BTreeMap::new();
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(AugmentError::Parse(format!("bad lexicon line {line:?}")));
            }
            let p: f64 = fields[2]
                .parse()
                .map_err(|_| AugmentError::Parse(format!("bad probability in {line:?}")))?;
            entries.insert((fields[0].to_string(), fields[1].to_string()), p);
        }
        Ok(Lexicon::from_entries(entries))
    }
}

/// Keeps table entries whose cost `-ln p` stays at or below the threshold;
/// the NULL word never enters the lexicon.
pub fn extract_lexicon(table: &TranslationTable, cost_threshold: f64) -> Lexicon {
    let mut entries = BTreeMap::new();
    for (s, t, p) in table.entries() {
        if s == "<null>" || p <= 0.0 {
            continue;
        }
        if -p.ln() <= cost_threshold {
            entries.insert((s.to_string(), t.to_string()), p);
        }
    }
    Lexicon::from_entries(entries)
}

/// Extracts all alignment-consistent phrase pairs up to `max_len` words per
/// side: at least one link inside, no link leaving the rectangle.
pub fn extract_phrases(
    pair: &SentencePair,
    alignment: &Alignment,
    max_len: usize,
) -> Vec<(String, String)> {
    let src: Vec<&str> = pair.source.split_whitespace().collect();
    let tgt: Vec<&str> = pair.target.split_whitespace().collect();
    let n_src = src.len();
    let n_tgt = tgt.len();
    let aligned_tgt: BTreeSet<usize> = alignment.links.iter().map(|&(_, t)| t).collect();

    let mut out = Vec::new();
    for i1 in 0..n_src {
        for i2 in i1..n_src.min(i1 + max_len) {
            // target bounds of links inside the source span
            let mut jmin = usize::MAX;
            let mut jmax = 0usize;
            for &(s, t) in &alignment.links {
                if s >= i1 && s <= i2 {
                    jmin = jmin.min(t);
                    jmax = jmax.max(t);
                }
            }
            if jmin == usize::MAX {
                continue;
            }
            // no link from inside the target span may leave the source span
            let consistent = alignment
                .links
                .iter()
                .all(|&(s, t)| t < jmin || t > jmax || (s >= i1 && s <= i2));
            if !consistent {
                continue;
            }
            // extend over unaligned boundary words
            let mut j1 = jmin as isize;
            loop {
                let mut j2 = jmax;
                loop {
                    if (i2 - i1) < max_len && (j2 - j1 as usize) < max_len {
                        out.push((src[i1..=i2].join(" "), tgt[j1 as usize..=j2].join(" ")));
                    }
                    j2 += 1;
                    if j2 >= n_tgt || aligned_tgt.contains(&j2) {
                        break;
                    }
                }
                j1 -= 1;
                if j1 < 0 || aligned_tgt.contains(&(j1 as usize)) {
                    break;
                }
            }
        }
    }
    out
}

/// Replacement behavior for [`synonym_replace`].
#[derive(Debug, Clone)]
pub struct ReplacementPolicy {
    /// Chance of a word being considered for replacement at all.
    pub consider_prob: f64,
    /// Candidates taken from the top of the lexicon ordering.
    pub max_candidates: usize,
    pub variants_per_sentence: usize,
    /// Unigram-F1 bound for the meaning-preservation filter.
    pub similarity_threshold: f64,
    pub margin: f64,
}

impl Default for ReplacementPolicy {
    fn default() -> Self {
        ReplacementPolicy {
            consider_prob: 0.5,
            max_candidates: 3,
            variants_per_sentence: 4,
            similarity_threshold: 0.94,
            margin: DEFAULT_MARGIN,
        }
    }
}

fn word_chars(w: &str) -> usize {
    w.chars().count()
}

/// Synonym candidates for the source word at `word_index`: other source
/// words that translate to any target word it is aligned with, ordered by
/// descending lexicon probability. Unaligned words have no candidates.
pub fn synonyms_for(
    word_index: usize,
    pair: &SentencePair,
    alignment: &Alignment,
    lexicon: &Lexicon,
) -> Vec<String> {
    let src = words(&pair.source);
    let tgt = words(&pair.target);
    let Some(original) = src.get(word_index) else {
        return Vec::new();
    };
    let mut ranked: Vec<(String, f64)> = Vec::new();
    for &(s, t) in &alignment.links {
        if s != word_index {
            continue;
        }
        let Some(t_word) = tgt.get(t) else { continue };
        for (cand, p) in lexicon.sources_for(t_word) {
            if cand != original && !ranked.iter().any(|(c, _)| c == cand) {
                ranked.push((cand.clone(), *p));
            }
        }
    }
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
    ranked.into_iter().map(|(c, _)| c).collect()
}

/// Generates modified source sentences for a pair that is not length
/// compliant. Each word is considered with `consider_prob`; a considered
/// word is replaced by one of the top candidates that is strictly shorter
/// (when the source runs long relative to its target) or strictly longer
/// (when it runs short). Words without a qualifying candidate stay.
pub fn synonym_replace(
    pair: &SentencePair,
    alignment: &Alignment,
    lexicon: &Lexicon,
    policy: &ReplacementPolicy,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<String>, AugmentError> {
    let verdict = check_compliance(&pair.source, &pair.target, policy.margin);
    if verdict.status == ComplianceStatus::Compliant {
        return Err(AugmentError::PairIsCompliant);
    }
    // ratio below one: the target is shorter, so shrink the source
    let want_shorter = verdict.ratio < 1.0;

    let src_words = words(&pair.source);
    let mut variants = Vec::with_capacity(policy.variants_per_sentence);
    for _ in 0..policy.variants_per_sentence {
        let mut out: Vec<String> = Vec::with_capacity(src_words.len());
        for (idx, word) in src_words.iter().enumerate() {
            if rng.gen::<f64>() >= policy.consider_prob {
                out.push(word.clone());
                continue;
            }
            let qualifying: Vec<String> = synonyms_for(idx, pair, alignment, lexicon)
                .into_iter()
                .filter(|cand| {
                    if want_shorter {
                        word_chars(cand) < word_chars(word)
                    } else {
                        word_chars(cand) > word_chars(word)
                    }
                })
                .take(policy.max_candidates)
                .collect();
            if qualifying.is_empty() {
                out.push(word.clone());
            } else {
                let pick = rng.gen_range(0..qualifying.len());
                out.push(qualifying[pick].clone());
            }
        }
        variants.push(out.join(" "));
    }
    Ok(variants)
}

/// Unigram F1 between lowercased token multisets; 1.0 for identical
/// sentences. Used as the meaning-preservation proxy when filtering
/// synonym-replaced sources.
pub fn similarity_score(original: &str, modified: &str) -> f64 {
    let a = words(original);
    let b = words(modified);
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, isize> = HashMap::new();
    for w in &a {
        *counts.entry(w.as_str()).or_insert(0) += 1;
    }
    let mut overlap = 0usize;
    for w in &b {
        if let Some(c) = counts.get_mut(w.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    2.0 * overlap as f64 / (a.len() + b.len()) as f64
}

/// True when the modified sentence stays close enough to the original.
pub fn similarity_filter(original: &str, modified: &str, threshold: f64) -> bool {
    similarity_score(original, modified) >= threshold
}

/// Keeps only length-compliant pairs; short-source (skipped) pairs drop.
pub fn filter_synthetic(pairs: &[SentencePair], margin: f64) -> Vec<SentencePair> {
    pairs
        .iter()
        .filter(|p| check_compliance(&p.source, &p.target, margin).is_compliant())
        .cloned()
        .collect()
}

/// Writes one Pharaoh alignment line per sentence pair.
pub fn write_alignments(alignments: &[Alignment], path: &Path) -> Result<(), AugmentError> {
    let mut out = String::new();
    for a in alignments {
        out.push_str(&a.to_pharaoh());
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| AugmentError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_alignments(path: &Path) -> Result<Vec<Alignment>, AugmentError> {
    let text = fs::read_to_string(path).map_err(|source| AugmentError::Io {
        path: path.display().to_string(),
        source,
    })?;
    text.lines().map(Alignment::from_pharaoh).collect()
}

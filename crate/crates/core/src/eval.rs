//! Corpus-level evaluation: BLEU, length compliance, paired bootstrap
//! resampling and trade-off reports.

use std::fmt::Write as _;
use std::sync::OnceLock;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use thiserror::Error;

use crate::length::{check_compliance, ComplianceStatus};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("corpora differ in length: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty corpus")]
    EmptyCorpus,
}

const MAX_ORDER: usize = 4;

fn re(pattern: &str, cell: &'static OnceLock<Regex>) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pattern).expect("tokenizer regex"))
}

/// International (13a-style) tokenization: normalizes a few entities, then
/// splits punctuation from words, keeping digit-internal periods, commas
/// and dashes attached. Case is preserved.
pub fn tokenize_13a(line: &str) -> Vec<String> {
    static RE_PUNCT: OnceLock<Regex> = OnceLock::new();
    static RE_PERIOD_BEFORE: OnceLock<Regex> = OnceLock::new();
    static RE_PERIOD_AFTER: OnceLock<Regex> = OnceLock::new();
    static RE_DASH: OnceLock<Regex> = OnceLock::new();

    let text = line
        .replace("<skipped>", "")
        .replace("-\n", "")
        .replace('\n', " ")
        .replace("&quot;", "\"")
        .replace("&amp;", "&")
        .replace("&lt;", "<")
        .replace("&gt;", ">");
    let text = format!(" {text} ");
    let text = re(r"([\{-\~\[-\x60 -\&\(-\+\:-@/])", &RE_PUNCT).replace_all(&text, " $1 ");
    let text = re(r"([^0-9])([\.,])", &RE_PERIOD_BEFORE).replace_all(&text, "$1 $2 ");
    let text = re(r"([\.,])([^0-9])", &RE_PERIOD_AFTER).replace_all(&text, " $1 $2");
    let text = re(r"([0-9])(-)", &RE_DASH).replace_all(&text, "$1 - ");
    text.split_whitespace().map(str::to_string).collect()
}

/// Clipped n-gram match statistics of one sentence, summable over a corpus.
#[derive(Debug, Clone, Copy, Default)]
pub struct BleuStats {
    pub hyp_len: usize,
    pub ref_len: usize,
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
}

impl BleuStats {
    pub fn add(&mut self, other: &BleuStats) {
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
        for n in 0..MAX_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
    }
}

/// Per-sentence statistics for BLEU, 13a-tokenized, case-sensitive.
pub fn sentence_stats(hyp: &str, reference: &str) -> BleuStats {
    let hyp_tokens = tokenize_13a(hyp);
    let ref_tokens = tokenize_13a(reference);
    let mut stats = BleuStats {
        hyp_len: hyp_tokens.len(),
        ref_len: ref_tokens.len(),
        ..BleuStats::default()
    };
    for n in 0..MAX_ORDER {
        let order = n + 1;
        if hyp_tokens.len() < order {
            break;
        }
        let mut ref_counts: std::collections::HashMap<&[String], usize> =
            std::collections::HashMap::new();
        if ref_tokens.len() >= order {
            for gram in ref_tokens.windows(order) {
                *ref_counts.entry(gram).or_insert(0) += 1;
            }
        }
        let mut hyp_counts: std::collections::HashMap<&[String], usize> =
            std::collections::HashMap::new();
        for gram in hyp_tokens.windows(order) {
            *hyp_counts.entry(gram).or_insert(0) += 1;
        }
        stats.totals[n] = hyp_tokens.len() - order + 1;
        for (gram, count) in hyp_counts {
            if let Some(&rc) = ref_counts.get(gram) {
                stats.matches[n] += count.min(rc);
            }
        }
    }
    stats
}

/// Corpus BLEU (percent) from summed statistics: geometric mean of the four
/// modified precisions with brevity penalty, no smoothing.
pub fn bleu_from_stats(stats: &BleuStats) -> f64 {
    if stats.hyp_len == 0 {
        return 0.0;
    }
    let mut log_precision_sum = 0.0;
    for n in 0..MAX_ORDER {
        if stats.totals[n] == 0 || stats.matches[n] == 0 {
            return 0.0;
        }
        log_precision_sum += (stats.matches[n] as f64 / stats.totals[n] as f64).ln();
    }
    let bp = if stats.hyp_len < stats.ref_len {
        (1.0 - stats.ref_len as f64 / stats.hyp_len as f64).exp()
    } else {
        1.0
    };
    100.0 * bp * (log_precision_sum / MAX_ORDER as f64).exp()
}

/// Corpus BLEU against a single reference per sentence.
pub fn corpus_bleu(hyps: &[String], refs: &[String]) -> Result<f64, EvalError> {
    if hyps.len() != refs.len() {
        return Err(EvalError::LengthMismatch {
            left: hyps.len(),
            right: refs.len(),
        });
    }
    if hyps.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let mut total = BleuStats::default();
    for (h, r) in hyps.iter().zip(refs) {
        total.add(&sentence_stats(h, r));
    }
    Ok(bleu_from_stats(&total))
}

/// Length compliance percentage; sources under the minimum length are
/// excluded from the denominator unless `skipped_compliant` counts them as
/// compliant instead.
pub fn corpus_lc_opts(
    srcs: &[String],
    hyps: &[String],
    margin: f64,
    skipped_compliant: bool,
) -> Result<f64, EvalError> {
    if srcs.len() != hyps.len() {
        return Err(EvalError::LengthMismatch {
            left: srcs.len(),
            right: hyps.len(),
        });
    }
    let mut compliant = 0usize;
    let mut eligible = 0usize;
    for (s, h) in srcs.iter().zip(hyps) {
        match check_compliance(s, h, margin).status {
            ComplianceStatus::Compliant => {
                compliant += 1;
                eligible += 1;
            }
            ComplianceStatus::Noncompliant => eligible += 1,
            ComplianceStatus::Skipped => {
                if skipped_compliant {
                    compliant += 1;
                    eligible += 1;
                }
            }
        }
    }
    if eligible == 0 {
        return Ok(0.0);
    }
    Ok(100.0 * compliant as f64 / eligible as f64)
}

/// Length compliance with the standard skip rule.
pub fn corpus_lc(srcs: &[String], hyps: &[String], margin: f64) -> Result<f64, EvalError> {
    corpus_lc_opts(srcs, hyps, margin, false)
}

#[derive(Debug, Clone, Copy)]
pub struct BootstrapResult {
    /// One-sided p-value: fraction of resamples where system B scores at
    /// least as high as system A; exact ties count half, so two identical
    /// systems land at 0.5 instead of 1.0.
    pub p_value: f64,
    /// 95% confidence interval of system A's BLEU.
    pub ci95: (f64, f64),
}

/// Paired bootstrap resampling over sentences.
pub fn paired_bootstrap(
    hyp_a: &[String],
    hyp_b: &[String],
    refs: &[String],
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<BootstrapResult, EvalError> {
    if hyp_a.len() != refs.len() {
        return Err(EvalError::LengthMismatch {
            left: hyp_a.len(),
            right: refs.len(),
        });
    }
    if hyp_b.len() != refs.len() {
        return Err(EvalError::LengthMismatch {
            left: hyp_b.len(),
            right: refs.len(),
        });
    }
    if refs.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let stats_a: Vec<BleuStats> = hyp_a
        .iter()
        .zip(refs)
        .map(|(h, r)| sentence_stats(h, r))
        .collect();
    let stats_b: Vec<BleuStats> = hyp_b
        .iter()
        .zip(refs)
        .map(|(h, r)| sentence_stats(h, r))
        .collect();

    let n = refs.len();
    let mut bleu_a_samples = Vec::with_capacity(samples);
    let mut b_wins = 0.0f64;
    for _ in 0..samples {
        let mut sum_a = BleuStats::default();
        let mut sum_b = BleuStats::default();
        for _ in 0..n {
            let i = rng.gen_range(0..n);
            sum_a.add(&stats_a[i]);
            sum_b.add(&stats_b[i]);
        }
        let bleu_a = bleu_from_stats(&sum_a);
        let bleu_b = bleu_from_stats(&sum_b);
        if bleu_b > bleu_a {
            b_wins += 1.0;
        } else if bleu_b == bleu_a {
            b_wins += 0.5;
        }
        bleu_a_samples.push(bleu_a);
    }
    bleu_a_samples.sort_by(|a, b| a.partial_cmp(b).expect("finite BLEU"));
    let pick = |q: f64| bleu_a_samples[(q * (samples - 1) as f64).round() as usize];
    Ok(BootstrapResult {
        p_value: b_wins / samples as f64,
        ci95: (pick(0.025), pick(0.975)),
    })
}

/// Corpus-level evaluation summary for one system.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub bleu: f64,
    pub lc: f64,
    pub n_sentences: usize,
    pub n_skipped: usize,
    pub ci95: Option<(f64, f64)>,
    pub p_value: Option<f64>,
}

/// Scores one system against sources and references.
pub fn evaluate_system(
    srcs: &[String],
    hyps: &[String],
    refs: &[String],
    margin: f64,
) -> Result<EvalReport, EvalError> {
    let bleu = corpus_bleu(hyps, refs)?;
    let lc = corpus_lc(srcs, hyps, margin)?;
    let n_skipped = srcs
        .iter()
        .zip(hyps)
        .filter(|(s, h)| check_compliance(s, h, margin).status == ComplianceStatus::Skipped)
        .count();
    Ok(EvalReport {
        bleu,
        lc,
        n_sentences: srcs.len(),
        n_skipped,
        ci95: None,
        p_value: None,
    })
}

/// Renders an aligned text table plus a machine-readable
/// `label<TAB>bleu<TAB>lc` block (two decimals), preserving input order.
pub fn tradeoff_table(reports: &[(String, EvalReport)]) -> (String, String) {
    let label_width = reports
        .iter()
        .map(|(l, _)| l.chars().count())
        .chain(["system".len()])
        .max()
        .unwrap_or(6);
    let mut table = String::new();
    let _ = writeln!(
        table,
        "{:<label_width$}  {:>7}  {:>7}",
        "system", "BLEU", "LC"
    );
    let mut data = String::new();
    for (label, report) in reports {
        let _ = writeln!(
            table,
            "{:<label_width$}  {:>7.2}  {:>7.2}",
            label, report.bleu, report.lc
        );
        let _ = writeln!(data, "{label}\t{:.2}\t{:.2}", report.bleu, report.lc);
    }
    (table, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn strings(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn tokenizer_splits_punctuation() {
        assert_eq!(
            tokenize_13a("Hello, world!"),
            vec!["Hello", ",", "world", "!"]
        );
        // digit-internal periods stay attached
        assert_eq!(tokenize_13a("it costs 3.50 now."), vec!["it", "costs", "3.50", "now", "."]);
        assert_eq!(tokenize_13a("1-2 a-b"), vec!["1", "-", "2", "a-b"]);
    }

    #[test]
    fn identical_corpora_score_one_hundred() {
        let refs = strings(&["the cat sat on the mat", "a small example sentence here"]);
        assert!((corpus_bleu(&refs, &refs).unwrap() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn empty_hypotheses_score_zero() {
        let refs = strings(&["the cat sat on the mat"]);
        let hyps = strings(&[""]);
        assert_eq!(corpus_bleu(&hyps, &refs).unwrap(), 0.0);
    }

    #[test]
    fn bleu_matches_hand_computed_example() {
        // Hypotheses and references tokenize to plain words.
        // Sentence 1: hyp "the cat sat on the mat" (6 tokens)
        //             ref "the cat sat on a mat"
        //   1-grams: matched {the(min(2,1)=1), cat, sat, on, mat} = 5 of 6
        //   2-grams: "the cat","cat sat","sat on" = 3 of 5
        //   3-grams: "the cat sat","cat sat on" = 2 of 4
        //   4-grams: "the cat sat on" = 1 of 3
        // Sentence 2: hyp "he reads a book" vs ref "he reads a book"
        //   adds 4/4, 3/3, 2/2, 1/1; hyp_len 10, ref_len 10
        // p1 = 9/10, p2 = 6/8, p3 = 4/6, p4 = 2/4
        // BLEU = 100 * (0.9*0.75*0.666..*0.5)^(1/4) = 68.8871...
        let hyps = strings(&["the cat sat on the mat", "he reads a book"]);
        let refs = strings(&["the cat sat on a mat", "he reads a book"]);
        let expected = 100.0 * (0.9f64 * 0.75 * (4.0 / 6.0) * 0.5).powf(0.25);
        let got = corpus_bleu(&hyps, &refs).unwrap();
        assert!((got - expected).abs() < 0.01, "{got} vs {expected}");
    }

    #[test]
    fn brevity_penalty_applies_to_short_output() {
        let refs = strings(&["one two three four five six"]);
        let hyps = strings(&["one two three four"]);
        let stats = sentence_stats(&hyps[0], &refs[0]);
        let bleu = bleu_from_stats(&stats);
        // precisions are all 1, so BLEU = 100 * exp(1 - 6/4)
        let expected = 100.0 * (1.0f64 - 6.0 / 4.0).exp();
        assert!((bleu - expected).abs() < 1e-9);
    }

    #[test]
    fn lc_counts_compliant_share() {
        let srcs = strings(&["abcdefghijkl", "abcdefghijkl"]);
        let hyps = strings(&["abcdefghijkl", "abc"]);
        assert_eq!(corpus_lc(&srcs, &hyps, 0.10).unwrap(), 50.0);
        // identical corpora are fully compliant
        assert_eq!(corpus_lc(&srcs, &srcs, 0.10).unwrap(), 100.0);
    }

    #[test]
    fn lc_skips_short_sources() {
        let srcs = strings(&["short", "abcdefghijkl"]);
        let hyps = strings(&["whatever", "abcdefghijkl"]);
        assert_eq!(corpus_lc(&srcs, &hyps, 0.10).unwrap(), 100.0);
        assert_eq!(corpus_lc_opts(&srcs, &hyps, 0.10, true).unwrap(), 100.0);
    }

    #[test]
    fn identical_systems_bootstrap_near_half() {
        let refs = strings(&[
            "the cat sat on the mat",
            "he reads a book",
            "she walks to town",
            "the dog barks loudly",
        ]);
        let hyps = refs.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let result = paired_bootstrap(&hyps, &hyps, &refs, 500, &mut rng).unwrap();
        // identical systems tie on every sample; ties count half
        assert_eq!(result.p_value, 0.5);
        assert!(result.ci95.0 <= result.ci95.1);
    }

    #[test]
    fn dominant_system_gets_small_p() {
        let refs = strings(&[
            "the cat sat on the mat",
            "he reads a book quietly",
            "she walks into the town",
            "the dog barks very loudly",
        ]);
        let good = refs.clone();
        let bad = strings(&["x y z", "x y z", "x y z", "x y z"]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let result = paired_bootstrap(&good, &bad, &refs, 500, &mut rng).unwrap();
        assert_eq!(result.p_value, 0.0);
    }

    #[test]
    fn tradeoff_rows_preserve_order_and_round_trip() {
        let reports = vec![
            (
                "baseline".to_string(),
                EvalReport {
                    bleu: 32.015,
                    lc: 44.034,
                    n_sentences: 10,
                    n_skipped: 0,
                    ci95: None,
                    p_value: None,
                },
            ),
            (
                "ldpe".to_string(),
                EvalReport {
                    bleu: 29.2,
                    lc: 98.14,
                    n_sentences: 10,
                    n_skipped: 0,
                    ci95: None,
                    p_value: None,
                },
            ),
        ];
        let (table, data) = tradeoff_table(&reports);
        assert!(table.lines().count() == 3);
        let rows: Vec<&str> = data.lines().collect();
        assert_eq!(rows[0], "baseline\t32.02\t44.03");
        assert_eq!(rows[1], "ldpe\t29.20\t98.14");
        for (row, (label, report)) in rows.iter().zip(&reports) {
            let fields: Vec<&str> = row.split('\t').collect();
            assert_eq!(fields[0], label);
            let bleu: f64 = fields[1].parse().unwrap();
            let lc: f64 = fields[2].parse().unwrap();
            assert!((bleu - report.bleu).abs() < 0.005 + 1e-9);
            assert!((lc - report.lc).abs() < 0.005 + 1e-9);
        }
    }

    proptest! {
        #[test]
        fn bleu_is_permutation_invariant(seed in 0u64..200) {
            use rand::seq::SliceRandom;
            let hyps = strings(&["a b c d", "e f g h i", "j k l", "m n o p q r"]);
            let refs = strings(&["a b c e", "e f g h", "j k l", "m n o p q q"]);
            let base = corpus_bleu(&hyps, &refs).unwrap();
            let mut idx: Vec<usize> = (0..hyps.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            idx.shuffle(&mut rng);
            let hyps_p: Vec<String> = idx.iter().map(|&i| hyps[i].clone()).collect();
            let refs_p: Vec<String> = idx.iter().map(|&i| refs[i].clone()).collect();
            let permuted = corpus_bleu(&hyps_p, &refs_p).unwrap();
            prop_assert!((base - permuted).abs() < 1e-9);
        }
    }
}

//! Length arithmetic: character counting, the compliance predicate, ratio
//! binning, length perturbation and second-pass length correction.
//!
//! All character counts exclude whitespace (a superset of the plain-space
//! rule used by the compliance metric) and sentences with fewer than
//! [`MIN_SOURCE_CHARS`] source characters are skipped by the compliance
//! check. Rounding is half away from zero wherever a real value is mapped
//! to a length.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::corpus::SentencePair;

/// Default relative length margin for compliance.
pub const DEFAULT_MARGIN: f64 = 0.10;

/// Sources shorter than this many non-space characters are skipped.
pub const MIN_SOURCE_CHARS: usize = 10;

#[derive(Debug, Error)]
pub enum BinningError {
    #[error("need at least 2 bins, got {0}")]
    TooFewBins(usize),
    #[error("corpus of {n} pairs cannot be split into {k} bins")]
    CorpusTooSmall { n: usize, k: usize },
    #[error("source sentence has no countable characters")]
    EmptySource,
    #[error("malformed binning file: {0}")]
    Parse(String),
}

/// Number of characters excluding whitespace.
pub fn char_count(s: &str) -> usize {
    s.chars().filter(|c| !c.is_whitespace()).count()
}

/// Outcome of the compliance predicate for one sentence pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComplianceStatus {
    Compliant,
    Noncompliant,
    /// Source below [`MIN_SOURCE_CHARS`]; ignored by corpus-level scores.
    Skipped,
}

#[derive(Debug, Clone, Copy)]
pub struct ComplianceVerdict {
    pub status: ComplianceStatus,
    /// Target-to-source character ratio (NaN when the source is empty).
    pub ratio: f64,
}

impl ComplianceVerdict {
    pub fn is_compliant(&self) -> bool {
        self.status == ComplianceStatus::Compliant
    }
}

/// Checks whether `tgt` stays within `margin` of the source length.
///
/// The comparison is inclusive: a target of 110 characters is compliant
/// against a source of 100 at the default margin.
pub fn check_compliance(src: &str, tgt: &str, margin: f64) -> ComplianceVerdict {
    let src_n = char_count(src);
    let tgt_n = char_count(tgt);
    let ratio = if src_n == 0 {
        f64::NAN
    } else {
        tgt_n as f64 / src_n as f64
    };
    if src_n < MIN_SOURCE_CHARS {
        return ComplianceVerdict {
            status: ComplianceStatus::Skipped,
            ratio,
        };
    }
    let diff = (tgt_n as f64 - src_n as f64).abs();
    let status = if diff <= margin * src_n as f64 {
        ComplianceStatus::Compliant
    } else {
        ComplianceStatus::Noncompliant
    };
    ComplianceVerdict { status, ratio }
}

/// How the bin boundaries were derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinScheme {
    /// Boundaries `1 - margin` and `1 + margin`: too short / compliant / too long.
    ThreeBin,
    /// Empirical quantiles of the target-to-source ratio distribution.
    Quantile,
}

impl fmt::Display for BinScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BinScheme::ThreeBin => write!(f, "three_bin"),
            BinScheme::Quantile => write!(f, "quantile"),
        }
    }
}

impl FromStr for BinScheme {
    type Err = BinningError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "three_bin" => Ok(BinScheme::ThreeBin),
            "quantile" => Ok(BinScheme::Quantile),
            other => Err(BinningError::Parse(format!("unknown scheme {other:?}"))),
        }
    }
}

/// Ratio bins used as length classes.
///
/// `boundaries` holds `k - 1` nondecreasing ratio values; classification is
/// half-open, `[b_{i-1}, b_i)`, with the last interval closed above. A ratio
/// exactly on a boundary therefore falls into the higher bin.
#[derive(Debug, Clone, PartialEq)]
pub struct LengthBinning {
    boundaries: Vec<f64>,
    labels: Vec<String>,
    scheme: BinScheme,
}

/// Size labels for the 7-bin scheme, shortest target first.
const SEVEN_BIN_LABELS: [&str; 7] = ["XXS", "XS", "S", "M", "L", "XL", "XXL"];

fn quantile_labels(k: usize) -> Vec<String> {
    match k {
        7 => SEVEN_BIN_LABELS.iter().map(|s| s.to_string()).collect(),
        3 => vec!["S".into(), "M".into(), "L".into()],
        _ => (1..=k).map(|i| format!("B{i}")).collect(),
    }
}

impl LengthBinning {
    /// Three classes derived from the compliance margin itself.
    pub fn three_bin(margin: f64) -> Self {
        LengthBinning {
            boundaries: vec![1.0 - margin, 1.0 + margin],
            labels: vec!["too_short".into(), "compliant".into(), "too_long".into()],
            scheme: BinScheme::ThreeBin,
        }
    }

    /// Builds a binning from externally computed boundaries.
    pub fn from_boundaries(boundaries: Vec<f64>, scheme: BinScheme) -> Self {
        let labels = quantile_labels(boundaries.len() + 1);
        LengthBinning {
            boundaries,
            labels,
            scheme,
        }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn scheme(&self) -> BinScheme {
        self.scheme
    }

    pub fn num_bins(&self) -> usize {
        self.labels.len()
    }

    /// Label of the bin containing `ratio`.
    pub fn classify_ratio(&self, ratio: f64) -> &str {
        let idx = self.boundaries.iter().filter(|b| **b <= ratio).count();
        &self.labels[idx]
    }

    /// Serializes as a small text file, one boundary per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("isomt-bins v1 scheme={}\n", self.scheme);
        for b in &self.boundaries {
            out.push_str(&format!("{b}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, BinningError> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| BinningError::Parse("empty file".into()))?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some("isomt-bins") || parts.next() != Some("v1") {
            return Err(BinningError::Parse(format!("bad header {header:?}")));
        }
        let scheme = match parts.next().and_then(|p| p.strip_prefix("scheme=")) {
            Some(s) => s.parse()?,
            None => BinScheme::Quantile,
        };
        let mut boundaries = Vec::new();
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let b: f64 = line
                .trim()
                .parse()
                .map_err(|_| BinningError::Parse(format!("bad boundary {line:?}")))?;
            boundaries.push(b);
        }
        if boundaries.is_empty() {
            return Err(BinningError::Parse("no boundaries".into()));
        }
        let labels = match scheme {
            BinScheme::ThreeBin => {
                vec!["too_short".into(), "compliant".into(), "too_long".into()]
            }
            BinScheme::Quantile => quantile_labels(boundaries.len() + 1),
        };
        Ok(LengthBinning {
            boundaries,
            labels,
            scheme,
        })
    }
}

/// Fits `k` quantile bins over target-to-source character ratios so that
/// roughly equal numbers of training pairs fall into each bin.
pub fn fit_quantile_bins(corpus: &[SentencePair], k: usize) -> Result<LengthBinning, BinningError> {
    if k < 2 {
        return Err(BinningError::TooFewBins(k));
    }
    if corpus.len() < k {
        return Err(BinningError::CorpusTooSmall {
            n: corpus.len(),
            k,
        });
    }
    let mut ratios = Vec::with_capacity(corpus.len());
    for pair in corpus {
        let src_n = char_count(&pair.source);
        if src_n == 0 {
            return Err(BinningError::EmptySource);
        }
        ratios.push(char_count(&pair.target) as f64 / src_n as f64);
    }
    ratios.sort_by(|a, b| a.partial_cmp(b).expect("finite ratios"));
    let n = ratios.len();
    let boundaries = (1..k).map(|i| ratios[i * n / k]).collect();
    Ok(LengthBinning::from_boundaries(
        boundaries,
        BinScheme::Quantile,
    ))
}

/// Classifies a pair by its target-to-source character ratio.
pub fn classify_pair<'a>(
    pair: &SentencePair,
    binning: &'a LengthBinning,
) -> Result<&'a str, BinningError> {
    let src_n = char_count(&pair.source);
    if src_n == 0 {
        return Err(BinningError::EmptySource);
    }
    let ratio = char_count(&pair.target) as f64 / src_n as f64;
    Ok(binning.classify_ratio(ratio))
}

/// Rounds half away from zero, matching `f64::round`.
fn round_to_len(x: f64) -> usize {
    x.round().max(0.0) as usize
}

/// Samples a forced length uniformly from `[⌊0.9·L⌉, ⌊1.1·L⌉]`.
///
/// The noise interval mirrors the compliance margin, so for `L >= 10` every
/// sample is itself a compliant length with respect to `L`.
pub fn perturb_length<R: Rng + ?Sized>(target_len: usize, rng: &mut R) -> usize {
    debug_assert!(target_len >= 1);
    let lo = round_to_len(0.9 * target_len as f64);
    let hi = round_to_len(1.1 * target_len as f64);
    rng.gen_range(lo..=hi)
}

/// Inclusive bounds of the perturbation interval for `target_len`.
pub fn perturb_bounds(target_len: usize) -> (usize, usize) {
    (
        round_to_len(0.9 * target_len as f64),
        round_to_len(1.1 * target_len as f64),
    )
}

#[derive(Debug, Error)]
#[error("first-pass length is zero")]
pub struct ZeroFirstPass;

/// Second-pass corrected length `⌊L_src · L_src / L_first⌉`.
///
/// An over-translation by factor `r` in the first pass is countered by
/// aiming at `1/r` of the source length in the second pass.
pub fn corrected_length(source_len: usize, first_pass_len: usize) -> Result<usize, ZeroFirstPass> {
    if first_pass_len == 0 {
        return Err(ZeroFirstPass);
    }
    let corrected = source_len as f64 * source_len as f64 / first_pass_len as f64;
    Ok(round_to_len(corrected))
}

//! Length-controlled sequence-to-sequence translation toolkit.
//!
//! The crate covers the full pipeline for isometric translation, i.e.
//! producing output whose character count stays within a margin (default
//! 10%) of the source sentence:
//!
//! * [`corpus`] — sentence pairs, normalization, corpus filtering and the
//!   corpus-copy transforms (adjacent concatenation, spoken form).
//! * [`subword`] — greedy-merge subword model with case/glue translation
//!   factors, round-trip safe.
//! * [`length`] — character counting, the compliance predicate, ratio
//!   binning, length perturbation and second-pass length correction.
//! * [`model`] — a small transformer encoder-decoder with pluggable
//!   positional encodings (absolute or length-difference countdown) and
//!   length-class token conditioning, generic over the float type.
//! * [`decode`] — beam search plus the post-hoc length-control procedures:
//!   N-best rescoring, two-pass length correction and the length ROVER.
//! * [`augment`] — word alignment, lexicon/phrase extraction, synonym
//!   replacement and length filtering of synthetic data.
//! * [`eval`] — corpus BLEU, length compliance, paired bootstrap
//!   resampling and trade-off reports.

pub mod augment;
pub mod corpus;
pub mod decode;
pub mod eval;
pub mod length;
pub mod model;
pub mod scalar;
pub mod spoken;
pub mod subword;

pub use scalar::Scalar;

/// Transformer with single-precision parameters, the training default.
pub type Model32 = model::Transformer<f32>;
/// Transformer with double-precision parameters, used for gradient checks.
pub type Model64 = model::Transformer<f64>;

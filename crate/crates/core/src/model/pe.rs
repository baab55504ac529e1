//! Positional encodings and the countdown length state.
//!
//! In absolute mode the decoder sees the usual sinusoidal encoding of the
//! token position. In the length-difference modes the encoding is evaluated
//! at the *remaining* allowed length instead, which counts down by one per
//! token or by the emitted subword's character count, and may go negative
//! when the forced length disagrees with what the model produces.

use crate::scalar::Scalar;

use super::vocab::{LengthUnit, ModelVocab};

/// Decoder positional encoding flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PeMode {
    /// Standard sinusoidal encoding of the absolute position.
    Absolute,
    /// Countdown over remaining subword tokens.
    LdpeToken,
    /// Countdown over remaining characters (spaces excluded).
    LdpeChar,
}

impl PeMode {
    pub fn is_ldpe(self) -> bool {
        !matches!(self, PeMode::Absolute)
    }

    pub fn length_unit(self) -> Option<LengthUnit> {
        match self {
            PeMode::Absolute => None,
            PeMode::LdpeToken => Some(LengthUnit::Tokens),
            PeMode::LdpeChar => Some(LengthUnit::Characters),
        }
    }
}

/// Sinusoidal vector at (possibly negative) position `x`:
/// component `2i` is `sin(x / 10000^(2i/d))`, `2i+1` the matching cosine.
pub fn positional_vector<F: Scalar>(x: i64, d_model: usize) -> Vec<F> {
    debug_assert!(d_model % 2 == 0, "d_model must be even");
    let mut out = Vec::with_capacity(d_model);
    let x = x as f64;
    for i in 0..d_model / 2 {
        let denom = 10000f64.powf(2.0 * i as f64 / d_model as f64);
        out.push(F::from_f64_lossy((x / denom).sin()));
        out.push(F::from_f64_lossy((x / denom).cos()));
    }
    out
}

/// Countdown bookkeeping for one decoder stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderLengthState {
    pub unit: LengthUnit,
    /// Length the decoder is asked to produce.
    pub forced: i64,
    /// Total contribution of the tokens emitted so far.
    pub consumed: i64,
}

impl DecoderLengthState {
    pub fn new(unit: LengthUnit, forced: usize) -> Self {
        DecoderLengthState {
            unit,
            forced: forced as i64,
            consumed: 0,
        }
    }

    /// Remaining allowed length; negative once the output overshoots.
    pub fn remaining(&self) -> i64 {
        self.forced - self.consumed
    }
}

/// Advances the countdown by the emitted token's contribution.
///
/// Sequence markers and length-class tokens contribute nothing; in
/// character mode a token contributes the non-space characters of its cased
/// surface form, so the final consumed total equals the character count of
/// the detokenized output.
pub fn advance_length_state(
    state: DecoderLengthState,
    emitted: usize,
    vocab: &ModelVocab,
) -> DecoderLengthState {
    let contribution = vocab.contribution(emitted, state.unit) as i64;
    DecoderLengthState {
        unit: state.unit,
        forced: state.forced,
        consumed: state.consumed + contribution,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::length::char_count;
    use crate::model::vocab::EOS_ID;
    use crate::subword::{decode, CaseFactor, FactoredToken};

    #[test]
    fn zero_position_alternates_zero_one() {
        let v: Vec<f64> = positional_vector(0, 8);
        for pair in v.chunks(2) {
            assert_eq!(pair[0], 0.0);
            assert_eq!(pair[1], 1.0);
        }
    }

    #[test]
    fn sine_components_are_odd_in_x() {
        let plus: Vec<f64> = positional_vector(3, 16);
        let minus: Vec<f64> = positional_vector(-3, 16);
        for i in 0..8 {
            assert_eq!(plus[2 * i], -minus[2 * i]);
            assert_eq!(plus[2 * i + 1], minus[2 * i + 1]);
        }
    }

    #[test]
    fn matches_direct_evaluation_at_d4() {
        let v: Vec<f64> = positional_vector(1, 4);
        let expected = [1f64.sin(), 1f64.cos(), 0.01f64.sin(), 0.01f64.cos()];
        for (a, b) in v.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    fn tok(unit: &str, glue: bool) -> FactoredToken {
        FactoredToken {
            unit: unit.to_string(),
            case: CaseFactor::Lower,
            glue,
        }
    }

    #[test]
    fn countdown_consumes_characters_or_tokens() {
        let tokens = vec![tok("welt", false), tok("hallo", false)];
        let vocab = ModelVocab::build(tokens.iter(), &[]);
        let id = vocab.id_of(&tok("welt", false));

        let chars = DecoderLengthState::new(LengthUnit::Characters, 10);
        let chars = advance_length_state(chars, id, &vocab);
        assert_eq!(chars.consumed, 4);
        assert_eq!(chars.remaining(), 6);
        let chars = advance_length_state(chars, EOS_ID, &vocab);
        assert_eq!(chars.consumed, 4);

        let toks = DecoderLengthState::new(LengthUnit::Tokens, 3);
        let toks = advance_length_state(toks, id, &vocab);
        assert_eq!(toks.consumed, 1);
    }

    #[test]
    fn full_sentence_consumption_matches_char_count() {
        let tokens = vec![tok("hal", false), tok("lo", true), tok("welt", false)];
        let vocab = ModelVocab::build(tokens.iter(), &[]);
        let mut state = DecoderLengthState::new(LengthUnit::Characters, 9);
        for t in &tokens {
            state = advance_length_state(state, vocab.id_of(t), &vocab);
        }
        assert_eq!(state.consumed as usize, char_count(&decode(&tokens)));
        assert_eq!(state.remaining(), 0);
    }
}

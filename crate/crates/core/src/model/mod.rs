//! Transformer encoder-decoder with pluggable length control.
//!
//! The positional encoding of the decoder either encodes absolute positions
//! or counts down the remaining allowed length (in tokens or characters),
//! and a length-class pseudo-token can be prepended on the source or target
//! side. With absolute encoding and no length token the model is a plain
//! transformer.

mod checkpoint;
mod matrix;
mod net;
mod pe;
mod train;
mod vocab;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use matrix::Matrix;
pub use net::{
    decode_step, encode_source, new_dec_state, DecState, EncodedSource, LossStats, Params,
};
pub use pe::{advance_length_state, positional_vector, DecoderLengthState, PeMode};
pub use train::{train, EpochLog, TrainError, TrainSchedule};
pub use vocab::{LengthUnit, ModelVocab, VocabEntry, VocabError, BOS_ID, EOS_ID, UNK_ID};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::SentencePair;
use crate::length::{char_count, perturb_length, LengthBinning};
use crate::scalar::Scalar;
use crate::subword::{self, SubwordModel};

/// Which side carries the length-class pseudo-token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LengthTokenSide {
    None,
    Source,
    Target,
}

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub label_smoothing: f64,
    pub pe_mode: PeMode,
    pub length_token_side: LengthTokenSide,
    /// Add ±10% noise to the forced length during training.
    pub perturb: bool,
    /// Count the implied inter-word spaces in the character countdown.
    pub count_spaces: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_heads: 4,
            n_enc_layers: 2,
            n_dec_layers: 2,
            ffn_dim: 128,
            dropout: 0.3,
            label_smoothing: 0.2,
            pe_mode: PeMode::Absolute,
            length_token_side: LengthTokenSide::None,
            perturb: false,
            count_spaces: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.d_model == 0 || self.d_model % 2 != 0 {
            return Err(format!("d_model must be even and positive, got {}", self.d_model));
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(format!(
                "d_model {} must be divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(format!("dropout must be in [0,1), got {}", self.dropout));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(format!(
                "label smoothing must be in [0,1), got {}",
                self.label_smoothing
            ));
        }
        Ok(())
    }
}

/// A trained (or freshly initialized) translation model.
#[derive(Debug, Clone)]
pub struct Transformer<F> {
    pub cfg: ModelConfig,
    pub subword: SubwordModel,
    pub vocab: ModelVocab,
    pub params: Params<F>,
}

impl<F: Scalar> Transformer<F> {
    /// Fresh model with seeded parameter initialization.
    pub fn new(cfg: ModelConfig, subword: SubwordModel, vocab: ModelVocab, seed: u64) -> Self {
        cfg.validate().expect("valid model config");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = Params::init(&cfg, vocab.len(), &mut rng);
        Transformer {
            cfg,
            subword,
            vocab,
            params,
        }
    }

    /// Subword-encodes raw text into model ids (no control tokens).
    pub fn text_to_ids(&self, text: &str) -> Vec<usize> {
        self.vocab.ids_of(&subword::encode(text, &self.subword))
    }

    /// Detokenizes decoder output ids into surface text.
    pub fn ids_to_text(&self, ids: &[usize]) -> String {
        subword::decode(&self.vocab.tokens_of(ids))
    }

    pub fn length_unit(&self) -> Option<LengthUnit> {
        self.cfg.pe_mode.length_unit()
    }

    /// Source length in the model's countdown unit.
    pub fn source_length(&self, src_text: &str, src_ids: &[usize]) -> usize {
        match self.cfg.pe_mode.length_unit() {
            Some(LengthUnit::Characters) | None => char_count(src_text),
            Some(LengthUnit::Tokens) => src_ids
                .iter()
                .filter(|&&id| matches!(self.vocab.entry(id), VocabEntry::Token(_)))
                .count(),
        }
    }

    /// Countdown contribution of one emitted token, including the implied
    /// space when the model is configured to count spaces.
    pub fn step_contribution(&self, id: usize, consumed_so_far: i64) -> i64 {
        let unit = self
            .cfg
            .pe_mode
            .length_unit()
            .unwrap_or(LengthUnit::Characters);
        let mut contribution = self.vocab.contribution(id, unit) as i64;
        if self.cfg.count_spaces
            && unit == LengthUnit::Characters
            && contribution > 0
            && consumed_so_far > 0
        {
            if let VocabEntry::Token(tok) = self.vocab.entry(id) {
                if !tok.glue {
                    contribution += 1;
                }
            }
        }
        contribution
    }

    /// Positional-encoding argument stream for a decoder input sequence.
    ///
    /// In absolute mode these are the input indices. In the countdown modes
    /// each value is the remaining length after the input token itself has
    /// been consumed, so the position that should produce the sentence end
    /// carries zero when the forced length matches the output exactly.
    pub fn decoder_positions(&self, dec_in_ids: &[usize], forced_len: Option<usize>) -> Vec<i64> {
        match self.cfg.pe_mode {
            PeMode::Absolute => (0..dec_in_ids.len() as i64).collect(),
            _ => {
                let forced = forced_len.expect("ldpe mode requires a forced length") as i64;
                let mut consumed = 0i64;
                dec_in_ids
                    .iter()
                    .map(|&id| {
                        consumed += self.step_contribution(id, consumed);
                        forced - consumed
                    })
                    .collect()
            }
        }
    }

    /// Teacher-forced loss of one example; no dropout.
    pub fn example_loss(&self, ex: &TrainingExample) -> net::LossStats {
        let (_, stats) = net::forward_full(
            &self.params,
            &self.cfg,
            &ex.src_ids,
            &ex.dec_in_ids,
            &ex.dec_out_ids,
            &ex.dec_positions,
            None,
        );
        stats
    }

    /// Full softmax distribution per target position; used by tests.
    pub fn example_probs(&self, ex: &TrainingExample) -> (Matrix<F>, Matrix<F>) {
        let (trace, _) = net::forward_full(
            &self.params,
            &self.cfg,
            &ex.src_ids,
            &ex.dec_in_ids,
            &ex.dec_out_ids,
            &ex.dec_positions,
            None,
        );
        (trace.probs.clone(), trace.dec_out.clone())
    }

    /// Analytic gradient of the summed label-smoothed loss of one example.
    pub fn example_gradient(&self, ex: &TrainingExample) -> Params<F> {
        let (trace, _) = net::forward_full(
            &self.params,
            &self.cfg,
            &ex.src_ids,
            &ex.dec_in_ids,
            &ex.dec_out_ids,
            &ex.dec_positions,
            None,
        );
        let mut grads = self.params.zeros_like();
        net::backward_full(
            &self.params,
            &self.cfg,
            &trace,
            &ex.dec_out_ids,
            F::one(),
            &mut grads,
        );
        grads
    }
}

/// One teacher-forcing example: encoder input, decoder input/output and the
/// per-step positional-encoding arguments.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub src_ids: Vec<usize>,
    pub dec_in_ids: Vec<usize>,
    pub dec_out_ids: Vec<usize>,
    pub dec_positions: Vec<i64>,
    /// Forced length fed to the countdown, when in a countdown mode.
    pub forced_len: Option<usize>,
}

/// Builds a training example for one sentence pair.
///
/// The length-class token (if configured) is prepended to the configured
/// side; in countdown modes the forced length is the reference length,
/// optionally perturbed by ±10%, while the per-step decrements always follow
/// the actual reference tokens.
pub fn build_training_example<F: Scalar>(
    pair: &SentencePair,
    model: &Transformer<F>,
    binning: Option<&LengthBinning>,
    rng: &mut ChaCha8Rng,
) -> TrainingExample {
    let src_ids = model.text_to_ids(&pair.source);
    let tgt_ids = model.text_to_ids(&pair.target);
    let class_id = match model.cfg.length_token_side {
        LengthTokenSide::None => None,
        _ => {
            let binning = binning.expect("length-token models need a binning");
            let label = crate::length::classify_pair(pair, binning).expect("non-empty source");
            Some(model.vocab.class_id(label).expect("label in vocab"))
        }
    };
    build_example_from_ids(
        model,
        &pair.target,
        src_ids,
        tgt_ids,
        class_id,
        model.cfg.perturb,
        rng,
    )
}

pub(crate) fn build_example_from_ids<F: Scalar>(
    model: &Transformer<F>,
    target_text: &str,
    src_ids: Vec<usize>,
    tgt_ids: Vec<usize>,
    class_id: Option<usize>,
    perturb: bool,
    rng: &mut ChaCha8Rng,
) -> TrainingExample {
    let mut src = Vec::with_capacity(src_ids.len() + 1);
    if model.cfg.length_token_side == LengthTokenSide::Source {
        if let Some(id) = class_id {
            src.push(id);
        }
    }
    src.extend(src_ids);

    let mut out = Vec::with_capacity(tgt_ids.len() + 2);
    if model.cfg.length_token_side == LengthTokenSide::Target {
        if let Some(id) = class_id {
            out.push(id);
        }
    }
    out.extend(&tgt_ids);
    out.push(EOS_ID);

    let mut dec_in = Vec::with_capacity(out.len());
    dec_in.push(BOS_ID);
    dec_in.extend(&out[..out.len() - 1]);

    let forced_len = model.cfg.pe_mode.length_unit().map(|unit| {
        let target_len = match unit {
            LengthUnit::Characters => {
                let mut n = char_count(target_text);
                if model.cfg.count_spaces {
                    n = target_text.chars().count();
                }
                n
            }
            LengthUnit::Tokens => tgt_ids.len(),
        };
        if perturb && target_len >= 1 {
            perturb_length(target_len, rng)
        } else {
            target_len
        }
    });

    let dec_positions = model.decoder_positions(&dec_in, forced_len);
    TrainingExample {
        src_ids: src,
        dec_in_ids: dec_in,
        dec_out_ids: out,
        dec_positions,
        forced_len,
    }
}

/// Result of a finite-difference gradient comparison.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub n_checked: usize,
}

/// Relative error between an analytic and a numeric derivative.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs());
    if denom < 1e-10 {
        0.0
    } else {
        (analytic - numeric).abs() / denom
    }
}

fn perturb_flat<F: Scalar>(params: &mut Params<F>, flat: usize, delta: f64) {
    let mut offset = 0;
    for m in params.matrices_mut() {
        let len = m.data().len();
        if flat < offset + len {
            let v = &mut m.data_mut()[flat - offset];
            *v = *v + F::from_f64_lossy(delta);
            return;
        }
        offset += len;
    }
    panic!("flat index {flat} out of range");
}

/// Central finite difference of the example loss at one flat parameter
/// index. Restores the parameter afterwards.
pub fn numeric_derivative<F: Scalar>(
    model: &mut Transformer<F>,
    ex: &TrainingExample,
    flat: usize,
    step: f64,
) -> f64 {
    perturb_flat(&mut model.params, flat, step);
    let up = model.example_loss(ex).smoothed_sum;
    perturb_flat(&mut model.params, flat, -2.0 * step);
    let down = model.example_loss(ex).smoothed_sum;
    perturb_flat(&mut model.params, flat, step);
    (up - down) / (2.0 * step)
}

/// Compares analytic gradients against central finite differences on up to
/// `max_samples` parameters (all of them when the model is small enough).
pub fn gradient_check<F: Scalar>(
    model: &mut Transformer<F>,
    ex: &TrainingExample,
    step: f64,
    max_samples: usize,
    seed: u64,
) -> GradCheckReport {
    use rand::Rng;

    let grads = model.example_gradient(ex);
    let flat: Vec<f64> = grads
        .matrices()
        .iter()
        .flat_map(|m| m.data().iter().map(|v| v.to_f64_lossy()))
        .collect();

    let total = flat.len();
    let indices: Vec<usize> = if total <= max_samples {
        (0..total).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..max_samples).map(|_| rng.gen_range(0..total)).collect()
    };

    let mut max_err = 0.0f64;
    for &i in &indices {
        let numeric = numeric_derivative(model, ex, i, step);
        max_err = max_err.max(rel_error(flat[i], numeric));
    }
    GradCheckReport {
        max_rel_error: max_err,
        n_checked: indices.len(),
    }
}

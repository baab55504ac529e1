//! Shared fixtures for integration tests: a synthetic transduction task
//! with genuinely ambiguous output lengths.
//!
//! Every source word has a short and a long target form. Anchor words
//! nearly always use one of them (predictable content), flex words pick
//! either with equal probability (unpredictable, so choosing them freely
//! costs no expected n-gram overlap). The reference length therefore
//! spreads around the source length and only part of the references are
//! compliant on their own; length control can flex the coin-flip words
//! without touching the predictable backbone.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use isomt::corpus::SentencePair;
use isomt::model::{
    train, LengthTokenSide, ModelConfig, ModelVocab, PeMode, TrainSchedule, Transformer,
};
use isomt::subword::{self, train_subword_model};
use isomt::Model32;

pub struct FormChoiceTask {
    pub train: Vec<SentencePair>,
    pub dev: Vec<SentencePair>,
    pub test: Vec<SentencePair>,
}

const CONSONANTS: [char; 8] = ['k', 'l', 'm', 'n', 'p', 'r', 's', 't'];
const VOWELS: [char; 4] = ['a', 'e', 'i', 'o'];

fn make_word(rng: &mut ChaCha8Rng, syllables: usize, trailing_consonant: bool) -> String {
    let mut w = String::new();
    for _ in 0..syllables {
        w.push(*CONSONANTS.choose(rng).expect("consonant"));
        w.push(*VOWELS.choose(rng).expect("vowel"));
    }
    if trailing_consonant {
        w.push(*CONSONANTS.choose(rng).expect("consonant"));
    }
    w
}

struct BaseWord {
    source: String,
    /// 3-character target form.
    short: String,
    /// 5-character target form.
    long: String,
    /// Probability that a reference uses the long form.
    p_long: f64,
}

fn make_base_words(n: usize, rng: &mut ChaCha8Rng) -> Vec<BaseWord> {
    let mut seen = std::collections::HashSet::new();
    let mut fresh = |rng: &mut ChaCha8Rng, syllables: usize, trailing: bool| loop {
        let w = make_word(rng, syllables, trailing);
        if seen.insert(w.clone()) {
            return w;
        }
    };
    (0..n)
        .map(|i| {
            // a quarter short-anchored, a quarter long-anchored, half flex
            let p_long = match i % 4 {
                0 => 0.03,
                1 => 0.97,
                _ => 0.5,
            };
            BaseWord {
                source: fresh(rng, 2, false), // 4 chars
                short: fresh(rng, 1, true),   // 3 chars
                long: fresh(rng, 2, true),    // 5 chars
                p_long,
            }
        })
        .collect()
}

fn make_split(base: &[BaseWord], n: usize, rng: &mut ChaCha8Rng) -> Vec<SentencePair> {
    (0..n)
        .map(|_| {
            let len = rng.gen_range(4..=9);
            let mut src = Vec::with_capacity(len);
            let mut tgt = Vec::with_capacity(len);
            for _ in 0..len {
                let word = base.choose(rng).expect("non-empty base");
                src.push(word.source.as_str());
                if rng.gen::<f64>() < word.p_long {
                    tgt.push(word.long.as_str());
                } else {
                    tgt.push(word.short.as_str());
                }
            }
            SentencePair::new(src.join(" "), tgt.join(" "))
        })
        .collect()
}

/// Deterministic synthetic corpus: `n_train` training pairs plus fixed-size
/// dev (120) and test (200) splits.
pub fn form_choice_task(n_base: usize, n_train: usize, seed: u64) -> FormChoiceTask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = make_base_words(n_base, &mut rng);
    FormChoiceTask {
        train: make_split(&base, n_train, &mut rng),
        dev: make_split(&base, 120, &mut rng),
        test: make_split(&base, 200, &mut rng),
    }
}

/// Builds an untrained model over the task corpus with the given length
/// control configuration.
pub fn task_model(
    corpus: &[SentencePair],
    pe_mode: PeMode,
    side: LengthTokenSide,
    perturb: bool,
    class_labels: &[String],
    seed: u64,
) -> Model32 {
    let sub = train_subword_model(corpus, 100).unwrap();
    let mut observed = Vec::new();
    for pair in corpus {
        observed.extend(subword::encode(&pair.source, &sub));
        observed.extend(subword::encode(&pair.target, &sub));
    }
    let vocab = ModelVocab::build(observed.iter(), class_labels);
    let cfg = ModelConfig {
        d_model: 48,
        n_heads: 4,
        n_enc_layers: 2,
        n_dec_layers: 2,
        ffn_dim: 96,
        dropout: 0.1,
        label_smoothing: 0.1,
        pe_mode,
        length_token_side: side,
        perturb,
        count_spaces: false,
    };
    Transformer::new(cfg, sub, vocab, seed)
}

pub fn task_schedule(epochs: usize) -> TrainSchedule {
    TrainSchedule {
        start_lr: 3e-4,
        peak_lr: 2e-3,
        warmup_epochs: 4,
        decay_factor: 0.9,
        patience_epochs: 3,
        batch_tokens: 900,
        grad_accum: 1,
        beam_default: 8,
        epochs,
        shard_size: None,
    }
}

/// Trains in place and panics on divergence; returns final dev perplexity.
pub fn train_task_model(
    model: &mut Model32,
    task: &FormChoiceTask,
    binning: Option<&isomt::length::LengthBinning>,
    epochs: usize,
    seed: u64,
) -> f64 {
    let logs = train(
        model,
        &task.train,
        &task_schedule(epochs),
        &task.dev,
        binning,
        seed,
    )
    .expect("training convergence");
    logs.last().expect("at least one epoch").dev_ppl
}

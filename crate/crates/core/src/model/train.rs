//! Training loop: Adam with linear warmup, perplexity-driven learning-rate
//! decay, token-budget batching and gradient accumulation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::SentencePair;
use crate::length::{classify_pair, LengthBinning};
use crate::scalar::Scalar;

use super::matrix::Matrix;
use super::net;
use super::{build_example_from_ids, LengthTokenSide, Params, Transformer};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("empty training corpus")]
    EmptyCorpus,
    #[error("length-token model trained without a binning")]
    MissingBinning,
}

/// Optimization schedule; defaults follow the reference setup scaled to
/// desk size (linear warmup to the peak rate, multiplicative decay when dev
/// perplexity stalls, token-budget batches with gradient accumulation).
#[derive(Debug, Clone)]
pub struct TrainSchedule {
    pub start_lr: f64,
    pub peak_lr: f64,
    pub warmup_epochs: usize,
    pub decay_factor: f64,
    pub patience_epochs: usize,
    pub batch_tokens: usize,
    pub grad_accum: usize,
    pub beam_default: usize,
    pub epochs: usize,
    /// Sentence pairs per epoch; `None` means the whole corpus.
    pub shard_size: Option<usize>,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            start_lr: 3e-5,
            peak_lr: 3e-4,
            warmup_epochs: 10,
            decay_factor: 0.9,
            patience_epochs: 4,
            batch_tokens: 1700,
            grad_accum: 8,
            beam_default: 12,
            epochs: 30,
            shard_size: None,
        }
    }
}

impl TrainSchedule {
    /// Learning rate for an epoch before perplexity decay is applied.
    pub fn base_lr(&self, epoch: usize) -> f64 {
        if self.warmup_epochs <= 1 || epoch >= self.warmup_epochs {
            return self.peak_lr;
        }
        let t = (epoch - 1) as f64 / (self.warmup_epochs - 1) as f64;
        self.start_lr + (self.peak_lr - self.start_lr) * t
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean label-smoothed loss per target token.
    pub train_loss: f64,
    /// Dev-set perplexity from plain cross entropy.
    pub dev_ppl: f64,
    pub lr: f64,
}

struct Adam<F> {
    m: Vec<Matrix<F>>,
    v: Vec<Matrix<F>>,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl<F: Scalar> Adam<F> {
    fn new(params: &Params<F>) -> Self {
        Adam {
            m: params.matrices().iter().map(|m| m.zeros_like()).collect(),
            v: params.matrices().iter().map(|m| m.zeros_like()).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    fn step(&mut self, params: &mut Params<F>, grads: &Params<F>, lr: f64) {
        self.t += 1;
        let b1 = F::from_f64_lossy(self.beta1);
        let b2 = F::from_f64_lossy(self.beta2);
        let one = F::one();
        let bc1 = F::from_f64_lossy(1.0 - self.beta1.powi(self.t as i32));
        let bc2 = F::from_f64_lossy(1.0 - self.beta2.powi(self.t as i32));
        let lr = F::from_f64_lossy(lr);
        let eps = F::from_f64_lossy(self.eps);
        let gs = grads.matrices();
        for (((p, g), m), v) in params
            .matrices_mut()
            .into_iter()
            .zip(gs)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv = *pv - lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// Pre-encoded pair: token ids are fixed, only the perturbed forced length
/// changes between epochs.
struct Prepared {
    src_ids: Vec<usize>,
    tgt_ids: Vec<usize>,
    class_id: Option<usize>,
    target_text: String,
}

fn prepare<F: Scalar>(
    model: &Transformer<F>,
    corpus: &[SentencePair],
    binning: Option<&LengthBinning>,
) -> Result<Vec<Prepared>, TrainError> {
    let needs_class = model.cfg.length_token_side != LengthTokenSide::None;
    if needs_class && binning.is_none() {
        return Err(TrainError::MissingBinning);
    }
    Ok(corpus
        .iter()
        .map(|pair| {
            let class_id = if needs_class {
                let label =
                    classify_pair(pair, binning.expect("checked above")).expect("non-empty source");
                Some(model.vocab.class_id(label).expect("label in vocab"))
            } else {
                None
            };
            Prepared {
                src_ids: model.text_to_ids(&pair.source),
                tgt_ids: model.text_to_ids(&pair.target),
                class_id,
                target_text: pair.target.clone(),
            }
        })
        .collect())
}

fn dev_perplexity<F: Scalar>(model: &Transformer<F>, dev: &[Prepared], rng: &mut ChaCha8Rng) -> f64 {
    // dev examples are built without perturbation regardless of config
    let mut plain_sum = 0.0;
    let mut tokens = 0usize;
    for p in dev {
        let ex = build_example_from_ids(
            model,
            &p.target_text,
            p.src_ids.clone(),
            p.tgt_ids.clone(),
            p.class_id,
            false,
            rng,
        );
        let stats = model.example_loss(&ex);
        plain_sum += stats.plain_sum;
        tokens += stats.tokens;
    }
    if tokens == 0 {
        return f64::INFINITY;
    }
    (plain_sum / tokens as f64).exp()
}

/// Trains the model in place and returns the per-epoch log.
///
/// Cross entropy with label smoothing; the learning rate warms up linearly
/// over the first epochs, then multiplies by the decay factor whenever dev
/// perplexity has not improved for the configured number of epochs.
/// Gradients accumulate over `grad_accum` batches per optimizer step.
pub fn train<F: Scalar>(
    model: &mut Transformer<F>,
    corpus: &[SentencePair],
    schedule: &TrainSchedule,
    dev: &[SentencePair],
    binning: Option<&LengthBinning>,
    seed: u64,
) -> Result<Vec<EpochLog>, TrainError> {
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let prepared = prepare(model, corpus, binning)?;
    let dev_prepared = prepare(model, dev, binning)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = Adam::new(&model.params);
    let mut logs = Vec::with_capacity(schedule.epochs);
    let mut decay_mult = 1.0f64;
    let mut best_ppl = f64::INFINITY;
    let mut stall = 0usize;
    let mut shard_cursor = 0usize;

    for epoch in 1..=schedule.epochs {
        let lr = schedule.base_lr(epoch) * decay_mult;

        // pick this epoch's shard
        let shard: Vec<usize> = match schedule.shard_size {
            Some(s) if s < prepared.len() => {
                let idx: Vec<usize> = (0..s)
                    .map(|i| (shard_cursor + i) % prepared.len())
                    .collect();
                shard_cursor = (shard_cursor + s) % prepared.len();
                idx
            }
            _ => (0..prepared.len()).collect(),
        };
        let mut order = shard;
        order.shuffle(&mut rng);

        // token-budget batches
        let mut batches: Vec<Vec<usize>> = Vec::new();
        let mut current: Vec<usize> = Vec::new();
        let mut current_tokens = 0usize;
        for &i in &order {
            let t = prepared[i].tgt_ids.len() + 1;
            if !current.is_empty() && current_tokens + t > schedule.batch_tokens {
                batches.push(std::mem::take(&mut current));
                current_tokens = 0;
            }
            current.push(i);
            current_tokens += t;
        }
        if !current.is_empty() {
            batches.push(current);
        }

        let mut loss_sum = 0.0;
        let mut token_sum = 0usize;
        let mut grads = model.params.zeros_like();
        let mut accumulated = 0usize;

        for (batch_no, batch) in batches.iter().enumerate() {
            let batch_tokens: usize = batch.iter().map(|&i| prepared[i].tgt_ids.len() + 1).sum();
            let scale =
                F::from_f64_lossy(1.0 / (batch_tokens.max(1) * schedule.grad_accum) as f64);
            let mut batch_loss = 0.0;
            for &i in batch {
                let p = &prepared[i];
                let ex = build_example_from_ids(
                    model,
                    &p.target_text,
                    p.src_ids.clone(),
                    p.tgt_ids.clone(),
                    p.class_id,
                    model.cfg.perturb,
                    &mut rng,
                );
                let (trace, stats) = net::forward_full(
                    &model.params,
                    &model.cfg,
                    &ex.src_ids,
                    &ex.dec_in_ids,
                    &ex.dec_out_ids,
                    &ex.dec_positions,
                    Some(&mut rng),
                );
                net::backward_full(
                    &model.params,
                    &model.cfg,
                    &trace,
                    &ex.dec_out_ids,
                    scale,
                    &mut grads,
                );
                batch_loss += stats.smoothed_sum;
                token_sum += stats.tokens;
            }
            if !batch_loss.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: batch_no,
                });
            }
            loss_sum += batch_loss;
            accumulated += 1;
            if accumulated == schedule.grad_accum || batch_no + 1 == batches.len() {
                adam.step(&mut model.params, &grads, lr);
                grads = model.params.zeros_like();
                accumulated = 0;
            }
        }

        let dev_ppl = dev_perplexity(model, &dev_prepared, &mut rng);
        if dev_ppl < best_ppl {
            best_ppl = dev_ppl;
            stall = 0;
        } else {
            stall += 1;
            if stall >= schedule.patience_epochs {
                decay_mult *= schedule.decay_factor;
                stall = 0;
            }
        }

        logs.push(EpochLog {
            epoch,
            train_loss: loss_sum / token_sum.max(1) as f64,
            dev_ppl,
            lr,
        });
    }
    Ok(logs)
}

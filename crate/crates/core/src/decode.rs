//! Beam search with length conditioning plus the post-hoc length-control
//! procedures: N-best rescoring, second-pass length correction and the
//! length ROVER system combination.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::length::{check_compliance, corrected_length, ComplianceStatus};
use crate::model::{
    decode_step, encode_source, new_dec_state, DecState, EncodedSource, LengthTokenSide,
    LengthUnit, Transformer, VocabEntry, BOS_ID, EOS_ID,
};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("forced length given but the model has no length encoding")]
    ForcedLengthUnsupported,
    #[error("unknown length-class label {0:?}")]
    UnknownLabel(String),
    #[error("model carries no length-class tokens")]
    NoLengthTokens,
    #[error("model expects a source-side length token; pass one explicitly")]
    MissingSourceToken,
    #[error("two-pass decoding requires a length-encoding model")]
    TwoPassNeedsLdpe,
    #[error("empty N-best list")]
    EmptyNBest,
    #[error("system outputs cover {found} sentences, expected {expected}")]
    MismatchedSentences { expected: usize, found: usize },
    #[error("system {0:?} has no corpus quality score")]
    MissingQuality(String),
    #[error("length ROVER needs at least one system")]
    NoSystems,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed N-best file: {0}")]
    Parse(String),
}

/// One scored decoder output.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub text: String,
    /// Length-normalized log probability (sum over tokens / token count).
    pub score: f64,
    /// 1-based position in the N-best list.
    pub rank: usize,
}

/// Deduplicated beam output, ranks 1..N with nonincreasing scores.
#[derive(Debug, Clone, Default)]
pub struct NBestList {
    pub hypotheses: Vec<Hypothesis>,
}

impl NBestList {
    pub fn first_best(&self) -> Option<&Hypothesis> {
        self.hypotheses.first()
    }
}

/// Chosen hypothesis per test sentence for one system variant.
#[derive(Debug, Clone)]
pub struct SystemOutput {
    pub system_id: String,
    pub hypotheses: Vec<Hypothesis>,
    /// Corpus-level quality (BLEU) used for ROVER precedence.
    pub corpus_quality: Option<f64>,
}

struct BeamEntry<F> {
    emitted: Vec<usize>,
    log_prob: f64,
    consumed: i64,
    state: DecState<F>,
    next_log_probs: Vec<F>,
}

struct FinishedEntry {
    emitted: Vec<usize>,
    log_prob: f64,
}

/// Beam search over one source sentence.
///
/// `forced_token` forces the length-class token (prepended to the source or
/// emitted as the first decoding step, depending on the model); leaving it
/// out on a target-side-token model lets the model predict the class. For
/// countdown models `l_forced` defaults to the source length in the model's
/// unit.
pub fn beam_search<F: Scalar>(
    model: &Transformer<F>,
    src: &str,
    beam: usize,
    forced_token: Option<&str>,
    l_forced: Option<usize>,
) -> Result<NBestList, DecodeError> {
    let beam = beam.max(1);
    if l_forced.is_some() && !model.cfg.pe_mode.is_ldpe() {
        return Err(DecodeError::ForcedLengthUnsupported);
    }
    let forced_class = match forced_token {
        Some(label) => {
            if model.cfg.length_token_side == LengthTokenSide::None {
                return Err(DecodeError::NoLengthTokens);
            }
            Some(
                model
                    .vocab
                    .class_id(label)
                    .map_err(|_| DecodeError::UnknownLabel(label.to_string()))?,
            )
        }
        None => {
            if model.cfg.length_token_side == LengthTokenSide::Source {
                return Err(DecodeError::MissingSourceToken);
            }
            None
        }
    };

    let mut src_ids = model.text_to_ids(src);
    let src_len_unit = model.source_length(src, &src_ids);
    if model.cfg.length_token_side == LengthTokenSide::Source {
        src_ids.insert(0, forced_class.expect("checked above"));
    }
    let forced_len = model
        .cfg
        .pe_mode
        .is_ldpe()
        .then(|| l_forced.unwrap_or(src_len_unit) as i64);

    let enc: EncodedSource<F> = encode_source(&model.params, &model.cfg, &src_ids);
    let max_steps = 2 * src_ids.len() + 10;

    let position_of = |consumed: i64, fed: usize| -> i64 {
        match forced_len {
            Some(forced) => forced - consumed,
            None => fed as i64,
        }
    };

    // feed BOS
    let mut root_state = new_dec_state(model.cfg.n_dec_layers);
    let root_lp = decode_step(
        &model.params,
        &model.cfg,
        &enc,
        &mut root_state,
        BOS_ID,
        position_of(0, 0),
    );
    let mut live = vec![BeamEntry {
        emitted: Vec::new(),
        log_prob: 0.0,
        consumed: 0,
        state: root_state,
        next_log_probs: root_lp,
    }];
    let mut finished: Vec<FinishedEntry> = Vec::new();

    for step in 1..=max_steps {
        let target_first = step == 1 && model.cfg.length_token_side == LengthTokenSide::Target;
        let mut candidates: Vec<(usize, usize, f64)> = Vec::new(); // (beam idx, token, log_prob)
        for (b, entry) in live.iter().enumerate() {
            let mut scored: Vec<(usize, f64)> = Vec::new();
            for id in 0..model.vocab.len() {
                let allowed = if target_first {
                    match forced_class {
                        Some(class) => id == class,
                        None => {
                            matches!(
                                model.vocab.entry(id),
                                VocabEntry::Token(_) | VocabEntry::LengthClass(_)
                            ) || id == EOS_ID
                        }
                    }
                } else {
                    matches!(model.vocab.entry(id), VocabEntry::Token(_)) || id == EOS_ID
                };
                if !allowed {
                    continue;
                }
                scored.push((id, entry.next_log_probs[id].to_f64_lossy()));
            }
            scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
            for &(id, lp) in scored.iter().take(beam) {
                candidates.push((b, id, entry.log_prob + lp));
            }
        }
        if candidates.is_empty() {
            break;
        }
        candidates.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap_or(std::cmp::Ordering::Equal));

        let mut next_live: Vec<BeamEntry<F>> = Vec::with_capacity(beam);
        for &(b, token, log_prob) in &candidates {
            if next_live.len() >= beam {
                break;
            }
            let parent = &live[b];
            let mut emitted = parent.emitted.clone();
            emitted.push(token);
            if token == EOS_ID {
                finished.push(FinishedEntry { emitted, log_prob });
                continue;
            }
            let consumed = parent.consumed + model.step_contribution(token, parent.consumed);
            let mut state = parent.state.clone();
            let fed = emitted.len(); // inputs fed after this token = 1 (BOS) + emitted - 1
            let next_log_probs = decode_step(
                &model.params,
                &model.cfg,
                &enc,
                &mut state,
                token,
                position_of(consumed, fed),
            );
            next_live.push(BeamEntry {
                emitted,
                log_prob,
                consumed,
                state,
                next_log_probs,
            });
        }
        live = next_live;
        if finished.len() >= beam || live.is_empty() {
            break;
        }
    }

    // unterminated leftovers only matter when nothing finished
    if finished.is_empty() {
        for entry in live {
            finished.push(FinishedEntry {
                emitted: entry.emitted,
                log_prob: entry.log_prob,
            });
        }
    }

    let mut scored: Vec<(String, f64)> = finished
        .into_iter()
        .filter(|f| !f.emitted.is_empty())
        .map(|f| {
            let text = model.ids_to_text(&f.emitted);
            (text, f.log_prob / f.emitted.len() as f64)
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
    let mut list = NBestList::default();
    for (text, score) in scored {
        if list.hypotheses.iter().any(|h| h.text == text) {
            continue;
        }
        let rank = list.hypotheses.len() + 1;
        list.hypotheses.push(Hypothesis { text, score, rank });
        if list.hypotheses.len() == beam {
            break;
        }
    }
    Ok(list)
}

/// Picks the best-scoring hypothesis within the length margin, falling back
/// to the first best when none complies (or the source is too short to be
/// measured).
pub fn rescore_nbest(
    nbest: &NBestList,
    src: &str,
    margin: f64,
) -> Result<Hypothesis, DecodeError> {
    let first = nbest.first_best().ok_or(DecodeError::EmptyNBest)?;
    for hyp in &nbest.hypotheses {
        if check_compliance(src, &hyp.text, margin).is_compliant() {
            return Ok(hyp.clone());
        }
    }
    Ok(first.clone())
}

fn hypothesis_length_in_unit<F: Scalar>(model: &Transformer<F>, text: &str) -> usize {
    match model.length_unit() {
        Some(LengthUnit::Tokens) => model.text_to_ids(text).len(),
        _ => {
            if model.cfg.count_spaces {
                text.chars().count()
            } else {
                crate::length::char_count(text)
            }
        }
    }
}

/// First pass at the source length; when the first best is not compliant, a
/// single second pass aims at the length corrected by the observed
/// over/under-shoot. Rescoring, when enabled, applies only to the second
/// pass; the correction always uses the first-best length of pass one.
pub fn two_pass_translate<F: Scalar>(
    model: &Transformer<F>,
    src: &str,
    beam: usize,
    margin: f64,
    rescore: bool,
    forced_token: Option<&str>,
) -> Result<Hypothesis, DecodeError> {
    if !model.cfg.pe_mode.is_ldpe() {
        return Err(DecodeError::TwoPassNeedsLdpe);
    }
    let pass1 = beam_search(model, src, beam, forced_token, None)?;
    let first = pass1.first_best().ok_or(DecodeError::EmptyNBest)?.clone();
    let verdict = check_compliance(src, &first.text, margin);
    if verdict.status != ComplianceStatus::Noncompliant {
        return Ok(first);
    }

    let src_ids = model.text_to_ids(src);
    let src_len = model.source_length(src, &src_ids);
    let first_len = hypothesis_length_in_unit(model, &first.text).max(1);
    let corrected = corrected_length(src_len, first_len).expect("nonzero first pass");
    let pass2 = beam_search(model, src, beam, forced_token, Some(corrected.max(1)))?;
    if rescore {
        rescore_nbest(&pass2, src, margin)
    } else {
        Ok(pass2.first_best().ok_or(DecodeError::EmptyNBest)?.clone())
    }
}

/// Per-sentence system combination: among systems whose hypothesis is
/// length compliant the one with the best corpus quality wins; when none
/// complies the overall best system is the fallback. Quality ties keep
/// declaration order.
pub fn length_rover(
    outputs: &[SystemOutput],
    srcs: &[String],
    margin: f64,
) -> Result<SystemOutput, DecodeError> {
    if outputs.is_empty() {
        return Err(DecodeError::NoSystems);
    }
    for out in outputs {
        if out.hypotheses.len() != srcs.len() {
            return Err(DecodeError::MismatchedSentences {
                expected: srcs.len(),
                found: out.hypotheses.len(),
            });
        }
        if out.corpus_quality.is_none() {
            return Err(DecodeError::MissingQuality(out.system_id.clone()));
        }
    }
    let mut precedence: Vec<usize> = (0..outputs.len()).collect();
    precedence.sort_by(|&a, &b| {
        outputs[b]
            .corpus_quality
            .partial_cmp(&outputs[a].corpus_quality)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let fallback = precedence[0];

    let mut chosen = Vec::with_capacity(srcs.len());
    for (i, src) in srcs.iter().enumerate() {
        let pick = precedence
            .iter()
            .find(|&&s| check_compliance(src, &outputs[s].hypotheses[i].text, margin).is_compliant())
            .copied()
            .unwrap_or(fallback);
        chosen.push(outputs[pick].hypotheses[i].clone());
    }
    Ok(SystemOutput {
        system_id: "rover".into(),
        hypotheses: chosen,
        corpus_quality: None,
    })
}

/// Settings for sentence-level translation through the full pipeline.
#[derive(Debug, Clone)]
pub struct DecodeOptions {
    pub beam: usize,
    pub margin: f64,
    pub forced_token: Option<String>,
    pub l_forced: Option<usize>,
    pub rescore: bool,
    pub two_pass: bool,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions {
            beam: 12,
            margin: crate::length::DEFAULT_MARGIN,
            forced_token: None,
            l_forced: None,
            rescore: false,
            two_pass: false,
        }
    }
}

/// Translates one sentence with the configured post-processing.
pub fn translate_sentence<F: Scalar>(
    model: &Transformer<F>,
    src: &str,
    opts: &DecodeOptions,
) -> Result<Hypothesis, DecodeError> {
    if opts.two_pass {
        return two_pass_translate(
            model,
            src,
            opts.beam,
            opts.margin,
            opts.rescore,
            opts.forced_token.as_deref(),
        );
    }
    let nbest = beam_search(
        model,
        src,
        opts.beam,
        opts.forced_token.as_deref(),
        opts.l_forced,
    )?;
    if opts.rescore {
        rescore_nbest(&nbest, src, opts.margin)
    } else {
        Ok(nbest.first_best().ok_or(DecodeError::EmptyNBest)?.clone())
    }
}

/// Translates a corpus, optionally across threads; output order matches the
/// input order regardless of the job count.
pub fn translate_corpus<F: Scalar>(
    model: &Transformer<F>,
    srcs: &[String],
    opts: &DecodeOptions,
    jobs: usize,
) -> Result<Vec<Hypothesis>, DecodeError> {
    let jobs = jobs.max(1).min(srcs.len().max(1));
    if jobs == 1 {
        return srcs
            .iter()
            .map(|s| translate_sentence(model, s, opts))
            .collect();
    }
    let mut results: Vec<Option<Result<Hypothesis, DecodeError>>> = Vec::new();
    results.resize_with(srcs.len(), || None);
    let chunk = srcs.len().div_ceil(jobs);
    std::thread::scope(|scope| {
        let mut slots = results.as_mut_slice();
        let mut start = 0;
        let mut handles = Vec::new();
        while !slots.is_empty() {
            let take = chunk.min(slots.len());
            let (head, tail) = slots.split_at_mut(take);
            slots = tail;
            let range = &srcs[start..start + take];
            start += take;
            handles.push(scope.spawn(move || {
                for (slot, src) in head.iter_mut().zip(range) {
                    *slot = Some(translate_sentence(model, src, opts));
                }
            }));
        }
        for h in handles {
            h.join().expect("decode worker");
        }
    });
    results
        .into_iter()
        .map(|r| r.expect("all slots filled"))
        .collect()
}

/// Writes N-best lists as `sentence_index<TAB>rank<TAB>score<TAB>text`.
pub fn write_nbest(lists: &[NBestList], path: &Path) -> Result<(), DecodeError> {
    let mut out = String::new();
    for (i, list) in lists.iter().enumerate() {
        for hyp in &list.hypotheses {
            out.push_str(&format!("{i}\t{}\t{}\t{}\n", hyp.rank, hyp.score, hyp.text));
        }
    }
    fs::write(path, out).map_err(|source| DecodeError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_nbest(path: &Path) -> Result<Vec<NBestList>, DecodeError> {
    let text = fs::read_to_string(path).map_err(|source| DecodeError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut rows: Vec<(usize, usize, f64, String)> = Vec::new();
    for line in text.lines() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.splitn(4, '\t').collect();
        if fields.len() != 4 {
            return Err(DecodeError::Parse(format!("bad line {line:?}")));
        }
        let idx: usize = fields[0]
            .parse()
            .map_err(|_| DecodeError::Parse(format!("bad index in {line:?}")))?;
        let rank: usize = fields[1]
            .parse()
            .map_err(|_| DecodeError::Parse(format!("bad rank in {line:?}")))?;
        let score: f64 = fields[2]
            .parse()
            .map_err(|_| DecodeError::Parse(format!("bad score in {line:?}")))?;
        rows.push((idx, rank, score, fields[3].to_string()));
    }
    let n = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
    let mut lists = vec![NBestList::default(); n];
    rows.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
    for (idx, rank, score, text) in rows {
        lists[idx].hypotheses.push(Hypothesis { text, score, rank });
    }
    Ok(lists)
}

/// One detokenized hypothesis per line, parallel to the source file.
pub fn write_system_output(hyps: &[Hypothesis], path: &Path) -> Result<(), DecodeError> {
    let mut out = String::new();
    for h in hyps {
        out.push_str(&h.text);
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| DecodeError::Io {
        path: path.display().to_string(),
        source,
    })
}

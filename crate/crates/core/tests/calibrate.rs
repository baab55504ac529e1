//! Temporary calibration harness; run with --ignored to print metrics.

mod common;

use std::time::Instant;

use isomt::decode::{translate_corpus, DecodeOptions};
use isomt::eval::{corpus_bleu, corpus_lc};
use isomt::length::{fit_quantile_bins, LengthBinning};
use isomt::model::{LengthTokenSide, PeMode};

use common::{form_choice_task, task_model, train_task_model};

#[test]
#[ignore]
fn calibrate_toy_task() {
    let t0 = Instant::now();
    let task = form_choice_task(12, 2000, 1234);

    // reference-side stats
    let srcs: Vec<String> = task.test.iter().map(|p| p.source.clone()).collect();
    let refs: Vec<String> = task.test.iter().map(|p| p.target.clone()).collect();
    let ref_lc = corpus_lc(&srcs, &refs, 0.10).unwrap();
    println!("reference LC on test: {ref_lc:.2}");

    // baseline
    let mut baseline = task_model(
        &task.train,
        PeMode::Absolute,
        LengthTokenSide::None,
        false,
        &[],
        100,
    );
    println!("vocab size: {}", baseline.vocab.len());
    let ppl = train_task_model(&mut baseline, &task, None, 30, 500);
    println!("baseline dev ppl {ppl:.3}  ({:?})", t0.elapsed());

    let opts = DecodeOptions {
        beam: 8,
        ..DecodeOptions::default()
    };
    let hyps: Vec<String> = translate_corpus(&baseline, &srcs, &opts, 4)
        .unwrap()
        .into_iter()
        .map(|h| h.text)
        .collect();
    let bleu = corpus_bleu(&hyps, &refs).unwrap();
    let lc = corpus_lc(&srcs, &hyps, 0.10).unwrap();
    println!("baseline: BLEU {bleu:.2} LC {lc:.2}  ({:?})", t0.elapsed());

    // unperturbed char countdown
    let mut unpert = task_model(
        &task.train,
        PeMode::LdpeChar,
        LengthTokenSide::None,
        false,
        &[],
        101,
    );
    let ppl = train_task_model(&mut unpert, &task, None, 30, 501);
    println!("unperturbed dev ppl {ppl:.3}  ({:?})", t0.elapsed());
    let hyps_u: Vec<String> = translate_corpus(&unpert, &srcs, &opts, 4)
        .unwrap()
        .into_iter()
        .map(|h| h.text)
        .collect();
    let bleu_u = corpus_bleu(&hyps_u, &refs).unwrap();
    let lc_u = corpus_lc(&srcs, &hyps_u, 0.10).unwrap();
    println!("unperturbed: BLEU {bleu_u:.2} LC {lc_u:.2}  ({:?})", t0.elapsed());

    // perturbed char countdown
    let mut pert = task_model(
        &task.train,
        PeMode::LdpeChar,
        LengthTokenSide::None,
        true,
        &[],
        102,
    );
    let ppl = train_task_model(&mut pert, &task, None, 30, 502);
    println!("perturbed dev ppl {ppl:.3}  ({:?})", t0.elapsed());

    // single pass
    let hyps_p1: Vec<String> = translate_corpus(&pert, &srcs, &opts, 4)
        .unwrap()
        .into_iter()
        .map(|h| h.text)
        .collect();
    println!(
        "perturbed single pass: BLEU {:.2} LC {:.2}",
        corpus_bleu(&hyps_p1, &refs).unwrap(),
        corpus_lc(&srcs, &hyps_p1, 0.10).unwrap()
    );
    // two-pass + rescore
    let opts2 = DecodeOptions {
        beam: 8,
        two_pass: true,
        rescore: true,
        ..DecodeOptions::default()
    };
    let hyps_p2: Vec<String> = translate_corpus(&pert, &srcs, &opts2, 4)
        .unwrap()
        .into_iter()
        .map(|h| h.text)
        .collect();
    println!(
        "perturbed 2-pass+rescore: BLEU {:.2} LC {:.2}  ({:?})",
        corpus_bleu(&hyps_p2, &refs).unwrap(),
        corpus_lc(&srcs, &hyps_p2, 0.10).unwrap(),
        t0.elapsed()
    );

    // 7-bin target token model
    let binning = fit_quantile_bins(&task.train, 7).unwrap();
    println!("7-bin boundaries: {:?}", binning.boundaries());
    let labels: Vec<String> = binning.labels().to_vec();
    let mut seven = task_model(
        &task.train,
        PeMode::Absolute,
        LengthTokenSide::Target,
        false,
        &labels,
        103,
    );
    let ppl = train_task_model(&mut seven, &task, Some(&binning), 30, 503);
    println!("seven-bin dev ppl {ppl:.3}  ({:?})", t0.elapsed());

    let small: Vec<String> = srcs.iter().take(120).cloned().collect();
    for label in binning.labels() {
        let o = DecodeOptions {
            beam: 8,
            forced_token: Some(label.clone()),
            ..DecodeOptions::default()
        };
        let hyps: Vec<String> = translate_corpus(&seven, &small, &o, 4)
            .unwrap()
            .into_iter()
            .map(|h| h.text)
            .collect();
        let mean_len: f64 = hyps
            .iter()
            .map(|h| isomt::length::char_count(h) as f64)
            .sum::<f64>()
            / hyps.len() as f64;
        println!("bin {label}: mean output chars {mean_len:.2}");
    }
    // free decode
    let o = DecodeOptions {
        beam: 8,
        ..DecodeOptions::default()
    };
    let hyps: Vec<String> = translate_corpus(&seven, &small, &o, 4)
        .unwrap()
        .into_iter()
        .map(|h| h.text)
        .collect();
    let refs_small: Vec<String> = refs.iter().take(120).cloned().collect();
    println!(
        "seven-bin free: BLEU {:.2} LC {:.2}  total {:?}",
        corpus_bleu(&hyps, &refs_small).unwrap(),
        corpus_lc(&small, &hyps, 0.10).unwrap(),
        t0.elapsed()
    );
}

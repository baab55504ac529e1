//! End-to-end checks of the command-line surface.

use std::fs;
use std::path::Path;
use std::process::Command;

fn isomt() -> Command {
    Command::new(env!("CARGO_BIN_EXE_isomt"))
}

fn write(path: &Path, content: &str) {
    fs::write(path, content).unwrap();
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap()
}

#[test]
fn tokenize_round_trips_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("c.src");
    let tgt = dir.path().join("c.tgt");
    write(&src, "Hello world\nGood morning\n");
    write(&tgt, "Hallo Welt\nGuten Morgen\n");

    let model = dir.path().join("subword.txt");
    let status = isomt()
        .args(["tokenize", "train"])
        .arg("--source")
        .arg(&src)
        .arg("--target")
        .arg(&tgt)
        .args(["--vocab-size", "40"])
        .arg("--out")
        .arg(&model)
        .status()
        .unwrap();
    assert!(status.success());

    let encoded = dir.path().join("c.factored");
    let status = isomt()
        .args(["tokenize", "apply"])
        .arg("--model")
        .arg(&model)
        .arg("--input")
        .arg(&src)
        .arg("--output")
        .arg(&encoded)
        .status()
        .unwrap();
    assert!(status.success());

    let restored = dir.path().join("c.restored");
    let status = isomt()
        .args(["tokenize", "restore"])
        .arg("--input")
        .arg(&encoded)
        .arg("--output")
        .arg(&restored)
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(read(&restored), read(&src));
}

#[test]
fn score_prints_bleu_and_lc() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("s.txt");
    let hyp = dir.path().join("h.txt");
    let reference = dir.path().join("r.txt");
    write(&src, "abcdefghijkl mnop\nqrstuvwxyz abcd\n");
    write(&hyp, "the cat sat down here\nhe reads a long book\n");
    write(&reference, "the cat sat down here\nhe reads a long book\n");

    let output = isomt()
        .arg("score")
        .arg("--source")
        .arg(&src)
        .arg("--hyp")
        .arg(&hyp)
        .arg("--reference")
        .arg(&reference)
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.contains("BLEU: 100.00"), "{stdout}");
    assert!(stdout.contains("LC:"), "{stdout}");
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let output = isomt().args(["score", "--nope"]).output().unwrap();
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn missing_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.txt");
    let output = isomt()
        .arg("score")
        .arg("--source")
        .arg(&missing)
        .arg("--hyp")
        .arg(&missing)
        .arg("--reference")
        .arg(&missing)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn bins_three_bin_scheme_writes_margin_boundaries() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("c.src");
    let tgt = dir.path().join("c.tgt");
    write(&src, "aaaa bbbb cccc\n");
    write(&tgt, "dddd eeee ffff\n");
    let out = dir.path().join("bins.txt");
    let status = isomt()
        .arg("bins")
        .arg("--source")
        .arg(&src)
        .arg("--target")
        .arg(&tgt)
        .args(["--scheme", "three-bin"])
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let text = read(&out);
    assert!(text.starts_with("isomt-bins v1 scheme=three_bin"));
    assert!(text.contains("0.9"));
    assert!(text.contains("1.1"));
}

#[test]
fn augment_pipeline_produces_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("c.src");
    let tgt = dir.path().join("c.tgt");
    // lowercased parallel toy corpus with consistent word translations
    let mut src_lines = String::new();
    let mut tgt_lines = String::new();
    for _ in 0..30 {
        src_lines.push_str("the big house\n");
        tgt_lines.push_str("das grosse haus\n");
        src_lines.push_str("a large house\n");
        tgt_lines.push_str("ein grosse haus\n");
        src_lines.push_str("the small car\n");
        tgt_lines.push_str("das kleine auto\n");
    }
    write(&src, &src_lines);
    write(&tgt, &tgt_lines);

    let lexicon = dir.path().join("lexicon.tsv");
    let alignments = dir.path().join("alignments.txt");
    let status = isomt()
        .args(["augment", "align"])
        .arg("--source")
        .arg(&src)
        .arg("--target")
        .arg(&tgt)
        .args(["--iterations", "5"])
        .arg("--lexicon-out")
        .arg(&lexicon)
        .arg("--alignments-out")
        .arg(&alignments)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(read(&lexicon).lines().count() > 3);
    assert_eq!(read(&alignments).lines().count(), 90);

    // phrase extraction over the alignments
    let phr_src = dir.path().join("phr.src");
    let phr_tgt = dir.path().join("phr.tgt");
    let status = isomt()
        .args(["augment", "phrases"])
        .arg("--source")
        .arg(&src)
        .arg("--target")
        .arg(&tgt)
        .arg("--alignments")
        .arg(&alignments)
        .arg("--out-source")
        .arg(&phr_src)
        .arg("--out-target")
        .arg(&phr_tgt)
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(
        read(&phr_src).lines().count(),
        read(&phr_tgt).lines().count()
    );

    // length filtering of synthetic data
    let kept_src = dir.path().join("kept.src");
    let kept_tgt = dir.path().join("kept.tgt");
    let status = isomt()
        .args(["augment", "bt-filter"])
        .arg("--source")
        .arg(&src)
        .arg("--target")
        .arg(&tgt)
        .arg("--out-source")
        .arg(&kept_src)
        .arg("--out-target")
        .arg(&kept_tgt)
        .status()
        .unwrap();
    assert!(status.success());
    let kept = read(&kept_src);
    assert!(!kept.is_empty());
}

#[test]
fn augment_concat_joins_document_neighbors() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("c.src");
    let tgt = dir.path().join("c.tgt");
    let docs = dir.path().join("c.docs");
    write(&src, "one\ntwo\nthree\nfour\n");
    write(&tgt, "eins\nzwei\ndrei\nvier\n");
    write(&docs, "t1\t0\nt1\t1\nt1\t2\nt2\t0\n");
    let out_src = dir.path().join("o.src");
    let out_tgt = dir.path().join("o.tgt");
    let status = isomt()
        .args(["augment", "concat"])
        .arg("--source")
        .arg(&src)
        .arg("--target")
        .arg(&tgt)
        .arg("--docs")
        .arg(&docs)
        .arg("--out-source")
        .arg(&out_src)
        .arg("--out-target")
        .arg(&out_tgt)
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(read(&out_src), "one two\n");
    assert_eq!(read(&out_tgt), "eins zwei\n");
}

#[test]
fn augment_spoken_rewrites_text() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.txt");
    write(&input, "I paid $5.\nHello, World!\n");
    let output = dir.path().join("out.txt");
    let status = isomt()
        .args(["augment", "spoken"])
        .arg("--input")
        .arg(&input)
        .arg("--output")
        .arg(&output)
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(read(&output), "i paid five dollars\nhello world\n");
}

#[test]
fn rover_combines_systems() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("s.txt");
    write(&src, "abcdefghijkl\nabcdefghijkl\n");
    let sys_a = dir.path().join("a.txt");
    let sys_b = dir.path().join("b.txt");
    // A noncompliant on line 1, B compliant
    write(&sys_a, "abc\nabcdefghijkl\n");
    write(&sys_b, "abcdefghijkm\nxyz\n");
    let out = dir.path().join("rover.txt");
    let status = isomt()
        .arg("rover")
        .arg("--source")
        .arg(&src)
        .arg("--hyp")
        .arg(&sys_a)
        .arg("--hyp")
        .arg(&sys_b)
        .args(["--quality", "30", "--quality", "28"])
        .arg("--output")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(read(&out), "abcdefghijkm\nabcdefghijkl\n");
}

#[test]
fn bootstrap_reports_p_value() {
    let dir = tempfile::tempdir().unwrap();
    let reference = dir.path().join("r.txt");
    write(
        &reference,
        "the cat sat on the mat\nhe reads a book today\nshe walks to the town\n",
    );
    let output = isomt()
        .arg("bootstrap")
        .arg("--hyp-a")
        .arg(&reference)
        .arg("--hyp-b")
        .arg(&reference)
        .arg("--reference")
        .arg(&reference)
        .args(["--samples", "200", "--seed", "3"])
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.contains("p-value"), "{stdout}");
    assert!(stdout.contains("95% CI"), "{stdout}");
}

#[test]
fn report_emits_table_and_data_file() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("s.txt");
    let reference = dir.path().join("r.txt");
    let hyp = dir.path().join("h.txt");
    write(&src, "abcdefghijkl mnopq\n");
    write(&reference, "the cat sat on the mat\n");
    write(&hyp, "the cat sat on the mat\n");
    let data = dir.path().join("table.tsv");
    let output = isomt()
        .arg("report")
        .arg("--source")
        .arg(&src)
        .arg("--reference")
        .arg(&reference)
        .arg("--system")
        .arg(format!("mysys={}", hyp.display()))
        .arg("--data-out")
        .arg(&data)
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.contains("mysys"), "{stdout}");
    let data_text = read(&data);
    assert!(data_text.starts_with("mysys\t100.00\t"), "{data_text}");
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("s.txt");
    let hyp = dir.path().join("h.txt");
    let reference = dir.path().join("r.txt");
    // 20 source chars; hyp has 24 -> compliant only at margin >= 0.2
    write(&src, "abcdefghijklmnopqrst\n");
    write(&hyp, "the cat sat on the mat o\n");
    write(&reference, "the cat sat on the mat o\n");
    let config = dir.path().join("cfg.txt");
    write(&config, "# comment\nmargin=0.5\n");

    let output = isomt()
        .arg("score")
        .arg("--config")
        .arg(&config)
        .arg("--source")
        .arg(&src)
        .arg("--hyp")
        .arg(&hyp)
        .arg("--reference")
        .arg(&reference)
        .output()
        .unwrap();
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.contains("LC: 100.00"), "config margin unused: {stdout}");

    // flag overrides the config value
    let output = isomt()
        .arg("score")
        .arg("--config")
        .arg(&config)
        .args(["--margin", "0.05"])
        .arg("--source")
        .arg(&src)
        .arg("--hyp")
        .arg(&hyp)
        .arg("--reference")
        .arg(&reference)
        .output()
        .unwrap();
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.contains("LC: 0.00"), "flag did not win: {stdout}");
}

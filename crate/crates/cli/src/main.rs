//! Command-line pipeline for length-controlled translation: corpus
//! preparation, subword models, training, decoding with length control,
//! system combination, data augmentation and evaluation.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data errors.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use isomt::augment::{
    align_em, extract_lexicon, extract_phrases, filter_synthetic, read_alignments,
    similarity_filter, synonym_replace, viterbi_align, write_alignments, Lexicon,
    ReplacementPolicy,
};
use isomt::corpus::{concat_adjacent, filter_pair, normalize_text, read_parallel, SentencePair};
use isomt::decode::{
    beam_search, length_rover, read_nbest, rescore_nbest, translate_corpus, write_nbest,
    write_system_output, DecodeOptions, Hypothesis, SystemOutput,
};
use isomt::eval::{corpus_bleu, corpus_lc_opts, evaluate_system, paired_bootstrap, tradeoff_table};
use isomt::length::{fit_quantile_bins, LengthBinning, DEFAULT_MARGIN};
use isomt::model::{
    load_checkpoint, save_checkpoint, train, LengthTokenSide, ModelConfig, ModelVocab, PeMode,
    TrainSchedule, Transformer,
};
use isomt::spoken::{spoken_form, YearStyle};
use isomt::subword::{
    decode as subword_decode, encode as subword_encode, format_factored_stream,
    parse_factored_stream, train_subword_model, SubwordModel,
};
use isomt::Model32;

use config::FileConfig;

#[derive(Parser)]
#[command(name = "isomt", about = "Length-controlled translation toolkit", version)]
struct Cli {
    /// Flat key=value config file; command-line flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for all randomness in the invoked command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Subword model training and application.
    Tokenize(TokenizeArgs),
    /// Fit length-ratio bins over a parallel corpus.
    Bins(BinsArgs),
    /// Train a translation model.
    Train(Box<TrainArgs>),
    /// Translate a file with optional length control.
    Translate(TranslateArgs),
    /// Pick length-compliant hypotheses from an N-best file.
    Rescore(RescoreArgs),
    /// Translate with second-pass length correction.
    TwoPass(TranslateArgs),
    /// Combine system outputs per sentence by compliance and quality.
    Rover(RoverArgs),
    /// Data augmentation utilities.
    Augment(AugmentArgs),
    /// BLEU and length compliance of a hypothesis file.
    Score(ScoreArgs),
    /// Paired bootstrap resampling between two systems.
    Bootstrap(BootstrapArgs),
    /// Quality/length trade-off table over several systems.
    Report(ReportArgs),
}

#[derive(Args)]
struct TokenizeArgs {
    #[command(subcommand)]
    action: TokenizeAction,
}

#[derive(Subcommand)]
enum TokenizeAction {
    /// Learn a subword model from a parallel corpus.
    Train {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        vocab_size: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment text into the factored token stream.
    Apply {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Reassemble text from a factored token stream.
    Restore {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Args)]
struct BinsArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    /// Number of quantile bins.
    #[arg(long, short = 'k')]
    bins: Option<usize>,
    #[arg(long, value_enum, default_value_t = BinSchemeArg::Quantile)]
    scheme: BinSchemeArg,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum BinSchemeArg {
    Quantile,
    ThreeBin,
}

#[derive(Clone, Copy, ValueEnum)]
enum PeModeArg {
    Absolute,
    LdpeToken,
    LdpeChar,
}

impl From<PeModeArg> for PeMode {
    fn from(arg: PeModeArg) -> Self {
        match arg {
            PeModeArg::Absolute => PeMode::Absolute,
            PeModeArg::LdpeToken => PeMode::LdpeToken,
            PeModeArg::LdpeChar => PeMode::LdpeChar,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SideArg {
    None,
    Source,
    Target,
}

impl From<SideArg> for LengthTokenSide {
    fn from(arg: SideArg) -> Self {
        match arg {
            SideArg::None => LengthTokenSide::None,
            SideArg::Source => LengthTokenSide::Source,
            SideArg::Target => LengthTokenSide::Target,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    dev_source: Option<PathBuf>,
    #[arg(long)]
    dev_target: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Normalize quotes and dashes before training.
    #[arg(long)]
    normalize: bool,
    /// Drop pairs with mismatching digits or parentheses.
    #[arg(long)]
    filter: bool,
    #[arg(long)]
    subword_vocab: Option<usize>,
    /// Previously fitted binning file (required for length tokens).
    #[arg(long)]
    bins: Option<PathBuf>,

    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    n_heads: Option<usize>,
    #[arg(long)]
    enc_layers: Option<usize>,
    #[arg(long)]
    dec_layers: Option<usize>,
    #[arg(long)]
    ffn_dim: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    label_smoothing: Option<f64>,
    #[arg(long, value_enum)]
    pe_mode: Option<PeModeArg>,
    #[arg(long, value_enum)]
    length_token: Option<SideArg>,
    /// Add ±10% noise to the forced length in training.
    #[arg(long)]
    perturb: bool,
    /// Count inter-word spaces in the character countdown.
    #[arg(long)]
    count_spaces: bool,

    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    start_lr: Option<f64>,
    #[arg(long)]
    peak_lr: Option<f64>,
    #[arg(long)]
    warmup_epochs: Option<usize>,
    #[arg(long)]
    decay_factor: Option<f64>,
    #[arg(long)]
    patience_epochs: Option<usize>,
    #[arg(long)]
    batch_tokens: Option<usize>,
    #[arg(long)]
    grad_accum: Option<usize>,
    #[arg(long)]
    shard_size: Option<usize>,
    /// Print the per-epoch log to stdout.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct TranslateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    beam: Option<usize>,
    /// Force this length-class token.
    #[arg(long)]
    forced_bin: Option<String>,
    /// Force this target length (countdown models only).
    #[arg(long)]
    l_forced: Option<usize>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    rescore: bool,
    #[arg(long)]
    two_pass: bool,
    /// Worker threads for sentence-parallel decoding.
    #[arg(long)]
    jobs: Option<usize>,
    /// Also write the first-pass N-best lists here.
    #[arg(long)]
    nbest: Option<PathBuf>,
}

#[derive(Args)]
struct RescoreArgs {
    #[arg(long)]
    nbest: PathBuf,
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    margin: Option<f64>,
}

#[derive(Args)]
struct RoverArgs {
    #[arg(long)]
    source: PathBuf,
    /// Hypothesis file of one constituent system; repeatable.
    #[arg(long = "hyp", required = true)]
    hyps: Vec<PathBuf>,
    /// Reference file for computing constituent quality (BLEU).
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Explicit quality score per constituent, parallel to --hyp.
    #[arg(long = "quality")]
    qualities: Vec<f64>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct AugmentArgs {
    #[command(subcommand)]
    action: AugmentAction,
}

#[derive(Subcommand)]
enum AugmentAction {
    /// Word-align a corpus by EM and extract the bilingual lexicon.
    Align {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long, default_value_t = 5)]
        iterations: usize,
        #[arg(long, default_value_t = 50.0)]
        cost_threshold: f64,
        #[arg(long)]
        lexicon_out: PathBuf,
        #[arg(long)]
        alignments_out: Option<PathBuf>,
    },
    /// Replace source words with shorter/longer synonyms.
    Synonyms {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        lexicon: PathBuf,
        #[arg(long)]
        alignments: PathBuf,
        #[arg(long)]
        out_source: PathBuf,
        #[arg(long)]
        out_target: PathBuf,
        #[arg(long, default_value_t = 4)]
        variants: usize,
        #[arg(long, default_value_t = 0.5)]
        consider_prob: f64,
        #[arg(long, default_value_t = 3)]
        max_candidates: usize,
        #[arg(long, default_value_t = 0.94)]
        similarity: f64,
        #[arg(long)]
        margin: Option<f64>,
    },
    /// Concatenate adjacent sentences of the same document.
    Concat {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        docs: PathBuf,
        #[arg(long)]
        out_source: PathBuf,
        #[arg(long)]
        out_target: PathBuf,
    },
    /// Convert source text to its spoken form.
    Spoken {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value_t = YearStyleArg::Cardinal)]
        year_style: YearStyleArg,
    },
    /// Keep only length-compliant synthetic pairs.
    BtFilter {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        out_source: PathBuf,
        #[arg(long)]
        out_target: PathBuf,
        #[arg(long)]
        margin: Option<f64>,
    },
    /// Extract alignment-consistent phrase pairs.
    Phrases {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        alignments: PathBuf,
        #[arg(long, default_value_t = 4)]
        max_len: usize,
        #[arg(long)]
        out_source: PathBuf,
        #[arg(long)]
        out_target: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum YearStyleArg {
    Cardinal,
    Paired,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    hyp: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    margin: Option<f64>,
    /// Count too-short sources as compliant instead of skipping them.
    #[arg(long)]
    skipped_compliant: bool,
}

#[derive(Args)]
struct BootstrapArgs {
    #[arg(long)]
    hyp_a: PathBuf,
    #[arg(long)]
    hyp_b: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    /// `label=hypfile` entry; repeatable.
    #[arg(long = "system", required = true)]
    systems: Vec<String>,
    #[arg(long)]
    margin: Option<f64>,
    /// Machine-readable `label<TAB>bleu<TAB>lc` output file.
    #[arg(long)]
    data_out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // help/version are not usage errors
            use clap::error::ErrorKind;
            let kind = err.kind();
            let _ = err.print();
            return if matches!(kind, ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(str::to_string).collect())
}

fn write_lines(lines: &[String], path: &Path) -> Result<()> {
    let mut out = String::new();
    for line in lines {
        out.push_str(line);
        out.push('\n');
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

fn read_pairs(source: &Path, target: &Path, docs: Option<&Path>) -> Result<Vec<SentencePair>> {
    Ok(read_parallel(source, target, docs)?)
}

fn load_model(path: &Path) -> Result<Model32> {
    Ok(load_checkpoint::<f32>(path)?)
}

fn run(cli: Cli) -> Result<()> {
    let file_config = FileConfig::load(cli.config.as_deref())?;
    let seed = file_config.resolve(cli.seed, "seed", 0u64)?;
    match cli.command {
        Command::Tokenize(args) => run_tokenize(args),
        Command::Bins(args) => run_bins(args, &file_config),
        Command::Train(args) => run_train(*args, &file_config, seed),
        Command::Translate(args) => run_translate(args, &file_config, false),
        Command::TwoPass(args) => run_translate(args, &file_config, true),
        Command::Rescore(args) => run_rescore(args, &file_config),
        Command::Rover(args) => run_rover(args, &file_config),
        Command::Augment(args) => run_augment(args, &file_config, seed),
        Command::Score(args) => run_score(args, &file_config),
        Command::Bootstrap(args) => run_bootstrap(args, &file_config, seed),
        Command::Report(args) => run_report(args, &file_config),
    }
}

fn run_tokenize(args: TokenizeArgs) -> Result<()> {
    match args.action {
        TokenizeAction::Train {
            source,
            target,
            vocab_size,
            out,
        } => {
            let corpus = read_pairs(&source, &target, None)?;
            let model = train_subword_model(&corpus, vocab_size.unwrap_or(20_000))?;
            std::fs::write(&out, model.to_text())
                .with_context(|| format!("writing {}", out.display()))?;
            println!("subword model with {} merges -> {}", model.merges().len(), out.display());
        }
        TokenizeAction::Apply {
            model,
            input,
            output,
        } => {
            let text = std::fs::read_to_string(&model)
                .with_context(|| format!("reading {}", model.display()))?;
            let model = SubwordModel::from_text(&text)?;
            let lines = read_lines(&input)?;
            let encoded: Vec<String> = lines
                .iter()
                .map(|line| format_factored_stream(&subword_encode(line, &model)))
                .collect();
            write_lines(&encoded, &output)?;
        }
        TokenizeAction::Restore { input, output } => {
            let lines = read_lines(&input)?;
            let decoded: Vec<String> = lines
                .iter()
                .map(|line| Ok(subword_decode(&parse_factored_stream(line)?)))
                .collect::<Result<_>>()?;
            write_lines(&decoded, &output)?;
        }
    }
    Ok(())
}

fn run_bins(args: BinsArgs, cfg: &FileConfig) -> Result<()> {
    let margin = cfg.resolve(args.margin, "margin", DEFAULT_MARGIN)?;
    let binning = match args.scheme {
        BinSchemeArg::ThreeBin => LengthBinning::three_bin(margin),
        BinSchemeArg::Quantile => {
            let corpus = read_pairs(&args.source, &args.target, None)?;
            let k = cfg.resolve(args.bins, "bins", 7usize)?;
            fit_quantile_bins(&corpus, k)?
        }
    };
    std::fs::write(&args.out, binning.to_text())
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "bins {} -> {}",
        binning.labels().join(","),
        args.out.display()
    );
    Ok(())
}

fn run_train(args: TrainArgs, cfg: &FileConfig, seed: u64) -> Result<()> {
    let mut corpus = read_pairs(&args.source, &args.target, None)?;
    if cfg.resolve_flag(args.normalize, "normalize")? {
        for pair in &mut corpus {
            pair.source = normalize_text(&pair.source);
            pair.target = normalize_text(&pair.target);
        }
    }
    if cfg.resolve_flag(args.filter, "filter")? {
        corpus.retain(filter_pair);
    }
    corpus.retain(|p| !p.source.trim().is_empty() && !p.target.trim().is_empty());
    if corpus.is_empty() {
        bail!("no training pairs left after filtering");
    }
    let dev = match (&args.dev_source, &args.dev_target) {
        (Some(s), Some(t)) => read_pairs(s, t, None)?,
        (None, None) => corpus.iter().take(100).cloned().collect(),
        _ => bail!("--dev-source and --dev-target must be given together"),
    };

    let model_cfg = ModelConfig {
        d_model: cfg.resolve(args.d_model, "d_model", 64)?,
        n_heads: cfg.resolve(args.n_heads, "n_heads", 4)?,
        n_enc_layers: cfg.resolve(args.enc_layers, "enc_layers", 2)?,
        n_dec_layers: cfg.resolve(args.dec_layers, "dec_layers", 2)?,
        ffn_dim: cfg.resolve(args.ffn_dim, "ffn_dim", 128)?,
        dropout: cfg.resolve(args.dropout, "dropout", 0.3)?,
        label_smoothing: cfg.resolve(args.label_smoothing, "label_smoothing", 0.2)?,
        pe_mode: args
            .pe_mode
            .map(PeMode::from)
            .or_else(|| match cfg.get("pe_mode") {
                Some("absolute") => Some(PeMode::Absolute),
                Some("ldpe_token") => Some(PeMode::LdpeToken),
                Some("ldpe_char") => Some(PeMode::LdpeChar),
                _ => None,
            })
            .unwrap_or(PeMode::Absolute),
        length_token_side: args
            .length_token
            .map(LengthTokenSide::from)
            .or_else(|| match cfg.get("length_token") {
                Some("none") => Some(LengthTokenSide::None),
                Some("source") => Some(LengthTokenSide::Source),
                Some("target") => Some(LengthTokenSide::Target),
                _ => None,
            })
            .unwrap_or(LengthTokenSide::None),
        perturb: cfg.resolve_flag(args.perturb, "perturb")?,
        count_spaces: cfg.resolve_flag(args.count_spaces, "count_spaces")?,
    };
    model_cfg.validate().map_err(|e| anyhow::anyhow!(e))?;

    let binning = match &args.bins {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            Some(LengthBinning::from_text(&text)?)
        }
        None if model_cfg.length_token_side != LengthTokenSide::None => {
            bail!("--bins is required when training with a length token")
        }
        None => None,
    };

    let schedule = TrainSchedule {
        start_lr: cfg.resolve(args.start_lr, "start_lr", 3e-5)?,
        peak_lr: cfg.resolve(args.peak_lr, "peak_lr", 3e-4)?,
        warmup_epochs: cfg.resolve(args.warmup_epochs, "warmup_epochs", 10)?,
        decay_factor: cfg.resolve(args.decay_factor, "decay_factor", 0.9)?,
        patience_epochs: cfg.resolve(args.patience_epochs, "patience_epochs", 4)?,
        batch_tokens: cfg.resolve(args.batch_tokens, "batch_tokens", 1700)?,
        grad_accum: cfg.resolve(args.grad_accum, "grad_accum", 8)?,
        beam_default: 12,
        epochs: cfg.resolve(args.epochs, "epochs", 30)?,
        shard_size: args.shard_size.or_else(|| {
            cfg.get("shard_size").and_then(|v| v.parse().ok())
        }),
    };

    let subword_vocab = cfg.resolve(args.subword_vocab, "subword_vocab", 200usize)?;
    let subword = train_subword_model(&corpus, subword_vocab)?;
    let mut observed = Vec::new();
    for pair in &corpus {
        observed.extend(subword_encode(&pair.source, &subword));
        observed.extend(subword_encode(&pair.target, &subword));
    }
    let labels: Vec<String> = binning
        .as_ref()
        .map(|b| b.labels().to_vec())
        .unwrap_or_default();
    let vocab = ModelVocab::build(observed.iter(), &labels);
    let mut model: Model32 = Transformer::new(model_cfg, subword, vocab, seed);

    let logs = train(
        &mut model,
        &corpus,
        &schedule,
        &dev,
        binning.as_ref(),
        seed,
    )?;
    if !args.quiet {
        for log in &logs {
            println!(
                "epoch {:>3}  loss {:>8.4}  dev_ppl {:>10.4}  lr {:.3e}",
                log.epoch, log.train_loss, log.dev_ppl, log.lr
            );
        }
    }
    save_checkpoint(&model, &args.out)?;
    println!("model -> {}", args.out.display());
    Ok(())
}

fn run_translate(args: TranslateArgs, cfg: &FileConfig, force_two_pass: bool) -> Result<()> {
    let model = load_model(&args.model)?;
    let srcs = read_lines(&args.input)?;
    let opts = DecodeOptions {
        beam: cfg.resolve(args.beam, "beam", 12usize)?,
        margin: cfg.resolve(args.margin, "margin", DEFAULT_MARGIN)?,
        forced_token: args
            .forced_bin
            .or_else(|| cfg.get("forced_bin").map(str::to_string)),
        l_forced: args.l_forced,
        rescore: cfg.resolve_flag(args.rescore, "rescore")?,
        two_pass: force_two_pass || cfg.resolve_flag(args.two_pass, "two_pass")?,
    };
    let jobs = cfg.resolve(args.jobs, "jobs", 1usize)?;

    if let Some(nbest_path) = &args.nbest {
        let lists: Result<Vec<_>> = srcs
            .iter()
            .map(|s| {
                Ok(beam_search(
                    &model,
                    s,
                    opts.beam,
                    opts.forced_token.as_deref(),
                    opts.l_forced,
                )?)
            })
            .collect();
        write_nbest(&lists?, nbest_path)?;
    }

    let hyps = translate_corpus(&model, &srcs, &opts, jobs)?;
    write_system_output(&hyps, &args.output)?;
    println!("{} sentences -> {}", srcs.len(), args.output.display());
    Ok(())
}

fn run_rescore(args: RescoreArgs, cfg: &FileConfig) -> Result<()> {
    let margin = cfg.resolve(args.margin, "margin", DEFAULT_MARGIN)?;
    let lists = read_nbest(&args.nbest)?;
    let srcs = read_lines(&args.source)?;
    if lists.len() != srcs.len() {
        bail!(
            "N-best file covers {} sentences, source has {}",
            lists.len(),
            srcs.len()
        );
    }
    let picks: Result<Vec<Hypothesis>> = lists
        .iter()
        .zip(&srcs)
        .map(|(nb, src)| Ok(rescore_nbest(nb, src, margin)?))
        .collect();
    write_system_output(&picks?, &args.output)?;
    Ok(())
}

fn run_rover(args: RoverArgs, cfg: &FileConfig) -> Result<()> {
    let margin = cfg.resolve(args.margin, "margin", DEFAULT_MARGIN)?;
    let srcs = read_lines(&args.source)?;
    let mut systems = Vec::new();
    let refs = args.reference.as_deref().map(read_lines).transpose()?;
    if !args.qualities.is_empty() && args.qualities.len() != args.hyps.len() {
        bail!(
            "{} qualities given for {} systems",
            args.qualities.len(),
            args.hyps.len()
        );
    }
    for (i, path) in args.hyps.iter().enumerate() {
        let lines = read_lines(path)?;
        let quality = if let Some(q) = args.qualities.get(i) {
            *q
        } else if let Some(refs) = &refs {
            corpus_bleu(&lines, refs)?
        } else {
            bail!("either --reference or --quality per system is required");
        };
        systems.push(SystemOutput {
            system_id: path.display().to_string(),
            hypotheses: lines
                .into_iter()
                .enumerate()
                .map(|(rank, text)| Hypothesis {
                    text,
                    score: 0.0,
                    rank: rank + 1,
                })
                .collect(),
            corpus_quality: Some(quality),
        });
    }
    let combined = length_rover(&systems, &srcs, margin)?;
    write_system_output(&combined.hypotheses, &args.output)?;
    let hyp_texts: Vec<String> = combined.hypotheses.iter().map(|h| h.text.clone()).collect();
    let lc = corpus_lc_opts(&srcs, &hyp_texts, margin, false)?;
    println!("rover LC: {lc:.2}");
    if let Some(refs) = &refs {
        println!("rover BLEU: {:.2}", corpus_bleu(&hyp_texts, refs)?);
    }
    Ok(())
}

fn run_augment(args: AugmentArgs, cfg: &FileConfig, seed: u64) -> Result<()> {
    match args.action {
        AugmentAction::Align {
            source,
            target,
            iterations,
            cost_threshold,
            lexicon_out,
            alignments_out,
        } => {
            let corpus = read_pairs(&source, &target, None)?;
            let table = align_em(&corpus, iterations)?;
            for (i, ll) in table.log_likelihoods.iter().enumerate() {
                println!("em iteration {}: log-likelihood {ll:.4}", i + 1);
            }
            let lexicon = extract_lexicon(&table, cost_threshold);
            lexicon.write(&lexicon_out)?;
            println!("{} lexicon entries -> {}", lexicon.len(), lexicon_out.display());
            if let Some(path) = alignments_out {
                let alignments: Vec<_> =
                    corpus.iter().map(|p| viterbi_align(p, &table)).collect();
                write_alignments(&alignments, &path)?;
                println!("alignments -> {}", path.display());
            }
        }
        AugmentAction::Synonyms {
            source,
            target,
            lexicon,
            alignments,
            out_source,
            out_target,
            variants,
            consider_prob,
            max_candidates,
            similarity,
            margin,
        } => {
            let corpus = read_pairs(&source, &target, None)?;
            let lexicon = Lexicon::read(&lexicon)?;
            let alignments = read_alignments(&alignments)?;
            if alignments.len() != corpus.len() {
                bail!(
                    "{} alignments for {} sentence pairs",
                    alignments.len(),
                    corpus.len()
                );
            }
            let policy = ReplacementPolicy {
                consider_prob,
                max_candidates,
                variants_per_sentence: variants,
                similarity_threshold: similarity,
                margin: cfg.resolve(margin, "margin", DEFAULT_MARGIN)?,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut out_src = Vec::new();
            let mut out_tgt = Vec::new();
            let mut generated = 0usize;
            for (pair, alignment) in corpus.iter().zip(&alignments) {
                let verdict =
                    isomt::length::check_compliance(&pair.source, &pair.target, policy.margin);
                if verdict.status != isomt::length::ComplianceStatus::Noncompliant {
                    continue;
                }
                let candidates = synonym_replace(pair, alignment, &lexicon, &policy, &mut rng)?;
                for modified in candidates {
                    generated += 1;
                    if modified != pair.source.to_lowercase()
                        && similarity_filter(&pair.source, &modified, policy.similarity_threshold)
                    {
                        out_src.push(modified);
                        out_tgt.push(pair.target.clone());
                    }
                }
            }
            write_lines(&out_src, &out_source)?;
            write_lines(&out_tgt, &out_target)?;
            println!("kept {} of {generated} generated variants", out_src.len());
        }
        AugmentAction::Concat {
            source,
            target,
            docs,
            out_source,
            out_target,
        } => {
            let corpus = read_pairs(&source, &target, Some(&docs))?;
            let joined = concat_adjacent(&corpus);
            isomt::corpus::write_parallel(&joined, &out_source, &out_target)?;
            println!("{} concatenated pairs", joined.len());
        }
        AugmentAction::Spoken {
            input,
            output,
            year_style,
        } => {
            let style = match year_style {
                YearStyleArg::Cardinal => YearStyle::Cardinal,
                YearStyleArg::Paired => YearStyle::PairedDigits,
            };
            let lines = read_lines(&input)?;
            let spoken: Vec<String> = lines.iter().map(|l| spoken_form(l, style)).collect();
            write_lines(&spoken, &output)?;
        }
        AugmentAction::BtFilter {
            source,
            target,
            out_source,
            out_target,
            margin,
        } => {
            let margin = cfg.resolve(margin, "margin", DEFAULT_MARGIN)?;
            let corpus = read_pairs(&source, &target, None)?;
            let kept = filter_synthetic(&corpus, margin);
            isomt::corpus::write_parallel(&kept, &out_source, &out_target)?;
            println!("kept {} of {} pairs", kept.len(), corpus.len());
        }
        AugmentAction::Phrases {
            source,
            target,
            alignments,
            max_len,
            out_source,
            out_target,
        } => {
            let corpus = read_pairs(&source, &target, None)?;
            let alignments = read_alignments(&alignments)?;
            if alignments.len() != corpus.len() {
                bail!(
                    "{} alignments for {} sentence pairs",
                    alignments.len(),
                    corpus.len()
                );
            }
            let mut out_src = Vec::new();
            let mut out_tgt = Vec::new();
            for (pair, alignment) in corpus.iter().zip(&alignments) {
                for (s, t) in extract_phrases(pair, alignment, max_len) {
                    out_src.push(s);
                    out_tgt.push(t);
                }
            }
            write_lines(&out_src, &out_source)?;
            write_lines(&out_tgt, &out_target)?;
            println!("{} phrase pairs", out_src.len());
        }
    }
    Ok(())
}

fn run_score(args: ScoreArgs, cfg: &FileConfig) -> Result<()> {
    let margin = cfg.resolve(args.margin, "margin", DEFAULT_MARGIN)?;
    let srcs = read_lines(&args.source)?;
    let hyps = read_lines(&args.hyp)?;
    let refs = read_lines(&args.reference)?;
    let bleu = corpus_bleu(&hyps, &refs)?;
    let lc = corpus_lc_opts(&srcs, &hyps, margin, args.skipped_compliant)?;
    println!("BLEU: {bleu:.2}");
    println!("LC: {lc:.2}");
    Ok(())
}

fn run_bootstrap(args: BootstrapArgs, cfg: &FileConfig, seed: u64) -> Result<()> {
    let samples = cfg.resolve(args.samples, "samples", 1000usize)?;
    let hyp_a = read_lines(&args.hyp_a)?;
    let hyp_b = read_lines(&args.hyp_b)?;
    let refs = read_lines(&args.reference)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let result = paired_bootstrap(&hyp_a, &hyp_b, &refs, samples, &mut rng)?;
    println!("p-value (B >= A): {:.4}", result.p_value);
    println!("BLEU(A) 95% CI: [{:.2}, {:.2}]", result.ci95.0, result.ci95.1);
    Ok(())
}

fn run_report(args: ReportArgs, cfg: &FileConfig) -> Result<()> {
    let margin = cfg.resolve(args.margin, "margin", DEFAULT_MARGIN)?;
    let srcs = read_lines(&args.source)?;
    let refs = read_lines(&args.reference)?;
    let mut reports = Vec::new();
    for spec in &args.systems {
        let (label, path) = spec
            .split_once('=')
            .with_context(|| format!("--system must be label=hypfile, got {spec:?}"))?;
        let hyps = read_lines(Path::new(path))?;
        let report = evaluate_system(&srcs, &hyps, &refs, margin)?;
        reports.push((label.to_string(), report));
    }
    let (table, data) = tradeoff_table(&reports);
    print!("{table}");
    if let Some(path) = &args.data_out {
        std::fs::write(path, data).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

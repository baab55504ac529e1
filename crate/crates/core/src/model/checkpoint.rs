//! Model checkpoints: a versioned text header with the configuration,
//! embedded subword model and vocabulary, followed by the raw parameters as
//! little-endian 32-bit floats in declaration order.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::scalar::Scalar;
use crate::subword::SubwordModel;

use super::pe::PeMode;
use super::vocab::{ModelVocab, VocabEntry};
use super::{LengthTokenSide, ModelConfig, Transformer};

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Parse(String),
}

fn pe_mode_str(mode: PeMode) -> &'static str {
    match mode {
        PeMode::Absolute => "absolute",
        PeMode::LdpeToken => "ldpe_token",
        PeMode::LdpeChar => "ldpe_char",
    }
}

fn pe_mode_parse(s: &str) -> Result<PeMode, CheckpointError> {
    match s {
        "absolute" => Ok(PeMode::Absolute),
        "ldpe_token" => Ok(PeMode::LdpeToken),
        "ldpe_char" => Ok(PeMode::LdpeChar),
        other => Err(CheckpointError::Parse(format!("unknown pe_mode {other:?}"))),
    }
}

fn side_str(side: LengthTokenSide) -> &'static str {
    match side {
        LengthTokenSide::None => "none",
        LengthTokenSide::Source => "source",
        LengthTokenSide::Target => "target",
    }
}

fn side_parse(s: &str) -> Result<LengthTokenSide, CheckpointError> {
    match s {
        "none" => Ok(LengthTokenSide::None),
        "source" => Ok(LengthTokenSide::Source),
        "target" => Ok(LengthTokenSide::Target),
        other => Err(CheckpointError::Parse(format!(
            "unknown length_token_side {other:?}"
        ))),
    }
}

pub fn save_checkpoint<F: Scalar>(
    model: &Transformer<F>,
    path: &Path,
) -> Result<(), CheckpointError> {
    let cfg = &model.cfg;
    let mut head = String::from("isomt-model v1\n");
    head.push_str(&format!("d_model={}\n", cfg.d_model));
    head.push_str(&format!("n_heads={}\n", cfg.n_heads));
    head.push_str(&format!("n_enc_layers={}\n", cfg.n_enc_layers));
    head.push_str(&format!("n_dec_layers={}\n", cfg.n_dec_layers));
    head.push_str(&format!("ffn_dim={}\n", cfg.ffn_dim));
    head.push_str(&format!("dropout={}\n", cfg.dropout));
    head.push_str(&format!("label_smoothing={}\n", cfg.label_smoothing));
    head.push_str(&format!("pe_mode={}\n", pe_mode_str(cfg.pe_mode)));
    head.push_str(&format!(
        "length_token_side={}\n",
        side_str(cfg.length_token_side)
    ));
    head.push_str(&format!("perturb={}\n", cfg.perturb));
    head.push_str(&format!("count_spaces={}\n", cfg.count_spaces));
    head.push_str("[subword]\n");
    head.push_str(&model.subword.to_text());
    head.push_str("[vocab]\n");
    for id in 0..model.vocab.len() {
        head.push_str(&ModelVocab::entry_to_text(model.vocab.entry(id)));
        head.push('\n');
    }

    let n: usize = model.params.num_scalars();
    head.push_str(&format!("[params n={n}]\n"));

    let mut bytes = head.into_bytes();
    bytes.reserve(n * 4);
    for m in model.params.matrices() {
        for v in m.data() {
            bytes.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint<F: Scalar>(path: &Path) -> Result<Transformer<F>, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let marker = b"[params n=";
    let marker_pos = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| CheckpointError::Parse("missing [params] section".into()))?;
    let head = std::str::from_utf8(&bytes[..marker_pos])
        .map_err(|_| CheckpointError::Parse("non-utf8 header".into()))?;
    let rest = &bytes[marker_pos..];
    let newline = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| CheckpointError::Parse("unterminated [params] line".into()))?;
    let params_line = std::str::from_utf8(&rest[..newline])
        .map_err(|_| CheckpointError::Parse("non-utf8 params line".into()))?;
    let n: usize = params_line
        .strip_prefix("[params n=")
        .and_then(|s| s.strip_suffix(']'))
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| CheckpointError::Parse(format!("bad params line {params_line:?}")))?;
    let blob = &rest[newline + 1..];
    if blob.len() != n * 4 {
        return Err(CheckpointError::Parse(format!(
            "parameter blob has {} bytes, expected {}",
            blob.len(),
            n * 4
        )));
    }

    let mut lines = head.lines();
    let header = lines
        .next()
        .ok_or_else(|| CheckpointError::Parse("empty header".into()))?;
    if header != "isomt-model v1" {
        return Err(CheckpointError::Parse(format!("bad magic {header:?}")));
    }

    let mut cfg = ModelConfig::default();
    let mut subword_lines: Vec<&str> = Vec::new();
    let mut vocab_entries: Vec<VocabEntry> = Vec::new();
    #[derive(PartialEq)]
    enum Section {
        Config,
        Subword,
        Vocab,
    }
    let mut section = Section::Config;
    for line in lines {
        match line {
            "[subword]" => {
                section = Section::Subword;
                continue;
            }
            "[vocab]" => {
                section = Section::Vocab;
                continue;
            }
            _ => {}
        }
        match section {
            Section::Config => {
                let (key, value) = line
                    .split_once('=')
                    .ok_or_else(|| CheckpointError::Parse(format!("bad config line {line:?}")))?;
                let bad =
                    || CheckpointError::Parse(format!("bad value for {key:?}: {value:?}"));
                match key {
                    "d_model" => cfg.d_model = value.parse().map_err(|_| bad())?,
                    "n_heads" => cfg.n_heads = value.parse().map_err(|_| bad())?,
                    "n_enc_layers" => cfg.n_enc_layers = value.parse().map_err(|_| bad())?,
                    "n_dec_layers" => cfg.n_dec_layers = value.parse().map_err(|_| bad())?,
                    "ffn_dim" => cfg.ffn_dim = value.parse().map_err(|_| bad())?,
                    "dropout" => cfg.dropout = value.parse().map_err(|_| bad())?,
                    "label_smoothing" => cfg.label_smoothing = value.parse().map_err(|_| bad())?,
                    "pe_mode" => cfg.pe_mode = pe_mode_parse(value)?,
                    "length_token_side" => cfg.length_token_side = side_parse(value)?,
                    "perturb" => cfg.perturb = value.parse().map_err(|_| bad())?,
                    "count_spaces" => cfg.count_spaces = value.parse().map_err(|_| bad())?,
                    other => {
                        return Err(CheckpointError::Parse(format!(
                            "unknown config key {other:?}"
                        )))
                    }
                }
            }
            Section::Subword => subword_lines.push(line),
            Section::Vocab => {
                vocab_entries.push(
                    ModelVocab::entry_from_text(line)
                        .map_err(|e| CheckpointError::Parse(e.to_string()))?,
                );
            }
        }
    }

    let subword = SubwordModel::from_text(&subword_lines.join("\n"))
        .map_err(|e| CheckpointError::Parse(e.to_string()))?;
    let vocab = ModelVocab::from_entries(vocab_entries);
    cfg.validate().map_err(CheckpointError::Parse)?;

    let mut model = Transformer::<F>::new(cfg, subword, vocab, 0);
    if model.params.num_scalars() != n {
        return Err(CheckpointError::Parse(format!(
            "checkpoint has {n} parameters, model shape needs {}",
            model.params.num_scalars()
        )));
    }
    let mut offset = 0;
    for m in model.params.matrices_mut() {
        for v in m.data_mut() {
            let raw = f32::from_le_bytes([
                blob[offset],
                blob[offset + 1],
                blob[offset + 2],
                blob[offset + 3],
            ]);
            *v = F::from_f64_lossy(raw as f64);
            offset += 4;
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SentencePair;
    use crate::subword::train_subword_model;
    use crate::{subword, Model32};

    #[test]
    fn checkpoint_round_trips() {
        let corpus = vec![SentencePair::new("ab cd".into(), "xy zw".into())];
        let sub = train_subword_model(&corpus, 12).unwrap();
        let mut observed = Vec::new();
        for pair in &corpus {
            observed.extend(subword::encode(&pair.source, &sub));
            observed.extend(subword::encode(&pair.target, &sub));
        }
        let vocab = ModelVocab::build(observed.iter(), &["S".into(), "M".into()]);
        let cfg = ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_enc_layers: 1,
            n_dec_layers: 1,
            ffn_dim: 16,
            pe_mode: PeMode::LdpeChar,
            length_token_side: LengthTokenSide::Target,
            perturb: true,
            ..ModelConfig::default()
        };
        let model = Model32::new(cfg, sub, vocab, 11);

        let dir = std::env::temp_dir().join(format!("isomt-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.bin");
        save_checkpoint(&model, &path).unwrap();
        let loaded: Model32 = load_checkpoint(&path).unwrap();

        assert_eq!(loaded.cfg.d_model, 8);
        assert_eq!(loaded.cfg.pe_mode, PeMode::LdpeChar);
        assert_eq!(loaded.cfg.length_token_side, LengthTokenSide::Target);
        assert!(loaded.cfg.perturb);
        assert_eq!(loaded.vocab.len(), model.vocab.len());
        let before = model.params.matrices();
        let after = loaded.params.matrices();
        for (a, b) in before.iter().zip(after) {
            assert_eq!(a.data(), b.data());
        }
        std::fs::remove_dir_all(&dir).ok();
    }
}

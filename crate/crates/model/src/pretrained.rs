//! Loading of locally stored BERT-style checkpoints.

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use eae_core::{Error, Result};

use crate::classifier::{me, read_json};
use crate::encoder::EncoderConfig;
use crate::tokenizer::{assemble_pair, EncodedPair, SpecialIds};

/// A `tokenizer.json` word-piece vocabulary.
pub struct WordPiece {
    inner: tokenizers::Tokenizer,
    special: SpecialIds,
}

fn tk(e: impl std::fmt::Display) -> Error {
    Error::Model(format!("tokenizer: {e}"))
}

impl WordPiece {
    pub fn from_file(path: &Path) -> Result<Self> {
        let inner = tokenizers::Tokenizer::from_file(path).map_err(|e| tk(format!("{}: {e}", path.display())))?;
        let id = |tok: &str| {
            inner
                .token_to_id(tok)
                .ok_or_else(|| Error::Config(format!("{} has no {tok} token", path.display())))
        };
        let special = SpecialIds {
            pad: id("[PAD]")?,
            cls: id("[CLS]")?,
            sep: id("[SEP]")?,
        };
        Ok(WordPiece { inner, special })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.inner.save(path, false).map_err(tk)
    }

    pub fn pad_id(&self) -> u32 {
        self.special.pad
    }

    fn ids(&self, text: &str) -> Result<Vec<u32>> {
        Ok(self.inner.encode(text, false).map_err(tk)?.get_ids().to_vec())
    }

    pub fn encode_pair(&self, premise: &str, hypothesis: &str, max_len: usize) -> Result<EncodedPair> {
        assemble_pair(&self.ids(premise)?, &self.ids(hypothesis)?, max_len, self.special)
    }
}

/// Reads `config.json` and `model.safetensors`, returning encoder tensors
/// under the names used by [`crate::encoder::Encoder`].
pub fn read_checkpoint(dir: &Path) -> Result<(EncoderConfig, Vec<(String, Tensor)>)> {
    let config: EncoderConfig = read_json(&dir.join("config.json"))?;
    config.validate()?;
    let weights = dir.join("model.safetensors");
    if !weights.exists() {
        return Err(Error::Config(format!("missing {}", weights.display())));
    }
    let raw = candle_core::safetensors::load(&weights, &Device::Cpu).map_err(me)?;
    let mut out = Vec::new();
    for (name, t) in raw {
        let name = name.strip_prefix("bert.").unwrap_or(&name);
        if !(name.starts_with("embeddings.") || name.starts_with("encoder.")) || name.ends_with("position_ids") {
            continue;
        }
        let name = name.replace("LayerNorm.gamma", "LayerNorm.weight").replace("LayerNorm.beta", "LayerNorm.bias");
        out.push((name, t.to_dtype(DType::F32).map_err(me)?));
    }
    if out.is_empty() {
        return Err(Error::Config(format!("{} holds no encoder weights", weights.display())));
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok((config, out))
}

//! Sentence-pair encoder with a two-logit head.

use std::fs;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Module, Tensor, Var, D};
use candle_nn::{ops, Linear, VarMap};
use eae_core::nli::{EntailmentModel, DEFAULT_THRESHOLD};
use eae_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::encoder::{Encoder, EncoderConfig, ParamStore};
use crate::tokenizer::{EncodedPair, HashingTokenizer};

/// Identifier recorded for checkpoints built from the default Arabic encoder.
pub const DEFAULT_ENCODER_ID: &str = "UBC-NLP/ARBERTv2";

pub const MODEL_FILE: &str = "model.safetensors";
pub const CONFIG_FILE: &str = "config.json";

pub(crate) fn me(e: candle_core::Error) -> Error {
    Error::Model(e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TokenizerSpec {
    Hashing { vocab_size: u32 },
    /// A `tokenizer.json` stored next to the weights.
    WordPiece { file: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub identifier: String,
    pub encoder: EncoderConfig,
    pub tokenizer: TokenizerSpec,
    pub max_len: usize,
    pub threshold: f64,
}

impl ModelConfig {
    /// Randomly initialized two-layer encoder of width 64 over hashed tokens.
    pub fn tiny() -> Self {
        let vocab = 4096;
        let max_len = 96;
        ModelConfig {
            identifier: "tiny-random".into(),
            encoder: EncoderConfig::tiny(vocab, max_len),
            tokenizer: TokenizerSpec::Hashing { vocab_size: vocab as u32 },
            max_len,
            threshold: DEFAULT_THRESHOLD,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.max_len > self.encoder.max_position_embeddings || self.max_len < 4 {
            return Err(Error::Config(format!(
                "max_len {} outside [4, {}]",
                self.max_len, self.encoder.max_position_embeddings
            )));
        }
        if let TokenizerSpec::Hashing { vocab_size } = self.tokenizer {
            if vocab_size as usize > self.encoder.vocab_size {
                return Err(Error::Config("hashing range exceeds the embedding table".into()));
            }
        }
        Ok(())
    }
}

enum PairTokenizer {
    Hashing(HashingTokenizer),
    #[cfg(feature = "pretrained")]
    WordPiece(crate::pretrained::WordPiece),
}

impl PairTokenizer {
    fn encode(&self, premise: &str, hypothesis: &str, max_len: usize) -> Result<EncodedPair> {
        match self {
            PairTokenizer::Hashing(t) => t.encode_pair(premise, hypothesis, max_len),
            #[cfg(feature = "pretrained")]
            PairTokenizer::WordPiece(t) => t.encode_pair(premise, hypothesis, max_len),
        }
    }
}

/// Binary entailment classifier: `softmax(head(encoder([CLS] p [SEP] h [SEP])))`.
pub struct NliClassifier {
    config: ModelConfig,
    varmap: VarMap,
    encoder: Encoder,
    head: Linear,
    tokenizer: PairTokenizer,
    device: Device,
}

impl NliClassifier {
    /// Fresh model; parameters drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let tokenizer = match &config.tokenizer {
            TokenizerSpec::Hashing { vocab_size } => PairTokenizer::Hashing(HashingTokenizer::new(*vocab_size)?),
            TokenizerSpec::WordPiece { file } => {
                return Err(Error::Config(format!(
                    "word-piece tokenizer `{file}` requires loading from a directory"
                )))
            }
        };
        Self::build(config, VarMap::new(), tokenizer, seed)
    }

    fn build(config: ModelConfig, varmap: VarMap, tokenizer: PairTokenizer, seed: u64) -> Result<Self> {
        config.validate()?;
        let device = Device::Cpu;
        let mut params = ParamStore::new(&varmap, seed, &device);
        let encoder = Encoder::new(&config.encoder, &mut params).map_err(me)?;
        let head = params.linear("classifier", config.encoder.hidden_size, 2).map_err(me)?;
        Ok(NliClassifier {
            config,
            varmap,
            encoder,
            head,
            tokenizer,
            device,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn threshold(&self) -> f64 {
        self.config.threshold
    }

    pub fn set_threshold(&mut self, threshold: f64) {
        self.config.threshold = threshold;
    }

    pub fn vars(&self) -> Vec<Var> {
        let data = self.varmap.data().lock().expect("var map poisoned");
        let mut named: Vec<(&String, &Var)> = data.iter().collect();
        named.sort_by(|a, b| a.0.cmp(b.0));
        named.into_iter().map(|(_, v)| v.clone()).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.vars().iter().map(|v| v.elem_count()).sum()
    }

    /// Overwrites the head; `weight` is row-major `2 x d`.
    pub fn set_head(&self, weight: &[f32], bias: &[f32]) -> Result<()> {
        let d = self.config.encoder.hidden_size;
        let data = self.varmap.data().lock().expect("var map poisoned");
        let w = Tensor::from_slice(weight, (2, d), &self.device).map_err(me)?;
        let b = Tensor::from_slice(bias, 2, &self.device).map_err(me)?;
        data["classifier.weight"].set(&w).map_err(me)?;
        data["classifier.bias"].set(&b).map_err(me)?;
        Ok(())
    }

    fn batch_tensors(&self, pairs: &[(&str, &str)]) -> Result<(Tensor, Tensor, Tensor)> {
        let encoded = pairs
            .iter()
            .map(|(p, h)| self.tokenizer.encode(p, h, self.config.max_len))
            .collect::<Result<Vec<_>>>()?;
        let len = encoded.iter().map(|e| e.ids.len()).max().unwrap_or(1);
        let n = encoded.len();
        let (mut ids, mut types, mut mask) = (vec![0u32; n * len], vec![0u32; n * len], vec![0u32; n * len]);
        for (row, e) in encoded.iter().enumerate() {
            let off = row * len;
            ids[off..off + e.ids.len()].copy_from_slice(&e.ids);
            types[off..off + e.ids.len()].copy_from_slice(&e.type_ids);
            mask[off..off + e.ids.len()].iter_mut().for_each(|m| *m = 1);
        }
        let t = |v: Vec<u32>| Tensor::from_vec(v, (n, len), &self.device).map_err(me);
        Ok((t(ids)?, t(types)?, t(mask)?))
    }

    /// Pooled pair representations, `(batch, d)`.
    pub fn encode(&self, pairs: &[(&str, &str)]) -> Result<Tensor> {
        if pairs.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let (ids, types, mask) = self.batch_tensors(pairs)?;
        self.encoder.pooled(&ids, &types, &mask).map_err(me)
    }

    pub fn encode_pair(&self, premise: &str, hypothesis: &str) -> Result<Vec<f32>> {
        self.encode(&[(premise, hypothesis)])?
            .squeeze(0)
            .and_then(|t| t.to_vec1::<f32>())
            .map_err(me)
    }

    /// Class logits `(batch, 2)`, columns `[negative, positive]`.
    pub fn logits(&self, pairs: &[(&str, &str)]) -> Result<Tensor> {
        self.head.forward(&self.encode(pairs)?).map_err(me)
    }

    /// Positive-class probabilities.
    pub fn probabilities(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>> {
        let logits = self.logits(pairs)?;
        ops::softmax(&logits, D::Minus1)
            .and_then(|p| p.narrow(1, 1, 1)?.squeeze(1)?.to_dtype(DType::F64)?.to_vec1::<f64>())
            .map_err(me)
    }

    /// Writes weights and configuration into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        self.varmap.save(dir.join(MODEL_FILE)).map_err(me)?;
        #[cfg(feature = "pretrained")]
        if let (PairTokenizer::WordPiece(t), TokenizerSpec::WordPiece { file }) = (&self.tokenizer, &self.config.tokenizer) {
            t.save(&dir.join(file))?;
        }
        write_json(&dir.join(CONFIG_FILE), &self.config)
    }

    /// Restores a checkpoint written by [`NliClassifier::save`].
    pub fn load(dir: &Path) -> Result<Self> {
        let config: ModelConfig = read_json(&dir.join(CONFIG_FILE))?;
        let tokenizer = match &config.tokenizer {
            TokenizerSpec::Hashing { vocab_size } => PairTokenizer::Hashing(HashingTokenizer::new(*vocab_size)?),
            #[cfg(feature = "pretrained")]
            TokenizerSpec::WordPiece { file } => PairTokenizer::WordPiece(crate::pretrained::WordPiece::from_file(&dir.join(file))?),
            #[cfg(not(feature = "pretrained"))]
            TokenizerSpec::WordPiece { .. } => {
                return Err(Error::Config("checkpoint needs the `pretrained` feature".into()))
            }
        };
        let mut model = Self::build(config, VarMap::new(), tokenizer, 0)?;
        model.varmap.load(dir.join(MODEL_FILE)).map_err(me)?;
        Ok(model)
    }

    /// Builds a classifier over a locally stored BERT-style checkpoint
    /// (`config.json`, `tokenizer.json`, `model.safetensors`). The head is
    /// freshly initialized from `seed`.
    #[cfg(feature = "pretrained")]
    pub fn from_pretrained(dir: &Path, identifier: &str, max_len: usize, seed: u64) -> Result<Self> {
        let (encoder, tensors) = crate::pretrained::read_checkpoint(dir)?;
        let tokenizer = crate::pretrained::WordPiece::from_file(&dir.join("tokenizer.json"))?;
        let varmap = VarMap::new();
        {
            let mut data = varmap.data().lock().expect("var map poisoned");
            for (name, t) in tensors {
                data.insert(name, Var::from_tensor(&t).map_err(me)?);
            }
        }
        let config = ModelConfig {
            identifier: identifier.to_string(),
            max_len: max_len.min(encoder.max_position_embeddings),
            encoder,
            tokenizer: TokenizerSpec::WordPiece {
                file: "tokenizer.json".into(),
            },
            threshold: DEFAULT_THRESHOLD,
        };
        Self::build(config, varmap, PairTokenizer::WordPiece(tokenizer), seed)
    }
}

impl EntailmentModel for NliClassifier {
    fn predict_batch(&self, pairs: &[(&str, &str)]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(pairs.len());
        for chunk in pairs.chunks(64) {
            out.extend(self.probabilities(chunk)?);
        }
        Ok(out)
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Protocol(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: PathBuf::from(path),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        locator: path.display().to_string(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_head_gives_one_half() {
        let m = NliClassifier::new(ModelConfig::tiny(), 1).unwrap();
        m.set_head(&[0.0; 128], &[0.0, 0.0]).unwrap();
        let p = m.predict("قصف في غزة", "غزة مكان حدوث قصف").unwrap();
        assert_eq!(p, 0.5);
    }

    #[test]
    fn encoding_contract() {
        let m = NliClassifier::new(ModelConfig::tiny(), 2).unwrap();
        let a = m.encode_pair("a b c", "d e").unwrap();
        assert_eq!(a.len(), 64);
        assert_eq!(a, m.encode_pair("a b c", "d e").unwrap());
        assert_ne!(a, m.encode_pair("d e", "a b c").unwrap());
        assert!(m.encode_pair("", "d").is_err());
        for p in m.predict_batch(&[("x", "y"), ("a long premise here", "z")]).unwrap() {
            assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn padding_does_not_change_scores() {
        let m = NliClassifier::new(ModelConfig::tiny(), 3).unwrap();
        let alone = m.predict("x y", "z").unwrap();
        let batched = m.predict_batch(&[("x y", "z"), ("a b c d e f g h", "i j k")]).unwrap();
        assert!((alone - batched[0]).abs() < 1e-5);
    }

    #[test]
    fn same_seed_same_weights() {
        let a = NliClassifier::new(ModelConfig::tiny(), 9).unwrap();
        let b = NliClassifier::new(ModelConfig::tiny(), 9).unwrap();
        let c = NliClassifier::new(ModelConfig::tiny(), 10).unwrap();
        let pa = a.predict("p q", "r").unwrap();
        assert_eq!(pa, b.predict("p q", "r").unwrap());
        assert_ne!(pa, c.predict("p q", "r").unwrap());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = NliClassifier::new(ModelConfig::tiny(), 4).unwrap();
        m.save(dir.path()).unwrap();
        let back = NliClassifier::load(dir.path()).unwrap();
        assert_eq!(back.config(), m.config());
        assert_eq!(m.predict("p q", "r").unwrap(), back.predict("p q", "r").unwrap());
    }
}

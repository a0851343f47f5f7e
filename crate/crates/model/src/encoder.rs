//! A post-layer-norm transformer encoder with BERT parameter names, so the
//! same code runs a tiny random model or a downloaded checkpoint.

use candle_core::{DType, Device, Module, Result, Tensor, Var, D};
use candle_nn::{ops, Embedding, Linear, VarMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Field names follow the usual BERT `config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden_size: usize,
    pub num_hidden_layers: usize,
    pub num_attention_heads: usize,
    pub intermediate_size: usize,
    pub max_position_embeddings: usize,
    #[serde(default = "two")]
    pub type_vocab_size: usize,
    #[serde(default = "default_eps")]
    pub layer_norm_eps: f64,
}

fn two() -> usize {
    2
}

fn default_eps() -> f64 {
    1e-12
}

impl EncoderConfig {
    /// Two layers of width 64.
    pub fn tiny(vocab_size: usize, max_len: usize) -> Self {
        EncoderConfig {
            vocab_size,
            hidden_size: 64,
            num_hidden_layers: 2,
            num_attention_heads: 4,
            intermediate_size: 128,
            max_position_embeddings: max_len,
            type_vocab_size: 2,
            layer_norm_eps: 1e-12,
        }
    }

    pub fn validate(&self) -> eae_core::Result<()> {
        if self.hidden_size == 0 || self.num_attention_heads == 0 || !self.hidden_size.is_multiple_of(self.num_attention_heads) {
            return Err(eae_core::Error::Config(format!(
                "hidden size {} not divisible into {} heads",
                self.hidden_size, self.num_attention_heads
            )));
        }
        Ok(())
    }
}

/// Creates or fetches named parameters in a [`VarMap`]. New parameters are
/// drawn from a seeded generator in creation order.
pub struct ParamStore<'a> {
    varmap: &'a VarMap,
    rng: ChaCha8Rng,
    device: Device,
    std: f64,
}

impl<'a> ParamStore<'a> {
    pub fn new(varmap: &'a VarMap, seed: u64, device: &Device) -> Self {
        ParamStore {
            varmap,
            rng: ChaCha8Rng::seed_from_u64(seed),
            device: device.clone(),
            std: 0.02,
        }
    }

    fn get_or(&mut self, name: &str, shape: &[usize], fill: impl FnOnce(&mut ChaCha8Rng, usize) -> Vec<f32>) -> Result<Tensor> {
        let mut data = self.varmap.data().lock().expect("var map poisoned");
        if let Some(v) = data.get(name) {
            if v.dims() != shape {
                candle_core::bail!("parameter {name} has shape {:?}, expected {shape:?}", v.dims());
            }
            return Ok(v.as_tensor().clone());
        }
        let n = shape.iter().product();
        let values = fill(&mut self.rng, n);
        let var = Var::from_tensor(&Tensor::from_vec(values, shape, &self.device)?)?;
        let t = var.as_tensor().clone();
        data.insert(name.to_string(), var);
        Ok(t)
    }

    /// Uniform with the configured standard deviation.
    pub fn random(&mut self, name: &str, shape: &[usize]) -> Result<Tensor> {
        let bound = (self.std * 3f64.sqrt()) as f32;
        self.get_or(name, shape, |rng, n| (0..n).map(|_| rng.random_range(-bound..=bound)).collect())
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f32) -> Result<Tensor> {
        self.get_or(name, shape, |_, n| vec![value; n])
    }

    pub fn linear(&mut self, prefix: &str, input: usize, output: usize) -> Result<Linear> {
        let w = self.random(&format!("{prefix}.weight"), &[output, input])?;
        let b = self.constant(&format!("{prefix}.bias"), &[output], 0.0)?;
        Ok(Linear::new(w, Some(b)))
    }

    pub fn layer_norm(&mut self, prefix: &str, size: usize, eps: f64) -> Result<LayerNorm> {
        Ok(LayerNorm {
            weight: self.constant(&format!("{prefix}.weight"), &[size], 1.0)?,
            bias: self.constant(&format!("{prefix}.bias"), &[size], 0.0)?,
            eps,
        })
    }

    pub fn embedding(&mut self, name: &str, rows: usize, dim: usize) -> Result<Embedding> {
        Ok(Embedding::new(self.random(name, &[rows, dim])?, dim))
    }
}

/// Layer norm built from differentiable primitives.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    weight: Tensor,
    bias: Tensor,
    eps: f64,
}

impl Module for LayerNorm {
    fn forward(&self, xs: &Tensor) -> Result<Tensor> {
        ops::layer_norm_slow(xs, &self.weight, &self.bias, self.eps as f32)
    }
}

#[derive(Debug, Clone)]
struct Layer {
    query: Linear,
    key: Linear,
    value: Linear,
    attn_out: Linear,
    attn_norm: LayerNorm,
    intermediate: Linear,
    output: Linear,
    out_norm: LayerNorm,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    config: EncoderConfig,
    words: Embedding,
    positions: Embedding,
    types: Embedding,
    embed_norm: LayerNorm,
    layers: Vec<Layer>,
}

impl Encoder {
    pub fn new(config: &EncoderConfig, params: &mut ParamStore) -> Result<Self> {
        let d = config.hidden_size;
        let eps = config.layer_norm_eps;
        let words = params.embedding("embeddings.word_embeddings.weight", config.vocab_size, d)?;
        let positions = params.embedding("embeddings.position_embeddings.weight", config.max_position_embeddings, d)?;
        let types = params.embedding("embeddings.token_type_embeddings.weight", config.type_vocab_size, d)?;
        let embed_norm = params.layer_norm("embeddings.LayerNorm", d, eps)?;
        let mut layers = Vec::with_capacity(config.num_hidden_layers);
        for i in 0..config.num_hidden_layers {
            let p = format!("encoder.layer.{i}");
            layers.push(Layer {
                query: params.linear(&format!("{p}.attention.self.query"), d, d)?,
                key: params.linear(&format!("{p}.attention.self.key"), d, d)?,
                value: params.linear(&format!("{p}.attention.self.value"), d, d)?,
                attn_out: params.linear(&format!("{p}.attention.output.dense"), d, d)?,
                attn_norm: params.layer_norm(&format!("{p}.attention.output.LayerNorm"), d, eps)?,
                intermediate: params.linear(&format!("{p}.intermediate.dense"), d, config.intermediate_size)?,
                output: params.linear(&format!("{p}.output.dense"), config.intermediate_size, d)?,
                out_norm: params.layer_norm(&format!("{p}.output.LayerNorm"), d, eps)?,
            });
        }
        Ok(Encoder {
            config: config.clone(),
            words,
            positions,
            types,
            embed_norm,
            layers,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// Hidden states `(batch, len, d)` for padded `ids` and `type_ids`
    /// `(batch, len)`; `mask` is 1 for real tokens and 0 for padding.
    pub fn forward(&self, ids: &Tensor, type_ids: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let (b, len) = ids.dims2()?;
        let d = self.config.hidden_size;
        let h = self.config.num_attention_heads;
        let dh = d / h;
        let pos_ids = Tensor::arange(0u32, len as u32, ids.device())?;
        let pos = self.positions.forward(&pos_ids)?.unsqueeze(0)?;
        let x = self
            .words
            .forward(ids)?
            .broadcast_add(&pos)?
            .add(&self.types.forward(type_ids)?)?;
        let mut x = self.embed_norm.forward(&x)?;

        // 0 where attended, a large negative value on padding keys.
        let bias = ((mask.to_dtype(DType::F32)? - 1.0)? * 1e9)?.reshape((b, 1, 1, len))?;
        let scale = 1.0 / (dh as f64).sqrt();
        let heads = |t: Tensor| -> Result<Tensor> { t.reshape((b, len, h, dh))?.transpose(1, 2)?.contiguous() };
        for layer in &self.layers {
            let q = heads(layer.query.forward(&x)?)?;
            let k = heads(layer.key.forward(&x)?)?;
            let v = heads(layer.value.forward(&x)?)?;
            let scores = (q.matmul(&k.t()?.contiguous()?)? * scale)?.broadcast_add(&bias)?;
            let attn = ops::softmax(&scores, D::Minus1)?;
            let ctx = attn.matmul(&v)?.transpose(1, 2)?.contiguous()?.reshape((b, len, d))?;
            x = layer.attn_norm.forward(&(layer.attn_out.forward(&ctx)? + &x)?)?;
            let f = layer.output.forward(&layer.intermediate.forward(&x)?.gelu_erf()?)?;
            x = layer.out_norm.forward(&(f + &x)?)?;
        }
        Ok(x)
    }

    /// Representation of the leading classification token, `(batch, d)`.
    pub fn pooled(&self, ids: &Tensor, type_ids: &Tensor, mask: &Tensor) -> Result<Tensor> {
        self.forward(ids, type_ids, mask)?.narrow(1, 0, 1)?.squeeze(1)
    }
}

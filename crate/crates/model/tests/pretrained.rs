#![cfg(feature = "pretrained")]

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use candle_nn::VarMap;
use eae_core::EntailmentModel;
use eae_model::encoder::{Encoder, EncoderConfig, ParamStore};
use eae_model::pretrained::{read_checkpoint, WordPiece};
use eae_model::NliClassifier;

const WORDS: &[&str] = &["[PAD]", "[UNK]", "[CLS]", "[SEP]", "قصف", "في", "غزة", "مكان", "حدوث", "##ة"];

/// Writes a BERT-style checkpoint the way common exporters lay it out.
fn fake_checkpoint(dir: &Path) -> EncoderConfig {
    let mut cfg = EncoderConfig::tiny(WORDS.len(), 32);
    cfg.hidden_size = 16;
    cfg.intermediate_size = 32;
    cfg.num_hidden_layers = 1;
    cfg.num_attention_heads = 2;
    std::fs::write(dir.join("config.json"), serde_json::to_string(&cfg).unwrap()).unwrap();

    let vm = VarMap::new();
    Encoder::new(&cfg, &mut ParamStore::new(&vm, 3, &Device::Cpu)).unwrap();
    let mut tensors: HashMap<String, Tensor> = HashMap::new();
    for (name, var) in vm.data().lock().unwrap().iter() {
        let name = name.replace("embeddings.LayerNorm.weight", "embeddings.LayerNorm.gamma");
        tensors.insert(format!("bert.{name}"), var.as_tensor().to_dtype(DType::F16).unwrap());
    }
    tensors.insert("bert.embeddings.position_ids".into(), Tensor::arange(0i64, 32, &Device::Cpu).unwrap());
    tensors.insert("cls.predictions.bias".into(), Tensor::zeros(WORDS.len(), DType::F32, &Device::Cpu).unwrap());
    candle_core::safetensors::save(&tensors, dir.join("model.safetensors")).unwrap();

    let vocab: serde_json::Map<String, serde_json::Value> =
        WORDS.iter().enumerate().map(|(i, w)| (w.to_string(), i.into())).collect();
    let tokenizer = serde_json::json!({
        "version": "1.0",
        "truncation": null,
        "padding": null,
        "added_tokens": [],
        "normalizer": null,
        "pre_tokenizer": {"type": "Whitespace"},
        "post_processor": null,
        "decoder": null,
        "model": {"type": "WordPiece", "unk_token": "[UNK]", "continuing_subword_prefix": "##",
                  "max_input_chars_per_word": 100, "vocab": vocab}
    });
    std::fs::write(dir.join("tokenizer.json"), tokenizer.to_string()).unwrap();
    cfg
}

#[test]
fn checkpoint_names_are_mapped_and_extras_dropped() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fake_checkpoint(dir.path());
    let (read_cfg, tensors) = read_checkpoint(dir.path()).unwrap();
    assert_eq!(read_cfg, cfg);
    let names: Vec<&str> = tensors.iter().map(|(n, _)| n.as_str()).collect();
    assert!(names.contains(&"embeddings.LayerNorm.weight"));
    assert!(names.iter().all(|n| n.starts_with("embeddings.") || n.starts_with("encoder.")));
    assert!(!names.iter().any(|n| n.ends_with("position_ids")));
    assert!(tensors.iter().all(|(_, t)| t.dtype() == DType::F32));
}

#[test]
fn word_piece_pairs_use_the_vocabulary_specials() {
    let dir = tempfile::tempdir().unwrap();
    fake_checkpoint(dir.path());
    let wp = WordPiece::from_file(&dir.path().join("tokenizer.json")).unwrap();
    let e = wp.encode_pair("قصف في غزة", "غزة مكان حدوث قصف", 16).unwrap();
    assert_eq!(e.ids, [2, 4, 5, 6, 3, 6, 7, 8, 4, 3]);
    assert_eq!(e.type_ids, [0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
    assert_eq!(wp.encode_pair("مجهول", "غزة", 16).unwrap().ids[1], 1);
}

#[test]
fn pretrained_classifier_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fake_checkpoint(dir.path());
    let model = NliClassifier::from_pretrained(dir.path(), "fake-bert", 24, 1).unwrap();
    let d = cfg.hidden_size;
    let per_layer = 4 * (d * d + d) + 2 * 2 * d + (d * cfg.intermediate_size + cfg.intermediate_size) + (cfg.intermediate_size * d + d);
    let embeddings = (WORDS.len() + 32 + 2) * d + 2 * d;
    assert_eq!(model.parameter_count(), embeddings + per_layer + 2 * d + 2);

    let pairs = [("قصف في غزة", "غزة مكان حدوث قصف")];
    let before = model.predict_batch(&pairs).unwrap();
    let saved = tempfile::tempdir().unwrap();
    model.save(saved.path()).unwrap();
    let restored = NliClassifier::load(saved.path()).unwrap();
    assert_eq!(restored.predict_batch(&pairs).unwrap(), before);
    assert_eq!(restored.config().identifier, "fake-bert");
}

//! Pair tokenization: `[CLS] premise [SEP] hypothesis [SEP]`.

use eae_core::{Error, Result};
use serde::{Deserialize, Serialize};

pub const PAD_ID: u32 = 0;
pub const CLS_ID: u32 = 1;
pub const SEP_ID: u32 = 2;
const RESERVED: u32 = 3;

/// Token ids and segment ids of one encoded pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedPair {
    pub ids: Vec<u32>,
    pub type_ids: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecialIds {
    pub pad: u32,
    pub cls: u32,
    pub sep: u32,
}

/// Joins two token sequences with special tokens, cutting the premise tail
/// when the pair does not fit in `max_len`.
pub fn assemble_pair(premise: &[u32], hypothesis: &[u32], max_len: usize, special: SpecialIds) -> Result<EncodedPair> {
    if premise.is_empty() || hypothesis.is_empty() {
        return Err(Error::InvalidInput("premise and hypothesis must be non-empty".into()));
    }
    let budget = max_len.saturating_sub(3);
    if hypothesis.len() >= budget {
        return Err(Error::InvalidInput(format!(
            "hypothesis of {} tokens leaves no room for the premise within {max_len}",
            hypothesis.len()
        )));
    }
    let keep = premise.len().min(budget - hypothesis.len());
    let mut ids = Vec::with_capacity(keep + hypothesis.len() + 3);
    ids.push(special.cls);
    ids.extend_from_slice(&premise[..keep]);
    ids.push(special.sep);
    let first = ids.len();
    ids.extend_from_slice(hypothesis);
    ids.push(special.sep);
    let mut type_ids = vec![0; first];
    type_ids.resize(ids.len(), 1);
    Ok(EncodedPair { ids, type_ids })
}

/// Splits on whitespace and isolates punctuation.
pub fn pre_tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut cur = String::new();
        for c in word.chars() {
            if c.is_alphanumeric() || c == '\u{640}' || is_mark(c) {
                cur.extend(c.to_lowercase());
            } else {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(c.to_string());
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

// Arabic diacritics are combining marks and belong to their word.
fn is_mark(c: char) -> bool {
    matches!(c, '\u{610}'..='\u{61A}' | '\u{64B}'..='\u{65F}' | '\u{670}')
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Vocabulary-free tokenizer: each pre-token hashes into a fixed id range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashingTokenizer {
    pub vocab_size: u32,
}

impl HashingTokenizer {
    pub fn new(vocab_size: u32) -> Result<Self> {
        if vocab_size <= RESERVED {
            return Err(Error::Config(format!("vocabulary of {vocab_size} is too small")));
        }
        Ok(HashingTokenizer { vocab_size })
    }

    pub fn token_id(&self, token: &str) -> u32 {
        RESERVED + (fnv1a(token.as_bytes()) % u64::from(self.vocab_size - RESERVED)) as u32
    }

    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        pre_tokenize(text).iter().map(|t| self.token_id(t)).collect()
    }

    pub fn encode_pair(&self, premise: &str, hypothesis: &str, max_len: usize) -> Result<EncodedPair> {
        assemble_pair(
            &self.tokenize(premise),
            &self.tokenize(hypothesis),
            max_len,
            SpecialIds {
                pad: PAD_ID,
                cls: CLS_ID,
                sep: SEP_ID,
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_segments() {
        let t = HashingTokenizer::new(100).unwrap();
        let e = t.encode_pair("a b c", "d", 16).unwrap();
        assert_eq!(e.ids.len(), 7);
        assert_eq!(e.ids[0], CLS_ID);
        assert_eq!(e.ids[4], SEP_ID);
        assert_eq!(e.type_ids, [0, 0, 0, 0, 0, 1, 1]);
        assert!(e.ids[1..4].iter().all(|&i| (3..100).contains(&i)));
    }

    #[test]
    fn premise_tail_is_truncated() {
        let t = HashingTokenizer::new(100).unwrap();
        let e = t.encode_pair("w1 w2 w3 w4 w5 w6", "h1 h2", 8).unwrap();
        assert_eq!(e.ids.len(), 8);
        assert_eq!(e.ids[1..4], t.tokenize("w1 w2 w3")[..]);
        assert_eq!(e.ids[5..7], t.tokenize("h1 h2")[..]);
        assert!(t.encode_pair("w1", "h1 h2 h3 h4 h5", 8).is_err());
        assert!(t.encode_pair("", "h", 8).is_err());
        assert!(t.encode_pair("p", "  ", 8).is_err());
    }

    #[test]
    fn punctuation_and_marks() {
        assert_eq!(pre_tokenize("غزةَ، اليوم."), ["غزةَ", "،", "اليوم", "."]);
    }
}

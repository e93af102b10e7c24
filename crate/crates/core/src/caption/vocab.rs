use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::CaptionError;
use crate::features::CaptionRecord;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

const SPECIALS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Lowercases, drops ASCII punctuation and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect::<String>()
        .to_lowercase()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// Token ↔ id bijection with the four specials at ids 0..4.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    min_freq: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    min_freq: usize,
    tokens: Vec<String>,
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        Self {
            min_freq: v.min_freq,
            tokens: v.tokens,
        }
    }
}

impl TryFrom<VocabularyRepr> for Vocabulary {
    type Error = CaptionError;

    fn try_from(r: VocabularyRepr) -> Result<Self, Self::Error> {
        Vocabulary::from_tokens(r.tokens, r.min_freq)
    }
}

impl Vocabulary {
    /// Rebuilds from an id-ordered token list whose first four entries are the specials.
    pub fn from_tokens(tokens: Vec<String>, min_freq: usize) -> Result<Self, CaptionError> {
        if tokens.len() < SPECIALS.len() || tokens.iter().zip(SPECIALS).any(|(t, s)| t != s) {
            return Err(CaptionError::BadVocabulary("special tokens missing or out of place".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(CaptionError::BadVocabulary(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, index, min_freq })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Token ids of `text`, without BOS or EOS.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// Joins the word tokens up to the first EOS, skipping PAD and BOS.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .filter(|&&i| i != PAD && i != BOS)
            .map(|&i| self.token(i).unwrap_or(SPECIALS[UNK]))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Ids are assigned by descending corpus frequency, ties lexicographically.
/// Tokens seen fewer than `min_freq` times are left out and encode as UNK.
pub fn build_vocab(records: &[CaptionRecord], min_freq: usize) -> Result<Vocabulary, CaptionError> {
    if min_freq == 0 {
        return Err(CaptionError::BadVocabulary("min_freq must be at least 1".into()));
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for r in records {
        for c in &r.captions {
            for t in tokenize(c) {
                *counts.entry(t).or_default() += 1;
            }
        }
    }
    if counts.is_empty() {
        return Err(CaptionError::EmptyCorpus);
    }
    let mut ranked: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(t, n)| *n >= min_freq && !SPECIALS.contains(&t.as_str()))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let tokens = SPECIALS
        .iter()
        .map(|s| s.to_string())
        .chain(ranked.into_iter().map(|(t, _)| t))
        .collect();
    Vocabulary::from_tokens(tokens, min_freq)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus() -> Vec<CaptionRecord> {
        vec![
            CaptionRecord {
                video_id: "v0".into(),
                captions: vec!["a man runs".into()],
            },
            CaptionRecord {
                video_id: "v1".into(),
                captions: vec!["a man walks".into()],
            },
        ]
    }

    #[test]
    fn counting() {
        let v = build_vocab(&corpus(), 1).unwrap();
        assert_eq!(v.len(), 8);
        for t in ["a", "man", "runs", "walks"] {
            assert_ne!(v.id(t), UNK);
        }
        assert_eq!(&v.tokens()[4..], &["a", "man", "runs", "walks"]);
    }

    #[test]
    fn min_freq_excludes_rare_tokens() {
        let v = build_vocab(&corpus(), 2).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v.encode("runs"), vec![UNK]);
    }

    #[test]
    fn deterministic_ids() {
        assert_eq!(build_vocab(&corpus(), 1).unwrap(), build_vocab(&corpus(), 1).unwrap());
    }

    #[test]
    fn tokenization() {
        assert_eq!(tokenize("A Man, runs!  Fast."), vec!["a", "man", "runs", "fast"]);
    }

    #[test]
    fn empty_corpus() {
        assert_eq!(build_vocab(&[], 1), Err(CaptionError::EmptyCorpus));
    }

    #[test]
    fn decode_and_serde() {
        let v = build_vocab(&corpus(), 1).unwrap();
        let ids = [BOS, v.id("a"), v.id("man"), EOS, v.id("runs")];
        assert_eq!(v.decode(&ids), "a man");
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Vocabulary>(&json).unwrap(), v);
        assert!(serde_json::from_str::<Vocabulary>(r#"{"min_freq":1,"tokens":["a"]}"#).is_err());
    }
}

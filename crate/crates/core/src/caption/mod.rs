//! Vocabulary, the transformer caption decoder and decoding strategies.

mod decoder;
mod search;
mod vocab;

pub use decoder::{
    causal_mask, decoder_forward, positional_encoding, DecoderBlockParams, DecoderConfig, DecoderParams, DecoderVars,
};
pub use search::{
    beam_decode, beam_search, greedy_decode, greedy_search, CaptionHypothesis, DecoderStep, StepModel,
};
pub use vocab::{build_vocab, tokenize, Vocabulary, BOS, EOS, PAD, UNK};

use thiserror::Error;

use crate::numerics::NumericsError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CaptionError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("caption corpus has no tokens")]
    EmptyCorpus,
    #[error("invalid vocabulary: {0}")]
    BadVocabulary(String),
    #[error("token prefix is empty")]
    EmptyPrefix,
    #[error("token prefix of length {len} exceeds max_len {max}")]
    PrefixTooLong { len: usize, max: usize },
    #[error("visual sequence has no frames")]
    EmptyVisualSequence,
    #[error("token id {token} outside a vocabulary of {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },
    #[error("beam size must be at least 1")]
    ZeroBeam,
}

//! Attention-based GRU encoder-decoder translating seven-token phenotype
//! sentences into prescription sentences.
//!
//! The encoder embeds the source tokens and runs a stack of GRUs; the top
//! layer's outputs are the annotations. Each decoder step runs its own GRU
//! stack (initialized from the encoder's final states) on the previous
//! target token, attends over the annotations with the top state as query,
//! and projects `[state; context]` onto the target vocabulary.

mod model;
mod train;

pub use model::{Arnn, ArnnConfig, Decoded, TranslationResult};
pub use train::{bucket_pairs, make_pairs, perplexity, perplexity_from_log_probs, train, ArnnEpoch, ArnnTrainConfig, ArnnTrainReport, BucketPerplexity, Pair, PerplexityReport};

use alloc::vec::Vec;

use crate::corpus::CorpusError;
use crate::nn::NnError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ArnnError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("source sentence has {0} tokens, expected 7")]
    SourceLength(usize),
    #[error("target sentence of {len} tokens exceeds the largest bucket ({max})")]
    TooLong { len: usize, max: usize },
    #[error("empty target sentence")]
    EmptyTarget,
    #[error("token {token} out of range for a vocabulary of {size}")]
    TokenOutOfRange { token: usize, size: usize },
    #[error("empty data set")]
    Empty,
    #[error("{0} vocabulary has the wrong role")]
    WrongRole(&'static str),
    #[error("decoded sentence {tokens:?} violates the target grammar: {error}")]
    Grammar { tokens: Vec<usize>, error: CorpusError },
    #[error("invalid configuration: {0}")]
    Config(&'static str),
}

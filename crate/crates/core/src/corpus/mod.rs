//! Domain model, codec, Zipf dose model, tokenization and corpus generation.

pub mod codec;
pub mod generator;
pub mod types;
pub mod vocab;
pub mod zipf;

use alloc::string::String;

pub use codec::{decode_vector, encode_prescription, EncodedVector, VECTOR_LEN};
pub use generator::{generate_corpus, Generator, GeneratorConfig, GroundTruth, Preset};
pub use types::{ComponentId, ComponentKind, DiseaseTable, Dose, IcdCode, Phenotype, Prescription, Record, Season, Sex};
pub use vocab::{bucket_for_len, bucket_of, bucketize, detokenize_target, parse_target, source_symbols, target_symbols, tokenize_source, tokenize_target, Bucketed, Role, Symbol, TokenSequence, Vocabulary, BUCKETS, EOS, GO, PAD, SOURCE_LEN, UNK};
pub use zipf::{fit_zipf_exponent, reconstruct_weights, zipf_token, ZipfModel};

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum CorpusError {
    #[error("component index {0} outside 1..=718")]
    InvalidComponent(u32),
    #[error("dose {0} g outside (0, 5.0]")]
    DoseOutOfRange(f64),
    #[error("component {0} listed twice")]
    DuplicateComponent(u16),
    #[error("prescription has no components")]
    EmptyPrescription,
    #[error("acupuncture modality {0} outside 1..=5")]
    InvalidAcupuncture(u8),
    #[error("schedule {0} outside 1..=27")]
    InvalidSchedule(u8),
    #[error("duration {0} days outside 1..=90")]
    InvalidDuration(u8),
    #[error("age {0} outside 0..=104")]
    InvalidAge(u8),
    #[error("month {0} outside 1..=12")]
    InvalidMonth(u8),
    #[error("year offset {0} outside 0..=9")]
    InvalidYear(u8),
    #[error("invalid ICD-9 code {0:?}")]
    InvalidIcd(String),
    #[error("tertiary diagnosis present without a secondary one")]
    TertiaryWithoutSecondary,
    #[error("malformed vector: {0}")]
    MalformedVector(&'static str),
    #[error("no weights")]
    EmptyWeights,
    #[error("non-positive weight {0}")]
    NonPositiveWeight(f64),
    #[error("weights increase at position {0}")]
    IncreasingWeights(usize),
    #[error("negative Zipf exponent {0}")]
    NegativeExponent(f64),
    #[error("target grammar: expected {expected} at position {position}")]
    Grammar { position: usize, expected: &'static str },
    #[error("bad vocabulary: {0}")]
    BadVocabulary(&'static str),
    #[error("generator config: {0}")]
    Config(String),
}

//! Algorithmic core for bidirectional translation between weighted herbal
//! prescriptions and patient phenotypes.
//!
//! The crate is `no_std` and needs only `alloc`. File formats, the command
//! line and run bookkeeping live in the `herbnmt` crate.
//!
//! * [`corpus`]: domain types, the 840-element prescription codec, the Zipf
//!   dose model, tokenization and a seeded synthetic corpus generator.
//! * [`balance`]: k-medoids (PAM) class flattening.
//! * [`nn`]: reverse-mode autodiff, the layer set, Adam, gradient checking.
//! * [`rcnn`]: residual convolutional multitask classifier and a 1-NN baseline.
//! * [`arnn`]: attention-based GRU encoder-decoder.
//! * [`analysis`]: confusion-matrix spectral embedding, hierarchical
//!   clustering, exact t-SNE and the single-component probe.
//! * [`roundtrip`]: classifier/translator consistency check.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod analysis;
pub mod arnn;
pub mod balance;
pub mod corpus;
pub mod nn;
pub mod rcnn;
pub mod roundtrip;

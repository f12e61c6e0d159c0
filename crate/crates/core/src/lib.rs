//! Synthetic pre-training languages, a small masked language model trained
//! on them, an entropy-difference dependency probe, and a transfer workflow
//! that remaps the pre-trained vocabulary onto downstream tasks.

pub mod corpus;
pub mod distributions;
pub mod error;
pub mod generators;
pub mod mlm;
pub mod probe;
pub mod rng;
pub mod transfer;
pub mod vocab;

pub use error::{Error, Result};
pub use vocab::{SpecialToken, TokenId, Vocabulary};

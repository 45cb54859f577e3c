//! Self-supervised text style transfer from two non-parallel monostylistic
//! corpora. A shared encoder-decoder is initialized by denoising
//! autoencoding, then trained on sentence pairs it mines from the corpora
//! itself and on online back-translations of the sentences it rejects.

pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod mining;
pub mod noiser;
pub mod seqmodel;
pub mod tokenizer;
pub mod trainer;

pub use error::{Error, Result};

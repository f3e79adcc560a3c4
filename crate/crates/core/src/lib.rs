//! Dataset-composition diagnostics for utterance-level text emotion
//! classifiers.
//!
//! The crate bundles a small convolutional classifier (word, frame and fused
//! channels), the cross-validation and cross-corpus transfer protocols used to
//! evaluate it, and two corpus diagnostics: lexical overlap curves and
//! histograms of the probability a model assigns to the true label. A
//! synthetic generator produces "scripted" (near-duplicate) and "improvised"
//! corpora so that all of it can be exercised without licensed data.

pub mod autonet;
pub mod corpus;
pub mod diagnostics;
pub mod embedding;
pub mod emomodel;
pub mod error;
pub mod evalharness;
pub mod seed;
pub mod synthlab;

pub use error::{Error, ErrorKind, Result};

// The guide's snippets run as doctests of this crate, one module per chapter.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/corpus.md")]
    mod corpus {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/diagnostics.md")]
    mod diagnostics {}
    #[doc = include_str!("../../../book/src/synthetic.md")]
    mod synthetic {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}

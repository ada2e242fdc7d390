//! Extraction of (aspect, opinion, category, sentiment) quadruples where
//! aspects and opinions may be explicit spans or implicit.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod experiment;
pub mod error;
pub mod heads;
pub mod metrics;
pub mod model;
pub mod negatives;
pub mod nn;
pub mod objective;
pub mod optim;
pub mod pipeline;
pub mod synthetic;
pub mod tagseq;
pub mod tensor;
pub mod trainer;

pub use corpus::{Example, LabelVocab, QuadType, Quadruple, Sentiment, Span};
pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/tagging.md")]
    mod tagging {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/negatives.md")]
    mod negatives {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}

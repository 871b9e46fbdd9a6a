//! Generative retrieval and ranking over semantic item IDs.

pub mod backbone;
pub mod corpus;
pub mod data;
pub mod decode;
mod error;
pub mod evaluation;
pub(crate) mod io;
pub mod numerics;
pub mod rerank;
pub mod serialization;
pub mod tokenizer;
pub mod training;

pub use error::{Error, Result};

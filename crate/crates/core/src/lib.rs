//! Corpus construction and sentiment classification for colloquial microblog text.
//!
//! The crate covers the whole pipeline: ingesting posts ([`corpus`]), normalizing
//! informal text ([`normalize`]), the two-round annotation protocol with agreement
//! statistics ([`annotation`]), pretrained embedding tables with subword OOV
//! composition ([`embedding`]), hand-differentiated neural layers ([`neural`]), the
//! five classifier architectures ([`models`]) and the experiment harness
//! ([`harness`]).

pub mod annotation;
pub mod corpus;
pub mod embedding;
pub mod harness;
pub mod models;
pub mod neural;
pub mod normalize;
mod polarity;

pub use polarity::{Polarity, PolarityError};

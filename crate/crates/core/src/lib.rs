//! Bidirectional cross-modal video recognition over precomputed embeddings.
//!
//! The crate scores videos against categories in two directions. Text to
//! video: class-name words pick out the salient frames of a video before
//! pooling ([`concept_spotting`]). Video to text: lexicon phrases retrieved
//! for a video form an attribute sentence that is scored against the
//! categories ([`attributes`]). [`recognition`] fuses both branches and runs
//! the evaluation protocols, [`objective`] holds the training loss with its
//! gradients, and [`distributed`] simulates that loss sharded across workers.

pub mod attributes;
pub mod cli;
pub mod concept_spotting;
pub mod distributed;
pub mod error;
pub mod numerics;
pub mod objective;
pub mod recognition;
pub mod store;
pub mod synthetic;

pub use error::{Error, Result};
pub use numerics::{Matrix, Vector};

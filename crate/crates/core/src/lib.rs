//! Complexity-guided warmup sampling for image training sets.
//!
//! The pipeline scores each image from its patch-token embeddings
//! ([`saliency`], [`complexity`]), then anneals a softmax sampling
//! distribution from a narrow, easy-first subset to uniform ([`scheduler`]).
//! [`harness`] wires the stages to files; [`embeddings`] and [`scorefile`]
//! hold the on-disk formats.

pub mod complexity;
pub mod embeddings;
pub mod exec;
pub mod harness;
pub mod saliency;
pub mod scheduler;
pub mod scorefile;
pub mod synth;

pub use exec::Exec;

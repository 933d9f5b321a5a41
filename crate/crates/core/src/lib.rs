//! Integrated gated calculator: a non-differentiable calculator module
//! embedded inside a small decoder-only language model, trained with an
//! auxiliary loss to solve multi-digit arithmetic in a single forward pass.
//!
//! The crate is organized along the pipeline:
//!
//! - [`array`]: float64 dense arrays with reverse-mode autodiff, the
//!   optimizer and the checkpoint format
//! - [`tokenizer`]: the deterministic surrogate tokenizer with 3-digit
//!   number chunking plus the chunk-distribution analyzer
//! - [`codec`]: fixed-width categorical digit encodings (left-aligned
//!   11-class, right-aligned 10-class)
//! - [`calculator`]: the exact, non-differentiable calculator stage
//! - [`model`]: the transformer host, the input/output mapping submodules,
//!   gating, caching and generation
//! - [`data`]: synthetic dataset generation, subsequence filtering, JSONL
//!   export
//! - [`train`]: pretraining, gated-calculator finetuning, evaluation and
//!   the ablation matrix
//! - [`config`]: the single TOML run configuration shared by every stage

pub mod array;
pub mod calculator;
pub mod config;
pub mod data;
pub mod model;
pub mod codec;
pub mod tokenizer;
pub mod train;

pub use array::{ArrayError, DiffArray, ParamId, ParamStore};
pub use codec::{Alignment, DigitBlock, Operator};

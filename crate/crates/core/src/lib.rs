// Validation uses `!(x > 0.0)` on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod embedding;
pub mod encoders;
pub mod ehr;
pub mod entity;
pub mod experiment;
pub mod error;
pub mod fixtures;
pub mod fusion;
pub mod importance;
pub mod kg;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod pipeline;
pub mod rng;
pub mod text_rag;
pub mod train;
pub mod ts_rag;

pub use error::{Error, Result};

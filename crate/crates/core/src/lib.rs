//! Minimum Bayes risk decoding that accounts for uncertainty over model
//! weights.
//!
//! Hypothesis sets are drawn from several models sampled from a posterior
//! (or from black-box systems), and combined either at the sequence level
//! (pooling the sets) or at the token level (averaging next-token
//! distributions during generation). Exact enumeration oracles over small
//! sequence spaces back every estimator.

pub mod analysis;
pub mod decode;
pub mod error;
pub mod io;
pub mod mbr;
pub mod oracle;
pub mod pipeline;
pub mod rng;
pub mod seqcore;
pub mod sum;
pub mod toylm;
pub mod utility;

pub use error::{Error, Result};

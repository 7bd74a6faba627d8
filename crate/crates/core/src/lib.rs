//! Maximum-softmax-probability detection of misclassified and
//! out-of-distribution inputs.
//!
//! - [`metrics`]: AUROC, AUPR, ROC/PR curves and rank-sum tests over two
//!   score populations.
//! - [`scores`]: detector scores from logits (max probability, KL from
//!   uniform, negative entropy), including sequence models with a blank class.
//! - [`nn`]: a small dense-network stack (GELU MLP, optional decoder head,
//!   manual backpropagation, Adam) for producing logits at desk scale.
//! - [`abnormality`]: a sigmoid scorer on a frozen classifier+decoder.
//! - [`data`]: IDX loading, synthetic OOD sources, distortions, colored noise.
//! - [`harness`]: configured experiments and their reports.

pub mod abnormality;
pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod scores;

pub use error::{Error, Result};

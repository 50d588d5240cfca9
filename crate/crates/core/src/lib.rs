//! Sign-conditioned vision-language model for fundus images, written against
//! `alloc` only.
//!
//! The crate carries everything numeric: a small reverse-mode autodiff tape,
//! the model (vision encoder, contrastive text encoder, sign adapter,
//! projector, sign token table, causal decoder), the three training
//! objectives, the AdamW trainer, the rule-based dataset forge and the
//! clinical evaluation statistics. File formats, checkpoints and the CLI live
//! in the `visionunite` companion crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod forge;
pub mod model;
pub mod objectives;
pub mod optim;
pub mod stats;
pub mod train;
mod error;
mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;

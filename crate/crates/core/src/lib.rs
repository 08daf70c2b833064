//! Training-free semantic protection for multi-concept text-to-image
//! diffusion.
//!
//! A generation runs twice from the same noise. The first pass records the
//! cross- and self-attention maps of the opening denoising steps; those maps
//! are turned into one latent region per prompt concept. The second pass
//! denoises with a hard additive mask that stops each region from attending
//! to the tokens of every *other* concept and its attributes, while the
//! recorded self-attention maps are replayed during the opening steps to
//! keep the layout.
//!
//! The crate is organised bottom-up:
//!
//! - [`prompt`]: concept/attribute extraction and sub-word token alignment.
//! - [`attention`]: attention kernels, masked softmax, aggregation.
//! - [`extraction`]: anchor points and concept regions.
//! - [`protect`]: the protection mask and protected cross-attention.
//! - [`pipeline`]: the two-pass denoising framework and a toy backend.
//! - [`dump`]: the binary attention/region container.

pub mod attention;
pub mod dump;
pub mod error;
pub mod extraction;
pub mod grid;
pub mod pipeline;
pub mod prompt;
pub mod protect;
pub mod tokenizer;

pub use error::{Error, Result};
pub use grid::{Grid, Mask};

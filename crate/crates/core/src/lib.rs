//! Lossless compression of voxelized point-cloud geometry with bits-back coding.
//!
//! A convolutional VAE ([`cvae`]) provides the prior, posterior and likelihood
//! used by a stack-based rANS coder ([`ans`]). [`bitsback`] chains a batch of
//! voxel grids through one coder state; [`seqcodec`] is the per-cloud baseline
//! that ships explicit probability tables to the decoder.

pub mod ans;
pub mod bench;
pub mod bitsback;
pub mod cvae;
pub mod error;
pub mod geometry;
pub mod nncore;
pub mod seqcodec;

pub use error::{Error, Result};

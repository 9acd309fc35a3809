//! Stack ("last in, first out") rANS with 16-bit quantized distributions.
//!
//! The coder state is a 64-bit head kept in `[2^32, 2^64)` plus a stack of
//! 32-bit words. Pushing a symbol with frequency `f` grows the message by about
//! `16 - log2(f)` bits; popping is its exact inverse, and popping from a state
//! that was never pushed to decodes *some* symbol, which is what bits-back
//! coding relies on.

mod cdf;
mod gaussian;
mod state;

pub use gaussian::quantize_masses;
pub use cdf::{bernoulli_cdf, QuantizedCdf, PRECISION, TOTAL};
pub use gaussian::{
    inverse_normal_cdf, normal_cdf, normal_sf, GaussianBuckets, DEFAULT_P_BITS, MAX_P_BITS,
};
pub use state::AnsState;

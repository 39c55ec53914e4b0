//! Block samplers, the speculative acceptance kernel and the outer decode loop.

mod config;
mod kernel;
mod sampler;

pub use config::{DecodeConfig, Drafting, MaskMode, Sampler, Schedule};
pub use kernel::{accept_prob, residual_dist, speculative_accept, Rejection, SpanVerdict};
pub use sampler::{decode_sequence, sample_block_bd3, sample_block_s2d2, DecodeOutput};

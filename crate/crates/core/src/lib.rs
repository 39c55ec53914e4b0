//! Block-diffusion decoding with self-speculative verification.
//!
//! The crate runs standard confidence-thresholded block diffusion and a
//! self-speculative variant in which the same model, switched to an
//! autoregressive view, verifies the leftmost drafted span. Everything runs
//! against a deterministic synthetic model so decoding behaviour, routing
//! and cost can be studied without weights.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the `*64`
//! aliases below fix the scalar to `f64`.
//!
//! ```
//! use blockspec::{decode_sequence, DecodeConfig64, ModelSpec64, RoutingState64, Sampler, TokenId};
//! use blockspec::rng::{stream_rng, StreamRole};
//!
//! let model = ModelSpec64::new(32, 7).unwrap();
//! let mut cfg = DecodeConfig64::new(4);
//! cfg.max_new_tokens = 8;
//! let mut routing = RoutingState64::never();
//! let mut rng = stream_rng(1, 0, 0, StreamRole::Decode);
//! let out = decode_sequence(&model, &[TokenId(3)], &cfg, Sampler::S2d2, Some(&mut routing), &mut rng).unwrap();
//! assert_eq!(out.trace.nfe, out.trace.accounted_nfe());
//! ```

pub mod block;
pub mod decode;
pub mod dist;
mod error;
pub mod masks;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod routing;
mod scalar;
pub mod schedule;
pub mod trace;

pub use block::{first_contiguous_span, BlockState, TokenId, Vocab};
pub use decode::{
    accept_prob, decode_sequence, residual_dist, sample_block_bd3, sample_block_s2d2, speculative_accept, DecodeConfig,
    DecodeOutput, Drafting, MaskMode, Sampler, Schedule, SpanVerdict,
};
pub use dist::{normalize_dist, normalized_entropy, top1_margin, Dist};
pub use error::{Error, Result};
pub use masks::{block_full_mask, causal_mask, draft_mask, verifier_mask, AttnMask, VerifierView};
pub use model::{ForwardInput, ForwardMode, Model, ModelSpec};
pub use routing::{Estimator, Policy, RoutingState, ScoreMode};
pub use scalar::Real;
pub use schedule::{subs_step, subs_unmask_prob, NoiseSchedule};
pub use trace::{CommitEvent, DecodeTrace, StepMode, StepRecord};

pub type Dist64 = Dist<f64>;
pub type DecodeConfig64 = DecodeConfig<f64>;
pub type DecodeTrace64 = DecodeTrace<f64>;
pub type ModelSpec64 = ModelSpec<f64>;
pub type RoutingState64 = RoutingState<f64>;
pub type Estimator64 = Estimator<f64>;
pub type Policy64 = Policy<f64>;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masks::VerifierView;
use crate::scalar::Real;
use crate::schedule::NoiseSchedule;

/// Commit rule for plain diffusion steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// One token per step (threshold pinned to 1).
    Static,
    /// Every masked token with confidence above the threshold, plus the argmax.
    #[default]
    Dynamic,
    /// Independent SUBS reveals on a uniform time grid.
    Subs,
}

/// How drafted tokens are picked from the draft distributions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Drafting {
    #[default]
    Stochastic,
    Greedy,
}

/// In-block attention pattern for drafting or the cache pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Bidirectional within the block.
    #[default]
    Block,
    /// Causal over committed positions.
    Ar,
}

/// Block sampler driven by the outer loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    /// Confidence-thresholded block diffusion.
    Bd3,
    /// Diffusion drafting with routed AR verification.
    #[default]
    S2d2,
    /// Block diffusion with SUBS posterior reveals.
    Subs,
}

impl Sampler {
    pub fn name(self) -> &'static str {
        match self {
            Sampler::Bd3 => "bd3",
            Sampler::S2d2 => "s2d2",
            Sampler::Subs => "subs",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig<F> {
    pub block_size: usize,
    /// Denoising steps per block.
    pub max_steps: usize,
    pub conf_threshold: F,
    /// Exponent on the acceptance ratio.
    pub temper: F,
    pub schedule: Schedule,
    pub drafting: Drafting,
    pub draft_mask_mode: MaskMode,
    pub cache_mode: MaskMode,
    pub verifier_view: VerifierView,
    pub noise: NoiseSchedule,
    pub max_new_tokens: usize,
}

impl<F: Real> DecodeConfig<F> {
    /// Defaults with `max_steps = block_size`.
    pub fn new(block_size: usize) -> Self {
        Self {
            block_size,
            max_steps: block_size.max(1),
            conf_threshold: F::lit(0.9),
            temper: F::one(),
            schedule: Schedule::Dynamic,
            drafting: Drafting::Stochastic,
            draft_mask_mode: MaskMode::Block,
            cache_mode: MaskMode::Block,
            verifier_view: VerifierView::PositionAligned,
            noise: NoiseSchedule::Linear,
            max_new_tokens: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_size == 0 {
            return Err(Error::InvalidConfig("decode.block_size must be >= 1".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidConfig("decode.max_steps must be >= 1".into()));
        }
        if !(self.conf_threshold > F::zero() && self.conf_threshold <= F::one()) {
            return Err(Error::InvalidConfig("decode.conf_threshold must be in (0, 1]".into()));
        }
        if !self.temper.is_finite() || self.temper <= F::zero() {
            return Err(Error::InvalidConfig("decode.temper must be > 0".into()));
        }
        Ok(())
    }

    /// Threshold actually applied: static decoding pins it to 1.
    pub fn effective_threshold(&self) -> F {
        match self.schedule {
            Schedule::Static => F::one(),
            _ => self.conf_threshold,
        }
    }
}

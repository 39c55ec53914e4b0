//! Per-step decode records.

use serde::{Deserialize, Serialize};

use crate::block::TokenId;

/// How a step committed its tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepMode {
    /// Confidence-thresholded diffusion commit.
    Diffusion,
    /// Verified span with rejection sampling.
    Speculative,
    /// SUBS posterior reveal.
    Subs,
}

/// One committed position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommitEvent<F> {
    /// Block-local position.
    pub pos: usize,
    pub token: TokenId,
    /// Draft probability of the token, or the verifier probability for a
    /// resampled token.
    pub conf: F,
    /// Verifier probability when the position went through verification.
    pub q: Option<F>,
    pub resampled: bool,
    /// Filled by argmax after the step budget ran out.
    pub forced: bool,
}

/// Everything observable about one denoising step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord<F> {
    /// Step index within the sequence.
    pub step: usize,
    /// Step index within the block, starting at 1.
    pub block_step: usize,
    pub block: usize,
    /// Generated-region offset of block position 0.
    pub block_start: usize,
    pub mode: StepMode,
    /// Length of the first contiguous masked span at this step.
    pub span_len: usize,
    pub verified: bool,
    pub accepted_count: usize,
    pub rejected_at: Option<usize>,
    /// Commits in ascending position order (forced commits last).
    pub commits: Vec<CommitEvent<F>>,
    pub score: Option<F>,
    pub khat: Option<F>,
    pub nfe_after: usize,
    pub budget_exhausted: bool,
}

impl<F> StepRecord<F> {
    pub fn committed_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.commits.iter().map(|c| c.pos)
    }
}

/// One finished block.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub index: usize,
    /// Generated-region offset of the block.
    pub start: usize,
    pub len: usize,
    /// NFE after the block's cache pass.
    pub nfe_after_cache: usize,
}

/// Full record of one decoded sequence.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct DecodeTrace<F> {
    pub prompt_len: usize,
    pub steps: Vec<StepRecord<F>>,
    pub blocks: Vec<BlockRecord>,
    /// Total forward passes, cache passes included.
    pub nfe: usize,
    /// Output tokens after EOS truncation.
    pub generated: usize,
    /// Positions decoded, including any past an EOS inside the last block.
    pub decoded_positions: usize,
}

impl<F> DecodeTrace<F> {
    pub fn verified_steps(&self) -> usize {
        self.steps.iter().filter(|s| s.verified).count()
    }

    /// Diffusion steps + verifier passes + cache passes.
    pub fn accounted_nfe(&self) -> usize {
        self.steps.len() + self.verified_steps() + self.blocks.len()
    }

    /// Commit events in trace order as generated-region positions.
    pub fn commit_order(&self) -> impl Iterator<Item = (usize, &StepRecord<F>, &CommitEvent<F>)> + '_ {
        self.steps.iter().flat_map(|s| s.commits.iter().map(move |c| (s.block_start + c.pos, s, c)))
    }
}

//! Tokens, vocabularies and the in-flight block.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index into the vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<u32> for TokenId {
    fn from(v: u32) -> Self {
        TokenId(v)
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Vocabulary size plus the two reserved ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    size: usize,
    mask: TokenId,
    eos: TokenId,
}

impl Vocab {
    /// Vocabulary of `size` ids with `MASK = size - 1` and `EOS = size - 2`.
    pub fn new(size: usize) -> Result<Self> {
        if size < 3 {
            return Err(Error::InvalidVocab(format!(
                "need at least 3 ids (MASK, EOS and one ordinary token), got {size}"
            )));
        }
        Self::with_reserved(size, TokenId(size as u32 - 1), TokenId(size as u32 - 2))
    }

    pub fn with_reserved(size: usize, mask: TokenId, eos: TokenId) -> Result<Self> {
        if mask == eos {
            return Err(Error::InvalidVocab("MASK and EOS must differ".into()));
        }
        if mask.index() >= size || eos.index() >= size {
            return Err(Error::InvalidVocab(format!("reserved ids must be < {size} (mask={mask}, eos={eos})")));
        }
        Ok(Self { size, mask, eos })
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn mask(&self) -> TokenId {
        self.mask
    }

    #[inline]
    pub fn eos(&self) -> TokenId {
        self.eos
    }

    #[inline]
    pub fn contains(&self, t: TokenId) -> bool {
        t.index() < self.size
    }
}

/// The block being decoded together with everything committed before it.
///
/// Positions holding the MASK id form the masked set `M_t`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockState {
    tokens: Vec<TokenId>,
    committed_prefix: Vec<TokenId>,
    mask: TokenId,
}

impl BlockState {
    /// A fully masked block of `block_size` positions after `committed_prefix`.
    pub fn masked(committed_prefix: Vec<TokenId>, block_size: usize, vocab: &Vocab) -> Self {
        assert!(block_size >= 1, "block size must be positive");
        debug_assert!(!committed_prefix.contains(&vocab.mask()));
        Self { tokens: vec![vocab.mask(); block_size], committed_prefix, mask: vocab.mask() }
    }

    /// Builds a block from explicit contents; the prefix may not contain MASK.
    pub fn from_parts(committed_prefix: Vec<TokenId>, tokens: Vec<TokenId>, vocab: &Vocab) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::DimensionMismatch("block must have at least one position".into()));
        }
        if committed_prefix.contains(&vocab.mask()) {
            return Err(Error::InvalidConfig("committed prefix contains MASK".into()));
        }
        Ok(Self { tokens, committed_prefix, mask: vocab.mask() })
    }

    #[inline]
    pub fn block_size(&self) -> usize {
        self.tokens.len()
    }

    #[inline]
    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    #[inline]
    pub fn committed_prefix(&self) -> &[TokenId] {
        &self.committed_prefix
    }

    /// Absolute position of block index 0.
    #[inline]
    pub fn offset(&self) -> usize {
        self.committed_prefix.len()
    }

    #[inline]
    pub fn mask_id(&self) -> TokenId {
        self.mask
    }

    #[inline]
    pub fn is_masked(&self, pos: usize) -> bool {
        self.tokens[pos] == self.mask
    }

    /// Masked positions in ascending order.
    pub fn masked_positions(&self) -> Vec<usize> {
        self.tokens.iter().enumerate().filter(|(_, &t)| t == self.mask).map(|(i, _)| i).collect()
    }

    pub fn has_mask(&self) -> bool {
        self.tokens.contains(&self.mask)
    }

    pub fn unmasked_count(&self) -> usize {
        self.tokens.iter().filter(|&&t| t != self.mask).count()
    }

    /// Fills a masked position. Committed positions are never rewritten.
    pub fn commit(&mut self, pos: usize, token: TokenId) {
        assert!(self.is_masked(pos), "position {pos} is already committed");
        assert!(token != self.mask, "cannot commit MASK at {pos}");
        self.tokens[pos] = token;
    }

    pub fn into_tokens(self) -> Vec<TokenId> {
        self.tokens
    }

    /// Committed prefix followed by the block tokens.
    pub fn into_sequence(self) -> Vec<TokenId> {
        let mut seq = self.committed_prefix;
        seq.extend(self.tokens);
        seq
    }
}

/// Maximal run of consecutive indices starting at the smallest element of a
/// sorted index set, as a half-open range. Empty input gives `0..0`.
///
/// `{2, 3, 4, 7}` yields `2..5`; `{0}` yields `0..1`.
pub fn first_contiguous_span(sorted: &[usize]) -> Range<usize> {
    let Some(&start) = sorted.first() else {
        return 0..0;
    };
    let mut end = start + 1;
    for &i in &sorted[1..] {
        if i != end {
            break;
        }
        end += 1;
    }
    start..end
}

//! Model interface and a deterministic synthetic stand-in.
//!
//! The synthetic model produces, for every query row, a softmax over
//! hash-derived logits. The logits depend on the seed, the query's absolute
//! position and a digest of the `(position, token)` pairs the row can see:
//! the whole committed prefix plus every in-block key its mask row allows.
//! Verification calls add a drift perturbation so drafter and verifier can
//! be made to disagree by a controlled amount.

use serde::{Deserialize, Serialize};

use crate::block::{TokenId, Vocab};
use crate::dist::Dist;
use crate::error::{Error, Result};
use crate::masks::AttnMask;
use crate::scalar::Real;

/// Which role a forward pass plays.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForwardMode {
    Draft,
    Verify,
}

/// One forward pass: in-block keys with their absolute positions, the mask
/// over those keys, and the rows whose output distributions are wanted.
#[derive(Clone, Debug)]
pub struct ForwardInput<'a> {
    pub prefix: &'a [TokenId],
    pub keys: &'a [TokenId],
    pub key_positions: Vec<usize>,
    pub mask: &'a AttnMask,
    pub queries: &'a [usize],
    pub mode: ForwardMode,
    /// Row `r` predicts absolute position `key_positions[r] + 1`.
    pub shifted: bool,
}

impl<'a> ForwardInput<'a> {
    /// Keys laid out contiguously right after the prefix.
    pub fn block(
        prefix: &'a [TokenId],
        keys: &'a [TokenId],
        mask: &'a AttnMask,
        queries: &'a [usize],
        mode: ForwardMode,
    ) -> Self {
        let start = prefix.len();
        Self { prefix, keys, key_positions: (start..start + keys.len()).collect(), mask, queries, mode, shifted: false }
    }

    fn validate(&self) -> Result<()> {
        let n = self.keys.len();
        if self.mask.size() != n {
            return Err(Error::DimensionMismatch(format!("mask is {0}x{0} but there are {n} keys", self.mask.size())));
        }
        if self.key_positions.len() != n {
            return Err(Error::DimensionMismatch(format!("{} key positions for {n} keys", self.key_positions.len())));
        }
        if let Some(&q) = self.queries.iter().find(|&&q| q >= n) {
            return Err(Error::DimensionMismatch(format!("query row {q} outside {n} keys")));
        }
        Ok(())
    }
}

/// Anything that maps a forward request to per-query distributions.
pub trait Model<F: Real> {
    fn vocab(&self) -> &Vocab;
    fn forward(&self, input: &ForwardInput<'_>) -> Result<Vec<Dist<F>>>;
}

/// Parameters of the synthetic model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec<F> {
    pub vocab: Vocab,
    pub seed: u64,
    /// Scale of the position-dependent logit component; larger is peakier.
    pub sharpness: F,
    /// Log-spread of a per-position multiplier on `sharpness`, so some
    /// positions are confident and others are not. Zero makes every position
    /// equally peaked.
    pub peak_spread: F,
    /// Scale of the context-digest component.
    pub context_weight: F,
    /// Scale of the verifier-only perturbation.
    pub drift: F,
    /// Per-position growth of the EOS logit.
    pub eos_rate: F,
}

impl<F: Real> ModelSpec<F> {
    pub fn new(vocab_size: usize, seed: u64) -> Result<Self> {
        let spec = Self {
            vocab: Vocab::new(vocab_size)?,
            seed,
            sharpness: F::lit(3.0),
            peak_spread: F::one(),
            context_weight: F::lit(0.5),
            drift: F::zero(),
            eos_rate: F::zero(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_sharpness(mut self, v: F) -> Self {
        self.sharpness = v;
        self
    }

    pub fn with_peak_spread(mut self, v: F) -> Self {
        self.peak_spread = v;
        self
    }

    pub fn with_context_weight(mut self, v: F) -> Self {
        self.context_weight = v;
        self
    }

    pub fn with_drift(mut self, v: F) -> Self {
        self.drift = v;
        self
    }

    pub fn with_eos_rate(mut self, v: F) -> Self {
        self.eos_rate = v;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab.size() < 4 {
            return Err(Error::InvalidConfig(format!("model.vocab_size must be >= 4, got {}", self.vocab.size())));
        }
        if !self.sharpness.is_finite() || self.sharpness <= F::zero() {
            return Err(Error::InvalidConfig("model.sharpness must be > 0".into()));
        }
        for (name, v) in [
            ("model.peak_spread", self.peak_spread),
            ("model.context_weight", self.context_weight),
            ("model.drift", self.drift),
            ("model.eos_rate", self.eos_rate),
        ] {
            if !v.is_finite() || v < F::zero() {
                return Err(Error::InvalidConfig(format!("{name} must be >= 0")));
            }
        }
        Ok(())
    }

    fn logits_for(&self, abs_pos: usize, digest: u64, mode: ForwardMode) -> Vec<F> {
        let v = self.vocab.size();
        let pos = abs_pos as u64;
        let mut logits = Vec::with_capacity(v);
        let spread = F::lit(2.0 * unit(hash4(self.seed, TAG_SCALE, pos, 0)) - 1.0);
        let scale = self.sharpness * (self.peak_spread * spread).exp();
        for tok in 0..v {
            let t = TokenId(tok as u32);
            if t == self.vocab.mask() {
                logits.push(F::neg_infinity());
                continue;
            }
            let base = F::lit(gumbel(unit(hash4(self.seed, TAG_BASE, pos, tok as u64))));
            let ctx = F::lit(unit(hash5(self.seed, TAG_CTX, pos, digest, tok as u64)));
            let mut l = if t == self.vocab.eos() {
                scale * (base - F::lit(EOS_PENALTY)) + self.eos_rate * F::from_count(abs_pos)
            } else {
                scale * base
            };
            l = l + self.context_weight * ctx;
            if mode == ForwardMode::Verify && self.drift > F::zero() {
                let u = F::lit(unit(hash4(self.seed, TAG_DRIFT, pos, tok as u64)));
                l = l + self.drift * (F::lit(2.0) * u - F::one());
            }
            logits.push(l);
        }
        logits
    }
}

impl<F: Real> Model<F> for ModelSpec<F> {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn forward(&self, input: &ForwardInput<'_>) -> Result<Vec<Dist<F>>> {
        input.validate()?;
        let prefix_digest =
            input.prefix.iter().enumerate().fold(DIGEST_INIT ^ self.seed, |h, (p, t)| fold_pair(h, p, *t));

        let mut out = Vec::with_capacity(input.queries.len());
        let mut pairs: Vec<(usize, TokenId)> = Vec::new();
        for &row in input.queries {
            pairs.clear();
            for c in input.mask.visible(row) {
                let (p, t) = (input.key_positions[c], input.keys[c]);
                // already part of the prefix digest
                if p < input.prefix.len() && input.prefix[p] == t {
                    continue;
                }
                pairs.push((p, t));
            }
            pairs.sort_unstable();
            pairs.dedup();
            let digest = pairs.iter().fold(prefix_digest, |h, &(p, t)| fold_pair(h, p, t));
            let abs = input.key_positions[row] + usize::from(input.shifted);
            out.push(Dist::softmax(&self.logits_for(abs, digest, input.mode)));
        }
        Ok(out)
    }
}

const DIGEST_INIT: u64 = 0x6a09_e667_f3bc_c908;
const TAG_BASE: u64 = 0x11;
const TAG_CTX: u64 = 0x22;
const TAG_DRIFT: u64 = 0x33;
const TAG_SCALE: u64 = 0x44;
/// Offset on the EOS position score, in units of the position scale.
const EOS_PENALTY: f64 = 2.0;

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
fn combine(h: u64, x: u64) -> u64 {
    splitmix(h ^ splitmix(x))
}

#[inline]
fn fold_pair(h: u64, pos: usize, tok: TokenId) -> u64 {
    combine(combine(h, pos as u64), u64::from(tok.0))
}

#[inline]
fn hash4(a: u64, b: u64, c: u64, d: u64) -> u64 {
    combine(combine(combine(splitmix(a), b), c), d)
}

#[inline]
fn hash5(a: u64, b: u64, c: u64, d: u64, e: u64) -> u64 {
    combine(hash4(a, b, c, d), e)
}

/// Standard Gumbel quantile. The gap between the two largest of many
/// Gumbel draws does not shrink with their number, so distributions stay
/// peaked at any vocabulary size.
#[inline]
fn gumbel(u: f64) -> f64 {
    -(-u.ln()).ln()
}

/// Maps a hash to the open interval (0, 1).
#[inline]
fn unit(h: u64) -> f64 {
    ((h >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}

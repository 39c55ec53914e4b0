//! Speculative acceptance and residual resampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::block::TokenId;
use crate::dist::{normalize_dist, Dist};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// `min(1, (q / p)^gamma)`.
pub fn accept_prob<F: Real>(p: F, q: F, gamma: F) -> Result<F> {
    if p.is_nan() || p <= F::zero() {
        return Err(Error::DraftProbZero);
    }
    let ratio = q.max(F::zero()) / p;
    if ratio >= F::one() {
        return Ok(F::one());
    }
    Ok(ratio.powf(gamma).min(F::one()))
}

/// Normalized positive part of `ver - draft`; falls back to `ver` when the
/// two coincide.
pub fn residual_dist<F: Real>(ver: &Dist<F>, draft: &Dist<F>) -> Dist<F> {
    assert_eq!(ver.len(), draft.len(), "residual over mismatched vocabularies");
    let diff: Vec<F> = ver.probs().iter().zip(draft.probs()).map(|(&a, &b)| (a - b).max(F::zero())).collect();
    normalize_dist(&diff).unwrap_or_else(|_| ver.clone())
}

/// First rejection within a verified span.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    /// Span-local index of the rejected token.
    pub index: usize,
    /// Replacement drawn from the residual distribution.
    pub token: TokenId,
}

/// Outcome of scanning one drafted span.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanVerdict {
    pub accepted_count: usize,
    pub rejection: Option<Rejection>,
}

impl SpanVerdict {
    pub fn rejected_at(&self) -> Option<usize> {
        self.rejection.map(|r| r.index)
    }

    pub fn resampled_token(&self) -> Option<TokenId> {
        self.rejection.map(|r| r.token)
    }

    /// Tokens this verdict commits.
    pub fn committed_count(&self) -> usize {
        self.accepted_count + usize::from(self.rejection.is_some())
    }
}

/// Left-to-right speculative acceptance over a drafted span.
///
/// Token `i` is kept when `r < min(1, (q_i / p_i)^gamma)` with a fresh
/// uniform `r`. The first rejected position is replaced by a draw from the
/// residual distribution and the scan stops there.
pub fn speculative_accept<F: Real, R: Rng + ?Sized>(
    span_tokens: &[TokenId],
    draft: &[Dist<F>],
    ver: &[Dist<F>],
    gamma: F,
    rng: &mut R,
) -> Result<SpanVerdict> {
    if span_tokens.len() != draft.len() || draft.len() != ver.len() {
        return Err(Error::DimensionMismatch(format!(
            "span of {} tokens with {} draft and {} verifier distributions",
            span_tokens.len(),
            draft.len(),
            ver.len()
        )));
    }
    for (i, &tok) in span_tokens.iter().enumerate() {
        let a = accept_prob(draft[i].prob(tok), ver[i].prob(tok), gamma)?;
        let r = F::lit(rng.gen::<f64>());
        if r < a {
            continue;
        }
        let token = residual_dist(&ver[i], &draft[i]).sample(rng);
        return Ok(SpanVerdict { accepted_count: i, rejection: Some(Rejection { index: i, token }) });
    }
    Ok(SpanVerdict { accepted_count: span_tokens.len(), rejection: None })
}

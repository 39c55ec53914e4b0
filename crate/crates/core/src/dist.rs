//! Dense probability vectors over the vocabulary.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::block::TokenId;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// A probability vector: non-negative entries summing to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Dist<F> {
    probs: Vec<F>,
}

/// Scales non-negative weights to sum to one.
///
/// Fails with [`Error::AllZero`] when every weight is zero; the caller picks
/// the fallback.
pub fn normalize_dist<F: Real>(weights: &[F]) -> Result<Dist<F>> {
    for (index, &w) in weights.iter().enumerate() {
        if !w.is_finite() || w < F::zero() {
            return Err(Error::InvalidWeight { index });
        }
    }
    let total: F = weights.iter().copied().sum();
    if total <= F::zero() {
        return Err(Error::AllZero);
    }
    Ok(Dist { probs: weights.iter().map(|&w| w / total).collect() })
}

impl<F: Real> Dist<F> {
    /// Validates an explicit probability vector.
    pub fn from_probs(probs: Vec<F>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDist("empty vector".into()));
        }
        if let Some(i) = probs.iter().position(|&p| !p.is_finite() || p < F::zero()) {
            return Err(Error::InvalidDist(format!("entry {i} is negative or non-finite")));
        }
        let total: F = probs.iter().copied().sum();
        if (total - F::one()).abs() > F::sum_tolerance() {
            return Err(Error::InvalidDist(format!("entries sum to {total}")));
        }
        Ok(Self { probs })
    }

    pub fn uniform(size: usize) -> Self {
        assert!(size > 0);
        let p = F::one() / F::from_count(size);
        Self { probs: vec![p; size] }
    }

    pub fn one_hot(size: usize, index: usize) -> Self {
        assert!(index < size);
        let mut probs = vec![F::zero(); size];
        probs[index] = F::one();
        Self { probs }
    }

    /// Softmax of finite-or-`-inf` logits. At least one logit must be finite.
    pub fn softmax(logits: &[F]) -> Self {
        let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
        assert!(max.is_finite(), "softmax needs at least one finite logit");
        let weights: Vec<F> = logits.iter().map(|&l| (l - max).exp()).collect();
        normalize_dist(&weights).expect("max logit contributes weight one")
    }

    #[inline]
    pub fn probs(&self) -> &[F] {
        &self.probs
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    #[inline]
    pub fn prob(&self, token: TokenId) -> F {
        self.probs[token.index()]
    }

    /// Most likely token; ties go to the lowest id.
    pub fn argmax(&self) -> (TokenId, F) {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate().skip(1) {
            if p > self.probs[best] {
                best = i;
            }
        }
        (TokenId(best as u32), self.probs[best])
    }

    /// Top-1 minus top-2 probability.
    pub fn top1_margin(&self) -> F {
        assert!(self.probs.len() >= 2, "margin needs at least two entries");
        let (mut first, mut second) = (F::neg_infinity(), F::neg_infinity());
        for &p in &self.probs {
            if p > first {
                second = first;
                first = p;
            } else if p > second {
                second = p;
            }
        }
        first - second
    }

    /// Shannon entropy in nats, with `0 log 0 = 0`.
    pub fn entropy(&self) -> F {
        self.probs.iter().filter(|&&p| p > F::zero()).map(|&p| -p * p.ln()).sum()
    }

    /// Entropy divided by `log V`, clamped to `[0, 1]`.
    pub fn normalized_entropy(&self) -> F {
        if self.probs.len() < 2 {
            return F::zero();
        }
        let h = self.entropy() / F::from_count(self.probs.len()).ln();
        h.max(F::zero()).min(F::one())
    }

    /// Collision probability `sum_v p(v)^2`.
    pub fn collision(&self) -> F {
        self.probs.iter().map(|&p| p * p).sum()
    }

    /// Inverse-CDF draw using one uniform from `rng`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> TokenId {
        let u = F::lit(rng.gen::<f64>());
        self.sample_with(u)
    }

    /// Inverse-CDF lookup for a given `u` in `[0, 1)`.
    pub fn sample_with(&self, u: F) -> TokenId {
        let mut acc = F::zero();
        let mut last_positive = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p <= F::zero() {
                continue;
            }
            last_positive = i;
            acc = acc + p;
            if u < acc {
                return TokenId(i as u32);
            }
        }
        // rounding left `u` past the accumulated mass
        TokenId(last_positive as u32)
    }
}

/// Free-function form of [`Dist::top1_margin`].
pub fn top1_margin<F: Real>(d: &Dist<F>) -> F {
    d.top1_margin()
}

/// Free-function form of [`Dist::normalized_entropy`].
pub fn normalized_entropy<F: Real>(d: &Dist<F>) -> F {
    d.normalized_entropy()
}

/// Total-variation distance between two equal-length probability vectors.
pub fn total_variation<F: Real>(a: &[F], b: &[F]) -> F {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| (x - y).abs()).sum::<F>() * F::lit(0.5)
}

//! Masked-diffusion noise schedules and the SUBS reverse step.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::block::{BlockState, TokenId};
use crate::dist::Dist;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// `alpha(t)`: probability a token is still clean at noise level `t`.
/// Strictly decreasing with `alpha(0) = 1` and `alpha(1) = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSchedule {
    /// `alpha(t) = 1 - t`
    #[default]
    Linear,
    /// `alpha(t) = cos(pi t / 2)`
    Cosine,
}

impl NoiseSchedule {
    pub fn alpha<F: Real>(self, t: F) -> F {
        if t <= F::zero() {
            return F::one();
        }
        if t >= F::one() {
            return F::zero();
        }
        match self {
            NoiseSchedule::Linear => F::one() - t,
            NoiseSchedule::Cosine => (F::lit(std::f64::consts::FRAC_PI_2) * t).cos(),
        }
    }
}

/// Probability that a masked position is revealed going from `t` to `s < t`.
pub fn subs_unmask_prob<F: Real>(schedule: NoiseSchedule, s: F, t: F) -> Result<F> {
    if !(s >= F::zero() && s < t && t <= F::one()) {
        return Err(Error::InvalidRange { s: s.as_f64(), t: t.as_f64() });
    }
    if s == F::zero() {
        return Ok(F::one());
    }
    let (a_s, a_t) = (schedule.alpha(s), schedule.alpha(t));
    let rho = (a_s - a_t) / (F::one() - a_t);
    Ok(rho.max(F::zero()).min(F::one()))
}

/// Draws a proposal token for every masked position, aligned with `dists`.
pub fn propose<F: Real, R: Rng + ?Sized>(dists: &[Dist<F>], rng: &mut R) -> Vec<TokenId> {
    dists.iter().map(|d| d.sample(rng)).collect()
}

/// Independent Bernoulli(`rho`) reveal decisions, one per candidate.
pub fn subs_reveal<F: Real, R: Rng + ?Sized>(n: usize, rho: F, rng: &mut R) -> Vec<bool> {
    (0..n).map(|_| F::lit(rng.gen::<f64>()) < rho).collect()
}

/// One SUBS reverse step: each masked position is revealed with probability
/// `rho` and, if revealed, takes a token drawn from its distribution.
///
/// `dists` is aligned with `block.masked_positions()`. Committed positions
/// are left untouched.
pub fn subs_step<F: Real, R: Rng + ?Sized>(
    block: &BlockState,
    dists: &[Dist<F>],
    rho: F,
    rng: &mut R,
) -> Result<BlockState> {
    let masked = block.masked_positions();
    if dists.len() != masked.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} distributions for {} masked positions",
            dists.len(),
            masked.len()
        )));
    }
    let proposals = propose(dists, rng);
    let reveal = subs_reveal(masked.len(), rho, rng);
    let mut next = block.clone();
    for ((&pos, tok), keep) in masked.iter().zip(proposals).zip(reveal) {
        if keep {
            next.commit(pos, tok);
        }
    }
    Ok(next)
}

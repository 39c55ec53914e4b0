//! Independent reference computations used to check the decoder.
//!
//! Nothing here calls into the decode or routing machinery except where the
//! thing under test is passed in explicitly (the acceptance kernel for the
//! law check, the estimator for the error report).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::block::TokenId;
use crate::dist::{total_variation, Dist};
use crate::error::{Error, Result};
use crate::masks::{block_full_mask, verifier_mask};
use crate::model::{ForwardInput, ForwardMode, Model};
use crate::routing::{acceptance_probs, Estimator};
use crate::scalar::Real;

/// Largest span the enumeration oracle accepts.
pub const MAX_ENUM_SPAN: usize = 12;

/// Expected accepted prefix by enumerating every accept/reject pattern.
pub fn brute_force_expected_prefix<F: Real>(alpha: &[F]) -> Result<F> {
    let l = alpha.len();
    if l > MAX_ENUM_SPAN {
        return Err(Error::TooLarge { len: l, max: MAX_ENUM_SPAN });
    }
    let mut total = F::zero();
    for bits in 0u32..(1u32 << l) {
        let mut prob = F::one();
        for (i, &a) in alpha.iter().enumerate() {
            prob = prob * if bits >> i & 1 == 1 { a } else { F::one() - a };
        }
        let prefix = (bits | !((1u32 << l) - 1)).trailing_ones() as usize;
        total = total + prob * F::from_count(prefix.min(l));
    }
    Ok(total)
}

pub fn tv_distance<F: Real>(a: &Dist<F>, b: &Dist<F>) -> F {
    total_variation(a.probs(), b.probs())
}

/// Accept/resample for a single drafted token, written out directly.
pub fn reference_kernel<F: Real, R: Rng + ?Sized>(
    token: TokenId,
    p_draft: &Dist<F>,
    p_ver: &Dist<F>,
    gamma: F,
    rng: &mut R,
) -> Result<TokenId> {
    let (p, q) = (p_draft.prob(token), p_ver.prob(token));
    if p <= F::zero() {
        return Err(Error::DraftProbZero);
    }
    let a = (q / p).powf(gamma).min(F::one());
    if F::lit(rng.gen::<f64>()) < a {
        return Ok(token);
    }
    let mut w: Vec<f64> =
        p_ver.probs().iter().zip(p_draft.probs()).map(|(&v, &d)| (v.as_f64() - d.as_f64()).max(0.0)).collect();
    if w.iter().all(|&x| x == 0.0) {
        w = p_ver.probs().iter().map(|v| v.as_f64()).collect();
    }
    let total: f64 = w.iter().sum();
    let u = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &x) in w.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        last = i;
        acc += x;
        if u < acc {
            return Ok(TokenId(i as u32));
        }
    }
    Ok(TokenId(last as u32))
}

/// Closed-form law of the committed token for a length-1 span:
/// `p(v) a(v) + (1 - sum_u p(u) a(u)) r(v)` with `r` the residual.
pub fn exact_committed_law<F: Real>(p_draft: &Dist<F>, p_ver: &Dist<F>, gamma: F) -> Result<Dist<F>> {
    if p_draft.len() != p_ver.len() {
        return Err(Error::DimensionMismatch("draft and verifier vocabularies differ".into()));
    }
    let accept: Vec<F> = p_draft
        .probs()
        .iter()
        .zip(p_ver.probs())
        .map(|(&p, &q)| if p > F::zero() { (q / p).powf(gamma).min(F::one()) } else { F::zero() })
        .collect();
    let kept: Vec<F> = p_draft.probs().iter().zip(&accept).map(|(&p, &a)| p * a).collect();
    let reject = (F::one() - kept.iter().copied().sum::<F>()).max(F::zero());
    let mut res: Vec<F> = p_ver.probs().iter().zip(p_draft.probs()).map(|(&v, &d)| (v - d).max(F::zero())).collect();
    let z: F = res.iter().copied().sum();
    if z > F::zero() {
        res.iter_mut().for_each(|r| *r = *r / z);
    } else {
        res = p_ver.probs().to_vec();
    }
    let law: Vec<F> = kept.iter().zip(&res).map(|(&k, &r)| k + reject * r).collect();
    crate::dist::normalize_dist(&law)
}

/// Empirical committed-token law from repeated single-token verification.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LawReport<F> {
    pub empirical: Dist<F>,
    /// Distance to the verifier distribution.
    pub tv: F,
    pub samples: usize,
}

/// Draws a token from `p_draft`, runs `kernel` on it and tallies the result.
pub fn mc_committed_token_law<F, R, K>(
    p_draft: &Dist<F>,
    p_ver: &Dist<F>,
    gamma: F,
    n_samples: usize,
    rng: &mut R,
    mut kernel: K,
) -> Result<LawReport<F>>
where
    F: Real,
    R: Rng + ?Sized,
    K: FnMut(TokenId, &Dist<F>, &Dist<F>, F, &mut R) -> Result<TokenId>,
{
    if p_draft.len() != p_ver.len() {
        return Err(Error::DimensionMismatch("draft and verifier vocabularies differ".into()));
    }
    if n_samples == 0 {
        return Err(Error::InvalidConfig("need at least one sample".into()));
    }
    let mut counts = vec![0u64; p_ver.len()];
    for _ in 0..n_samples {
        let tok = p_draft.sample(rng);
        let out = kernel(tok, p_draft, p_ver, gamma, rng)?;
        counts[out.index()] += 1;
    }
    let empirical = Dist::from_probs(counts.iter().map(|&c| F::lit(c as f64 / n_samples as f64)).collect())?;
    let tv = tv_distance(&empirical, p_ver);
    Ok(LawReport { empirical, tv, samples: n_samples })
}

/// Source of per-token acceptance estimates in the error report.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "probe", rename_all = "snake_case")]
pub enum Probe<F> {
    /// A configurable estimator.
    Estimator(Estimator<F>),
    /// The true acceptance probability `min(1, (q / p)^gamma)`.
    Exact,
    /// Every token assumed accepted.
    Ones,
}

/// Trial setup: a random prompt followed by one fully masked block that is
/// drafted in one pass and verified as a whole.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSetup<F> {
    pub block_size: usize,
    pub gamma: F,
    pub prompt_len: usize,
}

/// Signed error statistics of the predicted accepted prefix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub mean_error: f64,
    /// Standard deviation of the signed error.
    pub std_error: f64,
    pub mae: f64,
    pub n: usize,
    /// Mean accepted prefix actually observed.
    pub mean_actual: f64,
}

impl ErrorReport {
    /// Standard error of `mean_error`.
    pub fn sem(&self) -> f64 {
        self.std_error / (self.n as f64).sqrt()
    }
}

pub fn estimator_error_report<F, M, R>(
    model: &M,
    probe: &Probe<F>,
    setup: &ProbeSetup<F>,
    n_trials: usize,
    rng: &mut R,
) -> Result<ErrorReport>
where
    F: Real,
    M: Model<F> + ?Sized,
    R: Rng + ?Sized,
{
    if n_trials < 2 || setup.block_size == 0 || setup.prompt_len == 0 {
        return Err(Error::InvalidConfig("need >= 2 trials, a block and a prompt".into()));
    }
    let vocab = *model.vocab();
    let ordinary: Vec<TokenId> =
        (0..vocab.size() as u32).map(TokenId).filter(|&t| t != vocab.mask() && t != vocab.eos()).collect();
    let b = setup.block_size;
    let full = block_full_mask(b);
    let vmask = verifier_mask(b);
    let all: Vec<usize> = (0..b).collect();
    let ver_rows: Vec<usize> = (b..2 * b).collect();

    let mut errors = Vec::with_capacity(n_trials);
    let mut actual_sum = 0.0;
    for _ in 0..n_trials {
        let prompt: Vec<TokenId> = (0..setup.prompt_len).map(|_| ordinary[rng.gen_range(0..ordinary.len())]).collect();
        let masks = vec![vocab.mask(); b];
        let draft = model.forward(&ForwardInput::block(&prompt, &masks, &full, &all, ForwardMode::Draft))?;
        let tokens: Vec<TokenId> = draft.iter().map(|d| d.sample(rng)).collect();
        let confs: Vec<F> = tokens.iter().zip(&draft).map(|(&t, d)| d.prob(t)).collect();

        let mut keys = tokens.clone();
        keys.extend(std::iter::repeat_n(vocab.mask(), b));
        let base = prompt.len();
        let ver = model.forward(&ForwardInput {
            prefix: &prompt,
            keys: &keys,
            key_positions: (0..2 * b).map(|r| base + r % b).collect(),
            mask: &vmask,
            queries: &ver_rows,
            mode: ForwardMode::Verify,
            shifted: false,
        })?;
        let true_accept: Vec<F> = tokens
            .iter()
            .enumerate()
            .map(|(i, &t)| (ver[i].prob(t) / confs[i]).powf(setup.gamma).min(F::one()))
            .collect();

        let alpha: Vec<F> = match probe {
            Probe::Estimator(e) => acceptance_probs(e, &draft, &confs, rng),
            Probe::Exact => true_accept.clone(),
            Probe::Ones => vec![F::one(); b],
        };
        let mut run = 1.0;
        let mut khat = 0.0;
        for a in &alpha {
            run *= a.as_f64();
            khat += run;
        }
        let actual = true_accept.iter().take_while(|a| rng.gen::<f64>() < a.as_f64()).count();
        actual_sum += actual as f64;
        errors.push(khat - actual as f64);
    }

    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let var = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(ErrorReport {
        mean_error: mean,
        std_error: var.sqrt(),
        mae: errors.iter().map(|e| e.abs()).sum::<f64>() / n,
        n: errors.len(),
        mean_actual: actual_sum / n,
    })
}

//! Block samplers and the outer block-wise loop.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{DecodeConfig, Drafting, MaskMode, Sampler, Schedule};
use super::kernel::speculative_accept;
use crate::block::{first_contiguous_span, BlockState, TokenId};
use crate::dist::Dist;
use crate::error::{Error, Result};
use crate::masks::{block_full_mask, causal_mask, draft_mask, verification_mask, VerifierView};
use crate::model::{ForwardInput, ForwardMode, Model};
use crate::routing::{
    acceptance_probs, context_bucket, expected_prefix, verify_score, Bucket, Policy, RouteQuery, RoutingState,
};
use crate::scalar::Real;
use crate::schedule::{subs_reveal, subs_unmask_prob};
use crate::trace::{BlockRecord, CommitEvent, DecodeTrace, StepMode, StepRecord};

/// A decoded sequence: prompt followed by the generated tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeOutput<F> {
    pub tokens: Vec<TokenId>,
    pub trace: DecodeTrace<F>,
}

impl<F> DecodeOutput<F> {
    pub fn generated(&self) -> &[TokenId] {
        &self.tokens[self.trace.prompt_len..]
    }
}

/// Standard block-diffusion sampling of one block: every step runs one draft
/// forward and commits the confident tokens plus the most confident one.
pub fn sample_block_bd3<F, M, R>(
    model: &M,
    block: BlockState,
    cfg: &DecodeConfig<F>,
    rng: &mut R,
    trace: &mut DecodeTrace<F>,
) -> Result<BlockState>
where
    F: Real,
    M: Model<F> + ?Sized,
    R: Rng + ?Sized,
{
    sample_block(model, block, cfg, None, rng, trace)
}

/// Self-speculative sampling of one block: the first contiguous masked span
/// is optionally verified by the same model in AR mode, otherwise the step
/// falls back to the diffusion commit rule.
pub fn sample_block_s2d2<F, M, R>(
    model: &M,
    block: BlockState,
    cfg: &DecodeConfig<F>,
    routing: &mut RoutingState<F>,
    rng: &mut R,
    trace: &mut DecodeTrace<F>,
) -> Result<BlockState>
where
    F: Real,
    M: Model<F> + ?Sized,
    R: Rng + ?Sized,
{
    sample_block(model, block, cfg, Some(routing), rng, trace)
}

/// Block-wise autoregressive decoding of one prompt.
///
/// `routing` is required for [`Sampler::S2d2`] and ignored otherwise. Its
/// per-sequence state is reset at the start of the call.
pub fn decode_sequence<F, M, R>(
    model: &M,
    prompt: &[TokenId],
    cfg: &DecodeConfig<F>,
    sampler: Sampler,
    mut routing: Option<&mut RoutingState<F>>,
    rng: &mut R,
) -> Result<DecodeOutput<F>>
where
    F: Real,
    M: Model<F> + ?Sized,
    R: Rng + ?Sized,
{
    cfg.validate()?;
    if prompt.is_empty() {
        return Err(Error::EmptyPrompt);
    }
    let vocab = *model.vocab();
    if let Some(t) = prompt.iter().find(|t| !vocab.contains(**t) || **t == vocab.mask()) {
        return Err(Error::InvalidVocab(format!("prompt token {t} is not a valid input token")));
    }
    if sampler == Sampler::S2d2 && routing.is_none() {
        return Err(Error::InvalidConfig("the s2d2 sampler needs a routing policy".into()));
    }
    let cfg_local;
    let cfg = if sampler == Sampler::Subs && cfg.schedule != Schedule::Subs {
        cfg_local = DecodeConfig { schedule: Schedule::Subs, ..cfg.clone() };
        &cfg_local
    } else {
        cfg
    };
    if let Some(r) = routing.as_deref_mut() {
        r.validate()?;
        r.begin_sequence();
    }

    let mut trace = DecodeTrace { prompt_len: prompt.len(), ..DecodeTrace::default() };
    let mut seq = prompt.to_vec();
    while trace.decoded_positions < cfg.max_new_tokens {
        let len = cfg.block_size.min(cfg.max_new_tokens - trace.decoded_positions);
        let block = BlockState::masked(seq, len, &vocab);
        let block = match sampler {
            Sampler::S2d2 => sample_block(model, block, cfg, routing.as_deref_mut(), rng, &mut trace)?,
            Sampler::Bd3 | Sampler::Subs => sample_block(model, block, cfg, None, rng, &mut trace)?,
        };
        cache_pass(model, &block, cfg.cache_mode, &mut trace)?;
        let start = trace.decoded_positions;
        trace.blocks.push(BlockRecord { index: trace.blocks.len(), start, len, nfe_after_cache: trace.nfe });
        trace.decoded_positions += len;
        seq = block.into_sequence();
        if let Some(i) = seq[prompt.len() + start..].iter().position(|&t| t == vocab.eos()) {
            seq.truncate(prompt.len() + start + i + 1);
            break;
        }
    }
    trace.generated = seq.len() - prompt.len();
    Ok(DecodeOutput { tokens: seq, trace })
}

/// Cache-update forward over a finished block. Produces no distributions but
/// costs one forward pass.
fn cache_pass<F, M>(model: &M, block: &BlockState, mode: MaskMode, trace: &mut DecodeTrace<F>) -> Result<()>
where
    F: Real,
    M: Model<F> + ?Sized,
{
    let n = block.block_size();
    let mask = match mode {
        MaskMode::Block => block_full_mask(n),
        MaskMode::Ar => causal_mask(n),
    };
    model.forward(&ForwardInput::block(block.committed_prefix(), block.tokens(), &mask, &[], ForwardMode::Draft))?;
    trace.nfe += 1;
    Ok(())
}

/// Drafted token and its confidence for every masked position.
fn draft<F: Real, R: Rng + ?Sized>(dists: &[Dist<F>], mode: Drafting, rng: &mut R) -> (Vec<TokenId>, Vec<F>) {
    dists
        .iter()
        .map(|d| match mode {
            Drafting::Stochastic => {
                let t = d.sample(rng);
                (t, d.prob(t))
            }
            Drafting::Greedy => d.argmax(),
        })
        .unzip()
}

/// Index of the highest confidence; the lowest index wins ties.
fn argmax_index<F: Real>(confs: &[F]) -> usize {
    let mut best = 0;
    for (i, &c) in confs.iter().enumerate() {
        if c > confs[best] {
            best = i;
        }
    }
    best
}

fn sample_block<F, M, R>(
    model: &M,
    mut block: BlockState,
    cfg: &DecodeConfig<F>,
    mut routing: Option<&mut RoutingState<F>>,
    rng: &mut R,
    trace: &mut DecodeTrace<F>,
) -> Result<BlockState>
where
    F: Real,
    M: Model<F> + ?Sized,
    R: Rng + ?Sized,
{
    let b = block.block_size();
    let block_index = trace.blocks.len();
    let block_start = block.offset().saturating_sub(trace.prompt_len);
    let tau = cfg.effective_threshold();
    let steps = cfg.max_steps;
    let mut last: Option<(Vec<usize>, Vec<Dist<F>>)> = None;

    for k in 1..=steps {
        if !block.has_mask() {
            break;
        }
        let masked = block.masked_positions();
        let j = masked[0];
        let mask = match cfg.draft_mask_mode {
            MaskMode::Block => block_full_mask(b),
            MaskMode::Ar => draft_mask(b, j),
        };
        let dists = model.forward(&ForwardInput::block(
            block.committed_prefix(),
            block.tokens(),
            &mask,
            &masked,
            ForwardMode::Draft,
        ))?;
        trace.nfe += 1;
        let (tokens, confs) = draft(&dists, cfg.drafting, rng);

        let span = first_contiguous_span(&masked);
        let l = span.len();
        let mut record = StepRecord {
            step: trace.steps.len(),
            block_step: k,
            block: block_index,
            block_start,
            mode: StepMode::Diffusion,
            span_len: l,
            verified: false,
            accepted_count: 0,
            rejected_at: None,
            commits: Vec::new(),
            score: None,
            khat: None,
            nfe_after: 0,
            budget_exhausted: false,
        };

        let mut bucket: Option<Bucket> = None;
        let verify = match routing.as_deref_mut() {
            None => false,
            Some(r) => {
                let mut query = RouteQuery { span_len: l, score: None, bucket: None };
                if r.policy.needs_score() {
                    let alpha = acceptance_probs(&r.estimator, &dists[..l], &confs[..l], rng);
                    let khat = expected_prefix(&alpha);
                    let n_hi = confs.iter().filter(|&&c| c > tau).count();
                    let s = verify_score(khat, &r.score_mode, n_hi);
                    record.khat = Some(khat);
                    record.score = Some(s);
                    query.score = Some(s);
                }
                if let Policy::Bandit { bins, .. } = r.policy {
                    let progress = F::from_count(b - masked.len()) / F::from_count(b);
                    let ent = dists[..l].iter().map(|d| d.normalized_entropy()).sum::<F>() / F::from_count(l);
                    bucket = Some(context_bucket(l, b, progress, ent, bins));
                    query.bucket = bucket;
                }
                r.do_verify(&query)
            }
        };

        if verify {
            let ver = verify_span(model, &block, j, &tokens[..l], cfg.verifier_view)?;
            trace.nfe += 1;
            let verdict = speculative_accept(&tokens[..l], &dists[..l], &ver, cfg.temper, rng)?;
            record.mode = StepMode::Speculative;
            record.verified = true;
            record.accepted_count = verdict.accepted_count;
            record.rejected_at = verdict.rejected_at();
            for i in 0..verdict.accepted_count {
                let pos = j + i;
                block.commit(pos, tokens[i]);
                record.commits.push(CommitEvent {
                    pos,
                    token: tokens[i],
                    conf: confs[i],
                    q: Some(ver[i].prob(tokens[i])),
                    resampled: false,
                    forced: false,
                });
            }
            if let Some(rej) = verdict.rejection {
                let pos = j + rej.index;
                let q = ver[rej.index].prob(rej.token);
                block.commit(pos, rej.token);
                record.commits.push(CommitEvent {
                    pos,
                    token: rej.token,
                    conf: q,
                    q: Some(q),
                    resampled: true,
                    forced: false,
                });
            }
        } else if cfg.schedule == Schedule::Subs {
            record.mode = StepMode::Subs;
            let t = F::one() - F::from_count(k - 1) / F::from_count(steps);
            let s = F::one() - F::from_count(k) / F::from_count(steps);
            let rho = subs_unmask_prob(cfg.noise, s.max(F::zero()), t)?;
            let reveal = subs_reveal(masked.len(), rho, rng);
            for (i, &pos) in masked.iter().enumerate() {
                if reveal[i] {
                    block.commit(pos, tokens[i]);
                    record.commits.push(CommitEvent::plain(pos, tokens[i], confs[i]));
                }
            }
        } else {
            let top = argmax_index(&confs);
            for (i, &pos) in masked.iter().enumerate() {
                if confs[i] > tau || i == top {
                    block.commit(pos, tokens[i]);
                    record.commits.push(CommitEvent::plain(pos, tokens[i], confs[i]));
                }
            }
        }

        if let (Some(r), Some(bk)) = (routing.as_deref_mut(), bucket) {
            if let Some(stats) = r.bandit_mut() {
                stats.update(bk, usize::from(verify), record.commits.len(), verify);
            }
        }
        record.nfe_after = trace.nfe;
        trace.steps.push(record);
        last = Some((masked, dists));
    }

    if block.has_mask() {
        let (masked, dists) = last.expect("max_steps >= 1 guarantees a draft pass");
        let rec = trace.steps.last_mut().expect("a step was recorded");
        rec.budget_exhausted = true;
        for (i, &pos) in masked.iter().enumerate() {
            if block.is_masked(pos) {
                let (tok, conf) = dists[i].argmax();
                block.commit(pos, tok);
                rec.commits.push(CommitEvent { forced: true, ..CommitEvent::plain(pos, tok, conf) });
            }
        }
    }
    Ok(block)
}

/// One verifier forward over the span starting at block position `j`.
/// Returns the verifier distribution for each span position.
fn verify_span<F, M>(
    model: &M,
    block: &BlockState,
    j: usize,
    span: &[TokenId],
    view: VerifierView,
) -> Result<Vec<Dist<F>>>
where
    F: Real,
    M: Model<F> + ?Sized,
{
    let l = span.len();
    let mut prefix = block.committed_prefix().to_vec();
    prefix.extend_from_slice(&block.tokens()[..j]);
    let base = prefix.len();
    let mask = verification_mask(view, l);
    match view {
        VerifierView::PositionAligned => {
            let mut keys = span.to_vec();
            keys.extend(std::iter::repeat_n(block.mask_id(), l));
            let positions: Vec<usize> = (0..2 * l).map(|r| base + r % l).collect();
            let queries: Vec<usize> = (l..2 * l).collect();
            let input = ForwardInput {
                prefix: &prefix,
                keys: &keys,
                key_positions: positions,
                mask: &mask,
                queries: &queries,
                mode: ForwardMode::Verify,
                shifted: false,
            };
            model.forward(&input)
        }
        VerifierView::RightShifted => {
            let mut keys = Vec::with_capacity(l);
            keys.push(*prefix.last().ok_or(Error::EmptyPrompt)?);
            keys.extend_from_slice(&span[..l - 1]);
            let positions: Vec<usize> = (0..l).map(|r| base - 1 + r).collect();
            let queries: Vec<usize> = (0..l).collect();
            let input = ForwardInput {
                prefix: &prefix,
                keys: &keys,
                key_positions: positions,
                mask: &mask,
                queries: &queries,
                mode: ForwardMode::Verify,
                shifted: true,
            };
            model.forward(&input)
        }
    }
}

impl<F> CommitEvent<F> {
    fn plain(pos: usize, token: TokenId, conf: F) -> Self {
        Self { pos, token, conf, q: None, resampled: false, forced: false }
    }
}

//! Cost accounting, AR-ness, confidence curves and the local energy.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::trace::DecodeTrace;

/// Forward passes per decoded position.
pub fn nfe_per_token<F>(trace: &DecodeTrace<F>) -> Result<f64> {
    if trace.nfe == 0 || trace.decoded_positions == 0 {
        return Err(Error::ZeroNfe);
    }
    Ok(trace.nfe as f64 / trace.decoded_positions as f64)
}

/// `(baseline NFE per token) / (method NFE per token)`.
pub fn nfe_speedup<F>(trace: &DecodeTrace<F>, baseline: &DecodeTrace<F>) -> Result<f64> {
    let method = nfe_per_token(trace)?;
    Ok(nfe_per_token(baseline)? / method)
}

/// `-log q + log p`; `min(1, exp(-E))` is the untempered acceptance probability.
pub fn local_energy<F: Real>(p: F, q: F) -> Result<F> {
    if !(p > F::zero() && q > F::zero()) {
        return Err(Error::NonpositiveProb { p: p.as_f64(), q: q.as_f64() });
    }
    Ok(-q.ln() + p.ln())
}

/// Hit and event counts behind an AR-ness ratio.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub hits: usize,
    pub events: usize,
}

impl Tally {
    pub fn ratio(&self) -> Option<f64> {
        (self.events > 0).then(|| self.hits as f64 / self.events as f64)
    }

    fn add(&mut self, hit: bool) {
        self.events += 1;
        self.hits += usize::from(hit);
    }
}

impl std::ops::Add for Tally {
    type Output = Tally;
    fn add(self, o: Tally) -> Tally {
        Tally { hits: self.hits + o.hits, events: self.events + o.events }
    }
}

/// How AR-ness is aggregated over several sequences.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// One ratio over all commit events.
    #[default]
    Events,
    /// Mean of per-sequence ratios.
    Sequences,
}

/// Block-local commit positions grouped by block, in commit order.
fn events_by_block<F>(trace: &DecodeTrace<F>) -> BTreeMap<usize, Vec<usize>> {
    let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for s in &trace.steps {
        out.entry(s.block).or_default().extend(s.committed_positions());
    }
    out
}

/// An event is local when it lands less than `k` positions before, or at
/// most `k` positions after, the previous commit in the same block. The first
/// event of a block is compared against the slot just before the block.
pub fn local_arness_tally<F>(trace: &DecodeTrace<F>, k: usize) -> Tally {
    let k = k as i64;
    let mut t = Tally::default();
    for positions in events_by_block(trace).values() {
        let mut prev = -1i64;
        for &p in positions {
            let d = p as i64 - prev;
            t.add(d > -k && d <= k);
            prev = p as i64;
        }
    }
    t
}

/// An event is global when its position is among the `k` leftmost positions
/// still masked at the moment it is committed. Commits within a step are
/// applied one at a time in ascending order.
pub fn global_arness_tally<F>(trace: &DecodeTrace<F>, k: usize) -> Tally {
    let mut t = Tally::default();
    for (block, positions) in events_by_block(trace) {
        let len = trace
            .blocks
            .iter()
            .find(|b| b.index == block)
            .map(|b| b.len)
            .unwrap_or_else(|| positions.iter().max().map_or(0, |m| m + 1));
        let mut masked = vec![true; len.max(positions.iter().max().map_or(0, |m| m + 1))];
        for &p in &positions {
            let rank = masked[..p].iter().filter(|&&m| m).count();
            t.add(rank < k);
            masked[p] = false;
        }
    }
    t
}

pub fn local_arness_at_k<F>(trace: &DecodeTrace<F>, k: usize) -> f64 {
    local_arness_tally(trace, k).ratio().unwrap_or(0.0)
}

pub fn global_arness_at_k<F>(trace: &DecodeTrace<F>, k: usize) -> f64 {
    global_arness_tally(trace, k).ratio().unwrap_or(0.0)
}

/// Which AR-ness variant to aggregate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arness {
    Local,
    Global,
}

/// AR-ness over several traces; `None` when there are no commit events.
pub fn pooled_arness<F>(traces: &[DecodeTrace<F>], k: usize, which: Arness, pooling: Pooling) -> Option<f64> {
    let tally = |t: &DecodeTrace<F>| match which {
        Arness::Local => local_arness_tally(t, k),
        Arness::Global => global_arness_tally(t, k),
    };
    match pooling {
        Pooling::Events => traces.iter().map(tally).fold(Tally::default(), |a, b| a + b).ratio(),
        Pooling::Sequences => {
            let rs: Vec<f64> = traces.iter().filter_map(|t| tally(t).ratio()).collect();
            (!rs.is_empty()).then(|| rs.iter().sum::<f64>() / rs.len() as f64)
        }
    }
}

/// Per-bin mean confidence and tokens per step over normalized position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceCurve {
    pub mean_conf: Vec<Option<f64>>,
    pub tokens_per_step: Vec<Option<f64>>,
}

pub fn confidence_curve<F: Real>(trace: &DecodeTrace<F>, n_bins: usize) -> ConfidenceCurve {
    pooled_confidence_curve(std::slice::from_ref(trace), n_bins)
}

/// Commit events are binned by generated position over the decoded length.
/// Tokens per step in a bin is its event count divided by the number of
/// distinct steps contributing to it.
pub fn pooled_confidence_curve<F: Real>(traces: &[DecodeTrace<F>], n_bins: usize) -> ConfidenceCurve {
    assert!(n_bins >= 1, "need at least one bin");
    let mut conf_sum = vec![0.0; n_bins];
    let mut count = vec![0usize; n_bins];
    let mut steps: Vec<std::collections::BTreeSet<(usize, usize)>> = vec![Default::default(); n_bins];
    for (seq, trace) in traces.iter().enumerate() {
        let total = trace.decoded_positions.max(trace.commit_order().map(|(p, _, _)| p + 1).max().unwrap_or(0));
        for (pos, step, ev) in trace.commit_order() {
            let bin = (pos * n_bins / total).min(n_bins - 1);
            conf_sum[bin] += ev.conf.as_f64();
            count[bin] += 1;
            steps[bin].insert((seq, step.step));
        }
    }
    ConfidenceCurve {
        mean_conf: (0..n_bins).map(|b| (count[b] > 0).then(|| conf_sum[b] / count[b] as f64)).collect(),
        tokens_per_step: (0..n_bins).map(|b| (count[b] > 0).then(|| count[b] as f64 / steps[b].len() as f64)).collect(),
    }
}

/// Aggregate statistics over a set of decoded sequences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub sequences: usize,
    /// Output tokens after EOS truncation.
    pub tokens: usize,
    /// Positions decoded, the denominator of cost ratios.
    pub decoded: usize,
    pub nfe: usize,
    pub blocks: usize,
    pub steps: usize,
    pub verified_steps: usize,
    pub tokens_per_nfe: Option<f64>,
    pub verify_rate: Option<f64>,
    /// Mean accepted prefix over verified steps.
    pub mean_accepted_prefix: Option<f64>,
    /// Fraction of verified steps that ended in a rejection.
    pub rejection_rate: Option<f64>,
    /// Per-token acceptance: accepted tokens over tokens that reached the
    /// accept test (accepted plus first rejections).
    pub acceptance_rate: Option<f64>,
    pub arness_k: usize,
    pub local_arness: Option<f64>,
    pub global_arness: Option<f64>,
}

impl RunSummary {
    pub fn from_traces<F>(traces: &[DecodeTrace<F>], k: usize) -> Self {
        let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
        let verified = || traces.iter().flat_map(|t| t.steps.iter()).filter(|s| s.verified);
        let decoded = traces.iter().map(|t| t.decoded_positions).sum();
        let nfe = traces.iter().map(|t| t.nfe).sum();
        let steps = traces.iter().map(|t| t.steps.len()).sum();
        let verified_steps = verified().count();
        let accepted: usize = verified().map(|s| s.accepted_count).sum();
        let rejected = verified().filter(|s| s.rejected_at.is_some()).count();
        RunSummary {
            sequences: traces.len(),
            tokens: traces.iter().map(|t| t.generated).sum(),
            decoded,
            nfe,
            blocks: traces.iter().map(|t| t.blocks.len()).sum(),
            steps,
            verified_steps,
            tokens_per_nfe: ratio(decoded, nfe),
            verify_rate: ratio(verified_steps, steps),
            mean_accepted_prefix: ratio(accepted, verified_steps),
            rejection_rate: ratio(rejected, verified_steps),
            acceptance_rate: ratio(accepted, accepted + rejected),
            arness_k: k,
            local_arness: pooled_arness(traces, k, Arness::Local, Pooling::Events),
            global_arness: pooled_arness(traces, k, Arness::Global, Pooling::Events),
        }
    }
}

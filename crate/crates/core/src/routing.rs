//! Deciding when verification is worth an extra forward pass.
//!
//! Acceptance estimators turn the drafter's span distributions into per-token
//! acceptance guesses `alpha_i`, [`expected_prefix`] folds them into an
//! expected accepted-prefix length, and [`verify_score`] charges a cost
//! against it. A [`RoutingState`] then applies one of the policies: minimum
//! span, score threshold, two-threshold hysteresis, or a UCB contextual
//! bandit.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::Dist;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Per-token acceptance estimator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Estimator<F> {
    /// `alpha ~ U[0, 1]`
    Random,
    /// `exp(-beta * H / log V)`
    SoftEntropy { beta: F },
    /// `p^gamma` of the sampled-token confidence
    ConfPower { gamma: F },
    /// `sum_v p(v)^2`
    Renyi2,
    /// `1[H / log V < tau]`
    HardEntropy { tau: F },
    /// `1[top1 - top2 >= tau]`
    HardMargin { tau: F },
}

impl<F: Real> Estimator<F> {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Estimator::Random | Estimator::Renyi2 => true,
            Estimator::SoftEntropy { beta: x } | Estimator::ConfPower { gamma: x } => x > F::zero(),
            Estimator::HardEntropy { tau } | Estimator::HardMargin { tau } => tau >= F::zero() && tau <= F::one(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("estimator parameter out of range: {self:?}")))
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Random => "random",
            Estimator::SoftEntropy { .. } => "soft_entropy",
            Estimator::ConfPower { .. } => "conf_power",
            Estimator::Renyi2 => "renyi2",
            Estimator::HardEntropy { .. } => "hard_entropy",
            Estimator::HardMargin { .. } => "hard_margin",
        }
    }

    /// The single tunable parameter, if any.
    pub fn param(&self) -> Option<F> {
        match *self {
            Estimator::Random | Estimator::Renyi2 => None,
            Estimator::SoftEntropy { beta: x }
            | Estimator::ConfPower { gamma: x }
            | Estimator::HardEntropy { tau: x }
            | Estimator::HardMargin { tau: x } => Some(x),
        }
    }
}

/// Per-token acceptance estimates for a span. `span_confs[i]` is the
/// drafter's probability of the token it proposed at span position `i`.
pub fn acceptance_probs<F: Real, R: Rng + ?Sized>(
    est: &Estimator<F>,
    span_dists: &[Dist<F>],
    span_confs: &[F],
    rng: &mut R,
) -> Vec<F> {
    debug_assert_eq!(span_dists.len(), span_confs.len());
    let clamp = |x: F| x.max(F::zero()).min(F::one());
    let indicator = |b: bool| if b { F::one() } else { F::zero() };
    match *est {
        Estimator::Random => span_dists.iter().map(|_| F::lit(rng.gen::<f64>())).collect(),
        Estimator::SoftEntropy { beta } => {
            span_dists.iter().map(|d| clamp((-beta * d.normalized_entropy()).exp())).collect()
        }
        Estimator::ConfPower { gamma } => span_confs.iter().map(|&p| clamp(p.powf(gamma))).collect(),
        Estimator::Renyi2 => span_dists.iter().map(|d| clamp(d.collision())).collect(),
        Estimator::HardEntropy { tau } => span_dists.iter().map(|d| indicator(d.normalized_entropy() < tau)).collect(),
        Estimator::HardMargin { tau } => span_dists.iter().map(|d| indicator(d.top1_margin() >= tau)).collect(),
    }
}

/// Expected accepted-prefix length `sum_k prod_{i<=k} alpha_i`.
pub fn expected_prefix<F: Real>(alpha: &[F]) -> F {
    let mut run = F::one();
    let mut total = F::zero();
    for &a in alpha {
        run = run * a;
        total = total + run;
    }
    total
}

/// How the verification cost is charged.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ScoreMode<F> {
    /// `s = K - c`
    Static { cost: F },
    /// `s = K - c * N_hi`
    Dynamic { cost: F },
}

impl<F: Real> Default for ScoreMode<F> {
    fn default() -> Self {
        ScoreMode::Static { cost: F::one() }
    }
}

impl<F: Real> ScoreMode<F> {
    pub fn cost(&self) -> F {
        match *self {
            ScoreMode::Static { cost } | ScoreMode::Dynamic { cost } => cost,
        }
    }
}

/// Verification score from the expected prefix and the number of masked
/// positions whose draft confidence already clears the threshold.
pub fn verify_score<F: Real>(khat: F, mode: &ScoreMode<F>, n_hi: usize) -> F {
    match *mode {
        ScoreMode::Static { cost } => khat - cost,
        ScoreMode::Dynamic { cost } => khat - cost * F::from_count(n_hi),
    }
}

/// Number of bins along (span length, block progress, entropy).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bins {
    pub span: usize,
    pub progress: usize,
    pub entropy: usize,
}

impl Default for Bins {
    fn default() -> Self {
        Self { span: 2, progress: 2, entropy: 2 }
    }
}

impl Bins {
    fn cells(&self) -> usize {
        self.span * self.progress * self.entropy
    }
}

/// Discretized bandit context.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Bucket {
    pub span: usize,
    pub progress: usize,
    pub entropy: usize,
}

fn linear_bin(frac: f64, bins: usize) -> usize {
    let b = (frac.clamp(0.0, 1.0) * bins as f64).floor() as usize;
    b.min(bins - 1)
}

/// Equal-width binning: span length over `[1, block_size]`, progress (fraction
/// of the block already unmasked) and mean normalized entropy over `[0, 1]`.
pub fn context_bucket<F: Real>(span_len: usize, block_size: usize, progress: F, mean_entropy: F, bins: Bins) -> Bucket {
    let span_frac = if block_size <= 1 { 0.0 } else { (span_len.max(1) - 1) as f64 / (block_size - 1) as f64 };
    Bucket {
        span: linear_bin(span_frac, bins.span),
        progress: linear_bin(progress.as_f64(), bins.progress),
        entropy: linear_bin(mean_entropy.as_f64(), bins.entropy),
    }
}

/// Running UCB statistics per (action, bucket).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BanditStats<F> {
    bins: Bins,
    beta: F,
    /// Decision counter; starts at 1.
    t: u64,
    counts: Vec<u64>,
    means: Vec<F>,
}

impl<F: Real> BanditStats<F> {
    pub fn new(beta: F, bins: Bins) -> Self {
        let n = 2 * bins.cells();
        Self { bins, beta, t: 1, counts: vec![0; n], means: vec![F::zero(); n] }
    }

    pub fn bins(&self) -> Bins {
        self.bins
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    fn slot(&self, action: usize, b: Bucket) -> usize {
        assert!(action < 2, "action must be 0 or 1");
        assert!(
            b.span < self.bins.span && b.progress < self.bins.progress && b.entropy < self.bins.entropy,
            "bucket {b:?} outside bins {:?}",
            self.bins
        );
        let cell = (b.span * self.bins.progress + b.progress) * self.bins.entropy + b.entropy;
        action * self.bins.cells() + cell
    }

    pub fn count(&self, action: usize, b: Bucket) -> u64 {
        self.counts[self.slot(action, b)]
    }

    pub fn mean(&self, action: usize, b: Bucket) -> F {
        self.means[self.slot(action, b)]
    }

    /// Overwrites the statistics of one arm.
    pub fn set(&mut self, action: usize, b: Bucket, count: u64, mean: F) {
        let s = self.slot(action, b);
        self.counts[s] = count;
        self.means[s] = mean;
    }

    fn ucb(&self, action: usize, b: Bucket) -> F {
        let n = self.count(action, b);
        if n == 0 {
            return F::infinity();
        }
        let log_t = F::lit((self.t as f64).ln());
        self.mean(action, b) + self.beta * (log_t / F::lit(n as f64)).sqrt()
    }

    /// UCB arm choice for `bucket`; ties (including two untried arms) pick
    /// action 1. Advances the decision counter.
    pub fn select(&mut self, bucket: Bucket) -> usize {
        let (u0, u1) = (self.ucb(0, bucket), self.ucb(1, bucket));
        self.t += 1;
        if u1 >= u0 {
            1
        } else {
            0
        }
    }

    /// Incremental mean update with an arbitrary reward.
    pub fn record(&mut self, bucket: Bucket, action: usize, reward: F) {
        let s = self.slot(action, bucket);
        self.counts[s] += 1;
        let n = F::lit(self.counts[s] as f64);
        self.means[s] = self.means[s] + (reward - self.means[s]) / n;
    }

    /// Records reward `decoded / cost` where cost is 2 for a verified step and 1 otherwise.
    pub fn update(&mut self, bucket: Bucket, action: usize, decoded_this_step: usize, verified: bool) {
        let cost = if verified { 2.0 } else { 1.0 };
        self.record(bucket, action, F::from_count(decoded_this_step) / F::lit(cost));
    }

    /// Clears all arm statistics and restarts the decision counter.
    pub fn reset(&mut self) {
        *self = Self::new(self.beta, self.bins);
    }
}

/// Which rule decides whether to verify.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Policy<F> {
    /// Never verify; the self-speculative sampler then reduces to plain diffusion.
    Never,
    /// Verify when `|C_t| >= tau_span`.
    MinSpan { tau_span: usize },
    /// Verify when `s >= tau_score`.
    ScoreThreshold { tau_score: F },
    /// Two-threshold switch on the score.
    Hysteresis { tau_on: F, tau_off: F },
    /// UCB contextual bandit.
    Bandit { beta: F, bins: Bins },
}

impl<F: Real> Policy<F> {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Policy::MinSpan { tau_span: 0 } => Err(Error::InvalidConfig("policy.tau_span must be >= 1".into())),
            Policy::Hysteresis { tau_on, tau_off } if tau_off > tau_on => Err(Error::InvalidConfig(format!(
                "policy.tau_off ({tau_off}) must not exceed policy.tau_on ({tau_on})"
            ))),
            Policy::Bandit { beta, bins } => {
                if beta < F::zero() {
                    return Err(Error::InvalidConfig("policy.beta_ucb must be >= 0".into()));
                }
                if bins.span == 0 || bins.progress == 0 || bins.entropy == 0 {
                    return Err(Error::InvalidConfig("policy.bins entries must be >= 1".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Policy::Never => "never",
            Policy::MinSpan { .. } => "min_span",
            Policy::ScoreThreshold { .. } => "score_threshold",
            Policy::Hysteresis { .. } => "hysteresis",
            Policy::Bandit { .. } => "bandit",
        }
    }

    /// Whether the policy consumes the verification score.
    pub fn needs_score(&self) -> bool {
        matches!(self, Policy::ScoreThreshold { .. } | Policy::Hysteresis { .. })
    }
}

/// Hysteresis switch position.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Switch {
    On,
    Off,
}

/// Inputs to one routing decision.
#[derive(Clone, Copy, Debug)]
pub struct RouteQuery<F> {
    pub span_len: usize,
    pub score: Option<F>,
    pub bucket: Option<Bucket>,
}

/// Policy parameters plus the mutable state a decode run carries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutingState<F> {
    pub policy: Policy<F>,
    pub score_mode: ScoreMode<F>,
    pub estimator: Estimator<F>,
    /// Switch position at the start of each sequence.
    pub initial_switch: Switch,
    switch: Switch,
    bandit: Option<BanditStats<F>>,
    /// Keep bandit statistics across sequences.
    pub persist_bandit: bool,
}

impl<F: Real> RoutingState<F> {
    pub fn new(policy: Policy<F>, score_mode: ScoreMode<F>, estimator: Estimator<F>) -> Self {
        let bandit = match policy {
            Policy::Bandit { beta, bins } => Some(BanditStats::new(beta, bins)),
            _ => None,
        };
        Self {
            policy,
            score_mode,
            estimator,
            initial_switch: Switch::On,
            switch: Switch::On,
            bandit,
            persist_bandit: true,
        }
    }

    /// A state that never verifies.
    pub fn never() -> Self {
        Self::new(Policy::Never, ScoreMode::default(), Estimator::SoftEntropy { beta: F::one() })
    }

    pub fn with_initial_switch(mut self, s: Switch) -> Self {
        self.initial_switch = s;
        self.switch = s;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        self.estimator.validate()?;
        if self.score_mode.cost() < F::zero() {
            return Err(Error::InvalidConfig("policy.cost must be >= 0".into()));
        }
        Ok(())
    }

    pub fn switch(&self) -> Switch {
        self.switch
    }

    pub fn bandit(&self) -> Option<&BanditStats<F>> {
        self.bandit.as_ref()
    }

    pub fn bandit_mut(&mut self) -> Option<&mut BanditStats<F>> {
        self.bandit.as_mut()
    }

    /// Resets per-sequence state: the hysteresis switch always, bandit
    /// statistics only when they are not persisted.
    pub fn begin_sequence(&mut self) {
        self.switch = self.initial_switch;
        if !self.persist_bandit {
            if let Some(b) = self.bandit.as_mut() {
                b.reset();
            }
        }
    }

    /// Applies the policy. Score-based policies need `query.score`, the
    /// bandit needs `query.bucket`; a missing input counts as "do not verify".
    pub fn do_verify(&mut self, query: &RouteQuery<F>) -> bool {
        match self.policy {
            Policy::Never => false,
            Policy::MinSpan { tau_span } => query.span_len >= tau_span,
            Policy::ScoreThreshold { tau_score } => query.score.is_some_and(|s| s >= tau_score),
            Policy::Hysteresis { tau_on, tau_off } => {
                let Some(s) = query.score else {
                    return self.switch == Switch::On;
                };
                match self.switch {
                    Switch::On if s < tau_off => self.switch = Switch::Off,
                    Switch::Off if s >= tau_on => self.switch = Switch::On,
                    _ => {}
                }
                self.switch == Switch::On
            }
            Policy::Bandit { .. } => match (self.bandit.as_mut(), query.bucket) {
                (Some(b), Some(bucket)) => b.select(bucket) == 1,
                _ => false,
            },
        }
    }
}

//! Experiment configuration.
//!
//! A TOML file with a handful of top-level keys and one table per concern:
//! `[model]`, `[decode]`, `[policy]`, `[estimator]` and, for sweeps,
//! `[sweep]`. Every table rejects unknown keys so a misspelt threshold
//! fails loudly instead of silently running with the default.
//!
//! ```toml
//! seed = 3
//! sampler = "s2d2"
//! prompts = [[1, 2, 3], [4, 5]]
//!
//! [model]
//! vocab = 64
//! drift = 0.2
//!
//! [decode]
//! block_size = 8
//! max_new_tokens = 64
//!
//! [policy]
//! kind = "min_span"
//! tau_span = 2
//!
//! [sweep]
//! block_size = [4, 8]
//! tau_span = [1, 2]
//! ```

use std::path::{Path, PathBuf};

use blockspec::routing::{Bins, Switch};
use blockspec::{
    DecodeConfig64, Drafting, Estimator, MaskMode, ModelSpec64, NoiseSchedule, Policy, RoutingState64, Sampler,
    Schedule, ScoreMode, TokenId, VerifierView,
};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

fn config_err(e: blockspec::Error) -> CliError {
    CliError::Config(e.to_string())
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sampler: Sampler,
    /// Inline prompts as token-id lists.
    #[serde(default)]
    pub prompts: Vec<Vec<u32>>,
    /// One prompt per line, space-separated ids. Relative paths resolve
    /// against the config file's directory.
    pub prompts_file: Option<PathBuf>,
    /// Sequences per run (per cell in a sweep). Prompts are reused
    /// cyclically; defaults to the number of prompts.
    pub sequences: Option<usize>,
    /// Length of the random prompts drawn when none are supplied.
    #[serde(default = "default_prompt_len")]
    pub prompt_len: usize,
    /// Window for the AR-ness columns.
    #[serde(default = "default_arness_k")]
    pub arness_k: usize,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub decode: DecodeSection,
    #[serde(default)]
    pub policy: PolicySection,
    #[serde(default)]
    pub estimator: EstimatorSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

fn default_prompt_len() -> usize {
    4
}

fn default_arness_k() -> usize {
    2
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub vocab: usize,
    pub seed: u64,
    pub sharpness: Option<f64>,
    pub peak_spread: Option<f64>,
    pub context_weight: Option<f64>,
    pub drift: Option<f64>,
    pub eos_rate: Option<f64>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            vocab: 64,
            seed: 0,
            sharpness: None,
            peak_spread: None,
            context_weight: None,
            drift: None,
            eos_rate: None,
        }
    }
}

impl ModelSection {
    pub fn build(&self) -> Result<ModelSpec64, CliError> {
        let mut m = ModelSpec64::new(self.vocab, self.seed).map_err(config_err)?;
        if let Some(v) = self.sharpness {
            m = m.with_sharpness(v);
        }
        if let Some(v) = self.peak_spread {
            m = m.with_peak_spread(v);
        }
        if let Some(v) = self.context_weight {
            m = m.with_context_weight(v);
        }
        if let Some(v) = self.drift {
            m = m.with_drift(v);
        }
        if let Some(v) = self.eos_rate {
            m = m.with_eos_rate(v);
        }
        m.validate().map_err(config_err)?;
        Ok(m)
    }
}

/// Unset keys fall back to [`DecodeConfig64::new`] for the block size.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeSection {
    pub block_size: Option<usize>,
    pub max_steps: Option<usize>,
    pub conf_threshold: Option<f64>,
    pub temper: Option<f64>,
    pub schedule: Option<Schedule>,
    pub drafting: Option<Drafting>,
    pub draft_mask_mode: Option<MaskMode>,
    pub cache_mode: Option<MaskMode>,
    pub verifier_view: Option<VerifierView>,
    pub noise: Option<NoiseSchedule>,
    pub max_new_tokens: Option<usize>,
}

impl DecodeSection {
    pub fn build(&self) -> Result<DecodeConfig64, CliError> {
        let b = self.block_size.ok_or_else(|| CliError::Config("missing field `decode.block_size`".into()))?;
        let mut c = DecodeConfig64::new(b);
        if let Some(v) = self.max_steps {
            c.max_steps = v;
        }
        if let Some(v) = self.conf_threshold {
            c.conf_threshold = v;
        }
        if let Some(v) = self.temper {
            c.temper = v;
        }
        if let Some(v) = self.schedule {
            c.schedule = v;
        }
        if let Some(v) = self.drafting {
            c.drafting = v;
        }
        if let Some(v) = self.draft_mask_mode {
            c.draft_mask_mode = v;
        }
        if let Some(v) = self.cache_mode {
            c.cache_mode = v;
        }
        if let Some(v) = self.verifier_view {
            c.verifier_view = v;
        }
        if let Some(v) = self.noise {
            c.noise = v;
        }
        if let Some(v) = self.max_new_tokens {
            c.max_new_tokens = v;
        }
        c.validate().map_err(config_err)?;
        Ok(c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Never,
    MinSpan,
    ScoreThreshold,
    Hysteresis,
    Bandit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Static,
    Dynamic,
}

/// Flat parameter bag for every policy; only the keys the chosen `kind`
/// reads have any effect.
#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySection {
    pub kind: PolicyKind,
    pub tau_span: usize,
    pub tau_score: f64,
    pub tau_on: f64,
    pub tau_off: f64,
    pub beta_ucb: f64,
    /// `[span, progress, entropy]` bin counts.
    pub bins: [usize; 3],
    pub score_mode: ScoreKind,
    pub cost: f64,
    /// Keep bandit statistics across the sequences of a run.
    pub persist_bandit: bool,
    pub initial_switch: Switch,
}

impl Default for PolicySection {
    fn default() -> Self {
        Self {
            kind: PolicyKind::MinSpan,
            tau_span: 1,
            tau_score: 0.0,
            tau_on: 1.0,
            tau_off: 0.0,
            beta_ucb: 1.0,
            bins: [2, 2, 2],
            score_mode: ScoreKind::Static,
            cost: 1.0,
            persist_bandit: true,
            initial_switch: Switch::On,
        }
    }
}

impl PolicySection {
    pub fn policy(&self) -> Policy<f64> {
        match self.kind {
            PolicyKind::Never => Policy::Never,
            PolicyKind::MinSpan => Policy::MinSpan { tau_span: self.tau_span },
            PolicyKind::ScoreThreshold => Policy::ScoreThreshold { tau_score: self.tau_score },
            PolicyKind::Hysteresis => Policy::Hysteresis { tau_on: self.tau_on, tau_off: self.tau_off },
            PolicyKind::Bandit => {
                let [span, progress, entropy] = self.bins;
                Policy::Bandit { beta: self.beta_ucb, bins: Bins { span, progress, entropy } }
            }
        }
    }

    pub fn score_mode(&self) -> ScoreMode<f64> {
        match self.score_mode {
            ScoreKind::Static => ScoreMode::Static { cost: self.cost },
            ScoreKind::Dynamic => ScoreMode::Dynamic { cost: self.cost },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Random,
    SoftEntropy,
    ConfPower,
    Renyi2,
    HardEntropy,
    HardMargin,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSection {
    pub kind: EstimatorKind,
    pub beta: f64,
    pub gamma: f64,
    pub tau: f64,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        Self { kind: EstimatorKind::SoftEntropy, beta: 1.0, gamma: 1.0, tau: 0.5 }
    }
}

impl EstimatorSection {
    pub fn estimator(&self) -> Estimator<f64> {
        match self.kind {
            EstimatorKind::Random => Estimator::Random,
            EstimatorKind::SoftEntropy => Estimator::SoftEntropy { beta: self.beta },
            EstimatorKind::ConfPower => Estimator::ConfPower { gamma: self.gamma },
            EstimatorKind::Renyi2 => Estimator::Renyi2,
            EstimatorKind::HardEntropy => Estimator::HardEntropy { tau: self.tau },
            EstimatorKind::HardMargin => Estimator::HardMargin { tau: self.tau },
        }
    }
}

/// Grid axes. An empty axis keeps the base value. Cells enumerate in
/// row-major order over the axes as declared here, last axis fastest.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub sampler: Vec<Sampler>,
    pub block_size: Vec<usize>,
    pub schedule: Vec<Schedule>,
    pub conf_threshold: Vec<f64>,
    pub temper: Vec<f64>,
    pub drift: Vec<f64>,
    pub policy: Vec<PolicyKind>,
    pub tau_span: Vec<usize>,
    pub tau_score: Vec<f64>,
    pub estimator: Vec<EstimatorKind>,
}

/// One fully resolved run configuration.
#[derive(Clone, Debug)]
pub struct Cell {
    pub config: Config,
    pub sampler: Sampler,
    pub model: ModelSpec64,
    pub decode: DecodeConfig64,
    pub routing: RoutingState64,
}

impl Cell {
    /// Parameter columns echoed into sweep rows.
    pub fn params(&self) -> Vec<(&'static str, String)> {
        let p = &self.config.policy;
        let e = self.routing.estimator;
        vec![
            ("sampler", self.sampler.name().to_string()),
            ("block_size", self.decode.block_size.to_string()),
            ("max_steps", self.decode.max_steps.to_string()),
            ("schedule", label(&self.decode.schedule)),
            ("conf_threshold", self.decode.conf_threshold.to_string()),
            ("temper", self.decode.temper.to_string()),
            ("drift", self.model.drift.to_string()),
            ("policy", self.routing.policy.name().to_string()),
            ("tau_span", p.tau_span.to_string()),
            ("tau_score", p.tau_score.to_string()),
            ("tau_on", p.tau_on.to_string()),
            ("tau_off", p.tau_off.to_string()),
            ("score_mode", label(&p.score_mode)),
            ("cost", p.cost.to_string()),
            ("estimator", e.name().to_string()),
            ("estimator_param", e.param().map(|x| x.to_string()).unwrap_or_default()),
        ]
    }

    /// Whether sequences share mutable routing state and must run in order.
    pub fn sequential(&self) -> bool {
        self.sampler == Sampler::S2d2
            && matches!(self.routing.policy, Policy::Bandit { .. })
            && self.routing.persist_bandit
    }
}

fn label<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        Ok(other) => other.to_string(),
        Err(_) => String::new(),
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(file) = cfg.prompts_file.take() {
            let file = match path.parent() {
                Some(dir) if file.is_relative() => dir.join(file),
                _ => file,
            };
            cfg.prompts.extend(read_prompts_file(&file)?);
        }
        Ok(cfg)
    }

    /// Resolves the base configuration, ignoring `[sweep]`.
    pub fn cell(&self) -> Result<Cell, CliError> {
        if self.arness_k == 0 {
            return Err(CliError::Config("arness_k must be >= 1".into()));
        }
        let model = self.model.build()?;
        let decode = self.decode.build()?;
        let mut routing =
            RoutingState64::new(self.policy.policy(), self.policy.score_mode(), self.estimator.estimator())
                .with_initial_switch(self.policy.initial_switch);
        routing.persist_bandit = self.policy.persist_bandit;
        routing.validate().map_err(config_err)?;
        Ok(Cell { config: self.clone(), sampler: self.sampler, model, decode, routing })
    }

    /// The Cartesian product of the sweep axes applied to the base.
    pub fn cells(&self) -> Result<Vec<Cell>, CliError> {
        let s = &self.sweep;
        let mut grid = vec![self.clone()];
        grid = expand(grid, &s.sampler, |c, v| c.sampler = v);
        grid = expand(grid, &s.block_size, |c, v| c.decode.block_size = Some(v));
        grid = expand(grid, &s.schedule, |c, v| c.decode.schedule = Some(v));
        grid = expand(grid, &s.conf_threshold, |c, v| c.decode.conf_threshold = Some(v));
        grid = expand(grid, &s.temper, |c, v| c.decode.temper = Some(v));
        grid = expand(grid, &s.drift, |c, v| c.model.drift = Some(v));
        grid = expand(grid, &s.policy, |c, v| c.policy.kind = v);
        grid = expand(grid, &s.tau_span, |c, v| c.policy.tau_span = v);
        grid = expand(grid, &s.tau_score, |c, v| c.policy.tau_score = v);
        grid = expand(grid, &s.estimator, |c, v| c.estimator.kind = v);
        grid.iter().map(Config::cell).collect()
    }

    /// Prompts for each sequence of a run.
    pub fn prompts(&self) -> Result<Vec<Vec<TokenId>>, CliError> {
        use rand::Rng;

        let vocab = self.model.build()?.vocab;
        for (i, p) in self.prompts.iter().enumerate() {
            if p.is_empty() {
                return Err(CliError::Config(format!("prompts[{i}] is empty")));
            }
            if let Some(t) = p.iter().find(|&&t| !vocab.contains(TokenId(t)) || TokenId(t) == vocab.mask()) {
                return Err(CliError::Config(format!(
                    "prompts[{i}] contains id {t}, which is MASK or outside the vocabulary of {}",
                    vocab.size()
                )));
            }
        }
        let n = self.sequences.unwrap_or(self.prompts.len().max(1));
        if n == 0 {
            return Err(CliError::Config("sequences must be >= 1".into()));
        }
        if !self.prompts.is_empty() {
            return Ok((0..n)
                .map(|i| self.prompts[i % self.prompts.len()].iter().map(|&t| TokenId(t)).collect())
                .collect());
        }
        if self.prompt_len == 0 {
            return Err(CliError::Config("prompt_len must be >= 1 when no prompts are given".into()));
        }
        let ordinary = vocab.size() as u32 - 2;
        Ok((0..n)
            .map(|i| {
                let mut rng = blockspec::rng::stream_rng(self.seed, 0, i as u64, blockspec::rng::StreamRole::Prompt);
                (0..self.prompt_len).map(|_| TokenId(rng.gen_range(0..ordinary))).collect()
            })
            .collect())
    }
}

fn expand<T: Clone>(grid: Vec<Config>, axis: &[T], set: impl Fn(&mut Config, T)) -> Vec<Config> {
    if axis.is_empty() {
        return grid;
    }
    let set = &set;
    grid.into_iter()
        .flat_map(|c| {
            axis.iter().map(move |v| {
                let mut c = c.clone();
                set(&mut c, v.clone());
                c
            })
        })
        .collect()
}

fn read_prompts_file(path: &Path) -> Result<Vec<Vec<u32>>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            line.split_whitespace()
                .map(|tok| {
                    tok.parse::<u32>().map_err(|_| {
                        CliError::Config(format!("{}:{}: `{tok}` is not a token id", path.display(), n + 1))
                    })
                })
                .collect()
        })
        .collect()
}

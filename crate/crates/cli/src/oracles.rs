//! The `verify-dist` and `oracle-khat` commands.

use std::fmt::Write as _;

use blockspec::oracle::{
    brute_force_expected_prefix, exact_committed_law, mc_committed_token_law, tv_distance, MAX_ENUM_SPAN,
};
use blockspec::rng::{stream_rng, StreamRole};
use blockspec::routing::expected_prefix;
use blockspec::{normalize_dist, speculative_accept, Dist64};
use rand::Rng;
use rayon::prelude::*;

use crate::error::CliError;

/// Printed report plus whether the check held.
#[derive(Clone, Debug)]
pub struct OracleOutcome {
    pub report: String,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct VerifyDistArgs {
    pub pairs: usize,
    pub samples: usize,
    pub gamma: f64,
    /// Vocabulary sizes, cycled over the pairs.
    pub vocab: Vec<usize>,
    pub tol: f64,
    pub seed: u64,
    /// Check against the verifier law even when `gamma != 1`.
    pub assert: bool,
    pub jobs: Option<usize>,
}

impl Default for VerifyDistArgs {
    fn default() -> Self {
        Self {
            pairs: 21,
            samples: 200_000,
            gamma: 1.0,
            vocab: vec![3, 8, 16],
            tol: 0.01,
            seed: 0,
            assert: false,
            jobs: None,
        }
    }
}

fn random_dist<R: Rng>(rng: &mut R, v: usize) -> Result<Dist64, CliError> {
    let w: Vec<f64> = (0..v).map(|_| rng.gen::<f64>().powi(2)).collect();
    Ok(normalize_dist(&w)?)
}

/// Monte Carlo law of the committed token under the decoder's own
/// accept/resample kernel.
///
/// Without `assert` each pair is checked against its exact committed law,
/// which equals the verifier law at `gamma = 1`. With `assert` every pair is
/// checked against the verifier law itself, so tempered runs fail.
pub fn cmd_verify_dist(args: &VerifyDistArgs) -> Result<OracleOutcome, CliError> {
    if args.pairs == 0 || args.samples == 0 {
        return Err(CliError::Config("--pairs and --samples must be >= 1".into()));
    }
    if args.vocab.is_empty() || args.vocab.iter().any(|&v| v < 2) {
        return Err(CliError::Config("--vocab needs sizes >= 2".into()));
    }
    if !(args.gamma > 0.0 && args.gamma.is_finite()) {
        return Err(CliError::Config("--gamma must be > 0".into()));
    }
    let against_verifier = args.assert || args.gamma == 1.0;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let rows: Vec<(usize, f64, f64)> = pool.install(|| {
        (0..args.pairs)
            .into_par_iter()
            .map(|i| {
                let v = args.vocab[i % args.vocab.len()];
                let mut pick = stream_rng(args.seed, i as u64, 0, StreamRole::Oracle);
                let draft = random_dist(&mut pick, v)?;
                let ver = random_dist(&mut pick, v)?;
                let mut rng = stream_rng(args.seed, i as u64, 1, StreamRole::Oracle);
                let law =
                    mc_committed_token_law(&draft, &ver, args.gamma, args.samples, &mut rng, |tok, d, q, g, r| {
                        let verdict =
                            speculative_accept(&[tok], std::slice::from_ref(d), std::slice::from_ref(q), g, r)?;
                        Ok(verdict.resampled_token().unwrap_or(tok))
                    })?;
                let exact = exact_committed_law(&draft, &ver, args.gamma)?;
                Ok((v, law.tv, tv_distance(&law.empirical, &exact)))
            })
            .collect::<Result<_, CliError>>()
    })?;

    let mut report = String::new();
    let target = if against_verifier { "verifier" } else { "closed_form" };
    let _ = writeln!(report, "pair,vocab,tv_verifier,tv_closed_form");
    let mut worst: f64 = 0.0;
    for (i, (v, tv_ver, tv_exact)) in rows.iter().enumerate() {
        let _ = writeln!(report, "{i},{v},{tv_ver:.6},{tv_exact:.6}");
        worst = worst.max(if against_verifier { *tv_ver } else { *tv_exact });
    }
    let passed = worst <= args.tol;
    let _ = writeln!(
        report,
        "# gamma={} samples={} target={target} max_tv={worst:.6} tol={} {}",
        args.gamma,
        args.samples,
        args.tol,
        if passed { "PASS" } else { "FAIL" }
    );
    Ok(OracleOutcome { report, passed })
}

#[derive(Clone, Debug)]
pub struct OracleKhatArgs {
    pub vectors: usize,
    /// Longest span enumerated; at most the oracle's limit.
    pub max_len: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for OracleKhatArgs {
    fn default() -> Self {
        Self { vectors: 1000, max_len: MAX_ENUM_SPAN, tol: 1e-12, seed: 0 }
    }
}

/// Compares the closed-form expected prefix against exhaustive enumeration
/// on random acceptance vectors of length `0..=max_len`.
pub fn cmd_oracle_khat(args: &OracleKhatArgs) -> Result<OracleOutcome, CliError> {
    if args.max_len > MAX_ENUM_SPAN {
        return Err(CliError::Config(format!("--max-len must be <= {MAX_ENUM_SPAN}")));
    }
    let mut rng = stream_rng(args.seed, 0, 0, StreamRole::Oracle);
    let mut worst: f64 = 0.0;
    for _ in 0..args.vectors {
        let len = rng.gen_range(0..=args.max_len);
        let alpha: Vec<f64> = (0..len).map(|_| rng.gen()).collect();
        let diff = (brute_force_expected_prefix(&alpha)? - expected_prefix(&alpha)).abs();
        worst = worst.max(diff);
    }
    let passed = worst <= args.tol;
    let report = format!(
        "vectors={} max_len={} max_abs_diff={worst:e} tol={:e} {}\n",
        args.vectors,
        args.max_len,
        args.tol,
        if passed { "PASS" } else { "FAIL" }
    );
    Ok(OracleOutcome { report, passed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn khat_defaults_pass() {
        assert!(cmd_oracle_khat(&OracleKhatArgs::default()).unwrap().passed);
    }

    #[test]
    fn bad_arguments_are_config_errors() {
        let args = OracleKhatArgs { max_len: 40, ..Default::default() };
        assert_eq!(cmd_oracle_khat(&args).unwrap_err().exit_code(), 2);
        let args = VerifyDistArgs { vocab: vec![1], ..Default::default() };
        assert_eq!(cmd_verify_dist(&args).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn small_run_reports_every_pair() {
        let args = VerifyDistArgs { pairs: 4, samples: 2000, tol: 1.0, ..Default::default() };
        let out = cmd_verify_dist(&args).unwrap();
        assert!(out.passed);
        assert_eq!(out.report.lines().count(), 6);
    }
}

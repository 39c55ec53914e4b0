//! End-to-end acceptance checks.
//!
//! Runs without the libtest harness so every check prints exactly one
//! `PASS`/`FAIL` line regardless of capture settings. Exits non-zero when
//! any check fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use blockspec::masks::AttnMask;
use blockspec::metrics::{global_arness_at_k, local_arness_at_k, local_energy, nfe_per_token, nfe_speedup};
use blockspec::oracle::brute_force_expected_prefix;
use blockspec::rng::{stream_rng, StreamRole};
use blockspec::routing::{expected_prefix, BanditStats, Bins, Bucket, RouteQuery, Switch};
use blockspec::{
    accept_prob, block_full_mask, causal_mask, decode_sequence, draft_mask, normalize_dist, verifier_mask,
    DecodeConfig64, Dist, Drafting, Estimator, ForwardInput, Model, ModelSpec64, Policy, RoutingState64, Sampler,
    ScoreMode, StepMode, TokenId, Vocab,
};
use blockspec_cli::{cmd_verify_dist, VerifyDistArgs};
use rand::Rng;

type Outcome = Result<String, String>;
type Check<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: u64) -> Result<(), String> {
    ensure(elapsed <= Duration::from_secs(limit_s), || format!("took {:.1}s, limit {limit_s}s", elapsed.as_secs_f64()))
}

fn speculative_identity() -> Outcome {
    let t = Instant::now();
    let args = VerifyDistArgs { pairs: 21, samples: 200_000, gamma: 1.0, vocab: vec![3, 8, 16], ..Default::default() };
    let out = cmd_verify_dist(&args).map_err(|e| e.to_string())?;
    let worst = out
        .report
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("pair"))
        .map(|l| l.split(',').nth(2).and_then(|x| x.parse::<f64>().ok()).unwrap_or(f64::INFINITY))
        .fold(0.0, f64::max);
    within(t.elapsed(), 60)?;
    ensure(out.passed && worst <= 0.01, || format!("max TV {worst:.5} > 0.01"))?;
    Ok(format!("21 pairs, V in {{3,8,16}}, 200k samples each, max TV {worst:.5}"))
}

fn estimator_exactness() -> Outcome {
    let t = Instant::now();
    let mut rng = stream_rng(11, 0, 0, StreamRole::Oracle);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let len = rng.gen_range(0..=12);
        let alpha: Vec<f64> = (0..len).map(|_| rng.gen()).collect();
        let brute = brute_force_expected_prefix(&alpha).map_err(|e| e.to_string())?;
        worst = worst.max((brute - expected_prefix(&alpha)).abs());
    }
    within(t.elapsed(), 10)?;
    ensure(worst <= 1e-12, || format!("max |diff| {worst:e}"))?;
    Ok(format!("1000 vectors, L <= 12, max |diff| {worst:e}"))
}

fn reduction_equivalences() -> Outcome {
    let model = ModelSpec64::new(48, 5).unwrap().with_drift(0.4);
    let prompt = [TokenId(1), TokenId(2), TokenId(3)];
    let mut compared = 0;
    for b in [1usize, 3, 4, 8] {
        for tau in [0.3, 0.9] {
            for seed in 0..4 {
                let mut cfg = DecodeConfig64::new(b);
                cfg.conf_threshold = tau;
                cfg.max_new_tokens = 40;
                let mut r1 = stream_rng(seed, 0, 0, StreamRole::Decode);
                let mut r2 = stream_rng(seed, 0, 0, StreamRole::Decode);
                let bd3 = decode_sequence(&model, &prompt, &cfg, Sampler::Bd3, None, &mut r1).unwrap();
                let mut never = RoutingState64::never();
                let s2d2 = decode_sequence(&model, &prompt, &cfg, Sampler::S2d2, Some(&mut never), &mut r2).unwrap();
                let a = serde_json::to_vec(&(&bd3.tokens, &bd3.trace)).unwrap();
                let c = serde_json::to_vec(&(&s2d2.tokens, &s2d2.trace)).unwrap();
                ensure(a == c, || format!("never-verify differs from diffusion at B={b} tau={tau} seed={seed}"))?;
                compared += 1;
            }
        }
    }

    let mut cfg = DecodeConfig64::new(1);
    cfg.max_new_tokens = 50;
    for seed in 0..5 {
        let mut rng = stream_rng(seed, 1, 0, StreamRole::Decode);
        let t = decode_sequence(&model, &prompt, &cfg, Sampler::Bd3, None, &mut rng).unwrap().trace;
        for k in 1..=3 {
            let (l, g) = (local_arness_at_k(&t, k), global_arness_at_k(&t, k));
            ensure(l == 1.0 && g == 1.0, || format!("B=1 AR-ness@{k} = ({l}, {g})"))?;
        }
        let per = nfe_per_token(&t).map_err(|e| e.to_string())?;
        ensure(per == 2.0, || format!("B=1 NFE per token {per}"))?;
    }
    Ok(format!("{compared} never-verify traces byte-identical; B=1 AR-ness 1.0 and 2 NFE/token"))
}

fn mask_correctness() -> Outcome {
    let hand: [AttnMask; 3] = [
        AttnMask::from_rows(&[&[1, 0], &[0, 1]]),
        AttnMask::from_rows(&[&[1, 0, 0, 0], &[1, 1, 0, 0], &[0, 0, 1, 0], &[1, 0, 0, 1]]),
        AttnMask::from_rows(&[
            &[1, 0, 0, 0, 0, 0],
            &[1, 1, 0, 0, 0, 0],
            &[1, 1, 1, 0, 0, 0],
            &[0, 0, 0, 1, 0, 0],
            &[1, 0, 0, 0, 1, 0],
            &[1, 1, 0, 0, 0, 1],
        ]),
    ];
    for (i, want) in hand.iter().enumerate() {
        let l = i + 1;
        ensure(verifier_mask(l) == *want, || format!("verifier mask L={l}: {:?}", verifier_mask(l)))?;
    }
    for b in 1..=32 {
        ensure(draft_mask(b, 0) == block_full_mask(b), || format!("draft mask B={b} j=0"))?;
        ensure(draft_mask(b, b) == causal_mask(b), || format!("draft mask B={b} j=B"))?;
    }
    Ok("verifier masks L=1..3 match; draft boundaries hold for B=1..32".into())
}

/// Same distribution for every query, chosen by absolute position; drafter
/// and verifier agree.
struct Scripted {
    vocab: Vocab,
}

impl Scripted {
    fn dist(&self, abs_pos: usize) -> Dist<f64> {
        let mass = if abs_pos == 1 { 0.99 } else { 0.8 };
        let ordinary = self.vocab.size() - 2;
        let mut w = vec![(1.0 - mass) / (ordinary - 1) as f64; ordinary];
        w[abs_pos % ordinary] = mass;
        w.extend([0.0, 0.0]);
        normalize_dist(&w).unwrap()
    }
}

impl Model<f64> for Scripted {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn forward(&self, input: &ForwardInput<'_>) -> blockspec::Result<Vec<Dist<f64>>> {
        Ok(input.queries.iter().map(|&q| self.dist(input.key_positions[q] + usize::from(input.shifted))).collect())
    }
}

fn nfe_accounting() -> Outcome {
    // Block of 4 after a one-token prompt. The first position is confident
    // and committed by a diffusion step; the dynamic score then clears the
    // threshold only once that high-confidence token is gone, so the second
    // step verifies the remaining span and accepts it whole.
    let model = Scripted { vocab: Vocab::new(8).unwrap() };
    let mut cfg = DecodeConfig64::new(4);
    cfg.max_new_tokens = 4;
    cfg.drafting = Drafting::Greedy;
    let mut routing = RoutingState64::new(
        Policy::ScoreThreshold { tau_score: 1.0 },
        ScoreMode::Dynamic { cost: 1.5 },
        Estimator::Renyi2,
    );
    let mut rng = stream_rng(0, 0, 0, StreamRole::Decode);
    let t = decode_sequence(&model, &[TokenId(0)], &cfg, Sampler::S2d2, Some(&mut routing), &mut rng)
        .map_err(|e| e.to_string())?
        .trace;
    let shape: Vec<_> = t.steps.iter().map(|s| (s.mode, s.verified, s.commits.len(), s.accepted_count)).collect();
    ensure(
        shape == [(StepMode::Diffusion, false, 1, 0), (StepMode::Speculative, true, 3, 3)] && t.blocks.len() == 1,
        || format!("unexpected step shape {shape:?}"),
    )?;
    ensure(t.nfe == 4 && t.accounted_nfe() == 4, || format!("NFE {} (accounted {})", t.nfe, t.accounted_nfe()))?;

    let mut ar_cfg = DecodeConfig64::new(1);
    ar_cfg.max_new_tokens = 4;
    let mut rng = stream_rng(0, 0, 0, StreamRole::Baseline);
    let ar =
        decode_sequence(&model, &[TokenId(0)], &ar_cfg, Sampler::Bd3, None, &mut rng).map_err(|e| e.to_string())?.trace;
    ensure(ar.nfe == 8, || format!("AR baseline NFE {}", ar.nfe))?;
    let speedup = nfe_speedup(&t, &ar).map_err(|e| e.to_string())?;
    ensure(speedup == 2.0, || format!("speedup {speedup}"))?;
    Ok("diffusion + verified step + cache pass = 4 NFE; AR 8 NFE; speedup 2.0".into())
}

fn speedup_reproduction(dir: &Path) -> Outcome {
    let t = Instant::now();
    let config = dir.join("speedup.toml");
    std::fs::write(
        &config,
        "seed = 1\nsampler = \"s2d2\"\nsequences = 16\n\n\
         [model]\nvocab = 64\nseed = 7\ncontext_weight = 0.3\ndrift = 0.2\n\n\
         [decode]\nmax_new_tokens = 128\n\n\
         [policy]\nkind = \"min_span\"\ntau_span = 1\n\n\
         [sweep]\nblock_size = [4, 8, 16, 32]\n",
    )
    .unwrap();
    let csv_path = dir.join("speedup.csv");
    let status = Command::new(env!("CARGO_BIN_EXE_blockspec"))
        .args(["sweep", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&csv_path)
        .status()
        .unwrap();
    ensure(status.success(), || format!("sweep exited with {status}"))?;
    let mut reader = csv::Reader::from_path(&csv_path).unwrap();
    let header = reader.headers().unwrap().clone();
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    let (cb, ct, cs, ca) = (col("block_size"), col("tokens_per_nfe"), col("speedup_vs_ar"), col("acceptance_rate"));
    let rows: Vec<(usize, f64, f64, f64)> = reader
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[cb].parse().unwrap(), r[ct].parse().unwrap(), r[cs].parse().unwrap(), r[ca].parse().unwrap())
        })
        .collect();
    within(t.elapsed(), 120)?;
    ensure(rows.len() == 4, || format!("{} rows", rows.len()))?;
    for (b, _, speedup, acc) in &rows {
        ensure(*acc >= 0.9, || format!("B={b}: acceptance {acc:.3} < 0.9"))?;
        ensure(*b < 8 || *speedup >= 2.0, || format!("B={b}: {speedup:.2}x the AR baseline"))?;
    }
    ensure(rows.windows(2).all(|w| w[1].1 > w[0].1), || format!("tokens/NFE not increasing: {rows:?}"))?;
    let summary: Vec<String> =
        rows.iter().map(|(b, tpn, s, a)| format!("B={b} {tpn:.2} tok/NFE ({s:.1}x, acc {a:.3})")).collect();
    Ok(summary.join("; "))
}

fn policy_behavior() -> Outcome {
    let (tau_on, tau_off) = (1.0, -1.0);
    let mut rng = stream_rng(21, 0, 0, StreamRole::Oracle);
    for start in [Switch::On, Switch::Off] {
        let mut state =
            RoutingState64::new(Policy::Hysteresis { tau_on, tau_off }, ScoreMode::default(), Estimator::Renyi2)
                .with_initial_switch(start);
        let mut transitions = 0;
        let mut prev = state.switch();
        for _ in 0..1000 {
            let s = loop {
                let s: f64 = rng.gen_range(tau_off..tau_on);
                if s > tau_off {
                    break s;
                }
            };
            state.do_verify(&RouteQuery { span_len: 4, score: Some(s), bucket: None });
            transitions += usize::from(state.switch() != prev);
            prev = state.switch();
        }
        ensure(transitions == 0, || format!("{transitions} transitions starting {start:?}"))?;
    }

    let model = ModelSpec64::new(32, 4).unwrap().with_drift(0.4);
    for b in [2usize, 4, 8] {
        let mut cfg = DecodeConfig64::new(b);
        cfg.max_new_tokens = 48;
        for seed in 0..4 {
            let mut routing =
                RoutingState64::new(Policy::MinSpan { tau_span: b }, ScoreMode::default(), Estimator::Renyi2);
            let mut rng = stream_rng(seed, 2, 0, StreamRole::Decode);
            let t = decode_sequence(&model, &[TokenId(3)], &cfg, Sampler::S2d2, Some(&mut routing), &mut rng)
                .unwrap()
                .trace;
            let per_block: Vec<usize> = (0..t.blocks.len())
                .map(|blk| t.steps.iter().filter(|s| s.block == blk && s.verified).count())
                .collect();
            ensure(per_block.iter().all(|&n| n == 1), || {
                format!("B={b} seed={seed}: verifications per block {per_block:?}")
            })?;
        }
    }

    let bucket = Bucket { span: 0, progress: 0, entropy: 0 };
    let mut stats = BanditStats::<f64>::new(0.5, Bins { span: 1, progress: 1, entropy: 1 });
    let mut rng = stream_rng(22, 0, 0, StreamRole::Oracle);
    let mut late_better = 0;
    for step in 0..10_000 {
        let a = stats.select(bucket);
        let noise: f64 = rng.gen_range(-0.5..0.5);
        stats.record(bucket, a, if a == 1 { 1.5 } else { 0.5 } + noise);
        if step >= 5000 {
            late_better += a;
        }
    }
    let frac = late_better as f64 / 5000.0;
    ensure(frac >= 0.95, || format!("better arm chosen {frac:.3} of the last 5000 steps"))?;
    Ok(format!("hysteresis 0 transitions; min-span once per block; UCB better arm {frac:.3}"))
}

fn energy_identity() -> Outcome {
    let mut worst: f64 = 0.0;
    for i in 1..=100 {
        for j in 1..=100 {
            let (p, q) = (i as f64 / 100.0, j as f64 / 100.0);
            let e = local_energy(p, q).map_err(|e| e.to_string())?;
            let a = accept_prob(p, q, 1.0).map_err(|e| e.to_string())?;
            worst = worst.max(((-e).exp().min(1.0) - a).abs());
        }
    }
    ensure(worst <= 1e-12, || format!("max |diff| {worst:e}"))?;
    Ok(format!("100x100 grid, max |diff| {worst:e}"))
}

fn determinism(dir: &Path) -> Outcome {
    let config = dir.join("det.toml");
    std::fs::write(
        &config,
        "seed = 5\nsampler = \"s2d2\"\nsequences = 6\n\n\
         [model]\nvocab = 32\ndrift = 0.5\n\n\
         [decode]\nblock_size = 4\nmax_new_tokens = 24\n\n\
         [policy]\nkind = \"bandit\"\npersist_bandit = false\n\n\
         [sweep]\nblock_size = [2, 4, 8]\npolicy = [\"min_span\", \"hysteresis\", \"bandit\"]\n",
    )
    .unwrap();
    let run = |cmd: &str, jobs: &str, name: &str| -> Result<Vec<u8>, String> {
        let out = dir.join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_blockspec"))
            .args([cmd, "--jobs", jobs, "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .status()
            .map_err(|e| e.to_string())?;
        ensure(status.success(), || format!("{cmd} exited with {status}"))?;
        std::fs::read(&out).map_err(|e| e.to_string())
    };
    for cmd in ["decode", "sweep"] {
        let a = run(cmd, "1", &format!("{cmd}-a"))?;
        let b = run(cmd, "1", &format!("{cmd}-b"))?;
        let c = run(cmd, "4", &format!("{cmd}-c"))?;
        ensure(!a.is_empty() && a == b, || format!("{cmd}: repeated runs differ"))?;
        ensure(a == c, || format!("{cmd}: --jobs 4 differs from --jobs 1"))?;
    }
    Ok("decode and sweep outputs byte-identical across runs and --jobs 1/4".into())
}

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let checks: Vec<Check> = vec![
        ("speculative identity", Box::new(speculative_identity)),
        ("expected-prefix exactness", Box::new(estimator_exactness)),
        ("reduction equivalences", Box::new(reduction_equivalences)),
        ("mask correctness", Box::new(mask_correctness)),
        ("NFE accounting", Box::new(nfe_accounting)),
        ("speedup grows with block size", Box::new(|| speedup_reproduction(dir.path()))),
        ("routing policy behaviour", Box::new(policy_behavior)),
        ("residual energy identity", Box::new(energy_identity)),
        ("determinism", Box::new(|| determinism(dir.path()))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS [{}] {name}: {detail} ({secs:.1}s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{}] {name}: {detail} ({secs:.1}s)", i + 1);
            }
        }
    }
    println!("{} of {} acceptance checks passed", checks.len() - failed, checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

use blockspec::metrics::*;
use blockspec::rng::{stream_rng, StreamRole};
use blockspec::*;
use proptest::prelude::*;

fn decode(
    model: &ModelSpec64,
    cfg: &DecodeConfig64,
    sampler: Sampler,
    routing: Option<&mut RoutingState64>,
    seed: u64,
) -> DecodeTrace64 {
    let mut rng = stream_rng(seed, 0, 0, StreamRole::Decode);
    decode_sequence(model, &[TokenId(2), TokenId(5)], cfg, sampler, routing, &mut rng).unwrap().trace
}

fn min_span(tau_span: usize) -> RoutingState64 {
    RoutingState64::new(Policy::MinSpan { tau_span }, ScoreMode::default(), Estimator::Renyi2)
}

#[test]
fn unit_blocks_are_fully_autoregressive() {
    let model = ModelSpec64::new(32, 4).unwrap().with_drift(0.5);
    let mut cfg = DecodeConfig64::new(1);
    cfg.max_new_tokens = 30;
    for seed in 0..5 {
        for (sampler, per_token) in [(Sampler::Bd3, 2.0), (Sampler::Subs, 2.0), (Sampler::S2d2, 3.0)] {
            let mut routing = min_span(1);
            let t = decode(&model, &cfg, sampler, Some(&mut routing), seed);
            for k in 1..4 {
                assert_eq!(local_arness_at_k(&t, k), 1.0);
                assert_eq!(global_arness_at_k(&t, k), 1.0);
            }
            assert_eq!(nfe_per_token(&t).unwrap(), per_token);
        }
    }
}

#[test]
fn speedup_of_a_trace_against_itself_is_one() {
    let model = ModelSpec64::new(32, 4).unwrap();
    let mut cfg = DecodeConfig64::new(8);
    cfg.max_new_tokens = 40;
    let t = decode(&model, &cfg, Sampler::Bd3, None, 1);
    assert_eq!(nfe_speedup(&t, &t).unwrap(), 1.0);
    let mut ar_cfg = DecodeConfig64::new(1);
    ar_cfg.max_new_tokens = 40;
    let ar = decode(&model, &ar_cfg, Sampler::Bd3, None, 1);
    assert!(nfe_speedup(&t, &ar).unwrap() > 1.0);
}

#[test]
fn global_arness_saturates_at_block_size() {
    let model = ModelSpec64::new(32, 4).unwrap();
    let mut cfg = DecodeConfig64::new(6);
    cfg.conf_threshold = 0.2;
    cfg.max_new_tokens = 36;
    for seed in 0..5 {
        let t = decode(&model, &cfg, Sampler::Bd3, None, seed);
        assert_eq!(global_arness_at_k(&t, 6), 1.0);
        let (l, g) = (local_arness_at_k(&t, 2), global_arness_at_k(&t, 2));
        assert!((0.0..=1.0).contains(&l) && (0.0..=1.0).contains(&g));
    }
}

#[test]
fn min_span_of_block_size_verifies_once_per_block() {
    let model = ModelSpec64::new(32, 4).unwrap().with_drift(0.4);
    let mut cfg = DecodeConfig64::new(8);
    cfg.max_new_tokens = 64;
    for seed in 0..5 {
        let t = decode(&model, &cfg, Sampler::S2d2, Some(&mut min_span(8)), seed);
        assert_eq!(t.verified_steps(), t.blocks.len());
        for s in &t.steps {
            assert_eq!(s.verified, s.block_step == 1);
        }
        let summary = RunSummary::from_traces(std::slice::from_ref(&t), 2);
        assert_eq!(summary.verify_rate, Some(t.blocks.len() as f64 / t.steps.len() as f64));
    }
}

#[test]
fn static_curve_has_one_token_per_step() {
    let model = ModelSpec64::new(32, 4).unwrap();
    let mut cfg = DecodeConfig64::new(8);
    cfg.schedule = Schedule::Static;
    cfg.max_new_tokens = 32;
    let t = decode(&model, &cfg, Sampler::Bd3, None, 3);
    let c = confidence_curve(&t, 4);
    assert!(c.tokens_per_step.iter().all(|x| *x == Some(1.0)));
    assert!(c.mean_conf.iter().all(|m| m.is_some_and(|m| m > 0.0 && m <= 1.0)));

    cfg.schedule = Schedule::Dynamic;
    cfg.conf_threshold = 0.3;
    let t = decode(&model, &cfg, Sampler::Bd3, None, 3);
    let c = confidence_curve(&t, 4);
    assert!(c.tokens_per_step.iter().any(|x| x.is_some_and(|x| x > 1.0)));
}

#[test]
fn summary_counts_match_traces() {
    let model = ModelSpec64::new(32, 4).unwrap().with_drift(0.8);
    let mut cfg = DecodeConfig64::new(8);
    cfg.max_new_tokens = 48;
    let traces: Vec<_> = (0..4).map(|s| decode(&model, &cfg, Sampler::S2d2, Some(&mut min_span(1)), s)).collect();
    let r = RunSummary::from_traces(&traces, 2);
    assert_eq!(r.nfe, traces.iter().map(|t| t.nfe).sum::<usize>());
    assert_eq!(r.verify_rate, Some(1.0));
    let verified: Vec<_> = traces.iter().flat_map(|t| &t.steps).collect();
    let rejected = verified.iter().filter(|s| s.rejected_at.is_some()).count();
    assert!(rejected > 0);
    assert_eq!(r.rejection_rate, Some(rejected as f64 / verified.len() as f64));
}

#[test]
fn energy_identity_on_grid() {
    for i in 1..=100 {
        for j in 1..=100 {
            let (p, q) = (i as f64 / 100.0, j as f64 / 100.0);
            let e = local_energy(p, q).unwrap();
            assert!(((-e).exp().min(1.0) - accept_prob(p, q, 1.0).unwrap()).abs() <= 1e-12);
        }
    }
}

proptest! {
    #[test]
    fn energy_identity(p in 1e-9f64..=1.0, q in 1e-9f64..=1.0) {
        let e = local_energy(p, q).unwrap();
        prop_assert!(((-e).exp().min(1.0) - accept_prob(p, q, 1.0).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn arness_is_a_fraction(seed in any::<u64>(), b in 1usize..10, tau in 0.05f64..1.0, k in 1usize..6) {
        let model = ModelSpec64::new(16, seed).unwrap();
        let mut cfg = DecodeConfig64::new(b);
        cfg.conf_threshold = tau;
        cfg.max_new_tokens = 20;
        let t = decode(&model, &cfg, Sampler::Bd3, None, seed);
        let (l, g) = (local_arness_at_k(&t, k), global_arness_at_k(&t, k));
        prop_assert!((0.0..=1.0).contains(&l));
        prop_assert!((0.0..=1.0).contains(&g));
        if k >= b {
            prop_assert_eq!(g, 1.0);
        }
    }
}

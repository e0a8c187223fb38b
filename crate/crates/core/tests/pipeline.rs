use proptest::prelude::*;
use ragtune_core::config::RunConfig;
use ragtune_core::metrics::summarize;
use ragtune_core::sim::{run, GateOutcome, Policy, SimError, TraceEvent};
use ragtune_core::types::{RagConfig, SynthesisMethod};
use ragtune_core::workload::{gen_workload, save_trace, ArrivalMode};

fn small(seed: u64, n: usize) -> RunConfig {
    let mut cfg = RunConfig { seed, ..RunConfig::default() };
    cfg.workload.num_queries = n;
    cfg
}

#[test]
fn trace_replay_matches_generated_workload() {
    let cfg = small(3, 40);
    let generated = gen_workload(&cfg.workload.spec(), cfg.seed).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.jsonl");
    save_trace(&generated, &path).unwrap();

    let mut replay = cfg.clone();
    replay.workload.arrival = ArrivalMode::Trace { path: path.clone() };
    replay.validate().unwrap();
    let loaded = gen_workload(&replay.workload.spec(), replay.seed).unwrap();
    assert_eq!(loaded.items, generated.items);

    let est = cfg.estimator().unwrap();
    let a = run(&generated, &cfg.memory_model(), &cfg.sim_settings(), est.as_ref(), Policy::Adaptive).unwrap();
    let b = run(&loaded, &cfg.memory_model(), &cfg.sim_settings(), est.as_ref(), Policy::Adaptive).unwrap();
    assert_eq!(a.report, b.report);
}

#[test]
fn config_file_drives_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    std::fs::write(
        &path,
        r#"
seed = 9
capacity_bytes = 8000000000

[cost]
prefill_secs_per_token = 0.0002

[workload]
num_queries = 25
preset = "squad"
arrival = { mode = "sequential" }

[profiler.estimator]
kind = "heuristic"
"#,
    )
    .unwrap();
    let cfg = RunConfig::load(&path).unwrap();
    assert_eq!(cfg.capacity_bytes, 8_000_000_000);
    assert_eq!(cfg.cost.prefill_secs_per_token, 0.0002);
    assert_eq!(cfg.cost.decode_secs_per_token_base, RunConfig::default().cost.decode_secs_per_token_base);
    let workload = gen_workload(&cfg.workload.spec(), cfg.seed).unwrap();
    assert!(workload.sequential);
    let est = cfg.estimator().unwrap();
    assert_eq!(est.name(), "heuristic");
    let r = run(&workload, &cfg.memory_model(), &cfg.sim_settings(), est.as_ref(), Policy::Adaptive).unwrap();
    assert_eq!(r.report.queries.len(), 25);
    // Sequential arrivals never overlap.
    let mut qs = r.report.queries.clone();
    qs.sort_by(|a, b| a.arrival.total_cmp(&b.arrival));
    for w in qs.windows(2) {
        assert!(w[1].arrival >= w[0].completion - 1e-9);
    }
}

#[test]
fn memory_pressure_triggers_fallbacks_and_queueing() {
    let mut cfg = small(11, 120);
    cfg.capacity_bytes = 1_200_000_000;
    cfg.workload.arrival = ArrivalMode::Poisson { rate: 8.0 };
    let workload = gen_workload(&cfg.workload.spec(), cfg.seed).unwrap();
    let est = cfg.estimator().unwrap();
    let r = run(&workload, &cfg.memory_model(), &cfg.sim_settings(), est.as_ref(), Policy::Adaptive).unwrap();
    assert!(r.stats.peak_used_bytes <= cfg.capacity_bytes);
    let fallbacks: Vec<_> = r.report.queries.iter().filter(|q| q.is_fallback).collect();
    assert!(!fallbacks.is_empty());
    for q in fallbacks {
        assert_ne!(q.config.method, SynthesisMethod::MapReduce);
    }
    let s = summarize(&r.report).unwrap();
    assert!(s.fallback_rate > 0.0 && s.fallback_rate < 1.0);
}

#[test]
fn fixed_policy_skips_the_profiler() {
    let cfg = small(4, 30);
    let workload = gen_workload(&cfg.workload.spec(), cfg.seed).unwrap();
    let est = cfg.estimator().unwrap();
    let fixed = RagConfig::map_reduce(5, 50);
    let r = run(&workload, &cfg.memory_model(), &cfg.sim_settings(), est.as_ref(), Policy::Fixed(fixed)).unwrap();
    assert_eq!(r.report.policy, "map_reduce/5/50");
    for q in &r.report.queries {
        assert_eq!(q.config, fixed);
        assert_eq!(q.gate, GateOutcome::Fixed);
        assert_eq!(q.profiler_secs, 0.0);
        assert!(!q.is_fallback);
    }
}

#[test]
fn oversized_fixed_config_is_rejected_up_front() {
    let mut cfg = small(4, 5);
    cfg.model.max_context_tokens = 2048;
    let workload = gen_workload(&cfg.workload.spec(), cfg.seed).unwrap();
    let est = cfg.estimator().unwrap();
    let err =
        run(&workload, &cfg.memory_model(), &cfg.sim_settings(), est.as_ref(), Policy::Fixed(RagConfig::stuff(20)))
            .unwrap_err();
    assert!(matches!(err, SimError::Config(_)));
    assert!(err.to_string().contains("stuff/20"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn runs_complete_within_capacity(seed in 0u64..1000, cap_gb in 1u64..20, rate in 0.5f64..10.0) {
        let mut cfg = small(seed, 30);
        cfg.capacity_bytes = cap_gb * 1_000_000_000;
        cfg.workload.arrival = ArrivalMode::Poisson { rate };
        let workload = gen_workload(&cfg.workload.spec(), cfg.seed).unwrap();
        let est = cfg.estimator().unwrap();
        let r = run(&workload, &cfg.memory_model(), &cfg.sim_settings(), est.as_ref(), Policy::Adaptive).unwrap();
        prop_assert_eq!(r.report.queries.len(), 30);
        for e in &r.trace {
            let used = match e {
                TraceEvent::Admit { used_bytes, .. } | TraceEvent::Complete { used_bytes, .. } => *used_bytes,
            };
            prop_assert!(used <= cfg.capacity_bytes);
        }
        for q in &r.report.queries {
            prop_assert!(q.completion >= q.arrival);
            prop_assert!((q.delay - (q.completion - q.arrival)).abs() < 1e-9);
            prop_assert!(q.profiler_secs <= q.delay);
            let quality = q.quality.unwrap();
            prop_assert!((0.0..=1.0).contains(&quality));
        }
    }
}

mod common;

use mvx_core::dcpmon::Verdict;
use mvx_core::dipmon::MispredictionPolicy;
use mvx_core::harness::{emit_report, run_scenario, AttackSpec, KernelFault, CSV_COLUMNS};
use mvx_core::syscall_model::SyscallKind;

fn attack(s: &str) -> AttackSpec {
    s.parse().unwrap()
}

#[test]
fn skipped_local_call_is_caught_only_under_strict_monitoring() {
    let mut cfg = common::config(common::script("getcwd"), "ssm");
    cfg.attacks.push(attack("1@50:skip"));
    let r = run_scenario(&cfg, "skip-ssm").unwrap();
    match &r.verdict {
        Verdict::Divergence { reason, .. } => assert!(reason.starts_with("call count mismatch"), "{reason}"),
        other => panic!("{other}"),
    }
    assert_eq!(r.executions_after_verdict, 0);

    // Relaxed monitoring checks neither local non-sensitive calls nor their
    // count; dropping one changes nothing the monitors compare.
    cfg.ssm = false;
    cfg.rsm = true;
    let r = run_scenario(&cfg, "skip-rsm").unwrap();
    assert!(r.verdict.is_clean(), "{}", r.verdict);
    assert_eq!(r.variants[1].syscalls + 1, r.variants[0].syscalls);
}

#[test]
fn every_mode_runs_clean_with_three_variants() {
    for mode in ["no-opts", "ssm", "ssm+sr", "rsm", "rsm+sr"] {
        let mut cfg = common::config(common::script("server"), mode);
        cfg.variants = 3;
        let r = run_scenario(&cfg, mode).unwrap();
        assert!(r.verdict.is_clean(), "{mode}: {}", r.verdict);
        assert_eq!(r.dipmon_direct, 0);
        assert!(r.undelivered.iter().all(|&u| u == 0), "{mode}: {:?}", r.undelivered);
        let external: Vec<u64> = r.variants.iter().map(|v| v.external_io).collect();
        assert!(external[1..].iter().all(|&e| e == 0), "{mode}: followers touched the outside world {external:?}");
    }
}

#[test]
fn transient_prediction_failures_are_retried() {
    let mut cfg = common::config(common::script("server"), "rsm+sr");
    cfg.faults.push(KernelFault { variant: 1, kind: SyscallKind::Setsockopt, count: 2 });
    let r = run_scenario(&cfg, "fault-retry").unwrap();
    assert!(r.verdict.is_clean(), "{}", r.verdict);
    let f = &r.variants[1];
    assert_eq!((f.mispredictions, f.retries), (2, 2));
}

#[test]
fn terminate_policy_stops_on_first_misprediction() {
    let mut cfg = common::config(common::script("server"), "rsm+sr");
    cfg.faults.push(KernelFault { variant: 1, kind: SyscallKind::Setsockopt, count: 1 });
    cfg.misprediction = MispredictionPolicy::Terminate;
    let r = run_scenario(&cfg, "fault-term").unwrap();
    assert!(matches!(r.verdict, Verdict::Terminated { .. }), "{}", r.verdict);
    assert_eq!(r.executions_after_verdict, 0);
}

#[test]
fn exhausted_retry_budget_terminates() {
    let mut cfg = common::config(common::script("open"), "rsm+sr");
    cfg.faults.push(KernelFault { variant: 1, kind: SyscallKind::Open, count: 5 });
    cfg.retry_budget = 2;
    let r = run_scenario(&cfg, "budget").unwrap();
    assert!(matches!(r.verdict, Verdict::Terminated { .. }), "{}", r.verdict);
}

#[test]
fn sensitive_calls_never_reach_the_in_process_monitor() {
    for name in ["server", "lighttpd_like", "read"] {
        let r = run_scenario(&common::config(common::script(name), "rsm+sr"), name).unwrap();
        for v in &r.variants {
            assert_eq!(v.syscalls, v.sensitive + v.nonsensitive);
            assert_eq!(v.monitor_origin_intercepts, 0);
            assert_eq!(v.permits, v.tokens_minted, "variant {} of {name}", v.variant);
        }
    }
}

#[test]
fn report_appends_rows_under_one_header() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs.csv");
    let cfg = common::config(common::script("open"), "rsm");
    let r = run_scenario(&cfg, "a").unwrap();
    emit_report(std::slice::from_ref(&r), &out).unwrap();
    emit_report(&[r], &out).unwrap();
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], CSV_COLUMNS.join(","));
    assert_eq!(lines[1], lines[2]);
}

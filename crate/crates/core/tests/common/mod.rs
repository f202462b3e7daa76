#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use mvx_core::harness::bench::{load_script, Suite};
use mvx_core::harness::{render_csv, ChannelSpec, RunConfig, RunMetrics};
use mvx_core::transport::ChannelFlavor;
use mvx_core::variant_engine::WorkloadScript;

pub fn suite_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios/suite")
}

pub fn suite() -> Suite {
    Suite::load(&suite_dir()).expect("suite loads")
}

pub fn script(name: &str) -> WorkloadScript {
    load_script(&suite_dir().join(format!("{name}.mvx"))).expect("workload loads")
}

pub fn inline(name: &str, text: &str) -> WorkloadScript {
    WorkloadScript::parse(name, text).expect("inline workload parses")
}

/// Config with the suite's policy and channel settings; `mode` is one of
/// no-opts, ssm, ssm+sr, rsm, rsm+sr.
pub fn config(workload: WorkloadScript, mode: &str) -> RunConfig {
    let s = suite();
    let mut cfg = RunConfig::new(workload);
    cfg.policy = s.policy.clone();
    cfg.app_root = s.app_root.clone();
    cfg.seed = s.seed;
    cfg.channel = ChannelSpec {
        flavor: ChannelFlavor::Simulated,
        latency_us: s.latency_us,
    };
    cfg.ssm = mode.starts_with("ssm");
    cfg.rsm = mode.starts_with("rsm");
    cfg.sr = mode.ends_with("+sr");
    cfg
}

pub fn with_policy(mut cfg: RunConfig, policy: mvx_core::syscall_model::SensitivityPolicy) -> RunConfig {
    cfg.policy = Arc::new(policy);
    cfg
}

/// CSV text with the run id column blanked.
pub fn csv_without_ids(runs: &[RunMetrics]) -> String {
    let blanked: Vec<RunMetrics> = runs
        .iter()
        .cloned()
        .map(|mut r| {
            r.run_id.clear();
            r
        })
        .collect();
    render_csv(&blanked).expect("csv renders")
}

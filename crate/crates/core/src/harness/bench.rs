//! Benchmark suite: every workload under no-opts, SSM, RSM, and RSM+SR,
//! with the expected overhead ordering checked.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;

use crate::error::MvxError;
use crate::harness::config::{ChannelSpec, RunConfig};
use crate::harness::report::RunMetrics;
use crate::harness::runner::run_scenario;
use crate::syscall_model::SensitivityPolicy;
use crate::transport::ChannelFlavor;
use crate::variant_engine::WorkloadScript;

/// (label, ssm, rsm, sr), in the order overhead must not increase.
pub const BENCH_MODES: [(&str, bool, bool, bool); 4] = [
    ("no-opts", false, false, false),
    ("ssm", true, false, false),
    ("rsm", false, true, false),
    ("rsm+sr", false, true, true),
];

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SuiteFile {
    #[serde(default = "default_latency")]
    latency_us: u64,
    #[serde(default)]
    seed: u64,
    policy: Option<String>,
    app_root: Option<String>,
    workload: Vec<WorkloadEntry>,
}

fn default_latency() -> u64 {
    crate::harness::config::DEFAULT_LATENCY_US
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct WorkloadEntry {
    file: String,
    #[serde(default)]
    strict: bool,
    max_overhead: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SuiteWorkload {
    pub script: WorkloadScript,
    pub strict: bool,
    pub max_overhead: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Suite {
    pub dir: PathBuf,
    pub latency_us: u64,
    pub seed: u64,
    pub policy: Arc<SensitivityPolicy>,
    pub app_root: String,
    pub workloads: Vec<SuiteWorkload>,
}

fn read(path: &Path) -> Result<String, MvxError> {
    std::fs::read_to_string(path).map_err(|e| MvxError::io(path, e))
}

pub fn load_script(path: &Path) -> Result<WorkloadScript, MvxError> {
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("workload");
    let mut script = WorkloadScript::parse(&path.display().to_string(), &read(path)?)?;
    script.name = name.to_string();
    Ok(script)
}

pub fn load_policy(path: &Path) -> Result<SensitivityPolicy, MvxError> {
    Ok(SensitivityPolicy::parse(&path.display().to_string(), &read(path)?)?)
}

impl Suite {
    pub fn load(dir: &Path) -> Result<Suite, MvxError> {
        let manifest = dir.join("suite.toml");
        let file: SuiteFile =
            toml::from_str(&read(&manifest)?).map_err(|e| MvxError::Config(format!("{}: {e}", manifest.display())))?;
        let policy = match &file.policy {
            Some(p) => load_policy(&dir.join(p))?,
            None => SensitivityPolicy::default(),
        };
        let workloads = file
            .workload
            .iter()
            .map(|w| {
                Ok(SuiteWorkload {
                    script: load_script(&dir.join(&w.file))?,
                    strict: w.strict,
                    max_overhead: w.max_overhead,
                })
            })
            .collect::<Result<Vec<_>, MvxError>>()?;
        if workloads.is_empty() {
            return Err(MvxError::Config(format!("{}: no workloads", manifest.display())));
        }
        Ok(Suite {
            dir: dir.to_path_buf(),
            latency_us: file.latency_us,
            seed: file.seed,
            policy: Arc::new(policy),
            app_root: file.app_root.unwrap_or_else(|| "/app".into()),
            workloads,
        })
    }

    pub fn config(&self, w: &SuiteWorkload, mode: (&str, bool, bool, bool), flavor: ChannelFlavor) -> RunConfig {
        let (_, ssm, rsm, sr) = mode;
        let mut cfg = RunConfig::new(w.script.clone());
        cfg.ssm = ssm;
        cfg.rsm = rsm;
        cfg.sr = sr;
        cfg.seed = self.seed;
        cfg.policy = self.policy.clone();
        cfg.app_root = self.app_root.clone();
        cfg.channel = ChannelSpec {
            flavor,
            latency_us: self.latency_us,
        };
        cfg
    }
}

#[derive(Debug, Clone, Default)]
pub struct BenchReport {
    pub runs: Vec<RunMetrics>,
    pub violations: Vec<String>,
}

impl BenchReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<16} {:<8} {:>10} {:>9} {:>9} {:>9} {:>11}\n",
            "workload", "mode", "overhead", "rtt_lead", "rtt_fol", "async", "verdict"
        );
        for r in &self.runs {
            let row = r.to_row();
            let mode = BENCH_MODES
                .iter()
                .find(|m| (m.1, m.2, m.3) == (r.ssm, r.rsm, r.sr))
                .map_or("?", |m| m.0);
            let _ = writeln!(
                out,
                "{:<16} {:<8} {:>10} {:>9} {:>9} {:>9} {:>11}",
                row.workload, mode, row.overhead, row.sync_rtt_leader, row.sync_rtt_follower, row.async_msgs, row.verdict
            );
        }
        for v in &self.violations {
            let _ = writeln!(out, "VIOLATION: {v}");
        }
        out
    }
}

/// Run the whole suite and check the ordering no-opts > SSM > RSM > RSM+SR
/// (or >= for workloads not marked strict).
pub fn bench_suite(suite: &Suite, flavor: ChannelFlavor) -> Result<BenchReport, MvxError> {
    let mut report = BenchReport::default();
    for w in &suite.workloads {
        let mut overheads = Vec::new();
        for mode in BENCH_MODES {
            let cfg = suite.config(w, mode, flavor);
            let run = run_scenario(&cfg, &format!("{}-{}", w.script.name, mode.0))?;
            if !run.verdict.is_clean() {
                report
                    .violations
                    .push(format!("{} {}: verdict {}", w.script.name, mode.0, run.verdict));
            }
            overheads.push((mode.0, run.overhead()));
            report.runs.push(run);
        }
        for pair in overheads.windows(2) {
            let ((a, oa), (b, ob)) = (pair[0], pair[1]);
            let ok = if w.strict { oa > ob } else { oa >= ob };
            if !ok {
                let rel = if w.strict { ">" } else { ">=" };
                report.violations.push(format!(
                    "{}: expected overhead({a}) {rel} overhead({b}), got {oa:.4} vs {ob:.4}",
                    w.script.name
                ));
            }
        }
        if let (Some(bound), Some((_, best))) = (w.max_overhead, overheads.last()) {
            if *best > bound {
                report
                    .violations
                    .push(format!("{}: all-optimizations overhead {best:.4} exceeds bound {bound}", w.script.name));
            }
        }
    }
    Ok(report)
}

//! Run metrics and the CSV report.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::Serialize;

use crate::arbiter::SecurityEvent;
use crate::dcpmon::Verdict;
use crate::syscall_model::{NormalizedArgs, SyscallKind, VariantId};
use crate::transport::DeliveryRecord;
use crate::error::MvxError;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VariantMetrics {
    pub variant: VariantId,
    pub syscalls: u64,
    /// Calls completed by the cross-process monitor.
    pub sensitive: u64,
    /// Calls completed by the in-process monitor.
    pub nonsensitive: u64,
    pub dcp_rounds: u64,
    pub dip_handles: u64,
    pub sync_rtt: u64,
    /// Lockstep rounds caused by calls the arbiter had classified
    /// non-sensitive (only a refused restart does that).
    pub sync_rtt_nonsensitive: u64,
    /// Messages pushed (leader) or consumed (follower) on the buffer.
    pub async_msgs: u64,
    pub replicated_by_kind: BTreeMap<SyscallKind, u64>,
    pub crossings: u64,
    pub modeled_stalls: u64,
    pub real_stalls: u64,
    pub clock_ns: u64,
    pub external_io: u64,
    pub mispredictions: u64,
    pub retries: u64,
    pub monitor_origin_intercepts: u64,
    pub classify_calls: u64,
    pub tokens_minted: u64,
    pub permits: u64,
    pub security_events: Vec<SecurityEvent>,
    /// Kind and arguments of every lockstep call, in order.
    pub sensitive_log: Vec<(SyscallKind, NormalizedArgs)>,
    pub fd_numbers: BTreeSet<i32>,
    pub last_event: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub run_id: String,
    pub workload: String,
    pub ssm: bool,
    pub rsm: bool,
    pub sr: bool,
    pub latency_us: u64,
    pub seed: u64,
    pub verdict: Verdict,
    pub variants: Vec<VariantMetrics>,
    pub rounds: u64,
    pub sim_time_ns: u64,
    pub baseline_ns: u64,
    pub messages: u64,
    pub bytes: u64,
    pub dipmon_direct: u64,
    pub executions_after_verdict: usize,
    pub deliveries: Vec<DeliveryRecord>,
    /// Leader pushes minus follower consumption, per follower, at the end.
    pub undelivered: Vec<u64>,
}

impl RunMetrics {
    pub fn leader(&self) -> &VariantMetrics {
        &self.variants[0]
    }

    pub fn overhead(&self) -> f64 {
        if self.baseline_ns == 0 {
            1.0
        } else {
            self.sim_time_ns as f64 / self.baseline_ns as f64
        }
    }

    pub fn to_row(&self) -> CsvRow {
        let l = self.leader();
        CsvRow {
            run_id: self.run_id.clone(),
            workload: self.workload.clone(),
            ssm: self.ssm,
            rsm: self.rsm,
            sr: self.sr,
            latency_us: self.latency_us,
            seed: self.seed,
            verdict: self.verdict.label().to_string(),
            syscalls_total: l.syscalls,
            sensitive: l.sensitive,
            nonsensitive: l.nonsensitive,
            sync_rtt_leader: l.sync_rtt,
            sync_rtt_follower: self.variants[1..].iter().map(|v| v.sync_rtt).sum(),
            async_msgs: l.async_msgs,
            crossings: l.crossings,
            stalls: l.modeled_stalls,
            sim_time_us: format!("{:.3}", self.sim_time_ns as f64 / 1000.0),
            baseline_time_us: format!("{:.3}", self.baseline_ns as f64 / 1000.0),
            overhead: format!("{:.4}", self.overhead()),
        }
    }

    /// Human-readable summary.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "run {} workload={} mode={} verdict: {}\n",
            self.run_id,
            self.workload,
            mode(self.ssm, self.rsm, self.sr),
            self.verdict
        );
        s += &format!(
            "  rounds={} sim_time={:.1}us baseline={:.1}us overhead={:.3}x messages={} bytes={}\n",
            self.rounds,
            self.sim_time_ns as f64 / 1000.0,
            self.baseline_ns as f64 / 1000.0,
            self.overhead(),
            self.messages,
            self.bytes
        );
        for v in &self.variants {
            s += &format!(
                "  variant {}: syscalls={} sensitive={} nonsensitive={} sync_rtt={} async={} crossings={} mispredictions={} retries={}\n",
                v.variant, v.syscalls, v.sensitive, v.nonsensitive, v.sync_rtt, v.async_msgs, v.crossings, v.mispredictions, v.retries
            );
            if let Some(e) = &v.last_event {
                s += &format!("    last event: {e}\n");
            }
            for ev in &v.security_events {
                s += &format!("    security: seq {}: {}\n", ev.seq, ev.reason);
            }
        }
        s
    }
}

fn mode(ssm: bool, rsm: bool, sr: bool) -> String {
    let mut parts = Vec::new();
    if ssm {
        parts.push("ssm");
    }
    if rsm {
        parts.push("rsm");
    }
    if sr {
        parts.push("sr");
    }
    if parts.is_empty() {
        "no-opts".into()
    } else {
        parts.join("+")
    }
}

/// One CSV line. Field order is the column order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CsvRow {
    pub run_id: String,
    pub workload: String,
    pub ssm: bool,
    pub rsm: bool,
    pub sr: bool,
    pub latency_us: u64,
    pub seed: u64,
    pub verdict: String,
    pub syscalls_total: u64,
    pub sensitive: u64,
    pub nonsensitive: u64,
    pub sync_rtt_leader: u64,
    pub sync_rtt_follower: u64,
    pub async_msgs: u64,
    pub crossings: u64,
    pub stalls: u64,
    pub sim_time_us: String,
    pub baseline_time_us: String,
    pub overhead: String,
}

pub const CSV_COLUMNS: [&str; 19] = [
    "run_id",
    "workload",
    "ssm",
    "rsm",
    "sr",
    "latency_us",
    "seed",
    "verdict",
    "syscalls_total",
    "sensitive",
    "nonsensitive",
    "sync_rtt_leader",
    "sync_rtt_follower",
    "async_msgs",
    "crossings",
    "stalls",
    "sim_time_us",
    "baseline_time_us",
    "overhead",
];

pub fn render_csv(runs: &[RunMetrics]) -> Result<String, MvxError> {
    if runs.is_empty() {
        return Err(MvxError::Report("no completed runs to report".into()));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in runs {
        w.serialize(r.to_row()).map_err(|e| MvxError::Report(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| MvxError::Report(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| MvxError::Report(e.to_string()))
}

/// Append rows to `out`, writing the header only when the file is new or empty.
pub fn emit_report(runs: &[RunMetrics], out: &Path) -> Result<(), MvxError> {
    use std::io::Write;
    let mut text = render_csv(runs)?;
    let fresh = std::fs::metadata(out).map(|m| m.len() == 0).unwrap_or(true);
    if !fresh {
        text = text.split_once('\n').map(|(_, rows)| rows.to_string()).unwrap_or_default();
    }
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(out)
        .map_err(|e| MvxError::io(out, e))?;
    f.write_all(text.as_bytes()).map_err(|e| MvxError::io(out, e))
}

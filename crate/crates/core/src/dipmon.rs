//! In-process monitor: handles non-sensitive calls inside each variant,
//! decides how their effects reach the followers, and talks to peers only
//! through its communication buffer.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::arbiter::{Arbiter, RestartVerdict, SealedToken};
use crate::cost::CostModel;
use crate::dcpmon::{RunControl, Verdict};
use crate::error::{ScenarioError, TransportError};
use crate::filemap::{FdOrigin, FileMap, PredictedResult, SharedFileMap};
use crate::syscall_model::{FdClass, SyscallEvent, SyscallKind, SyscallResult, VariantId};
use crate::transport::{dipmon_scope, Body, Delivered, MonitorSide, MsgType, WireMessage};
use crate::variant_engine::{EmulatedKernel, VariantRole};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MonitoringMode {
    StrictSelective,
    RelaxedSelective,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MispredictionPolicy {
    Retry,
    Terminate,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DipMonConfig {
    pub mode: MonitoringMode,
    pub selective_replication: bool,
    pub app_root: String,
    pub misprediction: MispredictionPolicy,
    pub retry_budget: u32,
}

impl Default for DipMonConfig {
    fn default() -> Self {
        DipMonConfig {
            mode: MonitoringMode::RelaxedSelective,
            selective_replication: false,
            app_root: "/app".into(),
            misprediction: MispredictionPolicy::Retry,
            retry_budget: 16,
        }
    }
}

impl DipMonConfig {
    /// Parse `key = value` lines; `#` starts a comment. Unset keys keep
    /// their defaults.
    pub fn parse(source_name: &str, text: &str) -> Result<Self, ScenarioError> {
        let mut cfg = DipMonConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let err = |m: String| ScenarioError::new(source_name, idx + 1, m);
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| err(format!("expected key = value, got `{line}`")))?;
            match key {
                "monitoring_mode" => {
                    cfg.mode = match value {
                        "strict" => MonitoringMode::StrictSelective,
                        "relaxed" => MonitoringMode::RelaxedSelective,
                        v => return Err(err(format!("monitoring_mode must be strict or relaxed, got `{v}`"))),
                    }
                }
                "selective_replication" => {
                    cfg.selective_replication = match value {
                        "on" => true,
                        "off" => false,
                        v => return Err(err(format!("selective_replication must be on or off, got `{v}`"))),
                    }
                }
                "app_root" => {
                    if !value.starts_with('/') {
                        return Err(err(format!("app_root must be absolute, got `{value}`")));
                    }
                    cfg.app_root = crate::syscall_model::canonical_path("/", value);
                }
                "misprediction" => cfg.misprediction = value.parse().map_err(err)?,
                "retry_budget" => {
                    cfg.retry_budget = value
                        .parse()
                        .map_err(|_| err(format!("retry_budget must be a count, got `{value}`")))?
                }
                k => return Err(err(format!("unknown key `{k}`"))),
            }
        }
        Ok(cfg)
    }
}

impl FromStr for MispredictionPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "retry" => Ok(MispredictionPolicy::Retry),
            "terminate" => Ok(MispredictionPolicy::Terminate),
            v => Err(format!("misprediction must be retry or terminate, got `{v}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReplicationDecision {
    ReplicateAsync,
    ExecuteLocallyBothSides,
    PredictNoReplicate,
}

impl fmt::Display for ReplicationDecision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReplicationDecision::ReplicateAsync => "replicate",
            ReplicationDecision::ExecuteLocallyBothSides => "local",
            ReplicationDecision::PredictNoReplicate => "predict",
        })
    }
}

/// Canonical-path containment on component boundaries.
pub fn under_root(path: &str, root: &str) -> bool {
    let root = root.trim_end_matches('/');
    root.is_empty() || path == root || path.strip_prefix(root).is_some_and(|rest| rest.starts_with('/'))
}

pub fn decide_replication(event: &SyscallEvent, fmap: &FileMap, cfg: &DipMonConfig) -> ReplicationDecision {
    use ReplicationDecision::*;
    use SyscallKind::*;
    if event.kind.is_non_io() {
        return ExecuteLocallyBothSides;
    }
    if !cfg.selective_replication {
        return ReplicateAsync;
    }
    let in_root = |p: Option<&String>| p.is_some_and(|p| under_root(p, &cfg.app_root));
    // Only fields every variant's map agrees on may steer the decision, or
    // the leader and a follower could pick different paths for one call.
    let file_in_root = || {
        event.args.fd
            .and_then(|fd| fmap.get(fd))
            .is_some_and(|m| m.kind == FdClass::File && in_root(m.path.as_ref()))
    };
    match event.kind {
        Open if in_root(event.args.path.as_ref()) => PredictNoReplicate,
        Setsockopt | Close => PredictNoReplicate,
        Stat if in_root(event.args.path.as_ref()) => ExecuteLocallyBothSides,
        Read | Write | Lseek if file_in_root() => ExecuteLocallyBothSides,
        _ => ReplicateAsync,
    }
}

/// What every variant expects a predicted call to return, from its own map.
pub fn predict(event: &SyscallEvent, fmap: &FileMap) -> PredictedResult {
    let fd = event.args.fd.unwrap_or(-1);
    match event.kind {
        SyscallKind::Setsockopt => fmap.predict_setsockopt(
            fd,
            event.args.num("level").unwrap_or(-1),
            event.args.num("opt").unwrap_or(-1),
            event.args.num("value").unwrap_or(0),
        ),
        SyscallKind::Close => fmap.predict_close(fd),
        _ => PredictedResult::Success(i64::from(fmap.predict_next_fd())),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DipMonStats {
    pub handled: u64,
    pub arg_broadcasts: u64,
    pub strict_checks: u64,
    pub local: u64,
    pub predicted: u64,
    pub replicated: u64,
    pub replicated_by_kind: BTreeMap<SyscallKind, u64>,
    pub mispredictions: u64,
    pub retries: u64,
    pub notices_seen: u64,
    /// Pushes that found the buffer full in simulated time.
    pub modeled_stalls: u64,
    pub forwarded: u64,
    pub misprediction_log: Vec<String>,
}

/// Outcome of handling a routed call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Handled {
    Done(SyscallResult),
    /// The restart was refused; the call must go through lockstep.
    Forward,
}

/// Per-variant mutable machine state the monitor works on.
pub struct Machine<'a> {
    pub kernel: &'a mut EmulatedKernel,
    pub fmap: &'a SharedFileMap,
    pub clock: &'a mut u64,
}

pub struct DipMon {
    variant: VariantId,
    role: VariantRole,
    cfg: Arc<DipMonConfig>,
    cb: MonitorSide,
    control: Arc<RunControl>,
    costs: CostModel,
    capacity: usize,
    /// Simulated times at which queued messages leave the buffer.
    inflight: VecDeque<u64>,
    stats: DipMonStats,
}

type Stop = TransportError;

impl DipMon {
    pub fn new(
        variant: VariantId,
        cfg: Arc<DipMonConfig>,
        cb: MonitorSide,
        control: Arc<RunControl>,
        costs: CostModel,
        capacity: usize,
    ) -> Self {
        DipMon {
            variant,
            role: VariantRole::of(variant),
            cfg,
            cb,
            control,
            costs,
            capacity: capacity.max(1),
            inflight: VecDeque::new(),
            stats: DipMonStats::default(),
        }
    }

    pub fn stats(&self) -> &DipMonStats {
        &self.stats
    }

    /// Messages this monitor's variant consumed from its incoming lane.
    pub fn popped(&self) -> u64 {
        self.cb.incoming.stats().popped()
    }

    /// Messages this monitor pushed towards its connector.
    pub fn pushed(&self) -> u64 {
        self.cb.outgoing.stats().pushed()
    }

    /// Pushes that actually blocked on the real buffer.
    pub fn stalls(&self) -> u64 {
        self.cb.outgoing.stats().stalls()
    }

    /// Hang up the outgoing lane so the connector drains and says goodbye.
    /// Returns the incoming messages left unconsumed.
    pub fn close(self) -> (DipMonStats, Vec<Delivered>) {
        let leftover = self.cb.incoming.drain();
        (self.stats, leftover)
    }

    fn push(&mut self, msg_type: MsgType, seq: u64, body: &Body, clock: &mut u64) -> Result<(), Stop> {
        *clock += self.costs.push_ns;
        while self.inflight.front().is_some_and(|&t| t <= *clock) {
            self.inflight.pop_front();
        }
        if self.inflight.len() >= self.capacity {
            self.stats.modeled_stalls += 1;
            *clock = self.inflight[self.inflight.len() - self.capacity];
            while self.inflight.front().is_some_and(|&t| t <= *clock) {
                self.inflight.pop_front();
            }
        }
        let start = self.inflight.back().map_or(*clock, |&b| b.max(*clock));
        self.inflight.push_back(start + self.costs.drain_ns);
        self.cb
            .outgoing
            .push(WireMessage::new(msg_type, self.variant, seq, body))
    }

    /// Next protocol message from the leader, skipping misprediction notices.
    fn pop_expect(&mut self, want: MsgType, seq: u64, clock: &mut u64) -> Result<Body, Stop> {
        loop {
            let d = match self.cb.incoming.pop() {
                Ok(d) => d,
                Err(TransportError::Closed) => {
                    self.control
                        .diverge(format!("variant {} expected {want:?} for seq {seq} after the leader finished", self.variant));
                    return Err(TransportError::Stopped);
                }
                Err(e) => return Err(e),
            };
            let body = d.msg.body()?;
            match (d.msg.msg_type, &body) {
                (MsgType::MispredictNotice, _) => {
                    self.stats.notices_seen += 1;
                    continue;
                }
                (MsgType::Terminate, Body::Terminate { reason, .. }) => {
                    self.control.terminate_all(Verdict::Terminated { reason: reason.clone() });
                    return Err(TransportError::Stopped);
                }
                // Relaxed mode pairs results by order; the kind check in
                // `apply_replicated` still applies.
                (t, _) if t == want && (d.msg.seq == seq || self.cfg.mode == MonitoringMode::RelaxedSelective) => {
                    *clock = (*clock).max(d.arrive_ns);
                    return Ok(body);
                }
                (t, _) => {
                    self.control.diverge(format!(
                        "variant {} expected {want:?} for seq {seq}, leader sent {t:?} for seq {}",
                        self.variant, d.msg.seq
                    ));
                    return Err(TransportError::Stopped);
                }
            }
        }
    }

    fn admit(&self, event: &SyscallEvent) -> Result<(), Stop> {
        self.control.admit(self.variant, event.seq, event.kind)
    }

    /// Handle a call the arbiter routed here with `token`.
    pub fn handle(
        &mut self,
        event: &SyscallEvent,
        token: &SealedToken,
        arbiter: &mut Arbiter,
        m: Machine<'_>,
    ) -> Result<Handled, Stop> {
        dipmon_scope(|| self.handle_inner(event, token, arbiter, m))
    }

    fn handle_inner(
        &mut self,
        event: &SyscallEvent,
        token: &SealedToken,
        arbiter: &mut Arbiter,
        m: Machine<'_>,
    ) -> Result<Handled, Stop> {
        let Machine { kernel, fmap, clock } = m;
        self.stats.handled += 1;

        if self.cfg.mode == MonitoringMode::StrictSelective {
            self.strict_exchange(event, clock)?;
        }

        *clock += self.costs.crossing_ns;
        if arbiter.verify_restart(&event.restarted(), token) == RestartVerdict::ForwardDcpMon {
            self.stats.forwarded += 1;
            return Ok(Handled::Forward);
        }

        let decision = fmap.read(|f| decide_replication(event, f, &self.cfg));
        let (result, origin) = match decision {
            ReplicationDecision::ExecuteLocallyBothSides => {
                self.stats.local += 1;
                self.admit(event)?;
                *clock += self.costs.syscall_ns;
                (kernel.execute_locally(event), FdOrigin::Local)
            }
            ReplicationDecision::PredictNoReplicate => {
                self.stats.predicted += 1;
                (self.predicted(event, kernel, fmap, clock)?, FdOrigin::Local)
            }
            ReplicationDecision::ReplicateAsync => self.replicated(event, kernel, clock)?,
        };
        if event.kind.mutates_fds() {
            fmap.write(|f| f.record(event, &result, origin));
        }
        Ok(Handled::Done(result))
    }

    fn strict_exchange(&mut self, event: &SyscallEvent, clock: &mut u64) -> Result<(), Stop> {
        match self.role {
            VariantRole::Leader => {
                self.stats.arg_broadcasts += 1;
                let body = Body::Args {
                    sent_ns: *clock,
                    kind: event.kind,
                    args: event.args.clone(),
                };
                self.push(MsgType::ArgBroadcast, event.seq, &body, clock)
            }
            VariantRole::Follower => {
                let body = self.pop_expect(MsgType::ArgBroadcast, event.seq, clock)?;
                *clock += self.costs.compare_ns;
                self.stats.strict_checks += 1;
                match body {
                    Body::Args { kind, args, .. } if kind == event.kind && args == event.args => Ok(()),
                    Body::Args { kind, args, .. } => {
                        self.control.diverge(format!(
                            "strict monitoring: variant 0 issued {kind} {args:?} but variant {} issued {} {:?} at seq {}",
                            self.variant, event.kind, event.args, event.seq
                        ));
                        Err(TransportError::Stopped)
                    }
                    other => Err(TransportError::Decode(format!("unexpected body {other:?}"))),
                }
            }
        }
    }

    fn replicated(
        &mut self,
        event: &SyscallEvent,
        kernel: &mut EmulatedKernel,
        clock: &mut u64,
    ) -> Result<(SyscallResult, FdOrigin), Stop> {
        match self.role {
            VariantRole::Leader => {
                self.admit(event)?;
                *clock += self.costs.syscall_ns;
                let result = kernel.execute_locally(event);
                let body = Body::Result {
                    sent_ns: *clock,
                    result: result.clone(),
                };
                self.push(MsgType::ResultReplication, event.seq, &body, clock)?;
                self.stats.replicated += 1;
                *self.stats.replicated_by_kind.entry(event.kind).or_default() += 1;
                Ok((result, FdOrigin::Local))
            }
            VariantRole::Follower => {
                let Body::Result { result: leader, .. } = self.pop_expect(MsgType::ResultReplication, event.seq, clock)?
                else {
                    return Err(TransportError::Decode("replication without a result".into()));
                };
                self.admit(event)?;
                *clock += self.costs.apply_ns;
                self.stats.replicated += 1;
                *self.stats.replicated_by_kind.entry(event.kind).or_default() += 1;
                match kernel.apply_replicated(event, &leader) {
                    Ok(r) => Ok((r, FdOrigin::ReplicatedShadow)),
                    Err(e) => {
                        self.control.diverge(format!("variant {} seq {}: {e}", self.variant, event.seq));
                        Err(TransportError::Stopped)
                    }
                }
            }
        }
    }

    /// Execute locally and check the outcome against this variant's own
    /// prediction. Deterministic failures are accepted: every variant runs
    /// on an identical copy and fails the same way.
    fn predicted(
        &mut self,
        event: &SyscallEvent,
        kernel: &mut EmulatedKernel,
        fmap: &SharedFileMap,
        clock: &mut u64,
    ) -> Result<SyscallResult, Stop> {
        let expected = fmap.read(|f| predict(event, f));
        let mut retries = 0;
        loop {
            self.admit(event)?;
            *clock += self.costs.syscall_ns;
            let result = kernel.execute_locally(event);
            if expected.matches(&result) {
                return Ok(result);
            }
            let transient = result.errno.is_some_and(|e| e.is_transient());
            if !transient && matches!(expected, PredictedResult::Success(_)) && !result.is_ok() {
                return Ok(result);
            }
            self.stats.mispredictions += 1;
            let detail = format!(
                "variant {} seq {} {}: predicted {expected:?}, got ret={} errno={:?}",
                self.variant, event.seq, event.kind, result.ret, result.errno
            );
            self.stats.misprediction_log.push(detail.clone());
            if self.role == VariantRole::Leader {
                let body = Body::Mispredict { sent_ns: *clock, detail: detail.clone() };
                self.push(MsgType::MispredictNotice, event.seq, &body, clock)?;
            }
            let retryable = transient && self.cfg.misprediction == MispredictionPolicy::Retry;
            if !retryable || retries >= self.cfg.retry_budget {
                let why = if retryable { "retry budget exhausted" } else { "misprediction" };
                self.control.terminate_all(Verdict::Terminated {
                    reason: format!("{why}: {detail}"),
                });
                return Err(TransportError::Stopped);
            }
            retries += 1;
            self.stats.retries += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syscall_model::{normalize, Issuer, RawCall, SensitivityPolicy, VariantContext};
    use crate::arbiter::Route;
    use crate::transport::{
        spawn_follower_pump, spawn_leader_pump, ChannelFlavor, CommBuffer, Endpoint, FailureHook, LatencyModel,
        Transcript,
    };

    fn ev(variant: VariantId, seq: u64, raw: &RawCall) -> SyscallEvent {
        SyscallEvent {
            variant,
            seq,
            kind: raw.kind,
            args: normalize(raw, &VariantContext::default()).unwrap(),
            issuer: Issuer::Application,
            buffer: raw.buffer(),
        }
    }

    fn sr_on() -> DipMonConfig {
        DipMonConfig {
            selective_replication: true,
            ..Default::default()
        }
    }

    #[test]
    fn root_containment_respects_component_boundaries() {
        assert!(under_root("/app/htdocs/index.html", "/app"));
        assert!(under_root("/app", "/app"));
        assert!(!under_root("/application/x", "/app"));
        assert!(under_root("/anything", "/"));
    }

    #[test]
    fn decision_examples() {
        let mut fmap = FileMap::with_stdio();
        let open_idx = ev(0, 0, &RawCall::new(SyscallKind::Open).arg("path", "/app/htdocs/index.html").arg("flags", "read"));
        fmap.record(
            &open_idx,
            &SyscallResult {
                created: Some(crate::syscall_model::CreatedFd { class: FdClass::File, path: Some("/app/htdocs/index.html".into()) }),
                ..SyscallResult::ok(SyscallKind::Open, 3)
            },
            FdOrigin::Local,
        );
        let read3 = ev(0, 1, &RawCall::new(SyscallKind::Read).arg("fd", 3).arg("len", 16));
        assert_eq!(decide_replication(&read3, &fmap, &sr_on()), ReplicationDecision::ExecuteLocallyBothSides);
        assert_eq!(decide_replication(&read3, &fmap, &DipMonConfig::default()), ReplicationDecision::ReplicateAsync);

        let log = ev(0, 2, &RawCall::new(SyscallKind::Open).arg("path", "/app/logs/new.log").arg("flags", "write|create"));
        assert_eq!(decide_replication(&log, &fmap, &sr_on()), ReplicationDecision::PredictNoReplicate);
        let etc = ev(0, 3, &RawCall::new(SyscallKind::Open).arg("path", "/etc/passwd").arg("flags", "read"));
        assert_eq!(decide_replication(&etc, &fmap, &sr_on()), ReplicationDecision::ReplicateAsync);

        let getcwd = ev(0, 4, &RawCall::new(SyscallKind::Getcwd));
        assert_eq!(decide_replication(&getcwd, &fmap, &DipMonConfig::default()), ReplicationDecision::ExecuteLocallyBothSides);
        let stdout = ev(0, 5, &RawCall::new(SyscallKind::Write).arg("fd", 1).arg("data", "x"));
        assert_eq!(decide_replication(&stdout, &fmap, &sr_on()), ReplicationDecision::ReplicateAsync);
    }

    #[test]
    fn config_parsing() {
        let cfg = DipMonConfig::parse(
            "d.conf",
            "monitoring_mode = strict\nselective_replication = on # yes\napp_root = /srv/www/\nmisprediction = terminate\nretry_budget = 3\n",
        )
        .unwrap();
        assert_eq!(cfg.mode, MonitoringMode::StrictSelective);
        assert!(cfg.selective_replication);
        assert_eq!(cfg.app_root, "/srv/www");
        assert_eq!(cfg.misprediction, MispredictionPolicy::Terminate);
        assert_eq!(cfg.retry_budget, 3);
        for (text, line) in [("mode = strict\n", 1), ("\nretry_budget = many\n", 2), ("app_root = rel\n", 1), ("junk\n", 1)] {
            assert_eq!(DipMonConfig::parse("d.conf", text).unwrap_err().line, line);
        }
    }

    /// Leader and one follower wired through real connectors.
    struct Pair {
        control: Arc<RunControl>,
        mons: Vec<DipMon>,
        arbiters: Vec<Arbiter>,
        kernels: Vec<EmulatedKernel>,
        fmaps: Vec<SharedFileMap>,
        clocks: Vec<u64>,
        pumps: Vec<std::thread::JoinHandle<crate::transport::PumpReport>>,
    }

    fn pair(cfg: DipMonConfig, capacity: usize) -> Pair {
        let control = RunControl::new();
        let stop = control.stop_flag();
        let cfg = Arc::new(cfg);
        let (lm, lc) = CommBuffer::new(capacity, stop.clone());
        let (fm, fc) = CommBuffer::new(capacity, stop.clone());
        let (a, b) = Endpoint::pair(ChannelFlavor::Simulated, Arc::default(), stop.clone()).unwrap();
        let hook: FailureHook = Arc::new(|_| {});
        let pumps = vec![
            spawn_leader_pump(lc, vec![a], stop.clone(), hook.clone()).unwrap(),
            spawn_follower_pump(1, fc, b, LatencyModel::new(50, 3), Transcript::default(), stop, hook).unwrap(),
        ];
        let policy = Arc::new(SensitivityPolicy::default());
        let fs: BTreeMap<String, Vec<u8>> = [("/app/a.txt".to_string(), b"hello".to_vec())].into();
        Pair {
            mons: vec![
                DipMon::new(0, cfg.clone(), lm, control.clone(), CostModel::default(), capacity),
                DipMon::new(1, cfg, fm, control.clone(), CostModel::default(), capacity),
            ],
            control,
            arbiters: vec![Arbiter::new(0, policy.clone(), 1), Arbiter::new(1, policy, 1)],
            kernels: vec![EmulatedKernel::new(fs.clone(), vec![]), EmulatedKernel::new(fs, vec![])],
            fmaps: vec![SharedFileMap::new(FileMap::with_stdio()), SharedFileMap::new(FileMap::with_stdio())],
            clocks: vec![0, 0],
            pumps,
        }
    }

    impl Pair {
        fn call(&mut self, v: usize, seq: u64, raw: &RawCall) -> Result<Handled, Stop> {
            let e = ev(v as VariantId, seq, raw);
            let route = self.fmaps[v].read(|f| self.arbiters[v].intercept(&e, f));
            let Route::ToDipMon(tok) = route else { panic!("{raw:?} was routed to lockstep") };
            self.mons[v].handle(
                &e,
                &tok,
                &mut self.arbiters[v],
                Machine { kernel: &mut self.kernels[v], fmap: &self.fmaps[v], clock: &mut self.clocks[v] },
            )
        }

        fn finish(self) -> Vec<DipMonStats> {
            let stats = self.mons.into_iter().map(|m| m.close().0).collect();
            for p in self.pumps {
                p.join().unwrap();
            }
            stats
        }
    }

    fn open_app(flags: &str) -> RawCall {
        RawCall::new(SyscallKind::Open).arg("path", "/app/a.txt").arg("flags", flags)
    }

    #[test]
    fn replicated_reads_reach_the_follower_in_order() {
        let mut p = pair(DipMonConfig::default(), 4);
        let calls = [open_app("read"), RawCall::new(SyscallKind::Read).arg("fd", 3).arg("len", 2)];
        let mut seq = 0;
        let mut leader_results = Vec::new();
        for c in calls.iter().chain(std::iter::repeat_n(&calls[1], 9)) {
            leader_results.push(p.call(0, seq, c).unwrap());
            seq += 1;
        }
        for (s, c) in calls.iter().chain(std::iter::repeat_n(&calls[1], 9)).enumerate() {
            assert_eq!(p.call(1, s as u64, c).unwrap(), leader_results[s]);
        }
        assert_eq!(p.kernels[1].external_io(), 0);
        assert!(p.clocks[1] >= 50_000);
        assert_eq!(p.fmaps[1].snapshot().get(3).unwrap().origin, FdOrigin::ReplicatedShadow);
        let stats = p.finish();
        assert_eq!(stats[0].replicated_by_kind[&SyscallKind::Open], 1);
        assert_eq!(stats[1].replicated_by_kind[&SyscallKind::Read], 10);
    }

    #[test]
    fn modeled_buffer_backpressure() {
        // Drain takes 500ns per message; back-to-back pushes of 200ns into a
        // buffer of 2 must wait once the buffer is full.
        let mut p = pair(DipMonConfig::default(), 2);
        let mut clock = 0;
        let body = Body::Mispredict { sent_ns: 0, detail: String::new() };
        for seq in 0..6 {
            p.mons[0].push(MsgType::MispredictNotice, seq, &body, &mut clock).unwrap();
        }
        // Oracle: replay the queue by hand.
        let (mut t, mut done, mut stalls) = (0u64, Vec::<u64>::new(), 0);
        for _ in 0..6 {
            t += 200;
            let live: Vec<u64> = done.iter().copied().filter(|&d| d > t).collect();
            if live.len() >= 2 {
                stalls += 1;
                t = live[live.len() - 2];
            }
            let start = done.last().map_or(t, |&b| b.max(t));
            done.push(start + 500);
        }
        assert_eq!(p.mons[0].stats().modeled_stalls, stalls);
        assert!(stalls >= 1);
        assert_eq!(clock, t);
        p.finish();
    }

    #[test]
    fn selective_replication_keeps_app_root_io_local() {
        let mut p = pair(sr_on(), 8);
        let calls = [
            open_app("read"),
            RawCall::new(SyscallKind::Read).arg("fd", 3).arg("len", 5),
            RawCall::new(SyscallKind::Close).arg("fd", 3),
            RawCall::new(SyscallKind::Getcwd),
        ];
        for v in 0..2 {
            for (s, c) in calls.iter().enumerate() {
                assert!(matches!(p.call(v, s as u64, c).unwrap(), Handled::Done(r) if r.is_ok()));
            }
        }
        assert_eq!(p.mons[0].pushed(), 0);
        assert_eq!(p.clocks[0], p.clocks[1]);
        let stats = p.finish();
        assert_eq!(stats[0].predicted, 2);
        assert!(stats[0].replicated_by_kind.is_empty());
    }

    #[test]
    fn strict_mode_catches_a_perturbed_argument() {
        let mut p = pair(DipMonConfig { mode: MonitoringMode::StrictSelective, ..Default::default() }, 8);
        let good = RawCall::new(SyscallKind::Brk).arg("incr", 16);
        p.call(0, 0, &good).unwrap();
        assert!(p.call(1, 0, &RawCall::new(SyscallKind::Brk).arg("incr", 8)).is_err());
        assert!(matches!(p.control.verdict(), Verdict::Divergence { reason, .. } if reason.starts_with("strict")));
        p.finish();
    }

    #[test]
    fn setsockopt_misprediction_retry_and_terminate() {
        for (policy, clean) in [(MispredictionPolicy::Retry, true), (MispredictionPolicy::Terminate, false)] {
            let mut p = pair(DipMonConfig { misprediction: policy, ..sr_on() }, 8);
            // A socket needs lockstep in the default policy; register it directly.
            for v in 0..2 {
                let sock = ev(v as VariantId, 0, &RawCall::new(SyscallKind::Socket));
                let r = p.kernels[v].execute_locally(&sock);
                p.fmaps[v].write(|f| f.record(&sock, &r, FdOrigin::Local));
            }
            p.kernels[1].inject_failures(SyscallKind::Setsockopt, 1);
            let opt = RawCall::new(SyscallKind::Setsockopt).arg("fd", 3).arg("level", "socket").arg("opt", "reuseaddr").arg("value", 1);
            p.call(0, 1, &opt).unwrap();
            let r = p.call(1, 1, &opt);
            assert_eq!(r.is_ok(), clean, "{policy:?}");
            assert_eq!(p.control.verdict().is_clean(), clean);
            assert_eq!(p.mons[1].stats().mispredictions, 1);
            assert_eq!(p.mons[0].pushed(), 0);
            p.finish();
        }
    }

    #[test]
    fn tampered_token_is_forwarded_not_executed() {
        let mut p = pair(DipMonConfig::default(), 8);
        let e = ev(0, 0, &RawCall::new(SyscallKind::Getcwd));
        let Route::ToDipMon(tok) = p.fmaps[0].read(|f| p.arbiters[0].intercept(&e, f)) else { panic!() };
        let out = p.mons[0]
            .handle(&e, &tok.tampered(4), &mut p.arbiters[0], Machine { kernel: &mut p.kernels[0], fmap: &p.fmaps[0], clock: &mut p.clocks[0] })
            .unwrap();
        assert_eq!(out, Handled::Forward);
        assert_eq!(p.kernels[0].executed(), 0);
        assert_eq!(p.arbiters[0].security_log().len(), 1);
        p.finish();
    }
}

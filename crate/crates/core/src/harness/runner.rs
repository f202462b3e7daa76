//! Wires arbiter, monitors, connectors, and variants together for one run.

use std::sync::Arc;
use std::thread;

use crate::arbiter::{Arbiter, Route, SealedToken};
use crate::cost::CostModel;
use crate::dcpmon::{wire_lockstep, DcpMonConfig, FollowerPort, Grant, LeaderPort, ReplicationProbe, RunControl, Verdict};
use crate::dipmon::{DipMon, Handled, Machine};
use crate::error::{MvxError, TransportError};
use crate::filemap::{FdOrigin, FileMap, SharedFileMap};
use crate::harness::config::{AttackSpec, Mutation, RunConfig};
use crate::harness::report::{RunMetrics, VariantMetrics};
use crate::syscall_model::{SyscallEvent, VariantId};
use crate::transport::{
    spawn_follower_pump, spawn_leader_pump, ChannelStats, CommBuffer, Endpoint, FailureHook, LatencyModel,
    MonitorSide, ReleaseAction, Transcript,
};
use crate::variant_engine::{EmulatedKernel, Step, VariantEngine, WorkloadScript};

/// Simulated time of the workload on one machine with no monitoring.
pub fn run_native(script: &WorkloadScript, costs: &CostModel) -> u64 {
    let mut engine = VariantEngine::from_script(0, script);
    let mut kernel = EmulatedKernel::new(script.files.clone(), script.net_data.clone());
    let mut t = 0;
    loop {
        match engine.step() {
            Ok(Step::Work(us)) => t += us * 1000,
            Ok(Step::Call(e)) => {
                kernel.execute_locally(&e);
                t += costs.syscall_ns;
                if kernel.exited().is_some() {
                    break;
                }
            }
            Ok(Step::Finished) | Err(_) => break,
        }
    }
    t
}

enum Port {
    Leader(LeaderPort),
    Follower(FollowerPort),
}

struct Variant {
    id: VariantId,
    engine: VariantEngine,
    kernel: EmulatedKernel,
    arbiter: Arbiter,
    dip: DipMon,
    fmap: SharedFileMap,
    port: Port,
    control: Arc<RunControl>,
    costs: CostModel,
    attacks: Vec<AttackSpec>,
    clock: u64,
    last_token: Option<SealedToken>,
    m: VariantMetrics,
}

fn perturb(event: &mut SyscallEvent, field: &str, delta: i64) {
    if field == "fd" {
        if let Some(fd) = event.args.fd.as_mut() {
            *fd += delta as i32;
        }
    } else if let (Some(p), "data") = (event.args.payload.as_mut(), field) {
        p.len = (p.len as i64 + delta).max(0) as u64;
        p.digest ^= delta as u64;
    } else if let (Some(p), "path") = (event.args.path.as_mut(), field) {
        p.push_str(&format!(".{delta}"));
    } else {
        // A field the call does not carry is added, so the attack always
        // changes the argument vector.
        *event.args.nums.entry(field.to_string()).or_insert(0) += delta;
    }
}

impl Variant {
    fn take_attack(&mut self, seq: u64, pre_step: bool) -> Option<Mutation> {
        let idx = self.attacks.iter().position(|a| {
            a.seq == seq && pre_step == matches!(a.mutation, Mutation::SkipCall | Mutation::ExtraSensitiveCall(_))
        })?;
        Some(self.attacks.remove(idx).mutation)
    }

    fn run(mut self) -> VariantMetrics {
        if let Err(e) = self.main_loop() {
            self.fail(e);
        }
        self.finish()
    }

    fn fail(&self, e: TransportError) {
        match e {
            TransportError::Stopped => {}
            TransportError::Timeout(d) => {
                self.control.diverge(format!("timeout: variant {} waited {d:?} for lockstep release", self.id));
            }
            other => {
                self.control.terminate_all(Verdict::Terminated {
                    reason: format!("transport: variant {}: {other}", self.id),
                });
            }
        }
    }

    fn main_loop(&mut self) -> Result<(), TransportError> {
        while !self.control.is_stopped() {
            let seq = self.engine.next_seq();
            match self.take_attack(seq, true) {
                Some(Mutation::SkipCall) => {
                    self.engine.skip_next_call();
                    continue;
                }
                Some(Mutation::ExtraSensitiveCall(raw)) => {
                    let event = self.engine.inject(&raw).map_err(|e| TransportError::Decode(e.to_string()))?;
                    self.process(event, None)?;
                    continue;
                }
                _ => {}
            }
            match self.engine.step() {
                Err(e) => return Err(TransportError::Decode(e.to_string())),
                Ok(Step::Finished) => break,
                Ok(Step::Work(us)) => self.clock += us * 1000,
                Ok(Step::Call(mut event)) => {
                    let mut token_attack = None;
                    match self.take_attack(seq, false) {
                        Some(Mutation::ArgPerturb { field, delta }) => perturb(&mut event, &field, delta),
                        other => token_attack = other,
                    }
                    self.process(event, token_attack)?;
                    if self.kernel.exited().is_some() {
                        break;
                    }
                }
            }
        }
        Ok(())
    }

    fn process(&mut self, event: SyscallEvent, token_attack: Option<Mutation>) -> Result<(), TransportError> {
        self.m.syscalls += 1;
        self.m.last_event = Some(format!("seq {} {} {:?}", event.seq, event.kind, event.args));
        self.clock += self.costs.crossing_ns;
        let route = self.fmap.read(|f| self.arbiter.intercept(&event, f));
        match route {
            Route::ToDipMon(token) => {
                let presented = match token_attack {
                    Some(Mutation::TokenFlip { bit }) => token.tampered(1u64 << bit),
                    Some(Mutation::TokenReplay) => self
                        .last_token
                        .clone()
                        .unwrap_or_else(|| SealedToken::forged(0, self.id, event.seq)),
                    _ => token.clone(),
                };
                self.last_token = Some(token);
                let machine = Machine {
                    kernel: &mut self.kernel,
                    fmap: &self.fmap,
                    clock: &mut self.clock,
                };
                match self.dip.handle(&event, &presented, &mut self.arbiter, machine)? {
                    Handled::Done(_) => {
                        self.m.nonsensitive += 1;
                        self.m.dip_handles += 1;
                    }
                    Handled::Forward => self.lockstep(&event, true)?,
                }
            }
            Route::ToDcpMon => self.lockstep(&event, false)?,
        }
        Ok(())
    }

    fn lockstep(&mut self, event: &SyscallEvent, forwarded: bool) -> Result<(), TransportError> {
        self.clock += self.costs.ptrace_ns;
        let call = Some((event.kind, event.args.clone()));
        let admit = |c: &RunControl| c.admit(event.variant, event.seq, event.kind);
        let (result, origin) = match &mut self.port {
            Port::Leader(p) => match p.submit(event.seq, self.clock, call)? {
                Grant::Go { round_ts, io, .. } => {
                    self.clock = self.clock.max(round_ts);
                    admit(&self.control)?;
                    self.clock += self.costs.syscall_ns;
                    let r = self.kernel.execute_locally(event);
                    if io {
                        p.executed(r.clone(), self.clock)?;
                    }
                    (r, FdOrigin::Local)
                }
                Grant::Finished => return Err(TransportError::Stopped),
            },
            Port::Follower(p) => {
                let rel = p.submit(event.seq, self.clock, call)?;
                self.clock = self.clock.max(rel.arrive_ns);
                match rel.action {
                    ReleaseAction::ExecuteLocal => {
                        admit(&self.control)?;
                        self.clock += self.costs.syscall_ns;
                        (self.kernel.execute_locally(event), FdOrigin::Local)
                    }
                    ReleaseAction::Replicated(leader) => {
                        admit(&self.control)?;
                        self.clock += self.costs.apply_ns;
                        match self.kernel.apply_replicated(event, &leader) {
                            Ok(r) => (r, FdOrigin::ReplicatedShadow),
                            Err(e) => {
                                self.control.diverge(format!("variant {} seq {}: {e}", self.id, event.seq));
                                return Err(TransportError::Stopped);
                            }
                        }
                    }
                    ReleaseAction::Finished => return Err(TransportError::Stopped),
                }
            }
        };
        if event.kind.mutates_fds() {
            self.fmap.write(|f| f.record(event, &result, origin));
        }
        self.m.sensitive += 1;
        self.m.dcp_rounds += 1;
        if forwarded {
            self.m.sync_rtt_nonsensitive += 1;
        }
        self.m.sensitive_log.push((event.kind, event.args.clone()));
        Ok(())
    }

    fn finish(self) -> VariantMetrics {
        let Variant {
            id,
            engine,
            kernel,
            arbiter,
            dip,
            fmap,
            port,
            control,
            clock,
            mut m,
            ..
        } = self;
        let pushed = dip.pushed();
        let popped = dip.popped();
        let real_stalls = dip.stalls();
        // Hanging up lets the leader's connector drain and say goodbye.
        let (dstats, _leftover) = dip.close();
        let sync_rtt = match port {
            Port::Leader(mut p) => {
                if !control.is_stopped() {
                    let _ = p.submit(engine.next_seq(), clock, None);
                }
                p.sync_round_trips()
            }
            Port::Follower(mut p) => {
                if !control.is_stopped() {
                    let _ = p.submit(engine.next_seq(), clock, None);
                }
                p.sync_round_trips()
            }
        };
        let a = arbiter.stats();
        m.variant = id;
        m.sync_rtt = sync_rtt;
        m.async_msgs = if id == 0 { pushed } else { popped };
        m.replicated_by_kind = dstats.replicated_by_kind;
        m.crossings = a.crossings;
        m.modeled_stalls = dstats.modeled_stalls;
        m.real_stalls = real_stalls;
        m.clock_ns = clock;
        m.external_io = kernel.external_io();
        m.mispredictions = dstats.mispredictions;
        m.retries = dstats.retries;
        m.monitor_origin_intercepts = a.monitor_origin_intercepts;
        m.classify_calls = a.classify_calls;
        m.tokens_minted = a.tokens_minted;
        m.permits = a.permits;
        m.security_events = arbiter.security_log().to_vec();
        m.fd_numbers = fmap.snapshot().fds();
        m
    }
}

/// Run one scenario to completion and collect its metrics. The verdict is
/// part of the metrics; only setup problems are errors.
pub fn run_scenario(cfg: &RunConfig, run_id: &str) -> Result<RunMetrics, MvxError> {
    cfg.validate()?;
    let baseline_ns = run_native(&cfg.workload, &cfg.costs);
    let control = RunControl::new();
    let stop = control.stop_flag();
    let stats = Arc::new(ChannelStats::default());
    let latency = LatencyModel::new(cfg.channel.latency_us, cfg.seed);
    let flavor = cfg.channel.flavor;
    let cap = cfg.cb_capacity;
    let followers: Vec<VariantId> = (1..cfg.variants).collect();
    let hook: FailureHook = {
        let c = control.clone();
        Arc::new(move |reason| {
            c.terminate_all(Verdict::Terminated { reason });
        })
    };

    let (leader_side, leader_conn) = CommBuffer::new(cap, stop.clone());
    let transcript = Transcript::default();
    let mut links = Vec::new();
    let mut sides: Vec<MonitorSide> = vec![leader_side];
    let mut pumps = Vec::new();
    for &f in &followers {
        let (a, b) = Endpoint::pair(flavor, stats.clone(), stop.clone())?;
        links.push(a);
        let (fm, fc) = CommBuffer::new(cap, stop.clone());
        sides.push(fm);
        let p = spawn_follower_pump(f, fc, b, latency, transcript.clone(), stop.clone(), hook.clone())
            .map_err(|e| MvxError::Transport(e.into()))?;
        pumps.push(p);
    }
    pumps.push(spawn_leader_pump(leader_conn, links, stop.clone(), hook).map_err(|e| MvxError::Transport(e.into()))?);

    let (mut mon, lport, fports) = wire_lockstep(
        &followers,
        flavor,
        stats.clone(),
        control.clone(),
        DcpMonConfig {
            latency,
            timeout: cfg.barrier_timeout,
            compare_seq: !cfg.rsm,
        },
    )?;
    mon.set_probe(ReplicationProbe {
        leader_out: sides[0].outgoing.stats(),
        follower_in: followers.iter().zip(&sides[1..]).map(|(v, s)| (*v, s.incoming.stats())).collect(),
    });
    let mon = mon.spawn().map_err(|e| MvxError::Transport(e.into()))?;

    let ops: Arc<[crate::variant_engine::Op]> = cfg.workload.expand().into();
    let policy = cfg.effective_policy();
    let dcfg = Arc::new(cfg.dipmon_config());
    let ports = std::iter::once(Port::Leader(lport)).chain(fports.into_iter().map(Port::Follower));
    let mut handles = Vec::new();
    for (id, (side, port)) in (0..cfg.variants).zip(sides.into_iter().zip(ports)) {
        let mut kernel = EmulatedKernel::new(cfg.workload.files.clone(), cfg.workload.net_data.clone());
        for f in cfg.faults.iter().filter(|f| f.variant == id) {
            kernel.inject_failures(f.kind, f.count);
        }
        let v = Variant {
            id,
            engine: VariantEngine::new(id, ops.clone()),
            kernel,
            arbiter: Arbiter::new(id, policy.clone(), cfg.seed),
            dip: DipMon::new(id, dcfg.clone(), side, control.clone(), cfg.costs, cap),
            fmap: SharedFileMap::new(FileMap::with_stdio()),
            port,
            control: control.clone(),
            costs: cfg.costs,
            attacks: cfg.attacks.iter().filter(|a| a.variant == id).cloned().collect(),
            clock: 0,
            last_token: None,
            m: VariantMetrics::default(),
        };
        let h = thread::Builder::new()
            .name(format!("variant-{id}"))
            .spawn(move || v.run())
            .map_err(|e| MvxError::Transport(e.into()))?;
        handles.push(h);
    }
    let variants: Vec<VariantMetrics> = handles
        .into_iter()
        .map(|h| h.join().expect("variant thread panicked"))
        .collect();
    let report = mon.join().expect("monitor thread panicked");
    // Connectors finish on their own once the leader hangs up; a stopped
    // run releases them through the stop flag.
    if !control.is_stopped() {
        for p in pumps {
            p.join().expect("connector thread panicked");
        }
    } else {
        drop(pumps);
    }

    let mut deliveries = transcript.lock().unwrap().clone();
    deliveries.sort_by_key(|d| d.to);
    let leader_pushed = variants[0].async_msgs;
    Ok(RunMetrics {
        run_id: run_id.to_string(),
        workload: cfg.workload.name.clone(),
        ssm: cfg.ssm,
        rsm: cfg.rsm,
        sr: cfg.sr,
        latency_us: cfg.channel.latency_us,
        seed: cfg.seed,
        verdict: control.verdict(),
        rounds: report.rounds,
        sim_time_ns: variants.iter().map(|v| v.clock_ns).max().unwrap_or(0),
        baseline_ns,
        messages: stats.messages(),
        bytes: stats.bytes(),
        dipmon_direct: stats.dipmon_direct(),
        executions_after_verdict: control.executions_after_verdict(),
        deliveries,
        undelivered: variants[1..].iter().map(|v| leader_pushed.saturating_sub(v.async_msgs)).collect(),
        variants,
    })
}

/// `repeat` runs of the same configuration with run ids `<prefix>-<i>`.
pub fn run_repeated(cfg: &RunConfig, repeat: u32, prefix: &str) -> Result<Vec<RunMetrics>, MvxError> {
    (0..repeat.max(1))
        .map(|i| run_scenario(cfg, &format!("{prefix}-{i}")))
        .collect()
}

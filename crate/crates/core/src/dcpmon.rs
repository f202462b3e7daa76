//! Cross-process monitor: runs sensitive calls in lockstep, compares them
//! across variants, hands I/O results from the leader to the followers, and
//! owns the run's verdict.
//!
//! The monitor thread sits on the leader's machine. The leader talks to it
//! in-process; followers reach it over their own links with one synchronous
//! round trip per sensitive call.

use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError, Select, Sender};

use crate::error::TransportError;
use crate::syscall_model::{NormalizedArgs, SyscallKind, SyscallResult, VariantId};
use crate::transport::comm_buffer::POLL;
use crate::transport::{
    ArrivalClock, Body, ChannelFlavor, ChannelStats, Endpoint, LaneStats, LatencyModel, MsgType, ReleaseAction,
    WireMessage,
};

pub const DEFAULT_BARRIER_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Clean,
    Divergence { reason: String, round: u64 },
    Terminated { reason: String },
}

impl Verdict {
    pub fn is_clean(&self) -> bool {
        matches!(self, Verdict::Clean)
    }

    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Clean => "clean",
            Verdict::Divergence { .. } => "divergence",
            Verdict::Terminated { .. } => "terminated",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Verdict::Clean => 0,
            Verdict::Divergence { .. } => 2,
            Verdict::Terminated { .. } => 3,
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Clean => write!(f, "clean"),
            Verdict::Divergence { reason, round } => write!(f, "divergence at round {round}: {reason}"),
            Verdict::Terminated { reason } => write!(f, "terminated: {reason}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExecEntry {
    Exec { variant: VariantId, seq: u64, kind: SyscallKind },
    Verdict,
}

#[derive(Debug, Default)]
struct ControlState {
    verdict: Option<Verdict>,
    log: Vec<ExecEntry>,
}

/// Run-wide stop signal, verdict, and execution gate. Every emulated
/// syscall passes through `admit`, so the log proves nothing ran after the
/// verdict.
#[derive(Debug, Default)]
pub struct RunControl {
    stop: Arc<AtomicBool>,
    state: Mutex<ControlState>,
    epoch: AtomicU64,
}

impl RunControl {
    pub fn new() -> Arc<Self> {
        Arc::new(RunControl::default())
    }

    pub fn stop_flag(&self) -> Arc<AtomicBool> {
        self.stop.clone()
    }

    pub fn is_stopped(&self) -> bool {
        self.stop.load(Ordering::SeqCst)
    }

    /// Completed lockstep rounds so far.
    pub fn epoch(&self) -> u64 {
        self.epoch.load(Ordering::SeqCst)
    }

    pub fn admit(&self, variant: VariantId, seq: u64, kind: SyscallKind) -> Result<(), TransportError> {
        let mut st = self.state.lock().unwrap();
        if st.verdict.is_some() {
            return Err(TransportError::Stopped);
        }
        st.log.push(ExecEntry::Exec { variant, seq, kind });
        Ok(())
    }

    /// Record a verdict and stop every variant. Only the first call has an
    /// effect; the verdict in force is returned.
    pub fn terminate_all(&self, verdict: Verdict) -> Verdict {
        let mut st = self.state.lock().unwrap();
        if st.verdict.is_none() && !verdict.is_clean() {
            st.verdict = Some(verdict);
            st.log.push(ExecEntry::Verdict);
            self.stop.store(true, Ordering::SeqCst);
        }
        st.verdict.clone().unwrap_or(Verdict::Clean)
    }

    /// Divergence at the current round.
    pub fn diverge(&self, reason: impl Into<String>) -> Verdict {
        self.terminate_all(Verdict::Divergence {
            reason: reason.into(),
            round: self.epoch() + 1,
        })
    }

    pub fn verdict(&self) -> Verdict {
        self.state.lock().unwrap().verdict.clone().unwrap_or(Verdict::Clean)
    }

    pub fn exec_log(&self) -> Vec<ExecEntry> {
        self.state.lock().unwrap().log.clone()
    }

    pub fn executions_after_verdict(&self) -> usize {
        let st = self.state.lock().unwrap();
        match st.log.iter().position(|e| *e == ExecEntry::Verdict) {
            Some(i) => st.log.len() - i - 1,
            None => 0,
        }
    }
}

pub type Call = (SyscallKind, NormalizedArgs);

fn describe(call: &Option<Call>) -> String {
    match call {
        None => "nothing (script finished)".into(),
        Some((kind, args)) => format!("{kind} {args:?}"),
    }
}

#[derive(Debug)]
enum LeaderMsg {
    Submit { seq: u64, sent_ns: u64, call: Option<Call> },
    Executed { result: SyscallResult, done_ns: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Grant {
    /// Execute now. For I/O calls the leader must report its result.
    Go { round: u64, round_ts: u64, io: bool },
    Finished,
}

fn recv_stoppable<T>(rx: &Receiver<T>, stop: &AtomicBool) -> Result<T, TransportError> {
    loop {
        match rx.recv_timeout(POLL) {
            Ok(m) => return Ok(m),
            Err(RecvTimeoutError::Disconnected) => return Err(TransportError::Closed),
            Err(RecvTimeoutError::Timeout) if stop.load(Ordering::SeqCst) => return Err(TransportError::Stopped),
            Err(RecvTimeoutError::Timeout) => {}
        }
    }
}

/// The leader's in-process handle on the barrier.
#[derive(Debug)]
pub struct LeaderPort {
    tx: Sender<LeaderMsg>,
    rx: Receiver<Grant>,
    stop: Arc<AtomicBool>,
    rounds: u64,
}

impl LeaderPort {
    pub fn submit(&mut self, seq: u64, sent_ns: u64, call: Option<Call>) -> Result<Grant, TransportError> {
        if self.stop.load(Ordering::SeqCst) {
            return Err(TransportError::Stopped);
        }
        let counts = call.is_some();
        self.tx
            .send(LeaderMsg::Submit { seq, sent_ns, call })
            .map_err(|_| TransportError::Closed)?;
        let grant = recv_stoppable(&self.rx, &self.stop)?;
        if counts {
            self.rounds += 1;
        }
        Ok(grant)
    }

    pub fn executed(&self, result: SyscallResult, done_ns: u64) -> Result<(), TransportError> {
        self.tx
            .send(LeaderMsg::Executed { result, done_ns })
            .map_err(|_| TransportError::Closed)
    }

    /// Lockstep rounds the leader waited on, each bounded by follower
    /// submissions crossing the network.
    pub fn sync_round_trips(&self) -> u64 {
        self.rounds
    }
}

/// A follower's network handle on the barrier.
#[derive(Debug)]
pub struct FollowerPort {
    variant: VariantId,
    link: Endpoint,
    latency: LatencyModel,
    clock: ArrivalClock,
    timeout: Duration,
}

/// Where a released follower stands.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Release {
    pub round: u64,
    pub action: ReleaseAction,
    pub arrive_ns: u64,
}

impl FollowerPort {
    pub fn submit(&mut self, seq: u64, sent_ns: u64, call: Option<Call>) -> Result<Release, TransportError> {
        let counts = call.is_some();
        let msg = WireMessage::new(MsgType::LockstepSubmit, self.variant, seq, &Body::Submit { sent_ns, call });
        // The end-of-script handshake is not a round and is not counted.
        let reply = if counts {
            self.link.roundtrip(&msg, Some(self.timeout * 2))?
        } else {
            self.link.send(&msg)?;
            self.link.recv(Some(self.timeout * 2))?
        };
        match reply.body()? {
            Body::Release { sent_ns, round, action } => {
                let transit = self.latency.transit_ns(2000 + u32::from(self.variant), MsgType::LockstepRelease, round);
                Ok(Release {
                    round,
                    action,
                    arrive_ns: self.clock.arrive(sent_ns, transit),
                })
            }
            Body::Terminate { .. } => Err(TransportError::Stopped),
            other => Err(TransportError::Decode(format!("unexpected reply {other:?}"))),
        }
    }

    pub fn sync_round_trips(&self) -> u64 {
        self.link.round_trips()
    }
}

/// Lane counters the monitor reads to spot a follower waiting for
/// replication the leader will never send.
#[derive(Debug, Clone)]
pub struct ReplicationProbe {
    pub leader_out: Arc<LaneStats>,
    pub follower_in: Vec<(VariantId, Arc<LaneStats>)>,
}

#[derive(Debug, Clone, Copy)]
pub struct DcpMonConfig {
    pub latency: LatencyModel,
    pub timeout: Duration,
    /// Also require equal call sequence numbers. Rounds are otherwise
    /// paired by sensitive-call order alone, since relaxed monitoring lets
    /// non-sensitive call counts drift.
    pub compare_seq: bool,
}

struct FollowerSlot {
    variant: VariantId,
    link: Endpoint,
    clock: ArrivalClock,
}

struct Submission {
    seq: u64,
    arrive_ns: u64,
    call: Option<Call>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MonitorReport {
    pub rounds: u64,
}

pub struct DcpMon {
    control: Arc<RunControl>,
    cfg: DcpMonConfig,
    leader_rx: Receiver<LeaderMsg>,
    leader_tx: Sender<Grant>,
    followers: Vec<FollowerSlot>,
    probe: Option<ReplicationProbe>,
    rounds: u64,
}

/// Build the monitor together with the leader's and followers' ports.
pub fn wire_lockstep(
    followers: &[VariantId],
    flavor: ChannelFlavor,
    stats: Arc<ChannelStats>,
    control: Arc<RunControl>,
    cfg: DcpMonConfig,
) -> Result<(DcpMon, LeaderPort, Vec<FollowerPort>), TransportError> {
    let (ltx, mon_rx) = unbounded();
    let (mon_tx, lrx) = unbounded();
    let mut slots = Vec::new();
    let mut ports = Vec::new();
    for &variant in followers {
        let (mon_end, f_end) = Endpoint::pair(flavor, stats.clone(), control.stop_flag())?;
        slots.push(FollowerSlot {
            variant,
            link: mon_end,
            clock: ArrivalClock::default(),
        });
        ports.push(FollowerPort {
            variant,
            link: f_end,
            latency: cfg.latency,
            clock: ArrivalClock::default(),
            timeout: cfg.timeout,
        });
    }
    let leader = LeaderPort {
        tx: ltx,
        rx: lrx,
        stop: control.stop_flag(),
        rounds: 0,
    };
    let mon = DcpMon {
        control,
        cfg,
        leader_rx: mon_rx,
        leader_tx: mon_tx,
        followers: slots,
        probe: None,
        rounds: 0,
    };
    Ok((mon, leader, ports))
}

enum Incoming {
    Leader(Result<LeaderMsg, crossbeam_channel::RecvError>),
    Follower(usize, Result<Vec<u8>, crossbeam_channel::RecvError>),
    Idle,
}

impl DcpMon {
    pub fn set_probe(&mut self, probe: ReplicationProbe) {
        self.probe = Some(probe);
    }

    pub fn spawn(self) -> std::io::Result<JoinHandle<MonitorReport>> {
        thread::Builder::new().name("mvx-dcpmon".into()).spawn(move || self.run())
    }

    pub fn run(mut self) -> MonitorReport {
        while let Ok(true) = self.round() {}
        if self.control.is_stopped() {
            let reason = self.control.verdict().to_string();
            let bye = WireMessage::new(MsgType::Terminate, 0, u64::MAX, &Body::Terminate { graceful: false, reason });
            for f in &self.followers {
                let _ = f.link.send(&bye);
            }
        }
        MonitorReport { rounds: self.rounds }
    }

    fn poll(&self, slots: &[Option<Submission>]) -> Incoming {
        let mut sel = Select::new();
        let mut map = Vec::new();
        if slots[0].is_none() {
            sel.recv(&self.leader_rx);
            map.push(0);
        }
        for (i, f) in self.followers.iter().enumerate() {
            if slots[i + 1].is_none() {
                sel.recv(f.link.receiver());
                map.push(i + 1);
            }
        }
        match sel.select_timeout(POLL) {
            Err(_) => Incoming::Idle,
            Ok(op) => match map[op.index()] {
                0 => Incoming::Leader(op.recv(&self.leader_rx)),
                s => Incoming::Follower(s - 1, op.recv(self.followers[s - 1].link.receiver())),
            },
        }
    }

    /// A follower blocked on its incoming lane while the leader sits at the
    /// barrier, with every replicated message already consumed, can never
    /// make progress.
    fn starved_follower(&self, slots: &[Option<Submission>]) -> Option<VariantId> {
        let probe = self.probe.as_ref()?;
        slots[0].as_ref()?;
        let pushed = probe.leader_out.pushed();
        self.followers.iter().enumerate().find_map(|(i, f)| {
            let (_, lane) = probe.follower_in.iter().find(|(v, _)| *v == f.variant)?;
            (slots[i + 1].is_none() && lane.is_waiting() && lane.popped() == pushed).then_some(f.variant)
        })
    }

    fn gather(&mut self) -> Result<Vec<Submission>, ()> {
        let mut slots: Vec<Option<Submission>> = (0..=self.followers.len()).map(|_| None).collect();
        let started = Instant::now();
        while slots.iter().any(Option::is_none) {
            if self.control.is_stopped() {
                return Err(());
            }
            if let Some(v) = self.starved_follower(&slots) {
                self.control.diverge(format!("variant {v} waits for replication the leader never sent"));
                return Err(());
            }
            if started.elapsed() > self.cfg.timeout {
                let missing: Vec<String> = slots
                    .iter()
                    .enumerate()
                    .filter(|(_, s)| s.is_none())
                    .map(|(i, _)| if i == 0 { "0".to_string() } else { self.followers[i - 1].variant.to_string() })
                    .collect();
                self.control
                    .diverge(format!("timeout: variant(s) {} never reached the barrier", missing.join(",")));
                return Err(());
            }
            match self.poll(&slots) {
                Incoming::Idle => {}
                Incoming::Leader(Ok(LeaderMsg::Submit { seq, sent_ns, call })) => {
                    slots[0] = Some(Submission { seq, arrive_ns: sent_ns, call });
                }
                Incoming::Leader(Ok(LeaderMsg::Executed { .. })) => {
                    self.control.terminate_all(Verdict::Terminated {
                        reason: "leader reported a result outside a round".into(),
                    });
                    return Err(());
                }
                Incoming::Leader(Err(_)) => {
                    self.control.terminate_all(Verdict::Terminated { reason: "leader port closed".into() });
                    return Err(());
                }
                Incoming::Follower(i, frame) => {
                    let latency = self.cfg.latency;
                    let f = &mut self.followers[i];
                    let submission = frame
                        .map_err(|_| TransportError::Closed)
                        .and_then(|fr| WireMessage::decode(&fr))
                        .and_then(|m| Ok((m.seq, m.body()?)));
                    match submission {
                        Ok((seq, Body::Submit { sent_ns, call })) => {
                            let transit =
                                latency.transit_ns(1000 + u32::from(f.variant), MsgType::LockstepSubmit, seq);
                            slots[i + 1] = Some(Submission {
                                seq,
                                arrive_ns: f.clock.arrive(sent_ns, transit),
                                call,
                            });
                        }
                        Ok((_, other)) => {
                            self.control.terminate_all(Verdict::Terminated {
                                reason: format!("unexpected message from variant {}: {other:?}", f.variant),
                            });
                            return Err(());
                        }
                        Err(e) => {
                            if !self.control.is_stopped() {
                                self.control.terminate_all(Verdict::Terminated {
                                    reason: format!("transport: variant {} link: {e}", f.variant),
                                });
                            }
                            return Err(());
                        }
                    }
                }
            }
        }
        Ok(slots.into_iter().map(Option::unwrap).collect())
    }

    /// Run one round. `Ok(false)` once every variant has finished.
    fn round(&mut self) -> Result<bool, ()> {
        let subs = self.gather()?;
        let leader_call = &subs[0].call;
        for (f, s) in self.followers.iter().zip(&subs[1..]) {
            if s.call != *leader_call {
                let what = match (leader_call, &s.call) {
                    (Some((a, _)), Some((b, _))) if a == b => "argument mismatch",
                    (Some(_), Some(_)) => "kind mismatch",
                    _ => "call count mismatch",
                };
                self.control.diverge(format!(
                    "{what}: variant 0 issued {} but variant {} issued {}",
                    describe(leader_call),
                    f.variant,
                    describe(&s.call)
                ));
                return Err(());
            }
            // Same call at a different position: a call was dropped or added
            // on the in-process path since the last round.
            if self.cfg.compare_seq && s.seq != subs[0].seq {
                self.control.diverge(format!(
                    "call count mismatch: variant 0 issued {} at seq {} but variant {} at seq {}",
                    describe(leader_call),
                    subs[0].seq,
                    f.variant,
                    s.seq
                ));
                return Err(());
            }
        }
        let round_ts = subs.iter().map(|s| s.arrive_ns).max().unwrap_or(0);
        let Some((kind, _)) = leader_call else {
            let _ = self.leader_tx.send(Grant::Finished);
            self.release(u64::MAX, round_ts, ReleaseAction::Finished);
            return Ok(false);
        };
        let round = self.rounds + 1;
        let io = !kind.is_non_io();
        if self.leader_tx.send(Grant::Go { round, round_ts, io }).is_err() {
            return Err(());
        }
        let (sent_ns, action) = if io {
            match recv_stoppable(&self.leader_rx, &self.control.stop) {
                Ok(LeaderMsg::Executed { result, done_ns }) => (done_ns, ReleaseAction::Replicated(result)),
                Ok(LeaderMsg::Submit { .. }) | Err(TransportError::Closed) => {
                    self.control.terminate_all(Verdict::Terminated {
                        reason: "leader did not report its result".into(),
                    });
                    return Err(());
                }
                Err(_) => return Err(()),
            }
        } else {
            (round_ts, ReleaseAction::ExecuteLocal)
        };
        self.release(round, sent_ns, action);
        self.rounds = round;
        self.control.epoch.store(round, Ordering::SeqCst);
        Ok(true)
    }

    fn release(&self, round: u64, sent_ns: u64, action: ReleaseAction) {
        let body = Body::Release {
            sent_ns,
            round,
            action,
        };
        for f in &self.followers {
            let msg = WireMessage::new(MsgType::LockstepRelease, f.variant, round, &body);
            if let Err(e) = f.link.send(&msg) {
                if !self.control.is_stopped() {
                    self.control.terminate_all(Verdict::Terminated {
                        reason: format!("transport: release to variant {}: {e}", f.variant),
                    });
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(kind: SyscallKind, fd: i32) -> Option<Call> {
        Some((
            kind,
            NormalizedArgs {
                fd: Some(fd),
                ..Default::default()
            },
        ))
    }

    struct Outcome {
        verdict: Verdict,
        rounds: u64,
        leader_rtt: u64,
        follower_rtt: u64,
        leader_clock: u64,
        follower_clock: u64,
    }

    /// Drive one leader and one follower through their call lists. Clocks
    /// follow the same rules the harness uses, minus local costs.
    fn drive(leader: Vec<Option<Call>>, follower: Vec<Option<Call>>) -> Outcome {
        let control = RunControl::new();
        let cfg = DcpMonConfig {
            latency: LatencyModel::new(50, 1),
            timeout: Duration::from_secs(2),
            compare_seq: true,
        };
        let (mon, mut lport, mut fports) =
            wire_lockstep(&[1], ChannelFlavor::Simulated, Arc::default(), control.clone(), cfg).unwrap();
        let mon = mon.spawn().unwrap();
        let c2 = control.clone();
        let lh = thread::spawn(move || {
            let mut clock = 0;
            for (seq, c) in leader.into_iter().chain([None]).enumerate() {
                let finished = c.is_none();
                match lport.submit(seq as u64, clock, c) {
                    Ok(Grant::Go { round_ts, io, .. }) => {
                        clock = round_ts;
                        if io {
                            lport.executed(SyscallResult::ok(SyscallKind::Write, 1), clock).unwrap();
                        }
                    }
                    _ => break,
                }
                if finished || c2.is_stopped() {
                    break;
                }
            }
            (lport.sync_round_trips(), clock)
        });
        let mut fport = fports.pop().unwrap();
        let fh = thread::spawn(move || {
            let mut clock = 0;
            for (seq, c) in follower.into_iter().chain([None]).enumerate() {
                let finished = c.is_none();
                match fport.submit(seq as u64, clock, c) {
                    Ok(r) => clock = r.arrive_ns,
                    Err(_) => break,
                }
                if finished {
                    break;
                }
            }
            (fport.sync_round_trips(), clock)
        });
        let (leader_rtt, leader_clock) = lh.join().unwrap();
        let (follower_rtt, follower_clock) = fh.join().unwrap();
        let report = mon.join().unwrap();
        Outcome {
            verdict: control.verdict(),
            rounds: report.rounds,
            leader_rtt,
            follower_rtt,
            leader_clock,
            follower_clock,
        }
    }

    #[test]
    fn identical_sequences_run_clean_with_one_round_trip_per_call() {
        let calls = vec![call(SyscallKind::Write, 4), call(SyscallKind::Mprotect, 0), call(SyscallKind::Send, 4)];
        let o = drive(calls.clone(), calls);
        assert_eq!(o.verdict, Verdict::Clean);
        assert_eq!((o.rounds, o.leader_rtt, o.follower_rtt), (3, 3, 3));
    }

    #[test]
    fn transport_time_meets_the_latency_lower_bound() {
        let calls: Vec<_> = (0..100).map(|i| call(SyscallKind::Write, i)).collect();
        let o = drive(calls.clone(), calls);
        assert_eq!(o.rounds, 100);
        assert!(o.follower_clock >= 100 * 2 * 50_000, "{}", o.follower_clock);
        assert!(o.leader_clock >= 99 * 2 * 50_000);
    }

    #[test]
    fn kind_mismatch_diverges() {
        let o = drive(vec![call(SyscallKind::Write, 1)], vec![call(SyscallKind::Mprotect, 1)]);
        match o.verdict {
            Verdict::Divergence { reason, round } => {
                assert_eq!(round, 1);
                assert!(reason.starts_with("kind mismatch"), "{reason}");
            }
            v => panic!("{v:?}"),
        }
    }

    #[test]
    fn argument_mismatch_reports_its_round() {
        let mut f: Vec<_> = (0..7).map(|i| call(SyscallKind::Write, i)).collect();
        let l = f.clone();
        f[6] = call(SyscallKind::Write, 99);
        match drive(l, f).verdict {
            Verdict::Divergence { reason, round } => {
                assert_eq!(round, 7);
                assert!(reason.contains("argument mismatch"));
                assert!(reason.contains("99"));
            }
            v => panic!("{v:?}"),
        }
    }

    #[test]
    fn extra_leader_call_diverges_against_finished_follower() {
        let f = vec![call(SyscallKind::Write, 1)];
        let mut l = f.clone();
        l.push(call(SyscallKind::Connect, 3));
        let o = drive(l, f);
        assert_eq!(o.verdict.label(), "divergence");
        assert_eq!(o.follower_rtt, 1);
    }

    #[test]
    fn terminate_all_is_idempotent_and_gates_execution() {
        let c = RunControl::new();
        c.admit(0, 0, SyscallKind::Getcwd).unwrap();
        let v = c.terminate_all(Verdict::Terminated { reason: "misprediction".into() });
        assert_eq!(c.terminate_all(Verdict::Divergence { reason: "x".into(), round: 1 }), v);
        assert!(c.is_stopped());
        assert!(c.admit(1, 0, SyscallKind::Getcwd).is_err());
        assert_eq!(c.executions_after_verdict(), 0);
        assert_eq!(c.verdict().exit_code(), 3);
    }

    #[test]
    fn missing_follower_times_out() {
        let control = RunControl::new();
        let cfg = DcpMonConfig {
            latency: LatencyModel::new(50, 1),
            timeout: Duration::from_millis(50),
            compare_seq: true,
        };
        let (mon, mut lport, _fports) =
            wire_lockstep(&[1], ChannelFlavor::Simulated, Arc::default(), control.clone(), cfg).unwrap();
        let mon = mon.spawn().unwrap();
        assert!(lport.submit(0, 0, call(SyscallKind::Write, 1)).is_err());
        mon.join().unwrap();
        match control.verdict() {
            Verdict::Divergence { reason, .. } => assert!(reason.starts_with("timeout")),
            v => panic!("{v:?}"),
        }
    }
}

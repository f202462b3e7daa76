//! Connector pumps: the only code that moves in-process monitor traffic
//! between a communication buffer and the network.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use crate::error::TransportError;
use crate::syscall_model::VariantId;
use crate::transport::channel::{ArrivalClock, Endpoint, LatencyModel};
use crate::transport::comm_buffer::{ConnectorSide, Delivered};
use crate::transport::wire::{Body, MsgType, WireMessage};

pub type FailureHook = Arc<dyn Fn(String) + Send + Sync>;

/// One delivery as seen by a follower's connector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeliveryRecord {
    pub to: VariantId,
    pub msg_type: MsgType,
    pub seq: u64,
    pub arrive_ns: u64,
}

pub type Transcript = Arc<Mutex<Vec<DeliveryRecord>>>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PumpReport {
    /// Messages taken from the outgoing lane (leader) or link (follower).
    pub received: u64,
    /// Messages handed on: link sends (leader) or incoming-lane pushes (follower).
    pub forwarded: u64,
    pub graceful: bool,
}

/// Leader side: fan the outgoing lane out to every follower link. When the
/// monitor hangs up its end, everything still queued is sent, followed by a
/// graceful `Terminate`.
pub fn spawn_leader_pump(
    cb: ConnectorSide,
    mut links: Vec<Endpoint>,
    stop: Arc<AtomicBool>,
    on_failure: FailureHook,
) -> std::io::Result<JoinHandle<PumpReport>> {
    thread::Builder::new().name("mvx-connector-0".into()).spawn(move || {
        let mut report = PumpReport::default();
        let fail = |e: TransportError| {
            if !stop.load(Ordering::SeqCst) {
                on_failure(format!("transport: {e}"));
            }
        };
        loop {
            match cb.outgoing.pop() {
                Ok(msg) => {
                    report.received += 1;
                    for link in &links {
                        if let Err(e) = link.send(&msg) {
                            fail(e);
                            return report;
                        }
                        report.forwarded += 1;
                    }
                }
                Err(TransportError::Closed) => break,
                Err(_) => return report,
            }
        }
        let bye = WireMessage::new(
            MsgType::Terminate,
            0,
            u64::MAX,
            &Body::Terminate {
                graceful: true,
                reason: "leader finished".into(),
            },
        );
        for link in &mut links {
            if link.send(&bye).is_err() {
                fail(TransportError::Closed);
            }
            link.close_send();
        }
        report.graceful = true;
        report
    })
}

/// Follower side: stamp each arriving message with its simulated arrival
/// time and push it onto the incoming lane. A link that dies without a
/// graceful `Terminate` while the run is live injects a non-graceful one and
/// reports a transport failure.
pub fn spawn_follower_pump(
    variant: VariantId,
    cb: ConnectorSide,
    link: Endpoint,
    latency: LatencyModel,
    transcript: Transcript,
    stop: Arc<AtomicBool>,
    on_failure: FailureHook,
) -> std::io::Result<JoinHandle<PumpReport>> {
    thread::Builder::new()
        .name(format!("mvx-connector-{variant}"))
        .spawn(move || {
            let mut report = PumpReport::default();
            let mut clock = ArrivalClock::default();
            loop {
                let msg = match link.recv(None) {
                    Ok(m) => m,
                    Err(TransportError::Stopped) => return report,
                    Err(e) => {
                        if !stop.load(Ordering::SeqCst) {
                            let reason = format!("transport: {e}");
                            let injected = WireMessage::new(
                                MsgType::Terminate,
                                0,
                                u64::MAX,
                                &Body::Terminate {
                                    graceful: false,
                                    reason: reason.clone(),
                                },
                            );
                            let _ = cb.incoming.push(Delivered {
                                msg: injected,
                                arrive_ns: 0,
                            });
                            on_failure(reason);
                        }
                        return report;
                    }
                };
                report.received += 1;
                let body = match msg.body() {
                    Ok(b) => b,
                    Err(e) => {
                        on_failure(format!("transport: {e}"));
                        return report;
                    }
                };
                if let Body::Terminate { graceful: true, .. } = body {
                    report.graceful = true;
                    return report;
                }
                let sent = body.sent_ns().unwrap_or(0);
                let arrive_ns = clock.arrive(sent, latency.transit_ns(u32::from(variant), msg.msg_type, msg.seq));
                transcript.lock().unwrap().push(DeliveryRecord {
                    to: variant,
                    msg_type: msg.msg_type,
                    seq: msg.seq,
                    arrive_ns,
                });
                if cb.incoming.push(Delivered { msg, arrive_ns }).is_err() {
                    return report;
                }
                report.forwarded += 1;
            }
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::channel::{ChannelFlavor, ChannelStats};
    use crate::transport::comm_buffer::CommBuffer;
    use std::sync::atomic::AtomicUsize;

    fn result_msg(seq: u64, sent_ns: u64) -> WireMessage {
        WireMessage::new(
            MsgType::ResultReplication,
            0,
            seq,
            &Body::Mispredict {
                sent_ns,
                detail: format!("m{seq}"),
            },
        )
    }

    fn run(flavor: ChannelFlavor, n: u64) -> (Vec<Delivered>, PumpReport, PumpReport, Vec<DeliveryRecord>) {
        let stop = Arc::new(AtomicBool::new(false));
        let stats = Arc::new(ChannelStats::default());
        let (leader_mon, leader_conn) = CommBuffer::new(4, stop.clone());
        let (follower_mon, follower_conn) = CommBuffer::new(4, stop.clone());
        let (a, b) = Endpoint::pair(flavor, stats, stop.clone()).unwrap();
        let hook: FailureHook = Arc::new(|r| panic!("unexpected failure {r}"));
        let transcript = Transcript::default();
        let lp = spawn_leader_pump(leader_conn, vec![a], stop.clone(), hook.clone()).unwrap();
        let fp = spawn_follower_pump(1, follower_conn, b, LatencyModel::new(50, 9), transcript.clone(), stop, hook)
            .unwrap();
        let consumer = thread::spawn(move || {
            let mut got = Vec::new();
            while let Ok(d) = follower_mon.incoming.pop() {
                got.push(d);
            }
            got
        });
        for seq in 0..n {
            leader_mon.outgoing.push(result_msg(seq, seq * 10)).unwrap();
        }
        drop(leader_mon);
        let lr = lp.join().unwrap();
        let fr = fp.join().unwrap();
        let got = consumer.join().unwrap();
        let t = transcript.lock().unwrap().clone();
        (got, lr, fr, t)
    }

    #[test]
    fn pipeline_delivers_in_order_with_latency_then_drains() {
        let (got, lr, fr, _) = run(ChannelFlavor::Simulated, 50);
        assert_eq!(got.len(), 50);
        for (i, d) in got.iter().enumerate() {
            assert_eq!(d.msg, result_msg(i as u64, i as u64 * 10));
            assert!(d.arrive_ns >= i as u64 * 10 + 50_000);
        }
        assert!(lr.graceful && fr.graceful);
        assert_eq!((lr.received, lr.forwarded, fr.forwarded), (50, 50, 50));
    }

    #[test]
    fn transcript_is_identical_across_flavors() {
        let (_, _, _, sim) = run(ChannelFlavor::Simulated, 20);
        let (_, _, _, tcp) = run(ChannelFlavor::Loopback { port: 0 }, 20);
        assert_eq!(sim, tcp);
    }

    #[test]
    fn abrupt_close_injects_terminate() {
        let stop = Arc::new(AtomicBool::new(false));
        let (follower_mon, follower_conn) = CommBuffer::new(4, stop.clone());
        let (a, b) = Endpoint::pair(ChannelFlavor::Simulated, Arc::default(), stop.clone()).unwrap();
        let failures = Arc::new(AtomicUsize::new(0));
        let f2 = failures.clone();
        let hook: FailureHook = Arc::new(move |_| {
            f2.fetch_add(1, Ordering::SeqCst);
        });
        let fp = spawn_follower_pump(1, follower_conn, b, LatencyModel::new(50, 0), Transcript::default(), stop, hook)
            .unwrap();
        drop(a);
        fp.join().unwrap();
        let d = follower_mon.incoming.pop().unwrap();
        assert_eq!(d.msg.msg_type, MsgType::Terminate);
        assert!(matches!(d.msg.body().unwrap(), Body::Terminate { graceful: false, .. }));
        assert_eq!(failures.load(Ordering::SeqCst), 1);
    }
}
